"""
Configuration records for whitebed runs.

Typed objects instead of raw dictionaries: every section of a JSON run
config maps to one dataclass with from_dict / to_dict. Unknown keys and
out-of-range values raise ConfigError.
"""

from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, List, Optional, Tuple

import config
from exceptions import ConfigError

LOSS_KINDS = ("wmse", "contrastive", "triplet", "bn_mse")
ENCODER_KINDS = ("mlp", "smallconv")
DATASETS = ("synthetic", "cifar10", "cifar100", "binary")
DTYPES = ("float32", "float64")


def _check_keys(section: str, data: Dict[str, Any], allowed: List[str]) -> None:
    """Reject keys that are not fields of the target record."""
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        raise ConfigError(
            f"unknown key(s) {unknown} in '{section}'; valid keys: {sorted(allowed)}"
        )


def _require(condition: bool, constraint: str) -> None:
    if not condition:
        raise ConfigError(f"constraint violated: {constraint}")


def _field_names(cls, exclude: Tuple[str, ...] = ()) -> List[str]:
    return [f.name for f in fields(cls) if f.name not in exclude]


@dataclass
class SliceplanConfig:
    """Batch slicing: d positives per origin, sub-batch size, repetitions"""
    d: int = 2
    sub_size: Optional[int] = None
    iterations: int = config.SLICE_ITERATIONS

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SliceplanConfig':
        _check_keys("loss.sliceplan", data, _field_names(cls))
        return cls(**data)

    def validate(self, embedding_dim: Optional[int] = None) -> None:
        _require(self.d >= 2, "sliceplan.d >= 2")
        _require(self.iterations >= 1, "sliceplan.iterations >= 1")
        if self.sub_size is not None and embedding_dim is not None:
            _require(self.sub_size >= embedding_dim + 1,
                     f"sliceplan.sub_size >= embedding_dim + 1 ({embedding_dim + 1})")


@dataclass
class LossConfig:
    """Loss kind and its hyperparameters"""
    kind: str = "wmse"
    d: int = 2
    normalize: bool = True
    whiten: bool = False
    tau: Optional[float] = None
    margin: Optional[float] = None
    ridge: Optional[float] = None
    sliceplan: SliceplanConfig = field(default_factory=SliceplanConfig)

    @property
    def uses_whitening(self) -> bool:
        return self.kind == "wmse" or (self.kind == "contrastive" and self.whiten)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'LossConfig':
        _check_keys("loss", data, _field_names(cls))
        data = dict(data)
        plan = SliceplanConfig.from_dict(data.pop("sliceplan", {}))
        loss = cls(sliceplan=plan, **data)
        # the slicing partition count always follows the loss
        loss.sliceplan.d = loss.d
        return loss

    def validate(self) -> None:
        _require(self.kind in LOSS_KINDS, f"loss.kind in {list(LOSS_KINDS)}")
        _require(self.d >= 2, "loss.d >= 2")
        if self.kind == "contrastive":
            _require(self.tau is None or self.tau > 0, "loss.tau > 0")
            _require(self.d == 2, "loss.d == 2 for the contrastive loss")
        if self.kind == "triplet":
            _require(self.margin is None or self.margin >= 0, "loss.margin >= 0")
        _require(self.ridge is None or self.ridge >= 0, "loss.ridge >= 0")
        self.sliceplan.validate()


@dataclass
class EncoderConfig:
    """Encoder E(.): small conv net or MLP"""
    kind: str = config.ENCODER_KIND
    h_dim: int = config.H_DIM
    conv_widths: List[int] = field(default_factory=lambda: list(config.CONV_WIDTHS))
    mlp_hidden: List[int] = field(default_factory=lambda: list(config.MLP_HIDDEN))
    image_size: int = config.IMAGE_SIZE

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EncoderConfig':
        _check_keys("encoder", data, _field_names(cls))
        return cls(**data)

    def validate(self) -> None:
        _require(self.kind in ENCODER_KINDS, f"encoder.kind in {list(ENCODER_KINDS)}")
        _require(self.h_dim >= 1, "encoder.h_dim >= 1")
        _require(self.image_size >= 1, "encoder.image_size >= 1")
        if self.kind == "smallconv":
            _require(len(self.conv_widths) >= 1, "encoder.conv_widths is non-empty")
            _require(self.conv_widths[-1] == self.h_dim,
                     "encoder.conv_widths[-1] == encoder.h_dim for smallconv")


@dataclass
class ProjectorConfig:
    """Projection head g(.): one hidden layer with BN"""
    hidden_dim: int = config.PROJECTOR_HIDDEN
    out_dim: int = config.EMBEDDING_DIM

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ProjectorConfig':
        _check_keys("projector", data, _field_names(cls))
        return cls(**data)

    def validate(self) -> None:
        _require(self.out_dim >= 1, "projector.out_dim >= 1")
        _require(self.out_dim <= self.hidden_dim, "projector.out_dim <= projector.hidden_dim")


@dataclass
class DataConfig:
    """Which dataset to train and evaluate on"""
    dataset: str = "synthetic"
    data_dir: Optional[str] = None
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None
    classes: int = config.SYNTH_CLASSES
    per_class: int = config.SYNTH_PER_CLASS
    test_per_class: Optional[int] = None

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DataConfig':
        _check_keys("data", data, _field_names(cls))
        return cls(**data)

    def validate(self) -> None:
        _require(self.dataset in DATASETS, f"data.dataset in {list(DATASETS)}")
        _require(self.classes >= 2, "data.classes >= 2")
        _require(self.per_class >= 1, "data.per_class >= 1")
        _require(self.train_limit is None or self.train_limit >= 1, "data.train_limit >= 1")


@dataclass
class TrainConfig:
    """Optimizer, schedule and batching for self-supervised training"""
    epochs: int = config.EPOCHS
    lr: float = config.LEARNING_RATE
    warmup_iters: int = config.WARMUP_ITERS
    drop_factor: float = config.DROP_FACTOR
    drop_epochs: List[int] = field(default_factory=lambda: list(config.DROP_EPOCHS))
    batch_origins: int = config.BATCH_ORIGINS
    weight_decay: float = config.WEIGHT_DECAY
    decoupled_weight_decay: bool = False
    betas: List[float] = field(default_factory=lambda: list(config.ADAM_BETAS))
    eps: float = config.ADAM_EPS
    dtype: str = "float32"
    workers: int = 1
    log_timing: bool = False
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    # seed and loss are set from the top level of the run config
    JSON_EXCLUDED = ("seed", "loss")

    @classmethod
    def from_dict(cls, data: Dict[str, Any], loss: Optional[LossConfig] = None,
                  seed: int = 0) -> 'TrainConfig':
        _check_keys("train", data, _field_names(cls, cls.JSON_EXCLUDED))
        return cls(loss=loss or LossConfig(), seed=seed, **data)

    def validate(self) -> None:
        _require(self.epochs >= 0, "train.epochs >= 0")
        _require(self.lr > 0, "train.lr > 0")
        _require(0 < self.drop_factor < 1, "0 < train.drop_factor < 1")
        _require(self.warmup_iters >= 0, "train.warmup_iters >= 0")
        _require(self.batch_origins >= 1, "train.batch_origins >= 1")
        _require(self.weight_decay >= 0, "train.weight_decay >= 0")
        _require(len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas),
                 "train.betas are two values in [0, 1)")
        _require(self.eps > 0, "train.eps > 0")
        _require(self.dtype in DTYPES, f"train.dtype in {list(DTYPES)}")
        _require(self.workers >= 1, "train.workers >= 1")
        self.loss.validate()


@dataclass
class ProbeConfig:
    """Linear probe on frozen encoder features"""
    epochs: int = config.PROBE_EPOCHS
    lr_start: float = config.PROBE_LR_START
    lr_end: float = config.PROBE_LR_END
    weight_decay: float = config.PROBE_WEIGHT_DECAY
    batch_size: int = config.PROBE_BATCH_SIZE

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ProbeConfig':
        _check_keys("probe", data, _field_names(cls))
        return cls(**data)

    def validate(self) -> None:
        _require(self.epochs >= 1, "probe.epochs >= 1")
        _require(self.lr_start > 0 and self.lr_end > 0, "probe learning rates > 0")
        _require(self.lr_end <= self.lr_start, "probe.lr_end <= probe.lr_start")
        _require(self.batch_size >= 1, "probe.batch_size >= 1")


@dataclass
class EvalConfig:
    """k-NN settings and periodic evaluation during training"""
    knn_k: int = config.KNN_K
    eval_every: int = 0

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvalConfig':
        _check_keys("eval", data, _field_names(cls))
        return cls(**data)

    def validate(self) -> None:
        _require(self.knn_k >= 1, "eval.knn_k >= 1")
        _require(self.eval_every >= 0, "eval.eval_every >= 0")


@dataclass
class BenchConfig:
    """Step timing protocol"""
    warmup_steps: int = 2
    measured_steps: int = 10

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BenchConfig':
        _check_keys("bench", data, _field_names(cls))
        return cls(**data)

    def validate(self) -> None:
        _require(self.warmup_steps >= 0, "bench.warmup_steps >= 0")
        _require(self.measured_steps >= 10, "bench.measured_steps >= 10")


@dataclass
class RunConfig:
    """Everything that determines a run"""
    seed: int = 0
    out_dir: str = config.OUT_DIR
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    projector: ProjectorConfig = field(default_factory=ProjectorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    SECTIONS = ("seed", "out_dir", "data", "encoder", "projector", "loss",
                "train", "probe", "eval", "bench")

    @property
    def loss(self) -> LossConfig:
        return self.train.loss

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RunConfig':
        """Create RunConfig from a (possibly partial) JSON dictionary"""
        _check_keys("<top level>", data, list(cls.SECTIONS))
        seed = data.get("seed", 0)
        _require(isinstance(seed, int) and seed >= 0, "seed is a non-negative integer")
        loss = LossConfig.from_dict(data.get("loss", {}))
        return cls(
            seed=seed,
            out_dir=data.get("out_dir", config.OUT_DIR),
            data=DataConfig.from_dict(data.get("data", {})),
            encoder=EncoderConfig.from_dict(data.get("encoder", {})),
            projector=ProjectorConfig.from_dict(data.get("projector", {})),
            train=TrainConfig.from_dict(data.get("train", {}), loss=loss, seed=seed),
            probe=ProbeConfig.from_dict(data.get("probe", {})),
            eval=EvalConfig.from_dict(data.get("eval", {})),
            bench=BenchConfig.from_dict(data.get("bench", {})),
        )

    def to_dict(self) -> Dict[str, Any]:
        """Inverse of from_dict; loss is lifted back to the top level"""
        train = asdict(self.train)
        loss = train.pop("loss")
        for key in TrainConfig.JSON_EXCLUDED:
            train.pop(key, None)
        return {
            "seed": self.seed,
            "out_dir": self.out_dir,
            "data": asdict(self.data),
            "encoder": asdict(self.encoder),
            "projector": asdict(self.projector),
            "loss": loss,
            "train": train,
            "probe": asdict(self.probe),
            "eval": asdict(self.eval),
            "bench": asdict(self.bench),
        }

    def validate(self) -> None:
        self.data.validate()
        self.encoder.validate()
        self.projector.validate()
        self.train.validate()
        self.probe.validate()
        self.eval.validate()
        self.bench.validate()
        _require(self.encoder.h_dim >= self.projector.out_dim,
                 "encoder.h_dim >= projector.out_dim")
        loss = self.train.loss
        if loss.uses_whitening:
            loss.sliceplan.validate(self.projector.out_dim)
            if loss.sliceplan.sub_size is not None:
                _require(self.train.batch_origins % loss.sliceplan.sub_size == 0,
                         "train.batch_origins divisible by loss.sliceplan.sub_size")
