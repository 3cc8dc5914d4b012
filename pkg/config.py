"""
Default settings for the whitebed workbench.

Values marked (ref) are the published reference settings; the rest are
desk-scale choices. Every value can be overridden from a JSON run config
(see config_manager.py). Paths can also come from the environment or an
optional config.env file next to this module.
"""

import os

from dotenv import load_dotenv

load_dotenv(os.path.join(os.path.dirname(__file__), "config.env"))

# Environment
DATA_DIR = os.getenv("WHITEBED_DATA", "data")
OUT_DIR = os.getenv("WHITEBED_OUT", "runs")

# Whitening
RELATIVE_RIDGE = 1e-6        # ridge = RELATIVE_RIDGE * mean(diag(cov)) when not given
BN_EPS = 1e-5
BN_MOMENTUM = 0.9            # running = momentum * running + (1 - momentum) * batch

# Batch slicing
SLICE_ITERATIONS = 1         # (ref) 4 only for the larger d=2 configs

# Losses
CONTRASTIVE_TAU = 0.5        # (ref) normalized embeddings
CONTRASTIVE_TAU_UNNORMALIZED = 1.0  # (ref) Euclidean variant
TRIPLET_MARGIN = 0.5

# Augmentation (ref)
CROP_AREA_RANGE = (0.2, 1.0)
CROP_ASPECT_RANGE = (3.0 / 4.0, 4.0 / 3.0)
CROP_ATTEMPTS = 10
FLIP_PROB = 0.5
JITTER_STRENGTHS = (0.4, 0.4, 0.4, 0.1)  # brightness, contrast, saturation, hue
JITTER_PROB = 0.8
GRAYSCALE_PROB = 0.1
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

# Model
IMAGE_SIZE = 32
ENCODER_KIND = "smallconv"
CONV_WIDTHS = [32, 64, 128, 256]
MLP_HIDDEN = [512]          # mlp encoder: hidden widths, then h_dim
H_DIM = 256
PROJECTOR_HIDDEN = 1024      # (ref)
EMBEDDING_DIM = 64           # (ref) CIFAR scale

# Training (ref unless noted)
LEARNING_RATE = 3e-3
WARMUP_ITERS = 500
DROP_FACTOR = 0.2
DROP_EPOCHS = [50, 25]       # offsets before the end of training
WEIGHT_DECAY = 1e-6
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
BATCH_ORIGINS = 256          # desk default: K = 512 views at d = 2
EPOCHS = 200

# Linear probe (ref)
PROBE_EPOCHS = 500
PROBE_LR_START = 1e-2
PROBE_LR_END = 1e-6
PROBE_WEIGHT_DECAY = 5e-6
PROBE_BATCH_SIZE = 256

# k-NN (ref)
KNN_K = 5

# Synthetic dataset
SYNTH_CLASSES = 4
SYNTH_PER_CLASS = 64
SYNTH_SIGMA = 5.0
SYNTH_SIGMA_JITTER = 0.2
SYNTH_CENTER_JITTER = 4.0
SYNTH_HUE_JITTER = 0.05
SYNTH_NOISE = 0.05

# Metrics file header
METRICS_COLUMNS = ["epoch", "iter", "loss", "lr", "ms_per_iter", "knn_acc", "linear_acc"]
