"""
SVG training-dynamics charts from a metrics CSV.

Columns are plotted against fractional epoch (epoch + position of the
iteration inside its epoch). Drawing uses reportlab.graphics and its SVG
renderer.
"""

import csv
import logging
import os
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from reportlab.graphics import renderSVG
from reportlab.graphics.charts.legends import Legend
from reportlab.graphics.charts.lineplots import LinePlot
from reportlab.graphics.shapes import Drawing, String
from reportlab.lib import colors

from exceptions import ConfigError, DatasetFormatError

logger = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 400
SERIES_COLORS = [colors.HexColor(c) for c in ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")]


def read_metrics(path: str) -> Dict[str, List[Optional[float]]]:
    """Columns of a metrics CSV; empty fields become None."""
    if not os.path.exists(path):
        raise DatasetFormatError(f"metrics file not found: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if not reader.fieldnames or "epoch" not in reader.fieldnames:
            raise DatasetFormatError(f"{path}: no 'epoch' column in header {reader.fieldnames}")
        columns: Dict[str, List[Optional[float]]] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name in reader.fieldnames:
                value = row.get(name, "")
                columns[name].append(float(value) if value not in ("", None) else None)
    return columns


def fractional_epochs(epochs: Sequence[float]) -> np.ndarray:
    """epoch + j / n_e for the j-th of n_e rows logged in an epoch."""
    epochs = np.asarray(epochs, dtype=np.float64)
    x = epochs.copy()
    for e in np.unique(epochs):
        rows = np.flatnonzero(epochs == e)
        x[rows] = e + np.arange(rows.size) / rows.size
    return x


def smooth(values: Sequence[float], s: float) -> np.ndarray:
    """
    s < 1: exponential moving average, y_t = s * y_{t-1} + (1 - s) * x_t.
    s >= 1: trailing moving average over int(s) points. s = 0 returns the input.
    """
    x = np.asarray(values, dtype=np.float64)
    if s < 0:
        raise ConfigError(f"smoothing must be >= 0, got {s}")
    if x.size == 0 or s == 0:
        return x
    if s < 1:
        out = np.empty_like(x)
        out[0] = x[0]
        for t in range(1, x.size):
            out[t] = s * out[t - 1] + (1 - s) * x[t]
        return out
    window = int(s)
    cumsum = np.concatenate([[0.0], np.cumsum(x)])
    starts = np.maximum(np.arange(1, x.size + 1) - window, 0)
    return (cumsum[1:] - cumsum[starts]) / (np.arange(1, x.size + 1) - starts)


def series_points(columns: Dict[str, List[Optional[float]]], name: str,
                  s: float = 0.0) -> List[Tuple[float, float]]:
    """(fractional epoch, smoothed value) for every row where the column is filled."""
    if name not in columns:
        raise ConfigError(f"column '{name}' not in metrics file; available: {sorted(columns)}")
    x = fractional_epochs([e if e is not None else 0 for e in columns["epoch"]])
    filled = [i for i, value in enumerate(columns[name]) if value is not None]
    y = smooth([columns[name][i] for i in filled], s)
    return [(float(x[i]), float(v)) for i, v in zip(filled, y)]


def build_chart(series: Dict[str, List[Tuple[float, float]]], title: str = "") -> Drawing:
    drawing = Drawing(WIDTH, HEIGHT)
    plot = LinePlot()
    plot.x, plot.y = 60, 50
    plot.width, plot.height = WIDTH - 200, HEIGHT - 100
    plot.data = list(series.values())
    plot.joinedLines = 1
    for i in range(len(series)):
        plot.lines[i].strokeColor = SERIES_COLORS[i % len(SERIES_COLORS)]
        plot.lines[i].strokeWidth = 1.2
    plot.xValueAxis.labelTextFormat = "%.0f"
    drawing.add(plot)

    legend = Legend()
    legend.x, legend.y = WIDTH - 120, HEIGHT - 60
    legend.colorNamePairs = [(SERIES_COLORS[i % len(SERIES_COLORS)], name) for i, name in enumerate(series)]
    drawing.add(legend)
    drawing.add(String(plot.x + plot.width / 2, 15, "epoch", textAnchor="middle", fontSize=10))
    if title:
        drawing.add(String(WIDTH / 2, HEIGHT - 20, title, textAnchor="middle", fontSize=12))
    return drawing


def plot_columns(csv_path: str, cols: Sequence[str], s: float = 0.0,
                 out_path: Optional[str] = None) -> str:
    """
    Render the chosen columns of a metrics CSV to an SVG file.

    Args:
        csv_path: metrics CSV with an 'epoch' column
        cols: column names, one series each
        s: smoothing (see smooth)
        out_path: SVG path; defaults to the CSV path with .svg

    Returns:
        Path of the written SVG
    """
    columns = read_metrics(csv_path)
    series = {}
    for name in cols:
        points = series_points(columns, name, s)
        if not points:
            logger.warning(f"⚠️ Column '{name}' has no values in {csv_path}, skipped")
            continue
        series[name] = points
    if not series:
        raise ConfigError(f"none of the columns {list(cols)} has values in {csv_path}")
    out_path = out_path or os.path.splitext(csv_path)[0] + ".svg"
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    renderSVG.drawToFile(build_chart(series, os.path.basename(csv_path)), out_path)
    logger.info(f"✅ Plot written: {out_path} ({', '.join(series)})")
    return out_path
