"""Render annotated series to figure files.

One PNG per series: the raw curve with trend segments shaded by descriptor,
transition timestamps as dashed vertical lines, and outliers circled.
Figures land alongside the delimited expression/report outputs so a run's
findings can be eyeballed without loading the data.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .core import SeriesAnnotation

_TREND_COLORS = {
    "increasing": "#c8e6c9",
    "decreasing": "#ffcdd2",
    "stable": "#e3e6e8",
}
_AMPLITUDE_COLORS = {
    "slight": "#e3e6e8",
    "moderate": "#ffe0b2",
    "significant": "#ffcdd2",
}


def _safe_filename(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in name)


def render_series_figure(annotation: SeriesAnnotation, path: str | Path) -> Path:
    """Plot one annotated series and save it as a PNG."""
    series = annotation.series
    t = np.arange(1, series.length + 1)
    values = np.asarray(series.values)

    fig, ax = plt.subplots(figsize=(9, 3.2))
    shading = annotation.trend_segments or annotation.amplitude_segments
    palette = _TREND_COLORS if annotation.trend_segments else _AMPLITUDE_COLORS
    for seg in shading:
        ax.axvspan(seg.begin - 0.5, seg.end + 0.5,
                   color=palette.get(seg.label, "#eeeeee"), lw=0)
    ax.plot(t, values, color="#1a4f72", lw=1.2)
    for ev in annotation.transitions:
        ax.axvline(ev.timestamp, color="#7b1fa2", ls="--", lw=1.0)
    if annotation.outliers:
        idx = [ev.timestamp - 1 for ev in annotation.outliers]
        ax.scatter(t[idx], values[idx], facecolors="none", edgecolors="#d32f2f",
                   s=60, zorder=5, label="outliers")
        ax.legend(loc="best", fontsize=8)
    unit = f" [{series.unit}]" if series.unit else ""
    ax.set_xlabel("timestamp")
    ax.set_ylabel(f"{series.variable.value}{unit}")
    ax.set_title(series.name, fontsize=10)
    ax.set_xlim(0.5, series.length + 0.5)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_annotation_figures(
    annotations: Mapping[str, SeriesAnnotation], out_dir: str | Path
) -> list[Path]:
    """Render every annotated series into ``out_dir``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, annotation in annotations.items():
        paths.append(
            render_series_figure(annotation, out_dir / f"{_safe_filename(name)}.png")
        )
    return paths
