"""Cross-cell aggregate and heterogeneity series, and phase classification.

At each timestamp the module is summarized by the mean, maximum, minimum,
population standard deviation, and Shannon entropy of every variable across
cells.  Mean/max/min describe aggregate behavior; std and entropy quantify
cell inconsistency.  Operational phases (charging / discharging / idle) are
classified from the module current.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import (
    MultiCellDataset,
    Origin,
    TimeSeries,
    Variable,
    VARIABLE_LABELS,
)


@dataclass(frozen=True)
class EntropyBinning:
    """Equal-width histogram binning over [lo, hi] with bin_count bins.

    Values outside the range are clamped into the edge bins, which keeps the
    estimator robust to fault-injected spikes.  A degenerate range (hi == lo)
    puts all mass in one bin, so the entropy of a constant system is 0.
    """

    bin_count: int
    lo: float
    hi: float

    def __post_init__(self) -> None:
        if self.bin_count < 2:
            raise ValueError("bin_count must be >= 2")
        if self.hi < self.lo:
            raise ValueError("need hi >= lo")


def compute_entropy(values: "np.ndarray | list[float]", binning: EntropyBinning) -> float:
    """Shannon entropy in bits of the cross-cell value distribution at one t.

    Histogram the values into the binning's equal-width bins, normalize to
    probabilities, and return ``H = -sum(p * log2(p))`` over occupied bins.
    Bounded by ``log2(bin_count)``.
    """
    vals = np.asarray(values, dtype=float)
    if binning.hi == binning.lo:
        return 0.0
    width = (binning.hi - binning.lo) / binning.bin_count
    idx = np.floor((vals - binning.lo) / width).astype(int)
    idx = np.clip(idx, 0, binning.bin_count - 1)
    counts = np.bincount(idx, minlength=binning.bin_count)
    p = counts[counts > 0] / vals.size
    return float(-(p * np.log2(p)).sum())


@dataclass(frozen=True)
class VariableAggregates:
    """The five derived statistic series for one variable."""

    mean: TimeSeries
    max: TimeSeries
    min: TimeSeries
    std: TimeSeries
    entropy: TimeSeries

    def as_dict(self) -> dict[str, TimeSeries]:
        return {
            "mean": self.mean,
            "max": self.max,
            "min": self.min,
            "std": self.std,
            "entropy": self.entropy,
        }


def _cell_matrix(dataset: MultiCellDataset, variable: Variable) -> np.ndarray:
    rows = []
    for cid in range(1, dataset.cell_count + 1):
        series = dataset.per_cell[cid].get(variable)
        if series is None:
            raise KeyError(f"variable {variable.value} absent for cell {cid}")
        rows.append(series.values)
    return np.asarray(rows, dtype=float)  # shape (V_c, L)


def compute_aggregates(
    dataset: MultiCellDataset,
    variable: Variable,
    binning: EntropyBinning | None = None,
) -> VariableAggregates:
    """Derive the mean/max/min/std/entropy series for one variable.

    std uses the population divisor (the cells present are the whole
    population being described, not a sample).  Entropy defaults to
    cell_count equal-width bins over the variable's global range in this
    dataset, making the values comparable across timestamps.
    """
    matrix = _cell_matrix(dataset, variable)
    if binning is None:
        binning = EntropyBinning(
            bin_count=max(dataset.cell_count, 2),
            lo=float(matrix.min()),
            hi=float(matrix.max()),
        )
    label = VARIABLE_LABELS[variable]
    unit = dataset.per_cell[1][variable].unit

    def make(stat: str, values: np.ndarray, unit_: str, name: str) -> TimeSeries:
        return TimeSeries(
            name=name,
            variable=variable,
            unit=unit_,
            sampling_period=dataset.sampling_period,
            values=tuple(float(v) for v in values),
            origin=Origin.system(stat),
        )

    entropy_vals = np.array(
        [compute_entropy(matrix[:, t], binning) for t in range(matrix.shape[1])]
    )
    return VariableAggregates(
        mean=make("mean", matrix.mean(axis=0), unit, f"average {label} of the LIB module"),
        max=make("max", matrix.max(axis=0), unit, f"maximum {label} of the LIB module"),
        min=make("min", matrix.min(axis=0), unit, f"minimum {label} of the LIB module"),
        std=make("std", matrix.std(axis=0), unit,
                 f"standard deviation of {label} across cells"),
        entropy=make("entropy", entropy_vals, "",
                     f"Shannon entropy of {label} across cells"),
    )


class PhaseKind(str, Enum):
    CHARGING = "charging"
    DISCHARGING = "discharging"
    IDLE = "idle"


@dataclass(frozen=True)
class PhaseSegment:
    kind: PhaseKind
    begin: int
    end: int

    def __post_init__(self) -> None:
        if not 1 <= self.begin <= self.end:
            raise ValueError("phase bounds must satisfy 1 <= begin <= end")


def classify_phases(
    current: TimeSeries, idle_current_fraction: float = 0.02
) -> list[PhaseSegment]:
    """Split the current series into charging / discharging / idle runs.

    Positive current means charging, negative discharging, near zero idle.
    The idle band is ``idle_current_fraction`` of the series' peak |current|,
    so the rule adapts from ampere-scale lab cells to field modules.  An
    all-zero current yields a single idle segment.
    """
    vals = np.asarray(current.values, dtype=float)
    tau = idle_current_fraction * float(np.abs(vals).max())
    kinds = np.where(
        vals > tau, PhaseKind.CHARGING.value,
        np.where(vals < -tau, PhaseKind.DISCHARGING.value, PhaseKind.IDLE.value),
    )
    segments: list[PhaseSegment] = []
    begin = 1
    for t in range(1, len(kinds)):
        if kinds[t] != kinds[t - 1]:
            segments.append(PhaseSegment(PhaseKind(kinds[t - 1]), begin, t))
            begin = t + 1
    segments.append(PhaseSegment(PhaseKind(kinds[-1]), begin, len(kinds)))
    return segments


def variable_range(dataset: MultiCellDataset, variable: Variable) -> float:
    """Global max - min of a variable across all cells in the dataset."""
    matrix = _cell_matrix(dataset, variable)
    return float(matrix.max() - matrix.min())


def series_range(series: TimeSeries) -> float:
    vals = series.values
    return float(max(vals) - min(vals))


def entropy_upper_bound(binning: EntropyBinning) -> float:
    return math.log2(binning.bin_count)
