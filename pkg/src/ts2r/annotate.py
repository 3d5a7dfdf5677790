"""Slice partitioning, descriptor rules, and consolidation.

Each series is cut into fixed-width slices (default 10 timestamps).  Per
slice, rule-based criteria assign categorical descriptors:

- trend: ordinary least-squares slope against +/- epsilon;
- fluctuation: population variance of the detrended slice against beta;
- amplitude level: absolute slice mean against delta1 < delta2.

Two whole-series rules produce point events:

- transitions: local slopes from a stride-1 sliding window of size omega;
  a flag fires when successive slopes differ by more than xi, and flag
  clusters collapse to the single strongest flag;
- outliers: |x - mean| must exceed both 3*sigma and vartheta.

Consecutive slices with identical descriptors merge into segments whose
statistics are recomputed over the merged span.  All inequality checks are
strict, so boundary-equal statistics take the milder descriptor.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import (
    AttributeKind,
    EventKind,
    HyperParams,
    PointEvent,
    Segment,
    SegmentStats,
    SeriesAnnotation,
    TimeSeries,
    attributes_for,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Slice:
    """Contiguous 1-based inclusive window over a parent series."""

    begin: int
    end: int
    values: tuple[float, ...]

    @property
    def width(self) -> int:
        return self.end - self.begin + 1


@dataclass(frozen=True)
class LinearFit:
    """OLS fit y = slope*t + intercept over local abscissa 1..n."""

    slope: float
    intercept: float
    residuals: tuple[float, ...]


def fit_linear(values: Sequence[float]) -> LinearFit:
    """Least-squares line through (1, x1)..(n, xn).

    Closed covariance form: slope = sum((t-tm)(x-xm)) / sum((t-tm)^2).
    """
    x = np.asarray(values, dtype=float)
    n = x.size
    if n < 2:
        raise ValueError("need at least 2 points for a linear fit")
    t = np.arange(1, n + 1, dtype=float)
    tc = t - t.mean()
    xm = x.mean()
    slope = float(tc @ (x - xm)) / float(tc @ tc)
    intercept = float(xm - slope * t.mean())
    residuals = x - slope * t - intercept
    return LinearFit(slope, intercept, tuple(float(r) for r in residuals))


def partition_slices(values: Sequence[float], slice_width: int) -> list[Slice]:
    """Cut 1..L into consecutive slices of the given width.

    The final slice holds the remainder; a remainder of a single sample is
    absorbed into the previous slice so every slice supports a linear fit.
    """
    if slice_width < 2:
        raise ValueError("slice_width must be >= 2")
    length = len(values)
    slices: list[Slice] = []
    begin = 1
    while begin <= length:
        end = min(begin + slice_width - 1, length)
        if length - end == 1:
            end = length
        slices.append(Slice(begin, end, tuple(float(v) for v in values[begin - 1 : end])))
        begin = end + 1
    return slices


def assign_trend(slice_values: Sequence[float], epsilon: float) -> str:
    """increasing if slope > epsilon, decreasing if slope < -epsilon, else stable."""
    slope = fit_linear(slice_values).slope
    if slope > epsilon:
        return "increasing"
    if slope < -epsilon:
        return "decreasing"
    return "stable"


def window_slopes(values: Sequence[float], omega: int) -> np.ndarray:
    """Local OLS slope for every window [k, k+omega-1], stride 1.

    Entry k (0-based) is the slope of the window starting at timestamp k+1.
    """
    x = np.asarray(values, dtype=float)
    t = np.arange(1, omega + 1, dtype=float)
    tc = t - t.mean()
    denom = float(tc @ tc)
    # correlate == sliding dot product with the centered-abscissa weights
    sums = np.correlate(x, tc, mode="valid")
    return sums / denom


def detect_transitions(
    values: Sequence[float], omega: int, xi: float
) -> list[PointEvent]:
    """Flag timestamps where the local trend changes abruptly.

    Successive window slopes differing by more than xi raise flags.  Flags
    whose windows overlap (indices within omega - 1 of each other) describe
    the same physical transition, so each cluster collapses to its single
    strongest flag; the event timestamp is the temporal midpoint of that
    flag's later window, floor(k + omega/2) for a window starting at k.
    The recorded value is the winning absolute slope difference.
    """
    if omega < 2:
        raise ValueError("omega must be >= 2")
    length = len(values)
    if length < omega + 1:
        log.warning("series of length %d too short for omega=%d", length, omega)
        return []
    slopes = window_slopes(values, omega)
    diffs = np.abs(np.diff(slopes))
    flagged = np.nonzero(diffs > xi)[0]  # flag i compares windows i+1 and i+2 (1-based)
    if flagged.size == 0:
        return []
    events: list[PointEvent] = []
    cluster: list[int] = [int(flagged[0])]
    for idx in flagged[1:]:
        if idx - cluster[-1] <= omega - 1:
            cluster.append(int(idx))
        else:
            events.append(_collapse_cluster(cluster, diffs, omega))
            cluster = [int(idx)]
    events.append(_collapse_cluster(cluster, diffs, omega))
    return events


def _collapse_cluster(cluster: list[int], diffs: np.ndarray, omega: int) -> PointEvent:
    # Earliest flag within 1e-9 relative of the cluster peak wins: exact ties
    # are structural (a spike's entry and exit produce equal differences) and
    # must not be decided by last-ulp float noise.
    peak = max(float(diffs[i]) for i in cluster)
    best = next(i for i in cluster if float(diffs[i]) >= peak * (1.0 - 1e-9))
    later_window_start = best + 2  # 1-based start of the later window in the pair
    timestamp = math.floor(later_window_start + omega / 2)
    return PointEvent(EventKind.TRANSITION, timestamp, float(diffs[best]))


def assess_fluctuation(
    slice_values: Sequence[float], beta: float, on_std: bool = False
) -> str:
    """noticeable when the detrended residual variance (or std) exceeds beta."""
    residuals = np.asarray(fit_linear(slice_values).residuals)
    statistic = float((residuals**2).mean())
    if on_std:
        statistic = math.sqrt(statistic)
    return "noticeable" if statistic > beta else "slight"


def detect_outliers(values: Sequence[float], vartheta: float) -> list[PointEvent]:
    """Absolute-deviation outliers over the whole series.

    A timestamp is an outlier iff |x - mean| exceeds both 3*sigma
    (population std) and vartheta.  The scan runs series-wide: inside a
    10-sample slice a lone spike can never exceed 3 population sigmas, and
    outliers are reported per series anyway.  A constant series (sigma = 0)
    has no outliers.
    """
    x = np.asarray(values, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 samples for outlier detection")
    mean = float(x.mean())
    sigma = float(x.std())
    if sigma == 0.0:
        return []
    dev = np.abs(x - mean)
    flagged = np.nonzero((dev > 3 * sigma) & (dev > vartheta))[0]
    return [
        PointEvent(EventKind.OUTLIER, int(i) + 1, float(x[i])) for i in flagged
    ]


def assign_amplitude(
    slice_values: Sequence[float], delta1: float, delta2: float
) -> str:
    """significant if |mean| > delta2, moderate if > delta1, else slight."""
    m = abs(float(np.asarray(slice_values, dtype=float).mean()))
    if m > delta2:
        return "significant"
    if m > delta1:
        return "moderate"
    return "slight"


def slice_statistics(values: Sequence[float]) -> SegmentStats:
    """Mean, population std, initial, final, min, max over a span."""
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("empty span")
    lo, hi = float(x.min()), float(x.max())
    # The true mean lies in [lo, hi]; summation rounding can push the float
    # result one ulp outside on near-constant spans.
    mean = min(max(float(x.mean()), lo), hi)
    return SegmentStats(
        mean=mean,
        std=float(x.std()),
        initial=float(x[0]),
        final=float(x[-1]),
        min=lo,
        max=hi,
    )


def consolidate(
    labeled_slices: Sequence[tuple[Slice, str]],
    attribute: AttributeKind,
    parent_values: Sequence[float],
) -> tuple[Segment, ...]:
    """Merge maximal runs of equal descriptors into segments.

    Segment statistics are recomputed over the merged span of the parent
    series, not averaged from per-slice statistics.  Idempotent: the output
    never contains equal adjacent labels.
    """
    if not labeled_slices:
        return ()
    segments: list[Segment] = []
    run_begin = labeled_slices[0][0].begin
    run_label = labeled_slices[0][1]
    prev_end = labeled_slices[0][0].end
    for slc, label in labeled_slices[1:]:
        if slc.begin != prev_end + 1:
            raise ValueError("labeled slices must be contiguous")
        if label != run_label:
            segments.append(_make_segment(run_begin, prev_end, attribute, run_label, parent_values))
            run_begin, run_label = slc.begin, label
        prev_end = slc.end
    segments.append(_make_segment(run_begin, prev_end, attribute, run_label, parent_values))
    return tuple(segments)


def _make_segment(
    begin: int, end: int, attribute: AttributeKind, label: str,
    parent_values: Sequence[float],
) -> Segment:
    stats = slice_statistics(parent_values[begin - 1 : end])
    return Segment(begin=begin, end=end, attribute=attribute, label=label, stats=stats)


def annotate_series(
    series: TimeSeries,
    params: HyperParams,
    attributes: frozenset[AttributeKind] | None = None,
) -> SeriesAnnotation:
    """Run the applicable descriptor rules and consolidate the results.

    ``attributes`` defaults to the applicability set for the series origin:
    heterogeneity series get amplitude + fluctuation only, cross-cell
    extrema skip fluctuation, everything else gets the full shape set.
    """
    attrs = attributes if attributes is not None else attributes_for(series.origin)
    values = series.values
    slices = partition_slices(values, params.slice_width)

    trend_segments: tuple[Segment, ...] = ()
    fluctuation_segments: tuple[Segment, ...] = ()
    amplitude_segments: tuple[Segment, ...] = ()
    if AttributeKind.TREND in attrs:
        labeled = [(s, assign_trend(s.values, params.epsilon)) for s in slices]
        trend_segments = consolidate(labeled, AttributeKind.TREND, values)
    if AttributeKind.FLUCTUATION in attrs:
        labeled = [
            (s, assess_fluctuation(s.values, params.beta, params.fluctuation_on_std))
            for s in slices
        ]
        fluctuation_segments = consolidate(labeled, AttributeKind.FLUCTUATION, values)
    if AttributeKind.AMPLITUDE_LEVEL in attrs:
        labeled = [(s, assign_amplitude(s.values, params.delta1, params.delta2)) for s in slices]
        amplitude_segments = consolidate(labeled, AttributeKind.AMPLITUDE_LEVEL, values)

    transitions: list[PointEvent] = []
    outliers: list[PointEvent] = []
    if AttributeKind.TRANSITION in attrs:
        transitions = detect_transitions(values, params.omega, params.xi)
    if AttributeKind.OUTLIER in attrs and series.length >= 3:
        outliers = detect_outliers(values, params.vartheta)

    return SeriesAnnotation(
        series=series,
        trend_segments=trend_segments,
        fluctuation_segments=fluctuation_segments,
        amplitude_segments=amplitude_segments,
        transitions=tuple(transitions),
        outliers=tuple(outliers),
    )


# --------------------------------------------------------------------------
# Hyperparameter profiles

#: Rule entry keys: plain names are constants, ``*_scale`` entries are
#: multiplied by the series range when resolving.
_SCALE_KEYS = ("epsilon_scale", "xi_scale", "beta_scale", "vartheta_scale",
               "delta1_scale", "delta2_scale")
_CONST_KEYS = ("epsilon", "xi", "beta", "vartheta", "delta1", "delta2",
               "omega", "slice_width")

# Amplitude bounds for series where the attribute never applies; any valid
# ordered pair works.
_UNUSED_DELTAS = {"delta1": 1.0, "delta2": 2.0}


@dataclass(frozen=True)
class HyperParamProfile:
    """Named set of per-variable scaling rules.

    ``rules`` maps a variable name ("voltage", "soc", ...) or the
    heterogeneity keys "std" / "entropy" to a rule entry.
    """

    name: str
    rules: Mapping[str, Mapping[str, float]]

    def variables(self) -> tuple[str, ...]:
        return tuple(self.rules.keys())


def resolve_hyperparams(
    profile: HyperParamProfile, variable: str, series_range: float, **overrides
) -> HyperParams:
    """Scale a profile row by the series range into concrete thresholds.

    ``series_range`` is max - min of the series (or of the variable across
    the dataset, per caller policy).  A zero range resolves every scaled
    threshold to 0, which HyperParams accepts as the degenerate case.
    """
    if series_range < 0:
        raise ValueError("series_range must be >= 0")
    rule = profile.rules.get(variable)
    if rule is None:
        raise KeyError(
            f"profile {profile.name!r} does not define variable {variable!r}"
        )
    resolved: dict[str, float | int | bool] = {}
    for key, raw in rule.items():
        if key in _SCALE_KEYS:
            resolved[key.removesuffix("_scale")] = raw * series_range
        elif key in _CONST_KEYS:
            resolved[key] = raw
        else:
            raise KeyError(f"unknown profile key {key!r}")
    resolved.setdefault("epsilon", 0.0)
    resolved.setdefault("xi", 0.0)
    resolved.setdefault("beta", 0.0)
    resolved.setdefault("vartheta", 0.0)
    resolved.setdefault("omega", 7)
    if "delta1" not in resolved and "delta2" not in resolved:
        resolved.update(_UNUSED_DELTAS)
    resolved["omega"] = int(resolved["omega"])
    if "slice_width" in resolved:
        resolved["slice_width"] = int(resolved["slice_width"])
    resolved.update(overrides)
    return HyperParams(**resolved)  # type: ignore[arg-type]


def _profile(name: str, cell_rows: Mapping[str, Mapping[str, float]]) -> HyperParamProfile:
    rules = dict(cell_rows)
    rules["std"] = {"delta1_scale": 0.05, "delta2_scale": 0.1, "beta_scale": 0.01}
    rules["entropy"] = {"delta1": 1.5, "delta2": 3.0, "beta": 0.5}
    return HyperParamProfile(name=name, rules=rules)


def _cell_row(epsilon_scale: float, xi_scale: float) -> dict[str, float]:
    return {
        "epsilon_scale": epsilon_scale,
        "xi_scale": xi_scale,
        "omega": 7,
        "beta_scale": 0.1,
        "vartheta_scale": 0.05,
    }


BUILTIN_PROFILES: dict[str, HyperParamProfile] = {
    "mit": _profile(
        "mit",
        {
            "voltage": _cell_row(0.00025, 0.00125),
            "temperature": _cell_row(0.00025, 0.0025),
            "charge_capacity": _cell_row(0.001, 0.00125),
            "discharge_capacity": _cell_row(0.001, 0.00125),
            "current": _cell_row(0.00025, 0.00125),
        },
    ),
    "tju": _profile(
        "tju",
        {
            "voltage": _cell_row(0.00015, 0.0025),
            "charge_capacity": _cell_row(0.00015, 0.001),
            "discharge_capacity": _cell_row(0.00015, 0.001),
            "current": _cell_row(0.00015, 0.0025),
        },
    ),
    "zju": _profile(
        "zju",
        {
            "voltage": _cell_row(0.00025, 0.005),
            "temperature": _cell_row(0.00025, 0.005),
            "soc": _cell_row(0.00025, 0.0025),
            "current": _cell_row(0.00025, 0.005),
        },
    ),
}


def get_profile(name: str) -> HyperParamProfile:
    try:
        return BUILTIN_PROFILES[name]
    except KeyError:
        raise KeyError(
            f"unknown profile {name!r}; available: {', '.join(sorted(BUILTIN_PROFILES))}"
        ) from None


def load_profiles(path: str | Path) -> dict[str, HyperParamProfile]:
    """Load user profiles from a JSON file.

    Layout: ``{"<profile>": {"<variable>": {"epsilon_scale": ..., ...}}}``.
    ``*_scale`` entries are multiplied by the series range at resolution
    time; plain entries are taken as constants.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    profiles: dict[str, HyperParamProfile] = {}
    for name, rules in raw.items():
        if not isinstance(rules, dict):
            raise ValueError(f"profile {name!r}: expected an object of variables")
        for variable, rule in rules.items():
            unknown = set(rule) - set(_SCALE_KEYS) - set(_CONST_KEYS)
            if unknown:
                raise ValueError(
                    f"profile {name!r} variable {variable!r}: unknown keys {sorted(unknown)}"
                )
        profiles[name] = HyperParamProfile(name=name, rules=rules)
    return profiles
