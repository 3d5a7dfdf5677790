"""Shared domain types for multi-cell battery time-series analysis.

Conventions used across the package:

- Timestamps are 1-based inclusive indices everywhere a record or a rendered
  sentence mentions time.  Internal array math is 0-based but never leaks.
- All values must be finite; gaps are rejected at ingestion, never imputed.
- Standard deviations over a fixed population of cells (or a fixed span of
  samples) use the population divisor.
- All types are immutable value objects after construction and safe to share
  between concurrent workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence


class Variable(str, Enum):
    VOLTAGE = "voltage"
    TEMPERATURE = "temperature"
    SOC = "soc"
    CURRENT = "current"
    CHARGE_CAPACITY = "charge_capacity"
    DISCHARGE_CAPACITY = "discharge_capacity"
    DERIVED_STAT = "derived_stat"


#: Human-readable label used in sentences and report keys.
VARIABLE_LABELS: Mapping[Variable, str] = {
    Variable.VOLTAGE: "voltage",
    Variable.TEMPERATURE: "temperature",
    Variable.SOC: "SOC",
    Variable.CURRENT: "current",
    Variable.CHARGE_CAPACITY: "charging capacity",
    Variable.DISCHARGE_CAPACITY: "discharging capacity",
    Variable.DERIVED_STAT: "derived statistic",
}

#: Default unit string per variable.
DEFAULT_UNITS: Mapping[Variable, str] = {
    Variable.VOLTAGE: "V",
    Variable.TEMPERATURE: "°C",
    Variable.SOC: "%",
    Variable.CURRENT: "A",
    Variable.CHARGE_CAPACITY: "Ah",
    Variable.DISCHARGE_CAPACITY: "Ah",
    Variable.DERIVED_STAT: "",
}


class OriginKind(str, Enum):
    """Where a series comes from.

    ``module`` marks the shared module-level current of series-connected
    cells; the remaining ``system_*`` kinds mark cross-cell statistics.
    """

    CELL = "cell"
    MODULE = "module"
    SYSTEM_MEAN = "system_mean"
    SYSTEM_MAX = "system_max"
    SYSTEM_MIN = "system_min"
    SYSTEM_STD = "system_std"
    SYSTEM_ENTROPY = "system_entropy"


@dataclass(frozen=True)
class Origin:
    kind: OriginKind
    cell_id: int | None = None

    def __post_init__(self) -> None:
        if self.kind is OriginKind.CELL:
            if self.cell_id is None or self.cell_id < 1:
                raise ValueError("cell origin requires a positive cell_id")
        elif self.cell_id is not None:
            raise ValueError(f"{self.kind.value} origin takes no cell_id")

    @classmethod
    def cell(cls, cell_id: int) -> "Origin":
        return cls(OriginKind.CELL, cell_id)

    @classmethod
    def module(cls) -> "Origin":
        return cls(OriginKind.MODULE)

    @classmethod
    def system(cls, stat: str) -> "Origin":
        return cls(OriginKind(f"system_{stat}"))


class AttributeKind(str, Enum):
    TREND = "trend"
    TRANSITION = "transition"
    FLUCTUATION = "fluctuation"
    OUTLIER = "outlier"
    AMPLITUDE_LEVEL = "amplitude_level"
    TEMPORAL_MEAN = "temporal_mean"
    TEMPORAL_STD = "temporal_std"
    INITIAL_VALUE = "initial_value"
    FINAL_VALUE = "final_value"


_SHAPE_AND_STATS = frozenset(
    {
        AttributeKind.TREND,
        AttributeKind.TRANSITION,
        AttributeKind.FLUCTUATION,
        AttributeKind.OUTLIER,
        AttributeKind.TEMPORAL_MEAN,
        AttributeKind.TEMPORAL_STD,
        AttributeKind.INITIAL_VALUE,
        AttributeKind.FINAL_VALUE,
    }
)

_EXTREMA_ATTRS = frozenset(
    {
        AttributeKind.TREND,
        AttributeKind.TRANSITION,
        AttributeKind.OUTLIER,
        AttributeKind.TEMPORAL_MEAN,
        AttributeKind.TEMPORAL_STD,
        AttributeKind.INITIAL_VALUE,
        AttributeKind.FINAL_VALUE,
    }
)

_HETEROGENEITY_ATTRS = frozenset(
    {
        AttributeKind.FLUCTUATION,
        AttributeKind.AMPLITUDE_LEVEL,
        AttributeKind.TEMPORAL_MEAN,
        AttributeKind.TEMPORAL_STD,
    }
)


def attributes_for(origin: Origin) -> frozenset[AttributeKind]:
    """Semantic attributes applicable to a series of the given origin.

    Cell series and the cross-cell mean carry the full shape+statistics set;
    cross-cell extrema drop fluctuation; heterogeneity series (cross-cell
    std and entropy) carry amplitude level and fluctuation plus mean/std.
    """
    if origin.kind in (OriginKind.CELL, OriginKind.MODULE, OriginKind.SYSTEM_MEAN):
        return _SHAPE_AND_STATS
    if origin.kind in (OriginKind.SYSTEM_MAX, OriginKind.SYSTEM_MIN):
        return _EXTREMA_ATTRS
    return _HETEROGENEITY_ATTRS


@dataclass(frozen=True)
class TimeSeries:
    """One variable's regularly sampled values.

    ``sampling_period`` is in seconds; ``values`` must be finite and hold at
    least two samples so a slope is always computable.
    """

    name: str
    variable: Variable
    unit: str
    sampling_period: float
    values: tuple[float, ...]
    origin: Origin

    def __post_init__(self) -> None:
        if self.sampling_period <= 0:
            raise ValueError(f"{self.name}: sampling_period must be positive")
        if len(self.values) < 2:
            raise ValueError(f"{self.name}: need at least 2 samples")
        for i, v in enumerate(self.values, start=1):
            if not math.isfinite(v):
                raise ValueError(f"{self.name}: non-finite value at t={i}")

    @property
    def length(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class HyperParams:
    """Resolved descriptor-rule thresholds for one series.

    ``epsilon``: trend slope threshold; ``omega``/``xi``: transition window
    size and slope-difference threshold; ``beta``: fluctuation threshold on
    the detrended residual variance (or std when ``fluctuation_on_std``);
    ``vartheta``: outlier absolute-deviation threshold; ``delta1``/``delta2``:
    amplitude-level bounds.  A degenerate series range resolves every scaled
    threshold to 0, which is accepted: all comparisons are strict, so a
    constant series still reads as stable/slight with no events.
    """

    epsilon: float
    omega: int
    xi: float
    beta: float
    vartheta: float
    delta1: float
    delta2: float
    slice_width: int = 10
    idle_current_fraction: float = 0.02
    fluctuation_on_std: bool = False

    def __post_init__(self) -> None:
        if self.omega < 2:
            raise ValueError("omega must be >= 2")
        if self.slice_width < 2:
            raise ValueError("slice_width must be >= 2")
        for name in ("epsilon", "xi", "beta", "vartheta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.delta1 < 0 or self.delta2 < self.delta1:
            raise ValueError("need 0 <= delta1 <= delta2")
        if self.delta2 == self.delta1 and self.delta1 != 0:
            raise ValueError("delta2 must exceed delta1 (or both be 0)")
        if not 0 < self.idle_current_fraction < 1:
            raise ValueError("idle_current_fraction must be in (0, 1)")


@dataclass(frozen=True)
class SegmentStats:
    mean: float
    std: float
    initial: float
    final: float
    min: float
    max: float

    def __post_init__(self) -> None:
        if not (self.min <= self.mean <= self.max) or self.std < 0:
            raise ValueError("inconsistent segment statistics")


@dataclass(frozen=True)
class Segment:
    """Maximal run of slices sharing one descriptor, 1-based inclusive."""

    begin: int
    end: int
    attribute: AttributeKind
    label: str
    stats: SegmentStats

    def __post_init__(self) -> None:
        if not 1 <= self.begin <= self.end:
            raise ValueError("segment bounds must satisfy 1 <= begin <= end")


class EventKind(str, Enum):
    TRANSITION = "transition"
    OUTLIER = "outlier"


@dataclass(frozen=True)
class PointEvent:
    """Single-timestamp event.

    For outliers ``value`` is the series value at the flagged timestamp; for
    transitions it is the absolute slope difference that triggered the flag.
    """

    kind: EventKind
    timestamp: int
    value: float

    def __post_init__(self) -> None:
        if self.timestamp < 1:
            raise ValueError("timestamp must be >= 1")


# Trend / fluctuation / amplitude descriptor labels.
TREND_LABELS = ("increasing", "decreasing", "stable")
FLUCTUATION_LABELS = ("slight", "noticeable")
AMPLITUDE_LABELS = ("slight", "moderate", "significant")


@dataclass(frozen=True)
class SeriesAnnotation:
    """Consolidated descriptor segments and point events for one series."""

    series: TimeSeries
    trend_segments: tuple[Segment, ...] = ()
    fluctuation_segments: tuple[Segment, ...] = ()
    amplitude_segments: tuple[Segment, ...] = ()
    transitions: tuple[PointEvent, ...] = ()
    outliers: tuple[PointEvent, ...] = ()

    def __post_init__(self) -> None:
        length = self.series.length
        for attr_name in ("trend_segments", "fluctuation_segments", "amplitude_segments"):
            check_segment_partition(getattr(self, attr_name), length, what=attr_name)
        for attr_name in ("transitions", "outliers"):
            events = getattr(self, attr_name)
            last = 0
            for ev in events:
                if ev.timestamp <= last:
                    raise ValueError(f"{attr_name} not strictly increasing in timestamp")
                if ev.timestamp > length:
                    raise ValueError(f"{attr_name} timestamp {ev.timestamp} beyond L={length}")
                last = ev.timestamp


def check_segment_partition(
    segments: Sequence[Segment], length: int, *, what: str = "segments"
) -> None:
    """Assert that a non-empty segment list partitions [1, length].

    Segments must be contiguous, ordered, cover 1..length, and adjacent
    entries must carry different labels (consolidation completeness).
    An empty list is allowed: it marks an attribute that does not apply.
    """
    if not segments:
        return
    if segments[0].begin != 1:
        raise ValueError(f"{what}: first segment starts at {segments[0].begin}, not 1")
    if segments[-1].end != length:
        raise ValueError(f"{what}: last segment ends at {segments[-1].end}, not {length}")
    for prev, cur in zip(segments, segments[1:]):
        if cur.begin != prev.end + 1:
            raise ValueError(
                f"{what}: gap or overlap between t={prev.end} and t={cur.begin}"
            )
        if cur.label == prev.label:
            raise ValueError(f"{what}: adjacent segments share label {cur.label!r}")


class DatasetValidationError(ValueError):
    """Raised when a dataset violates its invariants.

    Carries the complete list of violations, each naming its location.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class MultiCellDataset:
    """Aligned per-cell series plus the shared module current.

    ``per_cell`` maps cell id (1..cell_count, no gaps) to that cell's series
    by variable.  Series-connected cells share ``module_current``.
    """

    module_id: str
    cell_count: int
    per_cell: Mapping[int, Mapping[Variable, TimeSeries]]
    module_current: TimeSeries
    length: int
    sampling_period: float

    @property
    def variables(self) -> tuple[Variable, ...]:
        """Variables present for cell 1, in insertion order."""
        first = self.per_cell[min(self.per_cell)]
        return tuple(first.keys())

    def cell_series(self, cell_id: int, variable: Variable) -> TimeSeries:
        return self.per_cell[cell_id][variable]


def validate_dataset(dataset: MultiCellDataset) -> MultiCellDataset:
    """Return the dataset iff every invariant holds.

    Raises :class:`DatasetValidationError` listing *all* violations with
    their location (cell, variable, index) otherwise.
    """
    violations: list[str] = []
    if dataset.cell_count < 1:
        violations.append("cell_count must be >= 1")
    expected_ids = set(range(1, dataset.cell_count + 1))
    actual_ids = set(dataset.per_cell.keys())
    for missing in sorted(expected_ids - actual_ids):
        violations.append(f"missing cell id {missing}")
    for extra in sorted(actual_ids - expected_ids):
        violations.append(f"unexpected cell id {extra}")

    variable_sets = {cid: tuple(sorted(v.value for v in series.keys()))
                     for cid, series in dataset.per_cell.items()}
    if len(set(variable_sets.values())) > 1:
        violations.append("cells disagree on the variable set")

    def check_series(ts: TimeSeries, where: str) -> None:
        if ts.length != dataset.length:
            violations.append(
                f"length mismatch, {where}: {ts.length} != {dataset.length}"
            )
        if ts.sampling_period != dataset.sampling_period:
            violations.append(f"sampling_period mismatch, {where}")

    for cid in sorted(actual_ids):
        for variable, ts in dataset.per_cell[cid].items():
            check_series(ts, f"cell {cid} {variable.value}")
    check_series(dataset.module_current, "module_current")
    if dataset.module_current.variable is not Variable.CURRENT:
        violations.append("module_current must have variable=current")

    if violations:
        raise DatasetValidationError(violations)
    return dataset


def build_dataset(
    module_id: str,
    per_cell: Mapping[int, Mapping[Variable, TimeSeries]],
    module_current: TimeSeries,
) -> MultiCellDataset:
    """Construct and validate a dataset, inferring length and period."""
    dataset = MultiCellDataset(
        module_id=module_id,
        cell_count=len(per_cell),
        per_cell=per_cell,
        module_current=module_current,
        length=module_current.length,
        sampling_period=module_current.sampling_period,
    )
    return validate_dataset(dataset)
