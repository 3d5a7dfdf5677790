"""Labeled synthetic module scenarios.

A scenario is an ordered list of operating phases (charge / discharge /
idle at some current level) plus optional injected faults.  Generation is a
pure function of the spec, including its seed: SOC integrates the current
(charging raises it, discharging lowers it), voltage tracks SOC linearly,
temperature ramps with |current| and relaxes when idle, capacities
integrate the signed current.  Gaussian noise and faults are applied last.

The returned :class:`GroundTruthLabel` records the analytic trend runs,
slope-change timestamps, injected spike positions, and the operational
status, so generated data doubles as an oracle for the annotator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .core import (
    DEFAULT_UNITS,
    MultiCellDataset,
    Origin,
    TimeSeries,
    Variable,
    build_dataset,
)

PHASE_KINDS = ("charge", "discharge", "idle")
FAULT_KINDS = ("spike", "drift", "level_shift")


@dataclass(frozen=True)
class Phase:
    kind: str
    duration: int
    level: float = 1.0  # current magnitude in A

    def __post_init__(self) -> None:
        if self.kind not in PHASE_KINDS:
            raise ValueError(f"unknown phase kind {self.kind!r}")
        if self.duration < 1:
            raise ValueError("phase duration must be >= 1")
        if self.level < 0:
            raise ValueError("phase level must be >= 0")

    @property
    def current(self) -> float:
        if self.kind == "charge":
            return self.level
        if self.kind == "discharge":
            return -self.level
        return 0.0


@dataclass(frozen=True)
class FaultSpec:
    variable: Variable
    kind: str
    begin: int
    end: int
    magnitude: float
    cell_id: int | None = None  # None -> whole module

    def __post_init__(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if not 1 <= self.begin <= self.end:
            raise ValueError("fault range must satisfy 1 <= begin <= end")


@dataclass(frozen=True)
class ScenarioSpec:
    cell_count: int
    length: int
    phases: tuple[Phase, ...]
    faults: tuple[FaultSpec, ...] = ()
    noise_std: Mapping[Variable, float] = field(default_factory=dict)
    seed: int = 0
    variables: tuple[Variable, ...] = (Variable.VOLTAGE, Variable.TEMPERATURE, Variable.SOC)
    initial_soc: float = 50.0
    soc_per_amp_minute: float = 0.2  # % SOC per minute per ampere
    base_voltage: float = 3.2
    volts_per_soc: float = 0.004
    ambient_temp: float = 25.0
    temp_rise_per_amp: float = 0.02  # °C per minute per |A| while active
    temp_fall_idle: float = 0.0      # °C per minute while idle
    cell_spread: Mapping[Variable, float] = field(default_factory=dict)
    sampling_period: float = 60.0
    module_id: str = "synthetic"

    def __post_init__(self) -> None:
        if self.cell_count < 1:
            raise ValueError("cell_count must be >= 1")
        if self.length < 2:
            raise ValueError("length must be >= 2")
        total = sum(p.duration for p in self.phases)
        if total != self.length:
            raise ValueError(
                f"phase durations sum to {total}, expected length {self.length}"
            )
        for fault in self.faults:
            if fault.end > self.length:
                raise ValueError(
                    f"fault range {fault.begin}..{fault.end} beyond length {self.length}"
                )
            if fault.cell_id is not None and not 1 <= fault.cell_id <= self.cell_count:
                raise ValueError(f"fault cell_id {fault.cell_id} out of range")
            if fault.variable not in self.variables:
                raise ValueError(f"fault variable {fault.variable.value} not generated")


@dataclass(frozen=True)
class TrendRun:
    begin: int
    end: int
    direction: str  # "up" | "down" | "flat"


@dataclass(frozen=True)
class AnomalyLabel:
    variable: Variable
    scope: str  # "cell" | "module"
    cell_id: int | None
    begin: int
    end: int
    fault: str


@dataclass(frozen=True)
class GroundTruthLabel:
    """Analytic expectations for a generated scenario.

    ``trend_runs``/``kinks`` are keyed by variable value and describe the
    fault-free profile shared by every cell; ``spikes`` lists injected
    point anomalies as (variable value, cell_id or None, timestamp).
    ``soc_rate_tail`` is the SOC slope (%/min) of the final phase, from
    which a remaining-time-to-cutoff truth is derivable in closed form.
    """

    trend_runs: Mapping[str, tuple[TrendRun, ...]]
    kinks: Mapping[str, tuple[int, ...]]
    spikes: tuple[tuple[str, int | None, int], ...]
    status: str  # "normal" | "abnormal"
    anomalies: tuple[AnomalyLabel, ...]
    soc_rate_tail: float

    def __post_init__(self) -> None:
        if self.status == "abnormal" and not self.anomalies:
            raise ValueError("abnormal label requires at least one anomaly")


def _phase_current(spec: ScenarioSpec) -> np.ndarray:
    return np.concatenate(
        [np.full(p.duration, p.current, dtype=float) for p in spec.phases]
    )


def _integrate(increments: np.ndarray, start: float) -> np.ndarray:
    """Cumulative profile with x[0] = start and x[t] = x[t-1] + inc[t]."""
    out = start + np.cumsum(increments)
    return out - increments[0]


def _cell_offsets(spec: ScenarioSpec, variable: Variable) -> np.ndarray:
    spread = float(spec.cell_spread.get(variable, 0.0))
    n = spec.cell_count
    if n == 1 or spread == 0.0:
        return np.zeros(n)
    return np.linspace(-spread / 2, spread / 2, n)


def _analytic_rates(spec: ScenarioSpec, variable: Variable) -> list[float]:
    """Per-phase slope of the fault-free profile for one variable."""
    rates = []
    for p in spec.phases:
        current = p.current
        if variable is Variable.SOC:
            rates.append(spec.soc_per_amp_minute * current)
        elif variable is Variable.VOLTAGE:
            rates.append(spec.volts_per_soc * spec.soc_per_amp_minute * current)
        elif variable is Variable.TEMPERATURE:
            if current != 0.0:
                rates.append(spec.temp_rise_per_amp * abs(current))
            else:
                rates.append(-spec.temp_fall_idle)
        elif variable is Variable.CHARGE_CAPACITY:
            rates.append(max(current, 0.0) * spec.sampling_period / 3600.0)
        elif variable is Variable.DISCHARGE_CAPACITY:
            rates.append(max(-current, 0.0) * spec.sampling_period / 3600.0)
        elif variable is Variable.CURRENT:
            rates.append(0.0)
        else:
            rates.append(0.0)
    return rates


def _phase_bounds(spec: ScenarioSpec) -> list[tuple[int, int]]:
    bounds = []
    begin = 1
    for p in spec.phases:
        bounds.append((begin, begin + p.duration - 1))
        begin += p.duration
    return bounds


def _trend_runs(spec: ScenarioSpec, variable: Variable) -> tuple[TrendRun, ...]:
    rates = _analytic_rates(spec, variable)
    bounds = _phase_bounds(spec)
    runs: list[TrendRun] = []
    for (begin, end), rate in zip(bounds, rates):
        direction = "up" if rate > 0 else "down" if rate < 0 else "flat"
        if runs and runs[-1].direction == direction:
            runs[-1] = TrendRun(runs[-1].begin, end, direction)
        else:
            runs.append(TrendRun(begin, end, direction))
    return tuple(runs)


def _kinks(spec: ScenarioSpec, variable: Variable) -> tuple[int, ...]:
    """Timestamps (end of the earlier phase) where slope or level changes."""
    bounds = _phase_bounds(spec)
    rates = _analytic_rates(spec, variable)
    levels = [p.current for p in spec.phases]
    out = []
    for i in range(len(spec.phases) - 1):
        slope_change = rates[i] != rates[i + 1]
        level_change = variable is Variable.CURRENT and levels[i] != levels[i + 1]
        if slope_change or level_change:
            out.append(bounds[i][1])
    return tuple(out)


def generate_synthetic(spec: ScenarioSpec) -> tuple[MultiCellDataset, GroundTruthLabel]:
    """Build a deterministic labeled dataset from a scenario spec."""
    rng = np.random.default_rng(spec.seed)
    current = _phase_current(spec)
    length = spec.length

    base_profiles: dict[Variable, np.ndarray] = {}
    soc_inc = spec.soc_per_amp_minute * current
    soc = _integrate(soc_inc, spec.initial_soc)
    for variable in spec.variables:
        if variable is Variable.SOC:
            base_profiles[variable] = soc
        elif variable is Variable.VOLTAGE:
            base_profiles[variable] = spec.base_voltage + spec.volts_per_soc * (
                soc - spec.initial_soc
            )
        elif variable is Variable.TEMPERATURE:
            inc = np.where(
                current != 0.0,
                spec.temp_rise_per_amp * np.abs(current),
                -spec.temp_fall_idle,
            )
            base_profiles[variable] = _integrate(inc, spec.ambient_temp)
        elif variable is Variable.CHARGE_CAPACITY:
            inc = np.maximum(current, 0.0) * spec.sampling_period / 3600.0
            base_profiles[variable] = _integrate(inc, 0.0)
        elif variable is Variable.DISCHARGE_CAPACITY:
            inc = np.maximum(-current, 0.0) * spec.sampling_period / 3600.0
            base_profiles[variable] = _integrate(inc, 0.0)
        elif variable is Variable.CURRENT:
            base_profiles[variable] = current.copy()
        else:
            raise ValueError(f"cannot generate variable {variable.value}")

    # Noise is drawn in a fixed order (variables as listed, then module
    # current) so the output is a pure function of the spec.
    matrices: dict[Variable, np.ndarray] = {}
    for variable in spec.variables:
        offsets = _cell_offsets(spec, variable)
        matrix = np.tile(base_profiles[variable], (spec.cell_count, 1)) + offsets[:, None]
        std = float(spec.noise_std.get(variable, 0.0))
        if std > 0:
            matrix = matrix + rng.normal(0.0, std, size=matrix.shape)
        matrices[variable] = matrix
    module_current = current.copy()
    current_std = float(spec.noise_std.get(Variable.CURRENT, 0.0))
    if current_std > 0:
        module_current = module_current + rng.normal(0.0, current_std, size=length)

    spikes: list[tuple[str, int | None, int]] = []
    anomalies: list[AnomalyLabel] = []
    for fault in spec.faults:
        span = slice(fault.begin - 1, fault.end)
        width = fault.end - fault.begin + 1
        if fault.kind == "spike":
            bump = np.full(width, fault.magnitude)
            spikes.extend(
                (fault.variable.value, fault.cell_id, t)
                for t in range(fault.begin, fault.end + 1)
            )
        elif fault.kind == "drift":
            bump = fault.magnitude * np.arange(1, width + 1) / width
        else:  # level_shift
            bump = np.full(width, fault.magnitude)
        targets = [fault.cell_id] if fault.cell_id else range(1, spec.cell_count + 1)
        for cid in targets:
            matrices[fault.variable][cid - 1, span] += bump
        anomalies.append(
            AnomalyLabel(
                variable=fault.variable,
                scope="cell" if fault.cell_id else "module",
                cell_id=fault.cell_id,
                begin=fault.begin,
                end=fault.end,
                fault=fault.kind,
            )
        )

    per_cell: dict[int, dict[Variable, TimeSeries]] = {}
    for cid in range(1, spec.cell_count + 1):
        per_cell[cid] = {
            variable: TimeSeries(
                name=f"{_label(variable)} of Cell #{cid}",
                variable=variable,
                unit=DEFAULT_UNITS[variable],
                sampling_period=spec.sampling_period,
                values=tuple(float(v) for v in matrices[variable][cid - 1]),
                origin=Origin.cell(cid),
            )
            for variable in spec.variables
        }
    current_series = TimeSeries(
        name="current of the LIB module",
        variable=Variable.CURRENT,
        unit=DEFAULT_UNITS[Variable.CURRENT],
        sampling_period=spec.sampling_period,
        values=tuple(float(v) for v in module_current),
        origin=Origin.module(),
    )
    dataset = build_dataset(spec.module_id, per_cell, current_series)

    tracked = tuple(spec.variables) + (Variable.CURRENT,)
    label = GroundTruthLabel(
        trend_runs={v.value: _trend_runs(spec, v) for v in tracked},
        kinks={v.value: _kinks(spec, v) for v in tracked},
        spikes=tuple(spikes),
        status="abnormal" if spec.faults else "normal",
        anomalies=tuple(anomalies),
        soc_rate_tail=spec.soc_per_amp_minute * spec.phases[-1].current,
    )
    return dataset, label


def _label(variable: Variable) -> str:
    from .core import VARIABLE_LABELS

    return VARIABLE_LABELS[variable]
