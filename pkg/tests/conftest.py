import numpy as np
import pytest

from ts2r.core import Origin, TimeSeries, Variable
from ts2r.synth import Phase, ScenarioSpec, generate_synthetic


def make_series(values, *, name="voltage of Cell #1", variable=Variable.VOLTAGE,
                unit="V", origin=None, period=60.0) -> TimeSeries:
    return TimeSeries(
        name=name,
        variable=variable,
        unit=unit,
        sampling_period=period,
        values=tuple(float(v) for v in values),
        origin=origin or Origin.cell(1),
    )


def random_series(rng: np.random.Generator, length: int) -> np.ndarray:
    """Mixed ramps / steps / noise, the menagerie the annotator must survive."""
    kind = rng.integers(0, 5)
    t = np.arange(length, dtype=float)
    if kind == 0:  # noisy ramp
        values = rng.uniform(-0.1, 0.1) * t + rng.normal(0, rng.uniform(0, 0.5), length)
    elif kind == 1:  # step
        split = int(rng.integers(1, length))
        values = np.where(t < split, 0.0, rng.uniform(0.5, 5.0))
        values = values + rng.normal(0, 0.05, length)
    elif kind == 2:  # two-slope kink
        split = int(rng.integers(1, length))
        s1, s2 = rng.uniform(-0.2, 0.2, 2)
        values = np.where(t < split, s1 * t, s1 * split + s2 * (t - split))
    elif kind == 3:  # noise around a level
        values = rng.normal(rng.uniform(-3, 3), rng.uniform(0.001, 1.0), length)
    else:  # constant with occasional spike
        values = np.full(length, rng.uniform(-2, 2))
        if rng.random() < 0.7:
            values[rng.integers(0, length)] += rng.uniform(2, 10)
    return values


@pytest.fixture
def zju_module():
    """16-cell, 100-minute module: idle then charge, mild spreads."""
    spec = ScenarioSpec(
        cell_count=16,
        length=100,
        phases=(Phase("idle", 40), Phase("charge", 60, 1.0)),
        cell_spread={Variable.SOC: 0.8, Variable.VOLTAGE: 0.01},
        seed=11,
    )
    return generate_synthetic(spec)
