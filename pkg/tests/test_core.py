import pytest

from conftest import make_series
from ts2r.core import (
    AttributeKind,
    DatasetValidationError,
    HyperParams,
    Origin,
    PointEvent,
    EventKind,
    Segment,
    SegmentStats,
    SeriesAnnotation,
    Variable,
    attributes_for,
    build_dataset,
    check_segment_partition,
    validate_dataset,
)


def _stats(v):
    return SegmentStats(mean=v, std=0.0, initial=v, final=v, min=v, max=v)


def _cells(count, length, bad_cell=None, bad_length=None, nan_at=None):
    per_cell = {}
    for cid in range(1, count + 1):
        n = bad_length if cid == bad_cell else length
        values = [3.3] * n
        if nan_at and cid == nan_at[0]:
            values[nan_at[1]] = float("nan")
        per_cell[cid] = {
            Variable.VOLTAGE: make_series(values, name=f"voltage of Cell #{cid}",
                                          origin=Origin.cell(cid)),
        }
    return per_cell


def _current(length):
    return make_series([1.0] * length, name="current of the LIB module",
                       variable=Variable.CURRENT, unit="A", origin=Origin.module())


class TestTimeSeries:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="non-finite value at t=2"):
            make_series([1.0, float("nan"), 2.0])

    def test_rejects_single_sample(self):
        with pytest.raises(ValueError, match="at least 2"):
            make_series([1.0])

    def test_rejects_bad_period(self):
        with pytest.raises(ValueError, match="sampling_period"):
            make_series([1.0, 2.0], period=0.0)


class TestHyperParams:
    def test_accepts_spec_defaults(self):
        hp = HyperParams(epsilon=0.1, omega=7, xi=0.01, beta=0.1, vartheta=0.05,
                         delta1=1.5, delta2=3.0)
        assert hp.slice_width == 10
        assert hp.idle_current_fraction == 0.02

    def test_degenerate_zero_deltas_accepted(self):
        HyperParams(epsilon=0.0, omega=7, xi=0.0, beta=0.0, vartheta=0.0,
                    delta1=0.0, delta2=0.0)

    @pytest.mark.parametrize("field,value", [
        ("omega", 1), ("slice_width", 1), ("epsilon", -1e-9), ("xi", -0.1),
        ("beta", -0.1), ("vartheta", -0.1),
    ])
    def test_rejects_bad_values(self, field, value):
        kwargs = dict(epsilon=0.1, omega=7, xi=0.01, beta=0.1, vartheta=0.05,
                      delta1=1.0, delta2=2.0)
        kwargs[field] = value
        with pytest.raises(ValueError):
            HyperParams(**kwargs)

    def test_rejects_equal_nonzero_deltas(self):
        with pytest.raises(ValueError):
            HyperParams(epsilon=0.1, omega=7, xi=0.01, beta=0.1, vartheta=0.05,
                        delta1=2.0, delta2=2.0)


class TestApplicability:
    def test_cell_gets_full_shape_set(self):
        attrs = attributes_for(Origin.cell(3))
        assert AttributeKind.TREND in attrs
        assert AttributeKind.FLUCTUATION in attrs
        assert AttributeKind.AMPLITUDE_LEVEL not in attrs

    def test_extrema_skip_fluctuation(self):
        for stat in ("max", "min"):
            attrs = attributes_for(Origin.system(stat))
            assert AttributeKind.FLUCTUATION not in attrs
            assert AttributeKind.TREND in attrs

    def test_heterogeneity_gets_amplitude_only(self):
        for stat in ("std", "entropy"):
            attrs = attributes_for(Origin.system(stat))
            assert AttributeKind.AMPLITUDE_LEVEL in attrs
            assert AttributeKind.FLUCTUATION in attrs
            assert AttributeKind.TREND not in attrs
            assert AttributeKind.OUTLIER not in attrs


class TestPartitionCheck:
    def test_accepts_partition(self):
        segments = [
            Segment(1, 40, AttributeKind.TREND, "increasing", _stats(1.0)),
            Segment(41, 100, AttributeKind.TREND, "stable", _stats(1.0)),
        ]
        check_segment_partition(segments, 100)

    def test_rejects_gap(self):
        segments = [
            Segment(1, 40, AttributeKind.TREND, "increasing", _stats(1.0)),
            Segment(42, 100, AttributeKind.TREND, "stable", _stats(1.0)),
        ]
        with pytest.raises(ValueError, match="gap or overlap"):
            check_segment_partition(segments, 100)

    def test_rejects_equal_adjacent_labels(self):
        segments = [
            Segment(1, 40, AttributeKind.TREND, "stable", _stats(1.0)),
            Segment(41, 100, AttributeKind.TREND, "stable", _stats(1.0)),
        ]
        with pytest.raises(ValueError, match="share label"):
            check_segment_partition(segments, 100)

    def test_rejects_wrong_cover(self):
        segments = [Segment(1, 99, AttributeKind.TREND, "stable", _stats(1.0))]
        with pytest.raises(ValueError, match="ends at 99"):
            check_segment_partition(segments, 100)


class TestSeriesAnnotation:
    def test_events_must_strictly_increase(self):
        series = make_series([1.0] * 10)
        events = (PointEvent(EventKind.OUTLIER, 5, 1.0), PointEvent(EventKind.OUTLIER, 5, 1.0))
        with pytest.raises(ValueError, match="strictly increasing"):
            SeriesAnnotation(series=series, outliers=events)

    def test_event_beyond_length_rejected(self):
        series = make_series([1.0] * 10)
        with pytest.raises(ValueError, match="beyond"):
            SeriesAnnotation(series=series, outliers=(PointEvent(EventKind.OUTLIER, 11, 1.0),))


class TestValidateDataset:
    def test_well_formed_16_cells(self):
        ds = build_dataset("m1", _cells(16, 100), _current(100))
        assert validate_dataset(ds) is ds

    def test_length_mismatch_names_cell_and_variable(self):
        with pytest.raises(DatasetValidationError, match="length mismatch, cell 3 voltage"):
            build_dataset("m1", _cells(16, 100, bad_cell=3, bad_length=99), _current(100))

    def test_nan_names_location(self):
        with pytest.raises(ValueError, match="non-finite value at t=8"):
            _cells(4, 100, nan_at=(2, 7))

    def test_missing_cell_id(self):
        from ts2r.core import MultiCellDataset

        cells = _cells(4, 50)
        del cells[3]
        broken = MultiCellDataset(
            module_id="m1", cell_count=4, per_cell=cells,
            module_current=_current(50), length=50, sampling_period=60.0,
        )
        with pytest.raises(DatasetValidationError, match="missing cell id 3"):
            validate_dataset(broken)

    def test_all_violations_reported(self):
        cells = _cells(4, 50, bad_cell=2, bad_length=49)
        del cells[4]
        from ts2r.core import MultiCellDataset

        broken = MultiCellDataset(
            module_id="m1", cell_count=4, per_cell=cells,
            module_current=_current(50), length=50, sampling_period=60.0,
        )
        with pytest.raises(DatasetValidationError) as exc_info:
            validate_dataset(broken)
        violations = exc_info.value.violations
        assert any("missing cell id 4" in v for v in violations)
        assert any("length mismatch, cell 2 voltage" in v for v in violations)
