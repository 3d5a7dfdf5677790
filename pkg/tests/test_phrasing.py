import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_series
from ts2r.core import (
    AttributeKind,
    EventKind,
    Origin,
    PointEvent,
    Segment,
    SegmentStats,
    SeriesAnnotation,
)
from ts2r.phrasing import (
    TemplateCatalog,
    describe_phases,
    format_value,
    load_catalog,
    natural_join,
    ordinal,
    parse_expression,
    render_events,
    render_segment,
    render_series,
)
from ts2r.stats import PhaseKind, PhaseSegment


def _segment(begin, end, attribute, label, **stats):
    defaults = dict(mean=stats.get("mean", 1.0), std=stats.get("std", 0.0),
                    initial=stats.get("initial", 1.0), final=stats.get("final", 1.0),
                    min=stats.get("min", 0.0), max=stats.get("max", 2.0))
    return Segment(begin, end, attribute, label, SegmentStats(**defaults))


class TestOrdinal:
    def test_teens_take_th(self):
        assert ordinal(11) == "11th"
        assert ordinal(12) == "12th"
        assert ordinal(13) == "13th"
        assert ordinal(111) == "111th"

    def test_standard_suffixes(self):
        assert ordinal(1) == "1st"
        assert ordinal(2) == "2nd"
        assert ordinal(3) == "3rd"
        assert ordinal(4) == "4th"
        assert ordinal(21) == "21st"
        assert ordinal(42) == "42nd"
        assert ordinal(73) == "73rd"
        assert ordinal(100) == "100th"

    def test_every_value_to_200(self):
        for n in range(1, 201):
            text = ordinal(n)
            assert text.startswith(str(n))
            suffix = text[len(str(n)):]
            if n % 100 in (11, 12, 13):
                assert suffix == "th"
            elif n % 10 == 1:
                assert suffix == "st"
            elif n % 10 == 2:
                assert suffix == "nd"
            elif n % 10 == 3:
                assert suffix == "rd"
            else:
                assert suffix == "th"


class TestFormatting:
    def test_raw_precision_kept(self):
        assert format_value(3.1) == "3.1"
        assert format_value(3.75) == "3.75"
        assert format_value(4.0) == "4"
        assert format_value(-2.5) == "-2.5"

    def test_natural_join(self):
        assert natural_join(["a"]) == "a"
        assert natural_join(["a", "b"]) == "a and b"
        assert natural_join(["a", "b", "c"]) == "a, b, and c"


class TestGoldenSentences:
    """The built-in catalog must reproduce the documented example sentences
    byte for byte."""

    def test_trend_increasing(self):
        seg = _segment(1, 30, AttributeKind.TREND, "increasing",
                       initial=3.1, final=3.5, min=3.1, max=3.5, mean=3.3)
        expr = render_segment(seg, "voltage of Cell #1", "V")
        assert expr.text == "From 1st to 30th time, voltage of Cell #1 increases from 3.1V to 3.5V."

    def test_trend_stable(self):
        seg = _segment(1, 30, AttributeKind.TREND, "stable",
                       min=3.1, max=3.4, mean=3.124, std=0.0089)
        expr = render_segment(seg, "voltage of Cell #1", "V")
        assert expr.text == (
            "From 1st to 30th time, voltage of Cell #1 is stable around 3.1V~3.4V "
            "with mean of 3.1240V and std. of 0.0089."
        )

    def test_transition_events(self):
        events = [PointEvent(EventKind.TRANSITION, 50, 0.1),
                  PointEvent(EventKind.TRANSITION, 70, 0.2)]
        expr = render_events(events, EventKind.TRANSITION, "voltage of Cell #1", "V")
        assert expr.text == (
            "At the 50th and 70th time, transition points are observed from voltage of Cell #1."
        )

    def test_fluctuation(self):
        seg = _segment(1, 5, AttributeKind.FLUCTUATION, "noticeable")
        expr = render_segment(seg, "voltage of Cell #1", "V")
        assert expr.text == "From 1st to 5th time, voltage of Cell #1 shows fluctuation."

    def test_outliers(self):
        events = [PointEvent(EventKind.OUTLIER, 11, 3.7),
                  PointEvent(EventKind.OUTLIER, 14, 3.75),
                  PointEvent(EventKind.OUTLIER, 17, 3.7)]
        expr = render_events(events, EventKind.OUTLIER, "voltage of Cell #1", "V")
        assert expr.text == (
            "At time 11, 14, and 17, outliers (3.7V, 3.75V, 3.7V) are observed "
            "from voltage of Cell #1."
        )

    def test_amplitude(self):
        seg = _segment(1, 50, AttributeKind.AMPLITUDE_LEVEL, "significant",
                       mean=1.555, std=0.0023, min=1.5, max=1.6)
        expr = render_segment(seg, "Shannon entropy", "")
        assert expr.text == (
            "From 1st to 50th time, Shannon entropy shows significant level "
            "with mean of 1.5550 and std. of 0.0023."
        )


class TestRenderRules:
    def test_empty_events_render_nothing(self):
        assert render_events([], EventKind.TRANSITION, "x", "V") is None
        assert render_events([], EventKind.OUTLIER, "x", "V") is None

    def test_slight_fluctuation_segment_renders_nothing(self):
        seg = _segment(1, 10, AttributeKind.FLUCTUATION, "slight")
        assert render_segment(seg, "x", "V") is None

    def test_single_transition(self):
        events = [PointEvent(EventKind.TRANSITION, 5, 0.1)]
        expr = render_events(events, EventKind.TRANSITION, "voltage of Cell #2", "V")
        assert expr.text == (
            "At the 5th time, transition points are observed from voltage of Cell #2."
        )

    def test_missing_template_raises(self):
        catalog = TemplateCatalog(templates={})
        seg = _segment(1, 10, AttributeKind.TREND, "increasing")
        with pytest.raises(KeyError, match="no template"):
            render_segment(seg, "x", "V", catalog)

    def test_catalog_override_file(self, tmp_path):
        path = tmp_path / "catalog.json"
        path.write_text(
            '{"templates": {"fluctuation.none": ""},'
            ' "descriptor_words": {"increasing": "climbs"}}'
        )
        catalog = load_catalog(path)
        seg = _segment(1, 10, AttributeKind.TREND, "increasing", initial=1.0, final=2.0)
        expr = render_segment(seg, "x", "V", catalog)
        assert "climbs" in expr.text


class TestRenderSeries:
    def _annotation(self):
        series = make_series([3.0] * 100)
        return SeriesAnnotation(
            series=series,
            trend_segments=(
                _segment(1, 50, AttributeKind.TREND, "increasing", initial=3.0, final=3.5,
                         mean=3.2, min=3.0, max=3.5),
                _segment(51, 100, AttributeKind.TREND, "stable", mean=3.5, std=0.001,
                         min=3.45, max=3.55),
            ),
            fluctuation_segments=(
                _segment(1, 100, AttributeKind.FLUCTUATION, "slight"),
            ),
            transitions=(PointEvent(EventKind.TRANSITION, 50, 0.02),),
        )

    def test_order_and_count(self):
        expressions = render_series(self._annotation())
        attrs = [e.attribute for e in expressions]
        assert attrs == [
            AttributeKind.TREND, AttributeKind.TREND,
            AttributeKind.TRANSITION, AttributeKind.FLUCTUATION,
        ]

    def test_negative_fluctuation_sentence(self):
        expressions = render_series(self._annotation())
        assert expressions[-1].text == "Fluctuations remain slight over the entire period."

    def test_determinism(self):
        a = [e.text for e in render_series(self._annotation())]
        b = [e.text for e in render_series(self._annotation())]
        assert a == b

    def test_heterogeneity_series_renders_amplitude_and_fluctuation_only(self):
        series = make_series([0.1] * 20, name="standard deviation of voltage across cells",
                             origin=Origin.system("std"))
        annotation = SeriesAnnotation(
            series=series,
            fluctuation_segments=(_segment(1, 20, AttributeKind.FLUCTUATION, "slight"),),
            amplitude_segments=(
                _segment(1, 20, AttributeKind.AMPLITUDE_LEVEL, "slight", mean=0.1,
                         std=0.0, min=0.0, max=0.2),
            ),
        )
        expressions = render_series(annotation)
        assert [e.attribute for e in expressions] == [
            AttributeKind.FLUCTUATION, AttributeKind.AMPLITUDE_LEVEL,
        ]

    def test_constant_series_single_stable_expression(self):
        series = make_series([2.0] * 30)
        annotation = SeriesAnnotation(
            series=series,
            trend_segments=(_segment(1, 30, AttributeKind.TREND, "stable", mean=2.0,
                                     std=0.0, min=2.0, max=2.0),),
        )
        expressions = render_series(annotation)
        assert len(expressions) == 1
        assert "is stable around" in expressions[0].text


class TestPhases:
    def test_sentences(self):
        phases = [PhaseSegment(PhaseKind.CHARGING, 1, 50),
                  PhaseSegment(PhaseKind.DISCHARGING, 51, 90),
                  PhaseSegment(PhaseKind.IDLE, 91, 100)]
        texts = [e.text for e in describe_phases(phases)]
        assert texts == [
            "From 1 to 50 samples, the LIB module undergoes charging.",
            "From 51 to 90 samples, the LIB module undergoes discharging.",
            "From 91 to 100 samples, the LIB module stays idle.",
        ]


spans = st.tuples(st.integers(1, 180), st.integers(1, 20)).map(
    lambda t: (t[0], t[0] + t[1])
)


class TestRoundTrip:
    """Every emitted template parses back to the exact descriptor and span."""

    @settings(max_examples=200, deadline=None)
    @given(spans, st.sampled_from(["increasing", "decreasing"]),
           st.floats(-10, 10), st.floats(-10, 10))
    def test_trend_round_trip(self, span, label, initial, final):
        begin, end = span
        seg = _segment(begin, end, AttributeKind.TREND, label,
                       initial=initial, final=final,
                       mean=(initial + final) / 2,
                       min=min(initial, final), max=max(initial, final))
        expr = render_segment(seg, "voltage of Cell #1", "V")
        parsed = parse_expression(expr.text)
        assert parsed.attribute is AttributeKind.TREND
        assert parsed.label == label
        assert (parsed.begin, parsed.end) == (begin, end)
        assert parsed.values["initial"] == pytest.approx(initial)
        assert parsed.values["final"] == pytest.approx(final)
        assert parsed.name == "voltage of Cell #1"

    @settings(max_examples=200, deadline=None)
    @given(spans, st.floats(0, 5), st.floats(0, 1))
    def test_stable_round_trip(self, span, mean, std):
        begin, end = span
        seg = _segment(begin, end, AttributeKind.TREND, "stable",
                       mean=mean, std=std, min=mean - 1, max=mean + 1)
        expr = render_segment(seg, "SOC of Cell #3", "%")
        parsed = parse_expression(expr.text)
        assert parsed.label == "stable"
        assert (parsed.begin, parsed.end) == (begin, end)
        assert parsed.name == "SOC of Cell #3"

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 200), min_size=1, max_size=6, unique=True))
    def test_transition_round_trip(self, times)  :
        times = sorted(times)
        events = [PointEvent(EventKind.TRANSITION, t, 0.1) for t in times]
        expr = render_events(events, EventKind.TRANSITION, "temperature of Cell #9", "°C")
        parsed = parse_expression(expr.text)
        assert parsed.attribute is AttributeKind.TRANSITION
        assert list(parsed.timestamps) == times
        assert parsed.name == "temperature of Cell #9"

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(1, 200), min_size=1, max_size=5, unique=True),
           st.floats(0.5, 9.5))
    def test_outlier_round_trip(self, times, base_value):
        times = sorted(times)
        events = [PointEvent(EventKind.OUTLIER, t, base_value) for t in times]
        expr = render_events(events, EventKind.OUTLIER, "voltage of Cell #4", "V")
        parsed = parse_expression(expr.text)
        assert parsed.attribute is AttributeKind.OUTLIER
        assert list(parsed.timestamps) == times
        assert parsed.name == "voltage of Cell #4"

    @settings(max_examples=200, deadline=None)
    @given(spans, st.sampled_from(["slight", "moderate", "significant"]),
           st.floats(0, 5), st.floats(0, 1))
    def test_amplitude_round_trip(self, span, label, mean, std):
        begin, end = span
        seg = _segment(begin, end, AttributeKind.AMPLITUDE_LEVEL, label,
                       mean=mean, std=std, min=mean - 1, max=mean + 1)
        expr = render_segment(seg, "Shannon entropy of voltage across cells", "")
        parsed = parse_expression(expr.text)
        assert parsed.attribute is AttributeKind.AMPLITUDE_LEVEL
        assert parsed.label == label
        assert (parsed.begin, parsed.end) == (begin, end)

    def test_fluctuation_round_trip(self):
        seg = _segment(3, 17, AttributeKind.FLUCTUATION, "noticeable")
        expr = render_segment(seg, "voltage of Cell #1", "V")
        parsed = parse_expression(expr.text)
        assert parsed.attribute is AttributeKind.FLUCTUATION
        assert (parsed.begin, parsed.end) == (3, 17)

    def test_unknown_sentence_rejected(self):
        with pytest.raises(ValueError, match="unrecognized"):
            parse_expression("The cell is fine.")
