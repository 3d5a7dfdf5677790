"""Render descriptor segments and events into templated sentences.

The built-in catalog produces sentences like:

    From 1st to 30th time, voltage of Cell #1 increases from 3.1V to 3.5V.
    At the 50th and 70th time, transition points are observed from voltage
    of Cell #1.

Attributes without findings render nothing, except fluctuation, which emits
an explicit negative sentence so reports can state the absence.  Rendering
is deterministic and the templates are unambiguous: ``parse_expression``
recovers the descriptor and span from any emitted sentence.

Formatting rules: means and stds use 4 decimal places, initial/final/min/max
values keep their input precision, units are appended without a space, and
the std never carries a unit.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .core import (
    AttributeKind,
    EventKind,
    PointEvent,
    Segment,
    SeriesAnnotation,
)
from .stats import PhaseKind, PhaseSegment


class TemplateError(KeyError):
    """A descriptor reached rendering without a matching template."""


def ordinal(n: int) -> str:
    """1 -> 1st, 2 -> 2nd, 11 -> 11th, 21 -> 21st, ..."""
    if n % 100 in (11, 12, 13):
        return f"{n}th"
    return f"{n}{ {1: 'st', 2: 'nd', 3: 'rd'}.get(n % 10, 'th') }"


def format_value(x: float) -> str:
    """Shortest faithful rendering of a raw value (3.1 -> '3.1', 4.0 -> '4')."""
    x = float(x)
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


def format_stat(x: float) -> str:
    """Fixed 4-decimal rendering used for means and stds."""
    return f"{float(x):.4f}"


def natural_join(items: Sequence[str]) -> str:
    """'a' / 'a and b' / 'a, b, and c'."""
    if not items:
        return ""
    if len(items) == 1:
        return items[0]
    if len(items) == 2:
        return f"{items[0]} and {items[1]}"
    return f"{', '.join(items[:-1])}, and {items[-1]}"


DEFAULT_TEMPLATES: dict[str, str] = {
    "trend.increasing": "From {begin} to {end} time, {name} {descriptor} from {initial} to {final}.",
    "trend.decreasing": "From {begin} to {end} time, {name} {descriptor} from {initial} to {final}.",
    "trend.stable": "From {begin} to {end} time, {name} is stable around {min}~{max} with mean of {mean} and std. of {std}.",
    "transition.with": "At the {times} time, transition points are observed from {name}.",
    "transition.without": "",
    "fluctuation.noticeable": "From {begin} to {end} time, {name} shows fluctuation.",
    "fluctuation.none": "Fluctuations remain slight over the entire period.",
    "outlier.with": "At time {times}, outliers ({values}) are observed from {name}.",
    "outlier.without": "",
    "amplitude.slight": "From {begin} to {end} time, {name} shows {level} level with mean of {mean} and std. of {std}.",
    "amplitude.moderate": "From {begin} to {end} time, {name} shows {level} level with mean of {mean} and std. of {std}.",
    "amplitude.significant": "From {begin} to {end} time, {name} shows {level} level with mean of {mean} and std. of {std}.",
}

#: Verb forms for trend descriptors inside the increase/decrease template.
DEFAULT_DESCRIPTOR_WORDS: dict[str, str] = {
    "increasing": "increases",
    "decreasing": "decreases",
}


@dataclass(frozen=True)
class TemplateCatalog:
    """Phrasing templates keyed by '<attribute>.<descriptor>'.

    Placeholders: {begin} {end} (ordinals), {name}, {descriptor}, {initial}
    {final} {min} {max} (unit-suffixed raw values), {mean} {std} (4-decimal),
    {times}, {values}, {level}.  An empty template means the descriptor emits
    nothing.
    """

    templates: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_TEMPLATES))
    descriptor_words: Mapping[str, str] = field(
        default_factory=lambda: dict(DEFAULT_DESCRIPTOR_WORDS)
    )

    def template_for(self, attribute: str, descriptor: str) -> str:
        key = f"{attribute}.{descriptor}"
        try:
            return self.templates[key]
        except KeyError:
            raise TemplateError(f"no template for {key!r}") from None


def load_catalog(path: str | Path) -> TemplateCatalog:
    """Load template overrides from a JSON file.

    Layout: ``{"templates": {...}, "descriptor_words": {...}}``; entries not
    present fall back to the built-ins.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    templates = dict(DEFAULT_TEMPLATES)
    templates.update(raw.get("templates", {}))
    words = dict(DEFAULT_DESCRIPTOR_WORDS)
    words.update(raw.get("descriptor_words", {}))
    return TemplateCatalog(templates=templates, descriptor_words=words)


@dataclass(frozen=True)
class Expression:
    """One rendered sentence with its provenance."""

    text: str
    series_name: str
    attribute: AttributeKind
    begin: int | None = None
    end: int | None = None
    timestamps: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("expression text must be non-empty")


def _with_unit(rendered: str, unit: str) -> str:
    return f"{rendered}{unit}"


def render_segment(
    segment: Segment, name: str, unit: str, catalog: TemplateCatalog | None = None
) -> Expression | None:
    """Render one consolidated segment; None when nothing should be said."""
    catalog = catalog or TemplateCatalog()
    if segment.attribute is AttributeKind.TREND:
        template = catalog.template_for("trend", segment.label)
        if segment.label == "stable":
            text = template.format(
                begin=ordinal(segment.begin),
                end=ordinal(segment.end),
                name=name,
                min=_with_unit(format_value(segment.stats.min), unit),
                max=_with_unit(format_value(segment.stats.max), unit),
                mean=_with_unit(format_stat(segment.stats.mean), unit),
                std=format_stat(segment.stats.std),
            )
        else:
            text = template.format(
                begin=ordinal(segment.begin),
                end=ordinal(segment.end),
                name=name,
                descriptor=catalog.descriptor_words.get(segment.label, segment.label),
                initial=_with_unit(format_value(segment.stats.initial), unit),
                final=_with_unit(format_value(segment.stats.final), unit),
            )
    elif segment.attribute is AttributeKind.FLUCTUATION:
        if segment.label != "noticeable":
            return None
        template = catalog.template_for("fluctuation", "noticeable")
        text = template.format(
            begin=ordinal(segment.begin), end=ordinal(segment.end), name=name
        )
    elif segment.attribute is AttributeKind.AMPLITUDE_LEVEL:
        template = catalog.template_for("amplitude", segment.label)
        text = template.format(
            begin=ordinal(segment.begin),
            end=ordinal(segment.end),
            name=name,
            level=segment.label,
            mean=_with_unit(format_stat(segment.stats.mean), unit),
            std=format_stat(segment.stats.std),
        )
    else:
        raise TemplateError(f"segment attribute {segment.attribute} is not renderable")
    if not text:
        return None
    return Expression(
        text=text, series_name=name, attribute=segment.attribute,
        begin=segment.begin, end=segment.end,
    )


def render_events(
    events: Sequence[PointEvent],
    kind: EventKind,
    name: str,
    unit: str,
    catalog: TemplateCatalog | None = None,
) -> Expression | None:
    """Render a sorted event list into one sentence; None when empty."""
    catalog = catalog or TemplateCatalog()
    attribute = (
        AttributeKind.TRANSITION if kind is EventKind.TRANSITION else AttributeKind.OUTLIER
    )
    if not events:
        # "without" templates are empty by default: nothing is said.
        template = catalog.template_for(attribute.value, "without")
        if not template:
            return None
        return Expression(template.format(name=name), name, attribute)
    timestamps = tuple(ev.timestamp for ev in events)
    if kind is EventKind.TRANSITION:
        text = catalog.template_for("transition", "with").format(
            times=natural_join([ordinal(t) for t in timestamps]), name=name
        )
    else:
        text = catalog.template_for("outlier", "with").format(
            times=natural_join([str(t) for t in timestamps]),
            values=", ".join(_with_unit(format_value(ev.value), unit) for ev in events),
            name=name,
        )
    return Expression(text=text, series_name=name, attribute=attribute, timestamps=timestamps)


def render_series(
    annotation: SeriesAnnotation, catalog: TemplateCatalog | None = None
) -> list[Expression]:
    """All expressions for one series, in the fixed order:

    trend segments, transitions, noticeable fluctuation segments (or the
    explicit negative sentence), outliers, amplitude segments.
    """
    catalog = catalog or TemplateCatalog()
    name = annotation.series.name
    unit = annotation.series.unit
    out: list[Expression] = []
    for seg in annotation.trend_segments:
        expr = render_segment(seg, name, unit, catalog)
        if expr:
            out.append(expr)
    expr = render_events(annotation.transitions, EventKind.TRANSITION, name, unit, catalog)
    if expr:
        out.append(expr)
    if annotation.fluctuation_segments:
        noticeable = [
            render_segment(seg, name, unit, catalog)
            for seg in annotation.fluctuation_segments
            if seg.label == "noticeable"
        ]
        if noticeable:
            out.extend(e for e in noticeable if e)
        else:
            text = catalog.template_for("fluctuation", "none")
            if text:
                out.append(
                    Expression(
                        text=text, series_name=name, attribute=AttributeKind.FLUCTUATION,
                        begin=1, end=annotation.series.length,
                    )
                )
    expr = render_events(annotation.outliers, EventKind.OUTLIER, name, unit, catalog)
    if expr:
        out.append(expr)
    for seg in annotation.amplitude_segments:
        expr = render_segment(seg, name, unit, catalog)
        if expr:
            out.append(expr)
    return out


_PHASE_WORDS = {
    PhaseKind.CHARGING: "undergoes charging",
    PhaseKind.DISCHARGING: "undergoes discharging",
    PhaseKind.IDLE: "stays idle",
}


def describe_phases(phases: Sequence[PhaseSegment], name: str = "the LIB module") -> list[Expression]:
    """One sentence per operational phase of the module current."""
    out = []
    for seg in phases:
        text = f"From {seg.begin} to {seg.end} samples, {name} {_PHASE_WORDS[seg.kind]}."
        out.append(
            Expression(
                text=text, series_name=name, attribute=AttributeKind.TREND,
                begin=seg.begin, end=seg.end,
            )
        )
    return out


# --------------------------------------------------------------------------
# Round-trip parsing of built-in templates (used by tests and the offline
# report filler).

_NUM = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"


def _parse_ordinal(token: str) -> int:
    return int(re.match(r"(\d+)", token).group(1))


def _parse_value(token: str) -> tuple[float, str]:
    m = re.match(rf"({_NUM})(.*)$", token)
    if not m:
        raise ValueError(f"cannot parse value from {token!r}")
    return float(m.group(1)), m.group(2)


@dataclass(frozen=True)
class ParsedExpression:
    attribute: AttributeKind
    label: str | None
    name: str
    begin: int | None = None
    end: int | None = None
    timestamps: tuple[int, ...] = ()
    values: Mapping[str, float] = field(default_factory=dict)
    unit: str = ""


_TREND_RE = re.compile(
    rf"^From (\S+) to (\S+) time, (.+?) (increases|decreases) from ({_NUM}\S*) to ({_NUM}\S*)\.$"
)
_STABLE_RE = re.compile(
    rf"^From (\S+) to (\S+) time, (.+?) is stable around ({_NUM}\S*)~({_NUM}\S*) "
    rf"with mean of ({_NUM}\S*) and std\. of ({_NUM})\.$"
)
_TRANSITION_RE = re.compile(r"^At the (.+?) time, transition points are observed from (.+?)\.$")
_FLUCT_RE = re.compile(r"^From (\S+) to (\S+) time, (.+?) shows fluctuation\.$")
_OUTLIER_RE = re.compile(r"^At time (.+?), outliers \((.+?)\) are observed from (.+?)\.$")
_AMPLITUDE_RE = re.compile(
    rf"^From (\S+) to (\S+) time, (.+?) shows (slight|moderate|significant) level "
    rf"with mean of ({_NUM}\S*) and std\. of ({_NUM})\.$"
)
_NO_FLUCT_TEXT = DEFAULT_TEMPLATES["fluctuation.none"]


def parse_expression(text: str, series_name: str = "") -> ParsedExpression:
    """Recover descriptor, span, and values from a built-in-template sentence.

    Raises ValueError when the sentence matches no known template.
    """
    m = _STABLE_RE.match(text)
    if m:
        lo, lo_unit = _parse_value(m.group(4))
        hi, _ = _parse_value(m.group(5))
        mean, _ = _parse_value(m.group(6))
        return ParsedExpression(
            attribute=AttributeKind.TREND, label="stable", name=m.group(3),
            begin=_parse_ordinal(m.group(1)), end=_parse_ordinal(m.group(2)),
            values={"min": lo, "max": hi, "mean": mean, "std": float(m.group(7))},
            unit=lo_unit,
        )
    m = _TREND_RE.match(text)
    if m:
        initial, unit = _parse_value(m.group(5))
        final, _ = _parse_value(m.group(6))
        label = "increasing" if m.group(4) == "increases" else "decreasing"
        return ParsedExpression(
            attribute=AttributeKind.TREND, label=label, name=m.group(3),
            begin=_parse_ordinal(m.group(1)), end=_parse_ordinal(m.group(2)),
            values={"initial": initial, "final": final}, unit=unit,
        )
    m = _TRANSITION_RE.match(text)
    if m:
        times = tuple(
            _parse_ordinal(tok) for tok in re.findall(r"\d+(?:st|nd|rd|th)", m.group(1))
        )
        return ParsedExpression(
            attribute=AttributeKind.TRANSITION, label="with", name=m.group(2),
            timestamps=times,
        )
    m = _FLUCT_RE.match(text)
    if m:
        return ParsedExpression(
            attribute=AttributeKind.FLUCTUATION, label="noticeable", name=m.group(3),
            begin=_parse_ordinal(m.group(1)), end=_parse_ordinal(m.group(2)),
        )
    m = _OUTLIER_RE.match(text)
    if m:
        times = tuple(int(tok) for tok in re.findall(r"\d+", m.group(1)))
        vals = {}
        unit = ""
        for i, tok in enumerate(v.strip() for v in m.group(2).split(",")):
            val, unit = _parse_value(tok)
            vals[f"value_{i}"] = val
        return ParsedExpression(
            attribute=AttributeKind.OUTLIER, label="with", name=m.group(3),
            timestamps=times, values=vals, unit=unit,
        )
    m = _AMPLITUDE_RE.match(text)
    if m:
        mean, unit = _parse_value(m.group(5))
        return ParsedExpression(
            attribute=AttributeKind.AMPLITUDE_LEVEL, label=m.group(4), name=m.group(3),
            begin=_parse_ordinal(m.group(1)), end=_parse_ordinal(m.group(2)),
            values={"mean": mean, "std": float(m.group(6))}, unit=unit,
        )
    if text == _NO_FLUCT_TEXT:
        return ParsedExpression(
            attribute=AttributeKind.FLUCTUATION, label="none", name=series_name
        )
    raise ValueError(f"unrecognized expression: {text!r}")
