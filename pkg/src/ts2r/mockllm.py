"""Rule-based offline completion backend.

Fills each instruction's own output schema deterministically from the
descriptor expressions embedded in the prompt, so report generation, judge
scoring, and the downstream tasks all run without a network.  Every answer
is a pure function of the prompt text (plus the seed, reserved for future
randomized variants), which gives the pipeline a reproducible floor.
"""

from __future__ import annotations

import json
import re
from typing import Any, Mapping, Sequence

from .core import AttributeKind
from .phrasing import ParsedExpression, format_stat, format_value, natural_join, ordinal, parse_expression
from .report import (
    AGG_AVERAGE_KEYS,
    AGG_EXTREMUM_KEYS,
    CELL_BLOCK_KEYS,
    CELL_ID_KEY,
    CELLS_KEY,
    CURRENT_KEYS,
    OVERALL_KEY,
    parse_expression_groups,
)

_NUM = r"[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?"


def mock_complete(prompt_text: str, seed: int = 0) -> str:
    """Dispatch on the instruction inside the prompt and answer it."""
    if "forecast the possible value of average SOC" in prompt_text:
        return _answer_soc(prompt_text)
    if "determine whether there are any anomalies" in prompt_text:
        return _answer_monitoring(prompt_text)
    if "charge and discharge cycle management" in prompt_text:
        return _answer_management(prompt_text)
    if "score the following large language model (LLM) responses" in prompt_text:
        return _answer_judge(prompt_text)
    if "Please extract the data of each LIB Cell" in prompt_text:
        return _answer_cells_report(prompt_text)
    if 'complete the following "Lithium-ion battery Time-Series Description Text"' in prompt_text:
        return _answer_system_report(prompt_text)
    raise ValueError("mock backend does not recognize this prompt")


# --------------------------------------------------------------------------
# Report filling


def _parsed_group(groups: Mapping[str, list[str]], name: str) -> list[ParsedExpression]:
    out = []
    for text in groups.get(name, []):
        try:
            out.append(parse_expression(text, series_name=name))
        except ValueError:
            continue
    return out


def _span(p: ParsedExpression) -> str:
    return f"({p.begin}~{p.end}th time)"


_TREND_WORDS = {"increasing": "increase", "decreasing": "decrease", "stable": "stable"}


def _fill_trend(parsed: Sequence[ParsedExpression]) -> str:
    entries = [
        f"{_TREND_WORDS[p.label]} {_span(p)}"
        for p in parsed
        if p.attribute is AttributeKind.TREND
    ]
    return ", ".join(entries) if entries else "none"


def _fill_transitions(parsed: Sequence[ParsedExpression]) -> str:
    times: list[int] = []
    for p in parsed:
        if p.attribute is AttributeKind.TRANSITION:
            times.extend(p.timestamps)
    if not times:
        return "none"
    joined = natural_join([ordinal(t) for t in times])
    return f"transitions observed at the {joined} time"


def _fill_fluctuation(parsed: Sequence[ParsedExpression]) -> str:
    spans = [
        f"{p.begin}~{p.end}th"
        for p in parsed
        if p.attribute is AttributeKind.FLUCTUATION and p.label == "noticeable"
    ]
    if spans:
        return f"fluctuations detected in {', '.join(spans)} time."
    if any(p.attribute is AttributeKind.FLUCTUATION and p.label == "none" for p in parsed):
        return "fluctuations remain slight over the entire period"
    return "none"


def _fill_outliers(parsed: Sequence[ParsedExpression]) -> str:
    for p in parsed:
        if p.attribute is AttributeKind.OUTLIER:
            times = ", ".join(str(t) for t in p.timestamps)
            values = ", ".join(
                f"{format_value(p.values[k])}{p.unit}" for k in sorted(p.values)
            )
            return f"outliers at time {times} ({values})"
    return "none"


def _fill_mean_std(parsed: Sequence[ParsedExpression]) -> str:
    entries = []
    for p in parsed:
        if p.attribute is AttributeKind.TREND and p.label == "stable":
            entries.append(
                f"stable at {format_stat(p.values['mean'])}{p.unit}, "
                f"std is {format_stat(p.values['std'])} {_span(p)}."
            )
    return " ".join(entries) if entries else "none"


def _fill_initial_final(parsed: Sequence[ParsedExpression]) -> str:
    entries = []
    for p in parsed:
        if p.attribute is AttributeKind.TREND and p.label in ("increasing", "decreasing"):
            entries.append(
                f"{format_value(p.values['initial'])}{p.unit} to "
                f"{format_value(p.values['final'])}{p.unit} {_span(p)}."
            )
    return " ".join(entries) if entries else "none"


def _fill_amplitude(parsed: Sequence[ParsedExpression]) -> str:
    entries = [
        f"{p.label} {_span(p)}"
        for p in parsed
        if p.attribute is AttributeKind.AMPLITUDE_LEVEL
    ]
    return ", ".join(entries) if entries else "none"


def _fill_hetero_mean_std(parsed: Sequence[ParsedExpression]) -> str:
    entries = [
        f"mean is {format_stat(p.values['mean'])}{p.unit}, "
        f"std is {format_stat(p.values['std'])} {_span(p)}."
        for p in parsed
        if p.attribute is AttributeKind.AMPLITUDE_LEVEL
    ]
    return " ".join(entries) if entries else "none"


def _shape_block(parsed: Sequence[ParsedExpression], keys: Sequence[str]) -> dict[str, str]:
    fills = {
        "trend": _fill_trend,
        "transitions": _fill_transitions,
        "transition": _fill_transitions,
        "transition_events": _fill_transitions,
        "fluctuation": _fill_fluctuation,
        "outliers": _fill_outliers,
        "mean_and_std": _fill_mean_std,
        "initial_final": _fill_initial_final,
    }
    return {key: fills[key](parsed) for key in keys}


def _hetero_block(parsed: Sequence[ParsedExpression]) -> dict[str, str]:
    return {
        "amplitude": _fill_amplitude(parsed),
        "fluctuation": _fill_fluctuation(parsed),
        "mean_and_std": _fill_hetero_mean_std(parsed),
    }


def _answer_system_report(prompt_text: str) -> str:
    groups = parse_expression_groups(prompt_text)
    variables = [
        name[len("average ") : -len(" of the LIB module")]
        for name in groups
        if name.startswith("average ") and name.endswith(" of the LIB module")
    ]
    doc: dict[str, Any] = {}
    phases = groups.get("operational phases", [])
    inconsistency = _describe_inconsistency(groups, variables)
    doc[OVERALL_KEY] = {
        "overall_operation": " ".join(phases) if phases else "none",
        "overall_inconsistency": inconsistency,
    }
    for label in variables:
        doc[label] = {
            "average": _shape_block(
                _parsed_group(groups, f"average {label} of the LIB module"), AGG_AVERAGE_KEYS
            ),
            "maximum": _shape_block(
                _parsed_group(groups, f"maximum {label} of the LIB module"), AGG_EXTREMUM_KEYS
            ),
            "minimum": _shape_block(
                _parsed_group(groups, f"minimum {label} of the LIB module"), AGG_EXTREMUM_KEYS
            ),
            "standard_deviation": _hetero_block(
                _parsed_group(groups, f"standard deviation of {label} across cells")
            ),
            "shannon_entropy": _hetero_block(
                _parsed_group(groups, f"Shannon entropy of {label} across cells")
            ),
        }
    if "current of the LIB module" in groups:
        doc["current"] = _shape_block(
            _parsed_group(groups, "current of the LIB module"), CURRENT_KEYS
        )
    return json.dumps(doc, indent=2, ensure_ascii=False)


def _describe_inconsistency(groups: Mapping[str, list[str]], variables: Sequence[str]) -> str:
    findings = []
    for label in variables:
        parsed = _parsed_group(groups, f"standard deviation of {label} across cells")
        for p in parsed:
            if p.attribute is AttributeKind.AMPLITUDE_LEVEL and p.label in ("moderate", "significant"):
                findings.append(
                    f"A {p.label} STD is observed from {label} at samples {p.begin} to {p.end}."
                )
    if findings:
        return "In most of the period, LIB cells have well consistency. However, " + " ".join(findings)
    return "In most of the period, LIB cells have well consistency."


_CELL_RANGE = re.compile(r"from Cell #(\d+) to Cell #(\d+)")
_CELL_GROUP = re.compile(r"^(.*) of Cell #(\d+)$")


def _answer_cells_report(prompt_text: str) -> str:
    m = _CELL_RANGE.search(prompt_text)
    if not m:
        raise ValueError("cell prompt lacks a cell id range")
    begin_id, end_id = int(m.group(1)), int(m.group(2))
    groups = parse_expression_groups(prompt_text)
    per_cell: dict[int, dict[str, list[ParsedExpression]]] = {}
    variable_order: list[str] = []
    for name in groups:
        gm = _CELL_GROUP.match(name)
        if not gm:
            continue
        label, cid = gm.group(1), int(gm.group(2))
        if label not in variable_order:
            variable_order.append(label)
        per_cell.setdefault(cid, {})[label] = _parsed_group(groups, name)
    cells = []
    for cid in range(begin_id, end_id + 1):
        entry: dict[str, Any] = {CELL_ID_KEY: str(cid)}
        for label in variable_order:
            parsed = per_cell.get(cid, {}).get(label, [])
            entry[label] = _shape_block(parsed, CELL_BLOCK_KEYS)
        cells.append(entry)
    return json.dumps({CELLS_KEY: cells}, indent=2, ensure_ascii=False)


# --------------------------------------------------------------------------
# Judge scoring


_JUDGE_PAIR = re.compile(
    r"^id: (\d+).*?\n\*\*LLM's Response:\*\* (.*?)\n\*\*Fact:\*\* (.*?)$",
    re.MULTILINE | re.DOTALL,
)


def _normalize(text: str) -> str:
    return re.sub(r"\s+", " ", text.lower()).strip()


def _score_clause(clause: str, fact: str) -> float:
    clause_n = _normalize(clause)
    if not clause_n:
        return 1.0
    if clause_n in fact:
        return 1.0
    clause_tokens = set(re.findall(r"[a-z]{5,}|\d+(?:\.\d+)?", clause_n))
    fact_tokens = set(re.findall(r"[a-z]{5,}|\d+(?:\.\d+)?", fact))
    if clause_tokens & fact_tokens:
        return 0.5
    return 0.0


def _round_sig(x: float, digits: int = 3) -> float:
    if x == 0:
        return 0.0
    import math

    return round(x, digits - 1 - math.floor(math.log10(abs(x))))


def _answer_judge(prompt_text: str) -> str:
    results = []
    for m in _JUDGE_PAIR.finditer(prompt_text):
        pair_id = int(m.group(1))
        response = m.group(2).strip()
        fact = _normalize(m.group(3).strip().split("\n")[0])
        clauses = [c for c in re.split(r"[.;,]", response) if c.strip()]
        if not clauses:
            score = 0.0
        else:
            score = sum(_score_clause(c, fact) for c in clauses) / len(clauses)
        results.append({"id": pair_id, "score": _round_sig(score)})
    return json.dumps({"evaluate results": results})


# --------------------------------------------------------------------------
# Downstream task answers


def _report_json(prompt_text: str) -> dict[str, Any]:
    start, end = prompt_text.find("{"), prompt_text.rfind("}")
    if start == -1 or end <= start:
        raise ValueError("task prompt carries no report document")
    return json.loads(prompt_text[start : end + 1])


_TREND_ENTRY = re.compile(r"(increase|decrease|stable) \((\d+)~(\d+)th time\)")
_INIT_FINAL = re.compile(rf"({_NUM})\D*? to ({_NUM})\D*? \((\d+)~(\d+)th time\)")
_STABLE_AT = re.compile(rf"stable at ({_NUM})\D*?, std is ({_NUM}) \((\d+)~(\d+)th time\)")


def _last_phase(block: Mapping[str, str]) -> tuple[str, int, int]:
    entries = _TREND_ENTRY.findall(block.get("trend", ""))
    if not entries:
        return ("stable", 1, 1)
    word, a, b = entries[-1]
    return (word, int(a), int(b))


def _value_and_rate(block: Mapping[str, str]) -> tuple[float, float, int]:
    """Final value, per-step rate, and final timestamp of the last phase."""
    word, a, b = _last_phase(block)
    if word == "stable":
        for m in _STABLE_AT.finditer(block.get("mean_and_std", "")):
            if int(m.group(3)) == a and int(m.group(4)) == b:
                return (float(m.group(1)), 0.0, b)
        matches = _STABLE_AT.findall(block.get("mean_and_std", ""))
        if matches:
            last = matches[-1]
            return (float(last[0]), 0.0, int(last[3]))
        return (0.0, 0.0, b)
    for m in _INIT_FINAL.finditer(block.get("initial_final", "")):
        if int(m.group(3)) == a and int(m.group(4)) == b:
            initial, final = float(m.group(1)), float(m.group(2))
            return (final, (final - initial) / (b - a), b)
    matches = _INIT_FINAL.findall(block.get("initial_final", ""))
    if matches:
        last = matches[-1]
        initial, final, a, b = float(last[0]), float(last[1]), int(last[2]), int(last[3])
        return (final, (final - initial) / (b - a), b)
    return (0.0, 0.0, b)


def _soc_blocks(report: Mapping[str, Any]) -> Mapping[str, Any]:
    system = report.get("system") or {}
    for key, value in system.items():
        if key.lower() == "soc" and isinstance(value, dict):
            return value
    raise ValueError("report has no SOC blocks")


def _answer_soc(prompt_text: str) -> str:
    report = _report_json(prompt_text)
    soc = _soc_blocks(report)
    value, rate, _ = _value_and_rate(soc.get("average", {}))
    prediction = value + rate * 10
    return (
        f"The average SOC of LIB cells: <ans>{format_value(prediction)}</ans>%. "
        "The estimate extends the most recent SOC trend in the report over the "
        "next 10 minutes at its current rate."
    )


_OPTION_PHRASES = {
    ("temperature", "cell"): ("A", "Temperature Anomaly in specific individual cell"),
    ("temperature", "module"): ("B", "Temperature Anomaly of whole LIB module"),
    ("voltage", "cell"): ("C", "Voltage Anomaly in specific individual cell"),
    ("voltage", "module"): ("D", "Voltage Anomaly of whole LIB module"),
}


def _answer_monitoring(prompt_text: str) -> str:
    report = _report_json(prompt_text)
    cells = report.get("cells_info") or []
    hits_by_variable: dict[str, list[tuple[int, tuple[int, ...]]]] = {}
    for entry in cells:
        cid = int(str(entry.get(CELL_ID_KEY, 0)))
        for label, block in entry.items():
            if label == CELL_ID_KEY or not isinstance(block, dict):
                continue
            outliers = block.get("outliers", "none")
            if outliers != "none":
                times = tuple(int(t) for t in re.findall(r"\d+", outliers.split("(")[0]))
                hits_by_variable.setdefault(label.lower(), []).append((cid, times))
    candidates: list[tuple[str, str, int | None, tuple[int, ...]]] = []
    for variable, hits in hits_by_variable.items():
        # the same anomaly showing on most cells is a module-level event
        if len(cells) > 1 and len(hits) > len(cells) // 2:
            times = tuple(sorted({t for _, ts in hits for t in ts}))
            candidates.append((variable, "module", None, times))
        else:
            candidates.extend((variable, "cell", cid, times) for cid, times in hits)
    system = report.get("system") or {}
    for label, block in system.items():
        if label == OVERALL_KEY or not isinstance(block, dict):
            continue
        average = block.get("average")
        if isinstance(average, dict) and average.get("outliers", "none") != "none":
            times = tuple(int(t) for t in re.findall(r"\d+", average["outliers"].split("(")[0]))
            candidates.append((label.lower(), "module", None, times))
    for variable, scope, cid, times in candidates:
        key = (variable, scope)
        if key not in _OPTION_PHRASES:
            continue
        letter, phrase = _OPTION_PHRASES[key]
        begin = min(times) if times else 1
        end = max(times) if times else 1
        where = f"Cell #{cid}" if cid else "the whole module"
        return (
            f"The operation is <ans>abnormal</ans>. Anomaly type: {letter}. {phrase}. "
            f"The anomaly affects {where} from {begin}th~{end}th sample."
        )
    return (
        "The operation is <ans>normal</ans>. All cells stay consistent and no "
        "outliers or significant inconsistency levels appear in the report."
    )


def _answer_management(prompt_text: str) -> str:
    report = _report_json(prompt_text)
    soc = _soc_blocks(report)
    mean_value, _, _ = _value_and_rate(soc.get("average", {}))
    max_value, max_rate, _ = _value_and_rate(soc.get("maximum", {}))
    min_value, min_rate, _ = _value_and_rate(soc.get("minimum", {}))
    direction, _, _ = _last_phase(soc.get("maximum", {}))
    if direction == "increase" and max_rate > 0:
        pred = (97.0 - max_value) / max_rate
        return (
            "Based on the observed time-series data, the battery module experiences "
            f"the Charging Phase. At the most recent timestamp, the module's Mean SOC is "
            f"<ans>{format_value(mean_value)}</ans>%, the Maximum SOC is "
            f"<ans>{format_value(max_value)}</ans>%, and the Minimum SOC is "
            f"<ans>{format_value(min_value)}</ans>%. The overall SOC exhibits an upward "
            "trend. Our forecast indicates that the module's Maximum SOC will reach the "
            f"97% cutoff condition in approximately <ans>{format_value(pred)}</ans> minutes. "
            "To prevent overcharging and ensure battery longevity, it is advised to "
            f"terminate charging after <ans>{format_value(pred)}</ans> minutes. "
            "Detailed Analysis Follows: the maximum-SOC trend in the report continues "
            "at its reported rate until the cutoff."
        )
    if direction == "decrease" and min_rate < 0:
        pred = (min_value - 3.0) / (-min_rate)
        return (
            "Based on the observed time-series data, the battery module experiences "
            f"the Discharging Phase. At the most recent timestamp, the module's Mean SOC is "
            f"<ans>{format_value(mean_value)}</ans>%, the Maximum SOC is "
            f"<ans>{format_value(max_value)}</ans>%, and the Minimum SOC is "
            f"<ans>{format_value(min_value)}</ans>%. The overall SOC exhibits a downward "
            "trend. Our forecast indicates that the module's Minimum SOC will reach the "
            f"3% cutoff condition in approximately <ans>{format_value(pred)}</ans> minutes. "
            "To prevent deep discharge and irreversible degradation, it is advised to "
            f"terminate discharging after <ans>{format_value(pred)}</ans> minutes. "
            "Detailed Analysis Follows: the minimum-SOC trend in the report continues "
            "at its reported rate until the cutoff."
        )
    return (
        "Based on the observed time-series data, the battery module is idle. "
        f"At the most recent timestamp, the module's Mean SOC is "
        f"<ans>{format_value(mean_value)}</ans>%, the Maximum SOC is "
        f"<ans>{format_value(max_value)}</ans>%, and the Minimum SOC is "
        f"<ans>{format_value(min_value)}</ans>%. No cutoff condition is approaching "
        "while the module stays idle; no termination action is required."
    )
