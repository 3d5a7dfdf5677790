"""Factual-consistency judging and downstream task evaluation.

Judging: generated/reference sentence pairs go to a judge endpoint that
scores each clause 1 / 0.5 / 0 and averages to 3 significant digits; the
FactScore of a series is the unweighted mean of its attribute-level scores,
and a report-level FactScore averages the series-level ones.

Tasks: average-SOC forecasting (RMSE/MAE against the value 10 minutes past
the input window), operation monitoring (accuracy over all samples plus the
false alarm rate over true normals), and charge/discharge management
(relative error of the predicted time to the SOC cutoff).  Answers are
located by ``<ans>...</ans>`` tags.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import statistics
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from .annotate import HyperParamProfile
from .core import AttributeKind, MultiCellDataset, Variable
from .pipeline import annotate_module, generate_report, truncate_dataset
from .report import LlmEndpointConfig, Message, Prompt, complete
from .synth import GroundTruthLabel

log = logging.getLogger(__name__)

SOC_CUTOFF_MAX = 97.0
SOC_CUTOFF_MIN = 3.0
SOC_HORIZON_MINUTES = 10
SOC_INPUT_MINUTES = 90


@dataclass(frozen=True)
class FactPair:
    id: int
    attribute: AttributeKind
    generated: str
    reference: str

    def __post_init__(self) -> None:
        if not self.generated or not self.reference:
            raise ValueError("both sentences must be non-empty")


@dataclass(frozen=True)
class JudgeResult:
    id: int
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


JUDGE_INSTRUCTION = """I asked the LLM to describe a battery time series from a specific perspective, such as the trend, transition, etc. Now your task is to evaluate its description. Please score the following large language model (LLM) responses on a factual accuracy scale. Your scoring process should be as follows:
1. Break down each response into multiple short sentences by splitting at punctuation marks.
2. For each short sentence, assign a score based on its factual correctness according to its attached description of the facts:
- **1.0** for a fact that is completely correct.
- **0.5** for a fact that is partially correct. (not very precise but close. For instance, predicted transition point is 9th sample, while reality is 7th sample.)
- **0.0** for a fact that is clearly incorrect.
If the response contains only one short sentence, output that score directly, otherwise, calculate and output the average score of all sentence (keep 3 significant digits).
Instruct example:
**LLM's Response:** trend: decrease (1~20th time), increase (21~40th time), stable (41~100th time).
**Fact:** trend: decrease (1~22th time), increase (23~40th time), stable (41~100th time).
**Scoring Breakdown:**
- **Clause 1:** "decrease (1~20th time)". As can be seen from the facts, trend of 1~20th time is 'decrease'. So it's correct. The score is 1.0.
- **Clause 2:** "increase (21~40th time)". As can be seen from the facts, trend of 21~22th time is 'decrease', while 23~40th time is 'increase'. So it is partially correct. The score is 0.5.
- **Clause 3:** "stable (41~100th time)". As can be seen from the facts, trend of 41~100th time is 'stable'. The score is 1.0.
**Final Score:** (1.0 + 0.5 + 1.0) / 3 = 0.8333,
**Your final output must be a JSON array.** Each object in the array should contain the original `id` and the calculated `score` for that data entry.
**Example of the expected JSON output: {"evaluate results": [{"id": 1,"score": 0.67},{"id": 2,"score": ...},...]}.
The list consisting of the responses of LLM to be evaluated and the corresponding facts is as follows.
**(Please check carefully and ensure that all the LLM responses in the list got their corresponding scores!) Pay attention to certain words, such as in the description of volatility, the meanings expressed by 'minimal' and 'slight' are actually the same."""


def build_judge_prompt(
    pairs: Sequence[FactPair],
    *,
    model: str = "",
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> Prompt:
    """Judge instruction followed by the id'd response/fact pair list."""
    if not pairs:
        raise ValueError("judge prompt needs at least one pair")
    blocks = [
        f"id: {p.id} (attribute: {p.attribute.value})\n"
        f"**LLM's Response:** {p.generated}\n"
        f"**Fact:** {p.reference}"
        for p in pairs
    ]
    content = JUDGE_INSTRUCTION + "\n\n" + "\n\n".join(blocks)
    return Prompt(
        messages=(Message("user", content),),
        model=model,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


def batch_judge_prompts(
    pairs: Sequence[FactPair], batch_limit: int = 50, **kwargs
) -> list[tuple[Prompt, tuple[int, ...]]]:
    """Split a large pair list into prompts of at most ``batch_limit`` pairs.

    Returns (prompt, ids) tuples; id sets are disjoint across batches.
    """
    if batch_limit < 1:
        raise ValueError("batch_limit must be >= 1")
    seen: set[int] = set()
    for p in pairs:
        if p.id in seen:
            raise ValueError(f"duplicate pair id {p.id}")
        seen.add(p.id)
    out = []
    for start in range(0, len(pairs), batch_limit):
        chunk = pairs[start : start + batch_limit]
        out.append((build_judge_prompt(chunk, **kwargs), tuple(p.id for p in chunk)))
    return out


class JudgeOutputError(ValueError):
    pass


def parse_judge_output(
    raw: str, expected_ids: Sequence[int] | None = None
) -> list[JudgeResult]:
    """Extract {"evaluate results": [...]} and check coverage and ranges."""
    start, end = raw.find("{"), raw.rfind("}")
    if start == -1 or end <= start:
        raise JudgeOutputError("no JSON object in judge output")
    try:
        doc = json.loads(raw[start : end + 1])
    except json.JSONDecodeError as exc:
        raise JudgeOutputError(f"judge output is not valid JSON: {exc}") from None
    entries = doc.get("evaluate results")
    if not isinstance(entries, list):
        raise JudgeOutputError('judge output lacks the "evaluate results" array')
    results: list[JudgeResult] = []
    seen: set[int] = set()
    for entry in entries:
        try:
            pair_id = int(entry["id"])
            score = float(entry["score"])
        except (KeyError, TypeError, ValueError) as exc:
            raise JudgeOutputError(f"malformed judge entry {entry!r}") from None
        if not 0.0 <= score <= 1.0:
            raise JudgeOutputError(f"score {score} for id {pair_id} outside [0, 1]")
        if pair_id in seen:
            raise JudgeOutputError(f"duplicate score for id {pair_id}")
        seen.add(pair_id)
        results.append(JudgeResult(pair_id, score))
    if expected_ids is not None:
        missing = [i for i in expected_ids if i not in seen]
        if missing:
            raise JudgeOutputError(f"unscored id {missing[0]}")
    return results


def round_sig(x: float, digits: int = 3) -> float:
    if x == 0:
        return 0.0
    return round(x, digits - 1 - math.floor(math.log10(abs(x))))


def clause_average(clause_scores: Sequence[float]) -> float:
    """Mean clause score at 3 significant digits."""
    if not clause_scores:
        raise ValueError("need at least one clause score")
    for s in clause_scores:
        if s not in (0.0, 0.5, 1.0):
            raise ValueError(f"clause score must be 0, 0.5 or 1, got {s}")
    return round_sig(sum(clause_scores) / len(clause_scores))


def factscore(attribute_scores: Mapping[AttributeKind, float] | Sequence[float]) -> float:
    """Unweighted mean over attribute-level scores for one series."""
    values = (
        list(attribute_scores.values())
        if isinstance(attribute_scores, Mapping)
        else list(attribute_scores)
    )
    if not values:
        raise ValueError("need at least one attribute score")
    return sum(values) / len(values)


def report_factscore(series_scores: Sequence[float]) -> float:
    """Report-level aggregation: mean of series-level FactScores."""
    if not series_scores:
        raise ValueError("need at least one series score")
    return sum(series_scores) / len(series_scores)


# --------------------------------------------------------------------------
# Answer extraction

_ANS = re.compile(r"<ans>(.*?)</ans>", re.DOTALL)
_NUMERIC = re.compile(r"^[-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")


def extract_answers(text: str) -> list[float | str]:
    """All <ans>...</ans> spans in order; numeric spans parse to floats.

    Percent signs and unit suffixes after the number are tolerated;
    non-numeric spans come back as stripped text.
    """
    out: list[float | str] = []
    for span in _ANS.findall(text):
        token = span.strip()
        m = _NUMERIC.match(token)
        if m and (len(m.group(0)) == len(token) or _is_unit_tail(token[m.end():])):
            out.append(float(m.group(0)))
        else:
            out.append(token)
    return out


def _is_unit_tail(tail: str) -> bool:
    return bool(re.fullmatch(r"\s*(%|[a-zA-Z°]{0,10}|minutes?|min)\.?", tail.strip()))


# --------------------------------------------------------------------------
# Metrics


def soc_metrics(predictions: Sequence[float], truths: Sequence[float]) -> dict[str, float]:
    if len(predictions) != len(truths):
        raise ValueError("prediction/truth length mismatch")
    if len(predictions) == 0:
        raise ValueError("need at least one pair")
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    err = p - t
    return {
        "rmse": float(np.sqrt(np.mean(err**2))),
        "mae": float(np.mean(np.abs(err))),
    }


def monitoring_metrics(
    predicted: Sequence[str],
    truth: Sequence[str],
    predicted_types: Sequence[str | None] | None = None,
    truth_types: Sequence[str | None] | None = None,
) -> dict[str, float | None]:
    """Binary monitoring quality.

    acc: fraction of all samples whose normal/abnormal call matches truth.
    far: fraction of true normals called abnormal (None when no normals).
    type_match: agreement rate of the anomaly type over true abnormals
    (None when there are none or types were not supplied).
    """
    if len(predicted) != len(truth):
        raise ValueError("prediction/truth length mismatch")
    if not predicted:
        raise ValueError("need at least one sample")
    for label in (*predicted, *truth):
        if label not in ("normal", "abnormal"):
            raise ValueError(f"labels must be normal/abnormal, got {label!r}")
    n = len(truth)
    correct = sum(p == t for p, t in zip(predicted, truth))
    normals = [i for i, t in enumerate(truth) if t == "normal"]
    false_alarms = sum(predicted[i] == "abnormal" for i in normals)
    far = false_alarms / len(normals) if normals else None
    type_match: float | None = None
    if predicted_types is not None and truth_types is not None:
        abnormal_idx = [i for i, t in enumerate(truth) if t == "abnormal"]
        if abnormal_idx:
            matches = sum(
                predicted_types[i] is not None and predicted_types[i] == truth_types[i]
                for i in abnormal_idx
            )
            type_match = matches / len(abnormal_idx)
    return {"acc": correct / n, "far": far, "type_match": type_match}


def rct_relative_error(t_true: float, t_pred: float) -> float:
    """delta = |t_true - t_pred| / t_true; scale-invariant in time units."""
    if t_true <= 0:
        raise ValueError("t_true must be positive")
    return abs(t_true - t_pred) / t_true


# --------------------------------------------------------------------------
# Task prompts

SOC_QUERY = """Please analyze the following Time-Series (plots or description text) of battery module, and answer the question:

Please forecast the possible value of average SOC of all the cells in the next 10 minutes. (the sampling interval of involved time series is 1 minute.)

Note:

Please answer in the format like 'The average SOC of LIB cells: <ans>xx</ans>%.' in the beginning,(xx is your predicted value) then the related analysis should be given.

(the sign <ans> and </ans> are necessary to locate the answer!)"""

MONITOR_QUERY = """Please analyze the following Time Series (plots or description text) of battery module (consist of 16 series-connected LIB cells), and determine whether there are any anomalies in this time period.

Here are some basic information of the involved LIB cells: Nominal Voltage: 3.2V, Operating Voltage: 2.5~3.65V, Charging/Discharging Protocol: Constant Power, Ambient Temperature: 25degC.

These basic information indicate the expected normal operating ranges of LIB cells, which is important for your fault diagnosis tasks.

You should conduct monitoring task through cluster-level (cluster behavior) and individual-level (each specific LIB cell). If a noticable anomaly is detected, you should further select the most probable anomaly type from these options:

- A. Temperature Anomaly in specific individual cell
- B. Temperature Anomaly of whole LIB module
- C. Voltage Anomaly in specific individual cell
- D. Voltage Anomaly of whole LIB module.

Also, you should identify the beginning sample and the ending sample of the detected anomaly, e.g., "1th~50th sample".

The output format:

You should return your answers in the format with "The operation is <ans>normal</ans>." or "The operation is <ans>abnormal</ans>." in the beginning, then the related analysis should be given. If the anomaly is detected, you should output its fault types, beginning time and the ending time.

Attention:

1. you should precisely mark the monitoring conclusion, for instance: "<ans>abnormal</ans>", so that the user can find it easily.

2. There is certain inconsistency in the batteries, which is a normal phenomenon. Similarly, only SIGNIFICANT difference observed from specific cell will be considered as an anomaly.

examples of normal individual operations:

Cells #1 have SOC values (5%) compared to the rest (6%): normal! this difference in SOC is slight.

Cells #1 have temperature values (28 °C) compared to the rest (25°C): normal! inconsistency like 3°C or less is actually normal.

Cells #1 have voltage values (3.4V) compared to the rest (3.3V): normal! inconsistency like 0.1V or less is actually normal.

Cells #1 have SOC values (20%) compared to the rest (25%): normal! inconsistency like 5% or less is actually normal."""

MANAGE_QUERY = """Please analyze the following Time-Series Description Text of battery module to generate precise, actionable forecasts for charge and discharge cycle management.

Your Primary Task:

1. State and Trend Analysis (Descriptive):

Describe the current charging/discharging state of the battery module.

Report the recent state of charge (SOC) (Mean SOC, Maximal SOC, and Minimal SOC across all the cells within the module).

Identify the overall trend of the module's SOC (e.g., increasing, decreasing, or stable).

2. Operational Forecast and Actionable Guidance:

Based on the current SOC parameters and trend, predict the time until the module's critical SOC cutoff condition is met.

Provide clear, practical operational advice regarding charge/discharge actions.

Specific Cutoff Conditions:

Charging Scenario: The charging process of LIB module must be terminated when the Maximal SOC reaches 97%.

Discharging Scenario: The discharging process of LIB module must be terminated when the Minimal SOC reaches 3%.

The maximal (minimal) SOC refer to the highest (lowest) SOC value among all individual battery cells within the module.

Sampling interval:

The sampling interval of involved battery time series is 1 minute.

There are some output examples:

Output Example 1 (Charging):

"Based on the observed time-series data, the battery module experiences the Charging Phase. At the most recent timestamp, the module's Mean SOC is <ans>mean_soc</ans>%, the Maximum SOC is <ans>max_soc</ans>%, and the Minimum SOC is <ans>min_soc</ans>%. The overall SOC exhibits an upward trend. Our forecast indicates that the module's Maximum SOC will reach the 97% cutoff condition in approximately <ans>pred_time</ans> minutes. To prevent overcharging and ensure battery longevity, it is advised to terminate charging after <ans>pred_time</ans> minutes. Detailed Analysis Follows:..."

Output Example 2 (Discharging):

"Based on the observed time-series data, the battery module experiences the Discharging Phase. At the most recent timestamp, the module's Mean SOC is <ans>mean_soc</ans>%, the Maximum SOC is <ans>max_soc</ans>%, and the Minimum SOC is <ans>min_soc</ans>%. The overall SOC exhibits a downward trend. Our forecast indicates that the module's Minimum SOC will reach the 3% cutoff condition in approximately <ans>pred_time</ans> minutes. To prevent deep discharge and irreversible degradation, it is advised to terminate discharging after <ans>pred_time</ans> minutes. Detailed Analysis Follows:..."

Attention:

1. Output Format Specification: The final output must strictly adhere to the following structure, using the <ans></ans> tag to explicitly highlight all critical numerical data.

2. You should first present all the key conclusions, and then provide the detailed analysis.

3. The output answers should include a Detailed Analysis that fully describes the reasoning for your conclusions, which is crucial for operators to understand the basis of the operational decisions. Furthermore, provide any additional practical recommendations or safety warnings derived from the analysis.

4. The maximal, minimal, average SOC refer to the highest, lowest, and average SOC value among all individual battery cells within the module."""

TASKS = ("soc_prediction", "monitoring", "management")

_TASK_QUERIES = {
    "soc_prediction": SOC_QUERY,
    "monitoring": MONITOR_QUERY,
    "management": MANAGE_QUERY,
}


def build_task_prompt(
    task: str,
    report_text: str,
    *,
    model: str = "",
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> Prompt:
    """Task query prefixed to the report text."""
    try:
        query = _TASK_QUERIES[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {TASKS}") from None
    if not report_text:
        raise ValueError("report text must be present")
    content = query + "\n\nThe time-series report follows:\n\n" + report_text
    return Prompt(
        messages=(Message("user", content),),
        model=model,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


# --------------------------------------------------------------------------
# Task suite


@dataclass(frozen=True)
class TaskWindow:
    """One evaluation sample: a dataset window plus its ground truth."""

    dataset: MultiCellDataset
    label: GroundTruthLabel


@dataclass(frozen=True)
class TaskRecord:
    task: str
    window_index: int
    repeat: int
    prompt_text: str
    raw_answer: str
    extracted: tuple[float | str, ...]
    prediction: float | str | None
    truth: float | str | None
    predicted_type: str | None = None
    truth_type: str | None = None


_OPTION_TYPES = {
    "Temperature Anomaly in specific individual cell": "temperature/cell",
    "Temperature Anomaly of whole LIB module": "temperature/module",
    "Voltage Anomaly in specific individual cell": "voltage/cell",
    "Voltage Anomaly of whole LIB module": "voltage/module",
}


def _predicted_anomaly_type(answer: str) -> str | None:
    for phrase, typ in _OPTION_TYPES.items():
        if phrase.lower() in answer.lower():
            return typ
    return None


def _truth_anomaly_type(label: GroundTruthLabel) -> str | None:
    if not label.anomalies:
        return None
    a = label.anomalies[0]
    return f"{a.variable.value}/{a.scope}"


def _soc_truth(dataset: MultiCellDataset, minute: int) -> float:
    values = [
        dataset.per_cell[cid][Variable.SOC].values[minute - 1]
        for cid in range(1, dataset.cell_count + 1)
    ]
    return sum(values) / len(values)


def _rct_truth(dataset: MultiCellDataset, label: GroundTruthLabel) -> float:
    """Closed-form time to cutoff from the tail SOC ramp rate."""
    rate = label.soc_rate_tail
    last = dataset.length
    if rate > 0:
        max_soc = max(
            dataset.per_cell[cid][Variable.SOC].values[last - 1]
            for cid in range(1, dataset.cell_count + 1)
        )
        return (SOC_CUTOFF_MAX - max_soc) / rate
    if rate < 0:
        min_soc = min(
            dataset.per_cell[cid][Variable.SOC].values[last - 1]
            for cid in range(1, dataset.cell_count + 1)
        )
        return (min_soc - SOC_CUTOFF_MIN) / (-rate)
    raise ValueError("truth requires a charging or discharging tail phase")


def run_task_suite(
    windows: Sequence[TaskWindow],
    profile: HyperParamProfile,
    config: LlmEndpointConfig,
    task: str,
    *,
    repeats: int = 5,
    group_size: int = 4,
    system_level: bool = True,
) -> tuple[list[TaskRecord], dict[str, Any]]:
    """Pipeline + task prompting over dataset windows, with aggregates.

    soc_prediction truncates each window to the first 90 minutes and
    compares against the true minute-100 average; monitoring runs once per
    window; management repeats the relative-error computation ``repeats``
    times (LLM outputs are stochastic; the mock is stable).
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    records: list[TaskRecord] = []

    for index, window in enumerate(windows):
        dataset = window.dataset
        if task == "soc_prediction":
            if dataset.length < SOC_INPUT_MINUTES + SOC_HORIZON_MINUTES:
                raise ValueError(
                    f"window {index}: need {SOC_INPUT_MINUTES + SOC_HORIZON_MINUTES} "
                    f"minutes for SOC prediction, got {dataset.length}"
                )
            pipeline_input = truncate_dataset(dataset, SOC_INPUT_MINUTES)
            truth: float | str = _soc_truth(dataset, SOC_INPUT_MINUTES + SOC_HORIZON_MINUTES)
        elif task == "management":
            pipeline_input = dataset
            truth = _rct_truth(dataset, window.label)
        else:
            pipeline_input = dataset
            truth = window.label.status

        annotated = annotate_module(pipeline_input, profile, system_level=system_level)
        report, _ = generate_report(
            annotated, config, system_level=system_level, group_size=group_size
        )
        report_text = json.dumps(report, indent=2, ensure_ascii=False)
        prompt = build_task_prompt(
            task, report_text, model=config.model, temperature=config.temperature,
            max_output_tokens=config.max_output_tokens,
        )
        n_repeats = repeats if task == "management" else 1
        for repeat in range(n_repeats):
            answer = complete(prompt, config)
            extracted = tuple(extract_answers(answer))
            prediction: float | str | None = None
            predicted_type = None
            if task == "soc_prediction":
                prediction = next((v for v in extracted if isinstance(v, float)), None)
            elif task == "management":
                numbers = [v for v in extracted if isinstance(v, float)]
                prediction = numbers[3] if len(numbers) >= 4 else None
            else:
                prediction = next(
                    (v for v in extracted if v in ("normal", "abnormal")), None
                )
                predicted_type = _predicted_anomaly_type(answer)
            records.append(
                TaskRecord(
                    task=task,
                    window_index=index,
                    repeat=repeat,
                    prompt_text=prompt.text,
                    raw_answer=answer,
                    extracted=extracted,
                    prediction=prediction,
                    truth=truth,
                    predicted_type=predicted_type,
                    truth_type=_truth_anomaly_type(window.label),
                )
            )

    aggregates = _aggregate(task, records)
    return records, aggregates


def _aggregate(task: str, records: Sequence[TaskRecord]) -> dict[str, Any]:
    if task == "soc_prediction":
        pairs = [
            (r.prediction, r.truth)
            for r in records
            if isinstance(r.prediction, float) and isinstance(r.truth, float)
        ]
        if not pairs:
            return {"rmse": None, "mae": None, "answered": 0}
        preds, truths = zip(*pairs)
        return {**soc_metrics(preds, truths), "answered": len(pairs)}
    if task == "monitoring":
        predicted = [r.prediction if r.prediction in ("normal", "abnormal") else "abnormal"
                     for r in records]
        truth = [str(r.truth) for r in records]
        return monitoring_metrics(
            predicted, truth,
            predicted_types=[r.predicted_type for r in records],
            truth_types=[r.truth_type for r in records],
        )
    deltas = [
        rct_relative_error(float(r.truth), float(r.prediction))
        for r in records
        if isinstance(r.prediction, float) and isinstance(r.truth, float)
    ]
    if not deltas:
        return {"delta_mean": None, "delta_std": None, "deltas": []}
    mean = statistics.fmean(deltas)
    std = statistics.pstdev(deltas) if len(deltas) > 1 else 0.0
    return {"delta_mean": mean, "delta_std": std, "deltas": deltas}


def evaluation_run_document(
    task: str,
    records: Sequence[TaskRecord],
    aggregates: Mapping[str, Any],
    config: LlmEndpointConfig,
) -> dict[str, Any]:
    """Audit document: prompts, raw outputs, extracted values, metrics,
    and a hash of the endpoint configuration (token excluded by design)."""
    config_repr = json.dumps(
        {k: v for k, v in vars(config).items()}, sort_keys=True, default=str
    )
    return {
        "task": task,
        "config_hash": hashlib.sha256(config_repr.encode()).hexdigest()[:16],
        "records": [
            {
                "window_index": r.window_index,
                "repeat": r.repeat,
                "prompt": r.prompt_text,
                "raw_answer": r.raw_answer,
                "extracted": list(r.extracted),
                "prediction": r.prediction,
                "truth": r.truth,
                "predicted_type": r.predicted_type,
                "truth_type": r.truth_type,
            }
            for r in records
        ],
        "metrics": dict(aggregates),
    }
