"""Prompt assembly, call planning, LLM transport, and report validation.

Reports are produced by chat-completions style calls: each prompt carries an
expert-guided instruction (system-level or cell-group template) followed by
the descriptor expressions grouped per series.  Large modules split into one
system-level call plus cell-group calls (default 4 cells per group) to stay
inside output token limits; the parts concatenate into one report.

Transport is plain HTTP POST against any chat-completions compatible
endpoint, with bounded retries and exponential backoff.  A first-class mock
backend fills the instruction's own output schema deterministically from the
expressions in the prompt, so the whole pipeline runs offline.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .core import Variable, VARIABLE_LABELS
from .phrasing import Expression

log = logging.getLogger(__name__)


class PromptError(ValueError):
    """A prompt failed its completeness checks."""


class ConfigError(ValueError):
    """Endpoint configuration problem (missing token, no URL, ...)."""


class TransportError(RuntimeError):
    """Endpoint unreachable, kept failing, or returned garbage."""

    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class ReportParseError(ValueError):
    """Model output does not match the report schema; names the path."""


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user"
    content: str

    def __post_init__(self) -> None:
        if self.role not in ("system", "user"):
            raise ValueError(f"unsupported role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")


@dataclass(frozen=True)
class Prompt:
    messages: tuple[Message, ...]
    model: str = ""
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("prompt needs at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        for message in self.messages:
            assert_fully_substituted(message.content)

    @property
    def text(self) -> str:
        return "\n\n".join(m.content for m in self.messages)


_MARKER = re.compile(r"\[vara\d*\]|\[(?:begin|mid|end)_cell_id\]")


def assert_fully_substituted(content: str) -> None:
    """Reject template residue: any [vara*] or [*_cell_id] marker left over."""
    found = _MARKER.search(content)
    if found:
        raise PromptError(f"unsubstituted placeholder {found.group(0)!r} in prompt")


# --------------------------------------------------------------------------
# Variable mapping and call planning


@dataclass(frozen=True)
class VariableMapping:
    """Which variables fill the instruction slots.

    ``system_vars`` get full aggregate blocks in the system-level template
    (slot order matters); ``cell_vars`` fill the per-cell template slots.
    ``include_module_current`` adds the single-series current block to the
    system template.
    """

    system_vars: tuple[Variable, ...] = ()
    cell_vars: tuple[Variable, ...] = ()
    include_module_current: bool = True

    @classmethod
    def for_dataset(cls, variables: Sequence[Variable], system_level: bool) -> "VariableMapping":
        non_current = tuple(v for v in variables if v is not Variable.CURRENT)
        if system_level:
            return cls(system_vars=non_current, cell_vars=non_current)
        return cls(system_vars=(), cell_vars=tuple(variables), include_module_current=False)


@dataclass(frozen=True)
class PlannedCall:
    scope: str  # "system" | "cells"
    begin: int | None = None
    end: int | None = None


@dataclass(frozen=True)
class CallPlan:
    calls: tuple[PlannedCall, ...]
    group_size: int

    def __len__(self) -> int:
        return len(self.calls)


def plan_calls(cell_count: int, system_level: bool, group_size: int = 4) -> CallPlan:
    """System call (when requested) plus contiguous cell groups covering 1..V.

    A 16-cell module with system stats and groups of 4 plans 5 calls; a
    6-cell set with system stats off and group_size >= 6 plans a single call.
    """
    if cell_count < 1:
        raise ValueError("cell_count must be >= 1")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    calls: list[PlannedCall] = []
    if system_level:
        calls.append(PlannedCall("system"))
    begin = 1
    while begin <= cell_count:
        end = min(begin + group_size - 1, cell_count)
        calls.append(PlannedCall("cells", begin, end))
        begin = end + 1
    return CallPlan(tuple(calls), group_size)


# --------------------------------------------------------------------------
# Report JSON schema (shared by builders, parser, and the mock backend)

OVERALL_KEY = "Overall_operation"
OVERALL_SUBKEYS = ("overall_operation", "overall_inconsistency")
AGG_AVERAGE_KEYS = ("trend", "transitions", "fluctuation", "outliers", "mean_and_std", "initial_final")
AGG_EXTREMUM_KEYS = ("trend", "transitions", "outliers", "mean_and_std", "initial_final")
HETERO_KEYS = ("amplitude", "fluctuation", "mean_and_std")
CURRENT_KEYS = ("trend", "transition_events", "fluctuation", "outliers", "mean_and_std", "initial_final")
CELL_BLOCK_KEYS = ("trend", "transition", "fluctuation", "outliers", "mean_and_std", "initial_final")
CELLS_KEY = "cells_info"
CELL_ID_KEY = "cell id"
AGG_SUBBLOCKS = ("average", "maximum", "minimum", "standard_deviation", "shannon_entropy")


def _aggregate_block_schema() -> str:
    return (
        '{"average": {"trend": "...", "transitions": "...", "fluctuation": "...", '
        '"outliers": "...", "mean_and_std": "...", "initial_final": "..."}, '
        '"maximum": {"trend": "...", "transitions": "...", "outliers": "...", '
        '"mean_and_std": "...", "initial_final": "..."}, '
        '"minimum": {"trend": "...", "transitions": "...", "outliers": "...", '
        '"mean_and_std": "...", "initial_final": "..."}, '
        '"standard_deviation": {"amplitude": "...", "fluctuation": "...", "mean_and_std": "..."}, '
        '"shannon_entropy": {"amplitude": "...", "fluctuation": "...", "mean_and_std": "..."}}'
    )


_SYSTEM_INSTRUCTION_HEAD = """You are an expert specializing in time-series signal analysis and maintenance for lithium-ion batteries. Your task is to complete the following "Lithium-ion battery Time-Series Description Text" template based on the specific information provided by the user.

Attention:
1. Please strictly follow the text template's logic, fill in the corresponding part within the curly braces, and convert them into JSON format.
2. When you fill {overall_operation}, you are asked to describe the charging/discharging behavior of the LIB module according to the module Current value (positive current means charging, negative current means discharging, near zero means idle), e.g., "From 1 to 50 samples, the LIB module undergoes charging, from 50 to 100 samples, it undergoes discharging." and when you fill {overall_inconsistency}, you are asked to highlight the noticeable inconsistency situation of the LIB module, e.g., "In most of period, LIB cells have well consistency. However, a moderate STD is observed from SOC at samples 1 to 20."
3. The description should be in concise language. Particularly, for descriptions regarding "Overall Operational Situation":
1) In "trend", please output "increase (1~50th time), stable (50~100th time)" rather than "increase from 29.0°C to 30.0°C from 1 to 50th sample, stable from 30.0°C to 31.0°C from 51 to 100th sample."
2) In "mean and std", ONLY the mean and std regarding the "stable" phases are considered, please output like "stable at 3.2V, std is 0.0043 (1~50th time)." for ALL the stable phases respectively.
3) In "initial/final values", ONLY initial/final values of the "increase" (or "decrease") phases are considered, please output like "3.2V to 3.3V (1~50th time)." for ALL the increase (or decrease) phases respectively.

Template is provided as follows:

Lithium-ion battery Time-Series Description Text
Description Period: {description_begin_period} {description_end_period}
Description Object: {description_object}
I. Overall operation conclusion:
1. **Overall experienced operation**: {overall_operation}
2. **Overall inconsistency situations**: {overall_inconsistency}
II. **Cluster Perspective**:"""


def _system_variable_section(index: int, label: str) -> str:
    v = label
    return f"""{index}.1. {v} Characteristics:
{index}.1.1. Overall Operational Situation:
a). average {v} of the LIB module:
**Trend**: {{average_{v}_trend}}
**Transition Events**: {{average_{v}_transition_events}}
**Fluctuation**: {{average_{v}_fluctuation}}
**Outlier Phenomenon**: {{average_{v}_outlier_phenomenon}}
**mean and std (for stable phase)**: {{average_{v}_mean_std}}
**initial/final values (for increasing or decreasing phase)**: {{average_{v}_initial_final}}
b). maximum {v} of the LIB module:
**Trend**: {{max_{v}_trend}}
**Transition Events**: {{max_{v}_transition_events}}
**Outlier Phenomenon**: {{max_{v}_outlier_phenomenon}}
**mean and std (for stable phase)**: {{max_{v}_mean_std}}
**initial/final values (for increasing or decreasing phase)**: {{max_{v}_initial_final}}
c). minimum {v} of the LIB module:
**Trend**: {{min_{v}_trend}}
**Transition Events**: {{min_{v}_transition_events}}
**Outlier Phenomenon**: {{min_{v}_outlier_phenomenon}}
**mean and std (for stable phase)**: {{min_{v}_mean_std}}
**initial/final values (for increasing or decreasing phase)**: {{min_{v}_initial_final}}
{index}.1.2. Inconsistency of {v} among Cells:
a) Standard Deviation Situation:
**Amplitude level**: {{{v}_std_amplitude}}
**fluctuation level**: {{{v}_std_fluctuation}}
**mean and std**: {{{v}_std_mean_std}}
b) Shannon Entropy Situation:
**Amplitude level**: {{{v}_entropy_amplitude}}
**fluctuation level**: {{{v}_entropy_fluctuation}}
**mean and std**: {{{v}_entropy_mean_std}}"""


def _system_current_section(index: int, label: str) -> str:
    v = label
    return f"""{index}.1. {v} Characteristics:
**Trend**: {{{v}_trend}}
**Transition Events**: {{{v}_transition_events}}
**Fluctuation**: {{{v}_fluctuation}}
**Outlier Phenomenon**: {{{v}_outlier_phenomenon}}
**mean and std (for stable phase)**: {{{v}_mean_std}}
**initial/final values (for increasing or decreasing phase)**: {{{v}_initial_final}}"""


def build_system_instruction(mapping: VariableMapping) -> str:
    if not mapping.system_vars:
        raise PromptError("system instruction needs at least one mapped variable")
    parts = [_SYSTEM_INSTRUCTION_HEAD]
    labels = [VARIABLE_LABELS[v] for v in mapping.system_vars]
    for i, label in enumerate(labels, start=1):
        parts.append(_system_variable_section(i, label))
    if mapping.include_module_current:
        parts.append(_system_current_section(len(labels) + 1, "current"))
    schema_lines = [
        "Please extract the data of the LIB module based on the provided information "
        "and return it in the form of a JSON object containing the following keys:",
        f'- "{OVERALL_KEY}": {{"overall_operation": "...", "overall_inconsistency": "..."}}',
    ]
    for label in labels:
        schema_lines.append(f'- "{label}": {_aggregate_block_schema()}')
    if mapping.include_module_current:
        schema_lines.append(
            '- "current": {"trend": "...", "transition_events": "...", "fluctuation": "...", '
            '"outliers": "...", "mean_and_std": "...", "initial_final": "..."}'
        )
    schema_lines.append("(please check the validity of the format!)")
    parts.append("\n".join(schema_lines))
    return "\n\n".join(parts)


_CELL_INSTRUCTION_HEAD = """You are an expert specializing in time-series signal analysis and maintenance for lithium-ion batteries.
Your task is to complete the following template based on the specific information provided by the user.
Attention:
1. Please extract the data of each LIB Cell (from Cell #{begin_id} to Cell #{end_id}) based on the provided information and return it in the form of a JSON array.
2. The description should be in concise language. For instance:
**in "trend", please output "increase (1~50th time), stable (50~100th time)" rather than "increase from 29.0°C to 30.0°C from 1 to 50th sample, stable from 30.0°C to 31.0°C from 51 to 100th sample."
**in "mean and std", only the mean and std regarding "stable" phase are considered, please output like "stable at 3.2V, std is 0.0043 (1~50th time)."
**in "initial/final values", ONLY initial/final values of "increase" (or "decrease") phases are considered, please output like "3.2V to 3.3V (1~50th time)."
**in "fluctuation", please output "none" if user's information did not provide specific fluctuation level. Otherwise, please output like "fluctuations detected in 1~20th, 40~50th time." based on the user's information."""


def build_cell_instruction(mapping: VariableMapping, begin_id: int, end_id: int) -> str:
    if not mapping.cell_vars:
        raise PromptError("cell instruction needs at least one mapped variable")
    labels = [VARIABLE_LABELS[v] for v in mapping.cell_vars]
    mid_id = min(begin_id + 1, end_id)
    head = _CELL_INSTRUCTION_HEAD.format(begin_id=begin_id, end_id=end_id)
    block_lines = []
    for label in labels:
        block_lines.append(
            f'"{label}": {{"trend": "...", "transition": "...", "fluctuation": "...", '
            f'"outliers": "...", "mean_and_std": "...", "initial_final": "..."}}'
        )
    schema = (
        f"Please extract the data of each LIB Cell (from Cell #{begin_id} to Cell #{end_id}) "
        "based on the provided information and return it in the form of a JSON array.\n"
        "Each array element is a JSON object for each cell, containing the following keys:\n"
        '{"cell id": "...",\n' + ",\n".join(block_lines) + "}\n"
        "After generating the JSON object for each cell, please arrange them into a JSON "
        "array and return in the form as:\n"
        f'{{"cells_info": [{{JSON for cell {begin_id}}}, {{JSON for cell {mid_id}}}, ..., '
        f'{{JSON for cell {end_id}}}]}}\n'
        "(please check the validity of the format!)"
    )
    return head + "\n\n" + schema


EXPRESSION_GROUP_PREFIX = "### "


def expressions_block(expressions: Sequence[Expression]) -> str:
    """Group expressions per series, preserving first-seen order."""
    groups: dict[str, list[str]] = {}
    for expr in expressions:
        groups.setdefault(expr.series_name, []).append(expr.text)
    blocks = [
        EXPRESSION_GROUP_PREFIX + name + "\n" + "\n".join(texts)
        for name, texts in groups.items()
    ]
    return "\n\n".join(blocks)


def parse_expression_groups(prompt_text: str) -> dict[str, list[str]]:
    """Inverse of :func:`expressions_block` over a whole prompt."""
    groups: dict[str, list[str]] = {}
    current: list[str] | None = None
    for line in prompt_text.splitlines():
        if line.startswith(EXPRESSION_GROUP_PREFIX):
            current = groups.setdefault(line[len(EXPRESSION_GROUP_PREFIX):].strip(), [])
        elif current is not None:
            if not line.strip():
                current = None
            else:
                current.append(line.strip())
    return groups


_USER_INFO_HEAD = "The user's information (constructed descriptor expressions) follows:"


def build_system_prompt(
    expressions: Sequence[Expression],
    mapping: VariableMapping,
    *,
    model: str = "",
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> Prompt:
    """Instruction plus the system-level expression groups.

    Expressions must cover the mapped variables' aggregate series; module
    phase sentences belong here too so the overall operation can be filled.
    """
    if not expressions:
        raise PromptError("no expressions for mapped variables")
    instruction = build_system_instruction(mapping)
    wanted_labels = [VARIABLE_LABELS[v] for v in mapping.system_vars]
    names = {e.series_name for e in expressions}
    for label in wanted_labels:
        if not any(label in name for name in names):
            raise PromptError(f"no expressions for mapped variable {label!r}")
    content = instruction + "\n\n" + _USER_INFO_HEAD + "\n\n" + expressions_block(expressions)
    return Prompt(
        messages=(Message("user", content),),
        model=model,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


def build_cell_group_prompt(
    expressions: Sequence[Expression],
    mapping: VariableMapping,
    begin_id: int,
    end_id: int,
    *,
    model: str = "",
    temperature: float = 0.0,
    max_output_tokens: int = 4096,
) -> Prompt:
    """Instruction plus expression groups for cells begin_id..end_id."""
    if not expressions:
        raise PromptError("no expressions for mapped variables")
    instruction = build_cell_instruction(mapping, begin_id, end_id)
    content = instruction + "\n\n" + _USER_INFO_HEAD + "\n\n" + expressions_block(expressions)
    return Prompt(
        messages=(Message("user", content),),
        model=model,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
    )


# --------------------------------------------------------------------------
# Transport


@dataclass(frozen=True)
class LlmEndpointConfig:
    """How to reach (or mock) the completion endpoint.

    The auth token is read from the environment variable named by
    ``auth_env`` and never appears in config files or logs.
    """

    base_url: str = ""
    path: str = "/v1/chat/completions"
    model: str = "mock"
    auth_env: str = "TS2R_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_s: float = 0.5
    max_concurrent: int = 4
    mock: bool = False
    mock_seed: int = 0
    temperature: float = 0.0
    max_output_tokens: int = 4096

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")


_RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}


def _http_post(url: str, body: bytes, headers: Mapping[str, str], timeout: float) -> str:
    request = urllib.request.Request(url, data=body, headers=dict(headers), method="POST")
    with urllib.request.urlopen(request, timeout=timeout) as response:
        return response.read().decode("utf-8")


def complete(prompt: Prompt, config: LlmEndpointConfig) -> str:
    """Send one chat completion (or answer from the mock) and return the text.

    Retries transient failures (timeouts, 408/429/5xx) with exponential
    backoff up to ``max_retries``; auth failures are immediate.
    """
    if config.mock:
        from .mockllm import mock_complete

        return mock_complete(prompt.text, seed=config.mock_seed)

    if not config.base_url:
        raise ConfigError("no endpoint base_url configured (or use mock mode)")
    token = os.environ.get(config.auth_env)
    if not token:
        raise ConfigError(
            f"auth token environment variable {config.auth_env!r} is not set"
        )
    payload = {
        "model": prompt.model or config.model,
        "temperature": prompt.temperature,
        "max_tokens": prompt.max_output_tokens,
        "messages": [{"role": m.role, "content": m.content} for m in prompt.messages],
    }
    body = json.dumps(payload).encode("utf-8")
    headers = {
        "Content-Type": "application/json",
        "Authorization": f"Bearer {token}",
    }
    url = config.base_url.rstrip("/") + config.path
    last_error: Exception | None = None
    attempts = config.max_retries + 1
    for attempt in range(attempts):
        started = time.monotonic()
        try:
            raw = _http_post(url, body, headers, config.timeout_s)
            latency = time.monotonic() - started
            log.info("completion ok in %.3fs after %d retries", latency, attempt)
            return _extract_assistant_text(raw)
        except urllib.error.HTTPError as exc:
            status = exc.code
            if status in (401, 403):
                raise TransportError(f"authentication failed (HTTP {status})", status) from exc
            last_error = exc
            if status not in _RETRYABLE_STATUS:
                raise TransportError(f"endpoint rejected request (HTTP {status})", status) from exc
        except (urllib.error.URLError, TimeoutError, OSError) as exc:
            last_error = exc
        if attempt < attempts - 1:
            delay = config.backoff_s * (2**attempt)
            log.warning("completion attempt %d failed (%s); retrying in %.2fs",
                        attempt + 1, last_error, delay)
            time.sleep(delay)
    raise TransportError(f"endpoint failed after {config.max_retries} retries: {last_error}")


def _extract_assistant_text(raw: str) -> str:
    try:
        doc = json.loads(raw)
        return doc["choices"][0]["message"]["content"]
    except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed endpoint response: {exc}") from exc


def run_prompts(prompts: Sequence[Prompt], config: LlmEndpointConfig) -> list[str]:
    """Complete a batch concurrently (bounded), preserving order."""
    if not prompts:
        return []
    workers = min(config.max_concurrent, len(prompts))
    if workers == 1:
        return [complete(p, config) for p in prompts]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda p: complete(p, config), prompts))


# --------------------------------------------------------------------------
# Parsing and assembly


@dataclass(frozen=True)
class StructuredReport:
    kind: str  # "system" | "cells"
    data: Mapping[str, Any]


_FENCE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.DOTALL)


def _strip_fences(raw: str) -> str:
    m = _FENCE.search(raw)
    if m:
        return m.group(1).strip()
    return raw.strip()


def _load_json_document(raw: str) -> Any:
    text = _strip_fences(raw)
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        start, end = text.find("{"), text.rfind("}")
        if start == -1 or end <= start:
            raise ReportParseError("no JSON object found in model output") from None
        try:
            return json.loads(text[start : end + 1])
        except json.JSONDecodeError as exc:
            raise ReportParseError(f"model output is not valid JSON: {exc}") from None


def _require_keys(block: Any, keys: Sequence[str], path: str) -> None:
    if not isinstance(block, dict):
        raise ReportParseError(f"{path}: expected an object")
    for key in keys:
        if key not in block:
            raise ReportParseError(f"{path}.{key}: missing")
        value = block[key]
        if not isinstance(value, str) or not value.strip():
            raise ReportParseError(f"{path}.{key}: must be a non-empty string")


def _validate_aggregate_block(block: Any, path: str) -> None:
    if not isinstance(block, dict):
        raise ReportParseError(f"{path}: expected an object")
    for sub in AGG_SUBBLOCKS:
        if sub not in block:
            raise ReportParseError(f"{path}.{sub}: missing")
    _require_keys(block["average"], AGG_AVERAGE_KEYS, f"{path}.average")
    _require_keys(block["maximum"], AGG_EXTREMUM_KEYS, f"{path}.maximum")
    _require_keys(block["minimum"], AGG_EXTREMUM_KEYS, f"{path}.minimum")
    _require_keys(block["standard_deviation"], HETERO_KEYS, f"{path}.standard_deviation")
    _require_keys(block["shannon_entropy"], HETERO_KEYS, f"{path}.shannon_entropy")


def parse_report(
    raw: str,
    *,
    expected_variables: Sequence[str] | None = None,
    expected_cells: Sequence[int] | None = None,
) -> StructuredReport:
    """Parse and validate one system or cells part from model output.

    Markdown fences are stripped before parsing.  ``expected_variables``
    (label strings) forces exact coverage of the system blocks;
    ``expected_cells`` forces the cells_info id set.
    """
    doc = _load_json_document(raw)
    if not isinstance(doc, dict):
        raise ReportParseError("top-level document must be an object")

    if CELLS_KEY in doc:
        cells = doc[CELLS_KEY]
        if not isinstance(cells, list) or not cells:
            raise ReportParseError(f"{CELLS_KEY}: expected a non-empty array")
        seen_ids: list[int] = []
        for i, entry in enumerate(cells):
            path = f"{CELLS_KEY}[{i}]"
            if not isinstance(entry, dict):
                raise ReportParseError(f"{path}: expected an object")
            if CELL_ID_KEY not in entry:
                raise ReportParseError(f"{path}.{CELL_ID_KEY}: missing")
            try:
                seen_ids.append(int(str(entry[CELL_ID_KEY]).strip()))
            except ValueError:
                raise ReportParseError(f"{path}.{CELL_ID_KEY}: not an integer") from None
            for key, block in entry.items():
                if key == CELL_ID_KEY:
                    continue
                _require_keys(block, CELL_BLOCK_KEYS, f"{path}.{key}")
        if expected_cells is not None and seen_ids != list(expected_cells):
            raise ReportParseError(
                f"{CELLS_KEY}: cell ids {seen_ids} do not match expected {list(expected_cells)}"
            )
        return StructuredReport("cells", doc)

    if OVERALL_KEY in doc:
        _require_keys(doc[OVERALL_KEY], OVERALL_SUBKEYS, OVERALL_KEY)
        variable_blocks = {k: v for k, v in doc.items() if k != OVERALL_KEY}
        if expected_variables is not None:
            missing = [v for v in expected_variables if v not in variable_blocks]
            if missing:
                raise ReportParseError(f"missing variable blocks: {missing}")
        for key, block in variable_blocks.items():
            if isinstance(block, dict) and "average" in block:
                _validate_aggregate_block(block, key)
            else:
                _require_keys(block, CURRENT_KEYS, key)
        return StructuredReport("system", doc)

    raise ReportParseError(
        f"document has neither {OVERALL_KEY!r} nor {CELLS_KEY!r}"
    )


def assemble_full_report(
    parts: Sequence[StructuredReport], expected_cell_count: int | None = None
) -> dict[str, Any]:
    """Concatenate parts: system block first, cells ascending by id.

    Rejects duplicate or missing cell ids; ``expected_cell_count`` pins the
    required coverage (defaults to the maximum id seen).
    """
    system: Mapping[str, Any] | None = None
    cells: dict[int, Mapping[str, Any]] = {}
    for part in parts:
        if part.kind == "system":
            if system is not None:
                raise ValueError("duplicate system part")
            system = part.data
        else:
            for entry in part.data[CELLS_KEY]:
                cid = int(str(entry[CELL_ID_KEY]).strip())
                if cid in cells:
                    raise ValueError(f"duplicate cell {cid}")
                cells[cid] = entry
    if not cells:
        raise ValueError("no cell parts to assemble")
    count = expected_cell_count if expected_cell_count is not None else max(cells)
    missing = sorted(set(range(1, count + 1)) - set(cells))
    if missing:
        raise ValueError(f"missing cells: {missing}")
    extra = sorted(set(cells) - set(range(1, count + 1)))
    if extra:
        raise ValueError(f"unexpected cells: {extra}")
    out: dict[str, Any] = {}
    out["system"] = dict(system) if system is not None else None
    out[CELLS_KEY] = [cells[cid] for cid in sorted(cells)]
    return out


def synthesize_part(
    prompt: Prompt,
    config: LlmEndpointConfig,
    *,
    expected_variables: Sequence[str] | None = None,
    expected_cells: Sequence[int] | None = None,
) -> StructuredReport:
    """Complete one prompt and parse it, with a single repair retry.

    On a parse failure the prompt is re-sent once with the validation error
    appended; a second failure surfaces the error.
    """
    raw = complete(prompt, config)
    try:
        return parse_report(
            raw, expected_variables=expected_variables, expected_cells=expected_cells
        )
    except ReportParseError as first_error:
        log.warning("report parse failed (%s); re-prompting once", first_error)
        repair = Prompt(
            messages=prompt.messages
            + (
                Message(
                    "user",
                    "Your previous reply could not be parsed: "
                    f"{first_error}. Reply again with exactly the required JSON document.",
                ),
            ),
            model=prompt.model,
            temperature=prompt.temperature,
            max_output_tokens=prompt.max_output_tokens,
        )
        raw = complete(repair, config)
        return parse_report(
            raw, expected_variables=expected_variables, expected_cells=expected_cells
        )
