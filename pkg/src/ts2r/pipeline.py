"""End-to-end orchestration: dataset -> statistics -> annotations ->
expressions -> prompts -> assembled report.

Threshold resolution policy: cell series, the cross-cell mean/max/min, and
the cross-cell std of a variable all scale by that variable's global range
across the dataset; entropy thresholds are constants.  The module current
scales by its own range.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

from .annotate import (
    HyperParamProfile,
    annotate_series,
    resolve_hyperparams,
)
from .core import (
    MultiCellDataset,
    SeriesAnnotation,
    TimeSeries,
    Variable,
    VARIABLE_LABELS,
)
from .phrasing import (
    Expression,
    TemplateCatalog,
    describe_phases,
    render_series,
)
from .report import (
    CallPlan,
    LlmEndpointConfig,
    PlannedCall,
    Prompt,
    StructuredReport,
    VariableMapping,
    assemble_full_report,
    build_cell_group_prompt,
    build_system_prompt,
    plan_calls,
    synthesize_part,
)
from .stats import (
    PhaseSegment,
    VariableAggregates,
    classify_phases,
    compute_aggregates,
    series_range,
    variable_range,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnotatedModule:
    """Everything derived from one dataset before report synthesis."""

    dataset: MultiCellDataset
    aggregates: Mapping[Variable, VariableAggregates]
    phases: tuple[PhaseSegment, ...]
    annotations: Mapping[str, SeriesAnnotation]
    expressions: tuple[Expression, ...]

    def system_expressions(self) -> list[Expression]:
        """Aggregate, heterogeneity, module-current, and phase expressions."""
        cell_names = {
            self.dataset.per_cell[cid][v].name
            for cid in self.dataset.per_cell
            for v in self.dataset.per_cell[cid]
        }
        return [e for e in self.expressions if e.series_name not in cell_names]

    def cell_expressions(self, begin_id: int, end_id: int) -> list[Expression]:
        names = {
            self.dataset.per_cell[cid][v].name
            for cid in range(begin_id, end_id + 1)
            for v in self.dataset.per_cell[cid]
        }
        return [e for e in self.expressions if e.series_name in names]


def annotate_module(
    dataset: MultiCellDataset,
    profile: HyperParamProfile,
    *,
    system_level: bool = True,
    catalog: TemplateCatalog | None = None,
    slice_width: int | None = None,
    idle_current_fraction: float = 0.02,
    fluctuation_on_std: bool = False,
) -> AnnotatedModule:
    """Annotate every series of a module and render its expressions.

    Produces, per variable: the five aggregate/heterogeneity series (when
    ``system_level``), then the module current and its operating phases,
    then every cell series.  Expression order is deterministic.
    """
    overrides: dict[str, Any] = {"fluctuation_on_std": fluctuation_on_std}
    if slice_width is not None:
        overrides["slice_width"] = slice_width

    def params_for(key: str, span: float):
        return resolve_hyperparams(profile, key, span, **overrides)

    annotations: dict[str, SeriesAnnotation] = {}
    expressions: list[Expression] = []
    aggregates: dict[Variable, VariableAggregates] = {}

    def annotate(series: TimeSeries, key: str, span: float) -> None:
        annotation = annotate_series(series, params_for(key, span))
        annotations[series.name] = annotation
        expressions.extend(render_series(annotation, catalog))

    if system_level:
        for variable in dataset.variables:
            bundle = compute_aggregates(dataset, variable)
            aggregates[variable] = bundle
            span = variable_range(dataset, variable)
            annotate(bundle.mean, variable.value, span)
            annotate(bundle.max, variable.value, span)
            annotate(bundle.min, variable.value, span)
            # Heterogeneity thresholds scale by the parent variable's range:
            # a std of 5% of the variable's swing is slight regardless of how
            # flat the std series itself happens to be.
            annotate(bundle.std, "std", span)
            annotate(bundle.entropy, "entropy", span)

    current = dataset.module_current
    annotate(current, Variable.CURRENT.value, series_range(current))
    phases = tuple(classify_phases(current, idle_current_fraction))
    expressions.extend(
        _phase_expressions(phases)
    )

    for cid in range(1, dataset.cell_count + 1):
        for variable in dataset.variables:
            series = dataset.per_cell[cid][variable]
            annotate(series, variable.value, variable_range(dataset, variable))

    return AnnotatedModule(
        dataset=dataset,
        aggregates=aggregates,
        phases=phases,
        annotations=annotations,
        expressions=tuple(expressions),
    )


def _phase_expressions(phases: Sequence[PhaseSegment]) -> list[Expression]:
    rendered = describe_phases(phases)
    # Group under a dedicated series name so prompts can carry the module's
    # operating story next to the current descriptors.
    return [
        Expression(
            text=e.text, series_name="operational phases", attribute=e.attribute,
            begin=e.begin, end=e.end,
        )
        for e in rendered
    ]


@dataclass(frozen=True)
class CallRecord:
    scope: str
    begin: int | None
    end: int | None
    prompt_chars: int
    latency_s: float


def build_prompts(
    annotated: AnnotatedModule,
    mapping: VariableMapping,
    plan: CallPlan,
    config: LlmEndpointConfig,
) -> list[Prompt]:
    prompts: list[Prompt] = []
    for call in plan.calls:
        if call.scope == "system":
            prompts.append(
                build_system_prompt(
                    annotated.system_expressions(),
                    mapping,
                    model=config.model,
                    temperature=config.temperature,
                    max_output_tokens=config.max_output_tokens,
                )
            )
        else:
            prompts.append(
                build_cell_group_prompt(
                    annotated.cell_expressions(call.begin, call.end),
                    mapping,
                    call.begin,
                    call.end,
                    model=config.model,
                    temperature=config.temperature,
                    max_output_tokens=config.max_output_tokens,
                )
            )
    return prompts


def generate_report(
    annotated: AnnotatedModule,
    config: LlmEndpointConfig,
    *,
    mapping: VariableMapping | None = None,
    system_level: bool = True,
    group_size: int = 4,
) -> tuple[dict[str, Any], list[CallRecord]]:
    """Plan calls, complete them (concurrently, bounded), validate each part,
    and concatenate into the full report document."""
    dataset = annotated.dataset
    if mapping is None:
        mapping = VariableMapping.for_dataset(dataset.variables, system_level)
    plan = plan_calls(dataset.cell_count, system_level, group_size)
    prompts = build_prompts(annotated, mapping, plan, config)

    records: list[CallRecord] = []
    parts: list[StructuredReport] = []

    def run_one(call: PlannedCall, prompt: Prompt) -> StructuredReport:
        started = time.monotonic()
        if call.scope == "system":
            expected = [VARIABLE_LABELS[v] for v in mapping.system_vars]
            part = synthesize_part(prompt, config, expected_variables=expected)
        else:
            part = synthesize_part(
                prompt, config, expected_cells=list(range(call.begin, call.end + 1))
            )
        records.append(
            CallRecord(call.scope, call.begin, call.end, len(prompt.text),
                       time.monotonic() - started)
        )
        return part

    if config.max_concurrent > 1 and len(prompts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=min(config.max_concurrent, len(prompts))) as pool:
            parts = list(pool.map(run_one, plan.calls, prompts))
    else:
        parts = [run_one(call, prompt) for call, prompt in zip(plan.calls, prompts)]

    # records append in completion order under concurrency; keep plan order
    records.sort(key=lambda r: (r.scope != "system", r.begin or 0))
    full = assemble_full_report(parts, expected_cell_count=dataset.cell_count)
    return full, records


def truncate_dataset(dataset: MultiCellDataset, length: int) -> MultiCellDataset:
    """First ``length`` timestamps of every series, revalidated."""
    if not 2 <= length <= dataset.length:
        raise ValueError(f"cannot truncate length {dataset.length} to {length}")
    from dataclasses import replace

    def cut(series: TimeSeries) -> TimeSeries:
        return replace(series, values=series.values[:length])

    per_cell = {
        cid: {v: cut(s) for v, s in variables.items()}
        for cid, variables in dataset.per_cell.items()
    }
    from .core import build_dataset

    return build_dataset(dataset.module_id, per_cell, cut(dataset.module_current))
