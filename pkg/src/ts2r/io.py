"""Disk formats: wide CSV datasets with metadata sidecars, and versioned
JSON documents for annotations, labels, and reports.

Dataset layout: ``<name>.csv`` holds a ``t`` column (1-based, strictly
increasing by 1) plus one column per series named ``cell<K>_<variable>``
and a ``module_current`` column, in any order.  ``<name>.meta`` is a
key=value sidecar carrying ``module_id``, ``sampling_period_seconds`` and
``unit.<variable>`` entries.

Documents are JSON with a top-level ``schema_version: "1"``; loading a file
with any other version fails with :class:`SchemaVersionError`.  Round-trips
are lossless: floats are serialized in shortest-repr form.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path
from typing import Any, Mapping

from .core import (
    AttributeKind,
    DEFAULT_UNITS,
    EventKind,
    MultiCellDataset,
    Origin,
    OriginKind,
    PointEvent,
    Segment,
    SegmentStats,
    SeriesAnnotation,
    TimeSeries,
    Variable,
    build_dataset,
)
from .synth import (
    AnomalyLabel,
    FaultSpec,
    GroundTruthLabel,
    Phase,
    ScenarioSpec,
    TrendRun,
)

SCHEMA_VERSION = "1"

_CELL_COLUMN = re.compile(r"^cell(\d+)_([a-z_]+)$")


class DatasetFormatError(ValueError):
    """Malformed CSV/sidecar input."""


class SchemaVersionError(ValueError):
    def __init__(self, found: str):
        self.found = found
        super().__init__(
            f"unsupported schema_version {found!r}, expected {SCHEMA_VERSION!r}"
        )


class DocumentFormatError(ValueError):
    """Structurally invalid document."""


# --------------------------------------------------------------------------
# Dataset CSV + sidecar


def save_dataset(dataset: MultiCellDataset, base_path: str | Path) -> tuple[Path, Path]:
    """Write ``<base>.csv`` and ``<base>.meta``; returns both paths."""
    base = Path(base_path)
    csv_path = base.with_suffix(".csv")
    meta_path = base.with_suffix(".meta")

    header = ["t"]
    columns = []
    for cid in range(1, dataset.cell_count + 1):
        for variable, series in dataset.per_cell[cid].items():
            header.append(f"cell{cid}_{variable.value}")
            columns.append(series.values)
    header.append("module_current")
    columns.append(dataset.module_current.values)

    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(dataset.length):
            writer.writerow([t + 1] + [repr(col[t]) for col in columns])

    units = {v.value: dataset.per_cell[1][v].unit for v in dataset.variables}
    units["current"] = dataset.module_current.unit
    with meta_path.open("w", encoding="utf-8") as fh:
        fh.write(f"module_id={dataset.module_id}\n")
        fh.write(f"sampling_period_seconds={repr(dataset.sampling_period)}\n")
        for name, unit in units.items():
            fh.write(f"unit.{name}={unit}\n")
    return csv_path, meta_path


def _read_sidecar(meta_path: Path) -> dict[str, str]:
    if not meta_path.exists():
        raise DatasetFormatError(f"missing sidecar {meta_path}")
    entries: dict[str, str] = {}
    for lineno, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DatasetFormatError(f"{meta_path}:{lineno}: expected key=value")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    return entries


def load_dataset(path: str | Path) -> MultiCellDataset:
    """Load and validate a dataset from ``<name>.csv`` (+ sidecar).

    Column order is immaterial; values parse exactly as written.
    """
    csv_path = Path(path)
    if csv_path.suffix != ".csv":
        csv_path = csv_path.with_suffix(".csv")
    if not csv_path.exists():
        raise DatasetFormatError(f"no such dataset file {csv_path}")
    meta = _read_sidecar(csv_path.with_suffix(".meta"))
    try:
        sampling_period = float(meta["sampling_period_seconds"])
    except KeyError:
        raise DatasetFormatError("sidecar missing sampling_period_seconds") from None
    module_id = meta.get("module_id", csv_path.stem)

    with csv_path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{csv_path}: empty file") from None
        rows = list(reader)

    if "t" not in header:
        raise DatasetFormatError("malformed header: no 't' column")
    if "module_current" not in header:
        raise DatasetFormatError("required series absent: module_current")
    t_idx = header.index("t")
    cell_columns: dict[tuple[int, Variable], int] = {}
    for idx, name in enumerate(header):
        if name in ("t", "module_current"):
            continue
        m = _CELL_COLUMN.match(name)
        if not m:
            raise DatasetFormatError(f"malformed header: unparseable column {name!r}")
        try:
            variable = Variable(m.group(2))
        except ValueError:
            raise DatasetFormatError(
                f"malformed header: unknown variable in column {name!r}"
            ) from None
        cell_columns[(int(m.group(1)), variable)] = idx

    if not rows:
        raise DatasetFormatError(f"{csv_path}: no data rows")
    for i, row in enumerate(rows, 1):
        if len(row) != len(header):
            raise DatasetFormatError(f"{csv_path}: row {i} has {len(row)} fields")
        if int(row[t_idx]) != i:
            raise DatasetFormatError(
                f"{csv_path}: non-monotone t at row {i} (found {row[t_idx]})"
            )

    def unit_for(variable: Variable) -> str:
        return meta.get(f"unit.{variable.value}", DEFAULT_UNITS[variable])

    def column(idx: int) -> tuple[float, ...]:
        return tuple(float(row[idx]) for row in rows)

    cell_ids = sorted({cid for cid, _ in cell_columns})
    per_cell: dict[int, dict[Variable, TimeSeries]] = {}
    for cid in cell_ids:
        variables = [v for (c, v) in cell_columns if c == cid]
        per_cell[cid] = {
            variable: TimeSeries(
                name=f"{_series_label(variable)} of Cell #{cid}",
                variable=variable,
                unit=unit_for(variable),
                sampling_period=sampling_period,
                values=column(cell_columns[(cid, variable)]),
                origin=Origin.cell(cid),
            )
            for variable in variables
        }
    module_current = TimeSeries(
        name="current of the LIB module",
        variable=Variable.CURRENT,
        unit=meta.get("unit.current", DEFAULT_UNITS[Variable.CURRENT]),
        sampling_period=sampling_period,
        values=column(header.index("module_current")),
        origin=Origin.module(),
    )
    return build_dataset(module_id, per_cell, module_current)


def _series_label(variable: Variable) -> str:
    from .core import VARIABLE_LABELS

    return VARIABLE_LABELS[variable]


# --------------------------------------------------------------------------
# Versioned JSON documents


def save_document(path: str | Path, kind: str, payload: Mapping[str, Any]) -> Path:
    doc = {"schema_version": SCHEMA_VERSION, "kind": kind}
    doc.update(payload)
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def load_document(path: str | Path, kind: str) -> dict[str, Any]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DocumentFormatError(f"{path}: not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise DocumentFormatError(f"{path}: expected a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(str(version))
    if doc.get("kind") != kind:
        raise DocumentFormatError(
            f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}"
        )
    return doc


# -- TimeSeries / annotation converters


def series_to_dict(series: TimeSeries) -> dict[str, Any]:
    return {
        "name": series.name,
        "variable": series.variable.value,
        "unit": series.unit,
        "sampling_period": series.sampling_period,
        "values": list(series.values),
        "origin": {"kind": series.origin.kind.value, "cell_id": series.origin.cell_id},
    }


def series_from_dict(data: Mapping[str, Any]) -> TimeSeries:
    return TimeSeries(
        name=data["name"],
        variable=Variable(data["variable"]),
        unit=data["unit"],
        sampling_period=float(data["sampling_period"]),
        values=tuple(float(v) for v in data["values"]),
        origin=Origin(OriginKind(data["origin"]["kind"]), data["origin"]["cell_id"]),
    )


def _segment_to_dict(segment: Segment) -> dict[str, Any]:
    return {
        "begin": segment.begin,
        "end": segment.end,
        "attribute": segment.attribute.value,
        "label": segment.label,
        "stats": {
            "mean": segment.stats.mean,
            "std": segment.stats.std,
            "initial": segment.stats.initial,
            "final": segment.stats.final,
            "min": segment.stats.min,
            "max": segment.stats.max,
        },
    }


def _segment_from_dict(data: Mapping[str, Any]) -> Segment:
    return Segment(
        begin=data["begin"],
        end=data["end"],
        attribute=AttributeKind(data["attribute"]),
        label=data["label"],
        stats=SegmentStats(**data["stats"]),
    )


def _event_to_dict(event: PointEvent) -> dict[str, Any]:
    return {"kind": event.kind.value, "timestamp": event.timestamp, "value": event.value}


def _event_from_dict(data: Mapping[str, Any]) -> PointEvent:
    return PointEvent(EventKind(data["kind"]), data["timestamp"], data["value"])


def annotation_to_dict(annotation: SeriesAnnotation) -> dict[str, Any]:
    return {
        "series": series_to_dict(annotation.series),
        "trend_segments": [_segment_to_dict(s) for s in annotation.trend_segments],
        "fluctuation_segments": [_segment_to_dict(s) for s in annotation.fluctuation_segments],
        "amplitude_segments": [_segment_to_dict(s) for s in annotation.amplitude_segments],
        "transitions": [_event_to_dict(e) for e in annotation.transitions],
        "outliers": [_event_to_dict(e) for e in annotation.outliers],
    }


def annotation_from_dict(data: Mapping[str, Any]) -> SeriesAnnotation:
    return SeriesAnnotation(
        series=series_from_dict(data["series"]),
        trend_segments=tuple(_segment_from_dict(s) for s in data["trend_segments"]),
        fluctuation_segments=tuple(_segment_from_dict(s) for s in data["fluctuation_segments"]),
        amplitude_segments=tuple(_segment_from_dict(s) for s in data["amplitude_segments"]),
        transitions=tuple(_event_from_dict(e) for e in data["transitions"]),
        outliers=tuple(_event_from_dict(e) for e in data["outliers"]),
    )


def save_annotation(path: str | Path, annotation: SeriesAnnotation) -> Path:
    return save_document(path, "annotation", {"annotation": annotation_to_dict(annotation)})


def load_annotation(path: str | Path) -> SeriesAnnotation:
    doc = load_document(path, "annotation")
    return annotation_from_dict(doc["annotation"])


def save_annotation_set(
    path: str | Path, annotations: Mapping[str, SeriesAnnotation], module_id: str = ""
) -> Path:
    payload = {
        "module_id": module_id,
        "series": {name: annotation_to_dict(a) for name, a in annotations.items()},
    }
    return save_document(path, "annotation_set", payload)


def load_annotation_set(path: str | Path) -> dict[str, SeriesAnnotation]:
    doc = load_document(path, "annotation_set")
    return {name: annotation_from_dict(a) for name, a in doc["series"].items()}


def save_report(path: str | Path, report: Mapping[str, Any]) -> Path:
    return save_document(path, "report", {"report": dict(report)})


def load_report(path: str | Path) -> dict[str, Any]:
    doc = load_document(path, "report")
    report = doc.get("report")
    if not isinstance(report, dict):
        raise DocumentFormatError(f"{path}: missing report body")
    return report


# -- Ground-truth labels


def label_to_dict(label: GroundTruthLabel) -> dict[str, Any]:
    return {
        "trend_runs": {
            var: [{"begin": r.begin, "end": r.end, "direction": r.direction} for r in runs]
            for var, runs in label.trend_runs.items()
        },
        "kinks": {var: list(ts) for var, ts in label.kinks.items()},
        "spikes": [list(s) for s in label.spikes],
        "status": label.status,
        "anomalies": [
            {
                "variable": a.variable.value,
                "scope": a.scope,
                "cell_id": a.cell_id,
                "begin": a.begin,
                "end": a.end,
                "fault": a.fault,
            }
            for a in label.anomalies
        ],
        "soc_rate_tail": label.soc_rate_tail,
    }


def label_from_dict(data: Mapping[str, Any]) -> GroundTruthLabel:
    return GroundTruthLabel(
        trend_runs={
            var: tuple(TrendRun(r["begin"], r["end"], r["direction"]) for r in runs)
            for var, runs in data["trend_runs"].items()
        },
        kinks={var: tuple(ts) for var, ts in data["kinks"].items()},
        spikes=tuple((s[0], s[1], s[2]) for s in data["spikes"]),
        status=data["status"],
        anomalies=tuple(
            AnomalyLabel(
                variable=Variable(a["variable"]),
                scope=a["scope"],
                cell_id=a["cell_id"],
                begin=a["begin"],
                end=a["end"],
                fault=a["fault"],
            )
            for a in data["anomalies"]
        ),
        soc_rate_tail=data["soc_rate_tail"],
    )


def save_label(path: str | Path, label: GroundTruthLabel) -> Path:
    return save_document(path, "ground_truth", {"label": label_to_dict(label)})


def load_label(path: str | Path) -> GroundTruthLabel:
    doc = load_document(path, "ground_truth")
    return label_from_dict(doc["label"])


# -- Scenario specs (CLI input)


def scenario_from_json(path: str | Path) -> ScenarioSpec:
    """Parse a scenario spec file for the synth command."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        phases = tuple(
            Phase(p["kind"], int(p["duration"]), float(p.get("level", 1.0)))
            for p in raw["phases"]
        )
        faults = tuple(
            FaultSpec(
                variable=Variable(f["variable"]),
                kind=f["kind"],
                begin=int(f["begin"]),
                end=int(f["end"]),
                magnitude=float(f["magnitude"]),
                cell_id=f.get("cell_id"),
            )
            for f in raw.get("faults", [])
        )
        kwargs: dict[str, Any] = {}
        for key in (
            "initial_soc", "soc_per_amp_minute", "base_voltage", "volts_per_soc",
            "ambient_temp", "temp_rise_per_amp", "temp_fall_idle",
            "sampling_period", "module_id", "seed",
        ):
            if key in raw:
                kwargs[key] = raw[key]
        if "variables" in raw:
            kwargs["variables"] = tuple(Variable(v) for v in raw["variables"])
        if "noise_std" in raw:
            kwargs["noise_std"] = {Variable(k): float(v) for k, v in raw["noise_std"].items()}
        if "cell_spread" in raw:
            kwargs["cell_spread"] = {Variable(k): float(v) for k, v in raw["cell_spread"].items()}
        return ScenarioSpec(
            cell_count=int(raw["cell_count"]),
            length=int(raw["length"]),
            phases=phases,
            faults=faults,
            **kwargs,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DocumentFormatError(f"invalid scenario spec: {exc}") from exc
