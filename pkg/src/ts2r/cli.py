"""Command-line entry point.

Subcommand per pipeline stage, so every intermediate artifact lands on disk
and can be inspected or replayed:

    ts2r synth scenario.json --out runs/demo
    ts2r annotate --input runs/demo/dataset --profile zju --out runs/demo
    ts2r report --input runs/demo/dataset --profile zju --mock --out runs/demo
    ts2r judge --generated a.tsv --reference b.tsv --mock --out runs/judge
    ts2r task manage --input runs/demo/dataset --mock --repeats 5 --out runs/task

Exit codes: 0 success, 2 input/config error, 3 transport/endpoint error,
4 schema/validation error on model output.  Flags override the config file,
which overrides defaults.  The only environment dependence is the auth
token variable (default TS2R_API_KEY).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import fields as dataclass_fields
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .annotate import BUILTIN_PROFILES, HyperParamProfile, load_profiles
from .core import DatasetValidationError
from .evaluate import (
    FactPair,
    JudgeOutputError,
    TaskWindow,
    batch_judge_prompts,
    evaluation_run_document,
    factscore,
    parse_judge_output,
    report_factscore,
    run_task_suite,
)
from .core import AttributeKind
from .io import (
    DatasetFormatError,
    DocumentFormatError,
    SchemaVersionError,
    load_dataset,
    load_label,
    save_annotation_set,
    save_dataset,
    save_document,
    save_label,
    save_report,
    scenario_from_json,
)
from .phrasing import TemplateCatalog, load_catalog
from .pipeline import annotate_module, generate_report
from .report import (
    ConfigError,
    LlmEndpointConfig,
    ReportParseError,
    TransportError,
    complete,
)
from .synth import generate_synthetic

log = logging.getLogger("ts2r")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_TRANSPORT = 3
EXIT_SCHEMA = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INPUT):
        super().__init__(message)
        self.code = code


def main(argv: Sequence[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    started = time.time()
    try:
        outputs = args.handler(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except (DatasetFormatError, DocumentFormatError, SchemaVersionError,
            DatasetValidationError, ConfigError, FileNotFoundError, KeyError,
            ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except TransportError as exc:
        log.error("endpoint failure: %s", exc)
        return EXIT_TRANSPORT
    _write_manifest(args, outputs, started)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ts2r",
        description="Battery time-series to semantic descriptors, expressions, and reports.",
    )
    parser.add_argument("--version", action="version", version=f"ts2r {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug logging to stderr")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON config file; flags override its sections")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("spec", type=Path, help="scenario spec JSON file")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--name", default="dataset", help="output basename")
    p.set_defaults(handler=_cmd_synth)

    p = sub.add_parser("annotate", help="annotate a dataset and write expressions")
    p.add_argument("--input", type=Path, required=True, help="dataset path (.csv or base)")
    p.add_argument("--profile", default=None, help="hyperparameter profile name")
    p.add_argument("--profiles-file", type=Path, default=None,
                   help="JSON file with extra profiles")
    p.add_argument("--catalog", type=Path, default=None, help="template catalog overrides")
    p.add_argument("--no-system", action="store_true",
                   help="skip cross-cell statistics (standalone-cell data)")
    p.add_argument("--figures", action="store_true", help="render per-series PNG figures")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_annotate)

    p = sub.add_parser("report", help="run the full pipeline into a structured report")
    p.add_argument("--input", type=Path, required=True, help="dataset path (.csv or base)")
    p.add_argument("--profile", default=None)
    p.add_argument("--profiles-file", type=Path, default=None)
    p.add_argument("--catalog", type=Path, default=None)
    p.add_argument("--no-system", action="store_true")
    p.add_argument("--group-size", type=int, default=None, help="cells per call (default 4)")
    p.add_argument("--figures", action="store_true")
    _endpoint_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_report)

    p = sub.add_parser("judge", help="score generated expressions against references")
    p.add_argument("--generated", type=Path, required=True, help="expressions TSV")
    p.add_argument("--reference", type=Path, required=True, help="reference expressions TSV")
    p.add_argument("--batch-limit", type=int, default=50, help="pairs per judge call")
    _endpoint_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_judge)

    p = sub.add_parser("task", help="run a downstream task over labeled windows")
    p.add_argument("task", choices=["soc", "monitor", "manage"])
    p.add_argument("--input", type=Path, action="append", required=True,
                   help="dataset base path; repeatable; expects <base>.labels.json beside it")
    p.add_argument("--profile", default=None)
    p.add_argument("--profiles-file", type=Path, default=None)
    p.add_argument("--no-system", action="store_true")
    p.add_argument("--repeats", type=int, default=None, help="repeat count (default 5)")
    p.add_argument("--group-size", type=int, default=None)
    _endpoint_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=_cmd_task)

    return parser


def _endpoint_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", default=None, help="chat-completions base URL")
    p.add_argument("--endpoint-path", default=None, help="URL path (default /v1/chat/completions)")
    p.add_argument("--model", default=None)
    p.add_argument("--auth-env", default=None, help="env var holding the token")
    p.add_argument("--timeout", type=float, default=None, help="per-request timeout seconds")
    p.add_argument("--retries", type=int, default=None)
    p.add_argument("--max-concurrent", type=int, default=None)
    p.add_argument("--mock", action="store_true", help="offline deterministic backend")
    p.add_argument("--seed", type=int, default=None, help="mock seed")


def _config_section(args: argparse.Namespace, section: str) -> dict[str, Any]:
    if not getattr(args, "config", None):
        return {}
    try:
        doc = json.loads(args.config.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config file {args.config}: {exc}")
    value = doc.get(section, {})
    if not isinstance(value, dict):
        raise CliError(f"config section {section!r} must be an object")
    return value


def _endpoint_config(args: argparse.Namespace) -> LlmEndpointConfig:
    section = _config_section(args, "endpoint")
    allowed = {f.name for f in dataclass_fields(LlmEndpointConfig)}
    unknown = set(section) - allowed
    if unknown:
        raise CliError(f"unknown endpoint config keys: {sorted(unknown)}")
    merged: dict[str, Any] = dict(section)
    flag_map = {
        "base_url": args.endpoint,
        "path": args.endpoint_path,
        "model": args.model,
        "auth_env": args.auth_env,
        "timeout_s": args.timeout,
        "max_retries": args.retries,
        "max_concurrent": args.max_concurrent,
        "mock_seed": getattr(args, "seed", None),
    }
    for key, value in flag_map.items():
        if value is not None:
            merged[key] = value
    if args.mock:
        merged["mock"] = True
    return LlmEndpointConfig(**merged)


def _resolve_profile(args: argparse.Namespace) -> HyperParamProfile:
    section = _config_section(args, "profile")
    name = args.profile or section.get("name")
    profiles = dict(BUILTIN_PROFILES)
    profiles_file = args.profiles_file or section.get("file")
    if profiles_file:
        profiles.update(load_profiles(profiles_file))
    if name is None:
        raise CliError(
            f"no profile selected; available: {', '.join(sorted(profiles))}"
        )
    if name not in profiles:
        raise CliError(
            f"unknown profile {name!r}; available: {', '.join(sorted(profiles))}"
        )
    return profiles[name]


def _resolve_catalog(args: argparse.Namespace) -> TemplateCatalog | None:
    if getattr(args, "catalog", None):
        return load_catalog(args.catalog)
    return None


def _out_dir(args: argparse.Namespace) -> Path:
    out = args.out or Path(_config_section(args, "output").get("dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# Command handlers (each returns the list of output paths for the manifest)


def _cmd_synth(args: argparse.Namespace) -> list[Path]:
    spec = scenario_from_json(args.spec)
    if args.seed is not None:
        from dataclasses import replace

        spec = replace(spec, seed=args.seed)
    dataset, label = generate_synthetic(spec)
    out = _out_dir(args)
    csv_path, meta_path = save_dataset(dataset, out / args.name)
    label_path = save_label(out / f"{args.name}.labels.json", label)
    log.info("wrote %s, %s, %s", csv_path, meta_path, label_path)
    return [csv_path, meta_path, label_path]


def _write_expressions_tsv(path: Path, expressions) -> Path:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["series", "attribute", "begin", "end", "timestamps", "text"])
        for e in expressions:
            writer.writerow([
                e.series_name,
                e.attribute.value,
                e.begin if e.begin is not None else "",
                e.end if e.end is not None else "",
                ",".join(str(t) for t in e.timestamps),
                e.text,
            ])
    return path


def _cmd_annotate(args: argparse.Namespace) -> list[Path]:
    dataset = load_dataset(args.input)
    profile = _resolve_profile(args)
    annotated = annotate_module(
        dataset, profile, system_level=not args.no_system, catalog=_resolve_catalog(args)
    )
    out = _out_dir(args)
    outputs = [
        save_annotation_set(out / "annotations.json", annotated.annotations,
                            module_id=dataset.module_id),
        _write_expressions_tsv(out / "expressions.tsv", annotated.expressions),
    ]
    if args.figures:
        from .plots import render_annotation_figures

        outputs.extend(render_annotation_figures(annotated.annotations, out / "figures"))
    log.info("annotated %d series -> %s", len(annotated.annotations), out)
    return outputs


def _cmd_report(args: argparse.Namespace) -> list[Path]:
    dataset = load_dataset(args.input)
    profile = _resolve_profile(args)
    config = _endpoint_config(args)
    group_size = args.group_size or int(_config_section(args, "endpoint").get("group_size", 4))
    annotated = annotate_module(
        dataset, profile, system_level=not args.no_system, catalog=_resolve_catalog(args)
    )
    try:
        report, records = generate_report(
            annotated, config, system_level=not args.no_system, group_size=group_size
        )
    except ReportParseError as exc:
        raise CliError(f"model output failed validation: {exc}", EXIT_SCHEMA) from exc
    out = _out_dir(args)
    outputs = [
        save_report(out / "report.json", report),
        _write_expressions_tsv(out / "expressions.tsv", annotated.expressions),
    ]
    calls_path = out / "calls.tsv"
    with calls_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, delimiter="\t")
        writer.writerow(["scope", "begin", "end", "prompt_chars", "latency_s"])
        for r in records:
            writer.writerow([r.scope, r.begin or "", r.end or "", r.prompt_chars,
                             f"{r.latency_s:.4f}"])
    outputs.append(calls_path)
    if args.figures:
        from .plots import render_annotation_figures

        outputs.extend(render_annotation_figures(annotated.annotations, out / "figures"))
    log.info("report with %d cell entries -> %s", len(report["cells_info"]), out)
    return outputs


def _read_expressions_tsv(path: Path) -> dict[tuple[str, str], str]:
    """Group sentence text by (series, attribute), joining multiples."""
    if not path.exists():
        raise CliError(f"no such file {path}")
    grouped: dict[tuple[str, str], list[str]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        for row in reader:
            key = (row["series"], row["attribute"])
            grouped.setdefault(key, []).append(row["text"])
    return {key: " ".join(texts) for key, texts in grouped.items()}


def _cmd_judge(args: argparse.Namespace) -> list[Path]:
    generated = _read_expressions_tsv(args.generated)
    reference = _read_expressions_tsv(args.reference)
    keys = sorted(set(generated) & set(reference))
    if not keys:
        raise CliError("generated and reference files share no (series, attribute) keys")
    skipped = sorted(set(generated) ^ set(reference))
    if skipped:
        log.warning("%d unmatched keys skipped", len(skipped))
    pairs = [
        FactPair(
            id=i + 1,
            attribute=AttributeKind(key[1]),
            generated=generated[key],
            reference=reference[key],
        )
        for i, key in enumerate(keys)
    ]
    config = _endpoint_config(args)
    results = []
    for prompt, ids in batch_judge_prompts(pairs, batch_limit=args.batch_limit,
                                           model=config.model):
        raw = complete(prompt, config)
        try:
            results.extend(parse_judge_output(raw, expected_ids=ids))
        except JudgeOutputError as exc:
            raise CliError(f"judge output invalid: {exc}", EXIT_SCHEMA) from exc
    by_id = {r.id: r.score for r in results}
    per_series: dict[str, dict[AttributeKind, float]] = {}
    for pair in pairs:
        series = keys[pair.id - 1][0]
        per_series.setdefault(series, {})[pair.attribute] = by_id[pair.id]
    series_scores = {name: factscore(scores) for name, scores in per_series.items()}
    overall = report_factscore(list(series_scores.values()))

    out = _out_dir(args)
    scores_path = out / "scores.csv"
    with scores_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "series", "attribute", "score"])
        for pair in pairs:
            series, attribute = keys[pair.id - 1]
            writer.writerow([pair.id, series, attribute, by_id[pair.id]])
    doc_path = save_document(
        out / "factscore.json",
        "factscore",
        {
            "overall": overall,
            "series": series_scores,
            "pair_count": len(pairs),
        },
    )
    log.info("FactScore %.3f over %d pairs -> %s", overall, len(pairs), out)
    return [scores_path, doc_path]


_TASK_NAMES = {"soc": "soc_prediction", "monitor": "monitoring", "manage": "management"}


def _cmd_task(args: argparse.Namespace) -> list[Path]:
    task = _TASK_NAMES[args.task]
    profile = _resolve_profile(args)
    config = _endpoint_config(args)
    windows = []
    for base in args.input:
        dataset = load_dataset(base)
        label_path = Path(str(base).removesuffix(".csv") + ".labels.json")
        if not label_path.exists():
            raise CliError(f"missing ground-truth labels {label_path}")
        windows.append(TaskWindow(dataset=dataset, label=load_label(label_path)))
    repeats = args.repeats if args.repeats is not None else 5
    try:
        records, aggregates = run_task_suite(
            windows, profile, config, task,
            repeats=repeats,
            group_size=args.group_size or 4,
            system_level=not args.no_system,
        )
    except ReportParseError as exc:
        raise CliError(f"model output failed validation: {exc}", EXIT_SCHEMA) from exc
    out = _out_dir(args)
    records_path = out / "records.csv"
    with records_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "repeat", "prediction", "truth",
                         "predicted_type", "truth_type"])
        for r in records:
            writer.writerow([r.window_index, r.repeat, r.prediction, r.truth,
                             r.predicted_type or "", r.truth_type or ""])
    doc_path = save_document(
        out / "metrics.json",
        "evaluation_run",
        evaluation_run_document(task, records, aggregates, config),
    )
    log.info("%s metrics: %s -> %s", task, aggregates, out)
    return [records_path, doc_path]


# --------------------------------------------------------------------------
# Run manifest


def _write_manifest(args: argparse.Namespace, outputs: list[Path], started: float) -> None:
    out = getattr(args, "out", None)
    if out is None or not outputs:
        return
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "duration_s": round(time.time() - started, 3),
        "outputs": [str(p) for p in outputs],
        "version": __version__,
    }
    seed = getattr(args, "seed", None)
    if seed is not None:
        manifest["seed"] = seed
    config_path = getattr(args, "config", None)
    if config_path:
        digest = hashlib.sha256(Path(config_path).read_bytes()).hexdigest()[:16]
        manifest["config_hash"] = digest
    path = Path(out) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


if __name__ == "__main__":
    sys.exit(main())
