"""``actionledger`` command line: validate, score, rank, report, gallery, demo.

Exit codes: 0 success, 1 domain error (invalid trace, bad labels, ...),
2 I/O or usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections.abc import Iterable
from pathlib import Path
from typing import Any

from . import analysis
from .errors import ActionLedgerError, HeaderError
from .ledger import ActionLedger, ActionTable, FinalizePolicy, encode_table, read_table
from .toy_trainer import PRESETS, DivergenceError, generate_blobs, preset, train_and_trace
from .trace_format import (
    TOTAL,
    LabelMap,
    TraceHeader,
    TraceWriter,
    format_summary,
    iter_trace,
    read_label_map,
    validate_trace,
    write_label_map,
)

log = logging.getLogger("actionledger")

EXIT_OK, EXIT_DOMAIN, EXIT_IO = 0, 1, 2
COVERAGE_FLAGS = {"allow": "allow", "full": "require_full_coverage"}


def _use_color() -> bool:
    return sys.stdout.isatty() and "NO_COLOR" not in os.environ


def _jsonl(records: Iterable[dict[str, Any]]) -> str:
    return "".join(
        json.dumps(r, separators=(",", ":"), ensure_ascii=False) + "\n" for r in records
    )


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_labels(path: str | None) -> LabelMap | None:
    return read_label_map(path) if path else None


def score_trace(path: str | Path, policy: FinalizePolicy) -> ActionTable:
    with open(path, "rb") as fh:
        header, records = iter_trace(fh)
        ledger = ActionLedger.from_records(records)
    return ledger.finalize(policy, header)


def component_summary(table: ActionTable) -> list[str]:
    lines = []
    for component in [*table.components, TOTAL]:
        values = list(table.scores(component).values())
        lines.append(
            f"{component}: samples={len(values)} min={min(values):.6g}"
            f" mean={sum(values) / len(values):.6g} max={max(values):.6g}"
        )
    return lines


def cmd_validate(args: argparse.Namespace) -> int:
    with open(args.trace, "rb") as fh:
        try:
            summary = validate_trace(fh)
        except HeaderError as exc:
            print(f"trace: INVALID\nerror: {exc}")
            return EXIT_DOMAIN
    if args.json:
        print(json.dumps(summary.to_dict(), ensure_ascii=False))
    else:
        print(format_summary(summary))
    return EXIT_OK if summary.valid else EXIT_DOMAIN


def cmd_score(args: argparse.Namespace) -> int:
    with open(args.trace, "rb") as fh:
        try:
            summary = validate_trace(fh)
        except HeaderError as exc:
            print(f"error: invalid trace: {exc}", file=sys.stderr)
            return EXIT_DOMAIN
    if not summary.valid:
        print(format_summary(summary), file=sys.stderr)
        return EXIT_DOMAIN
    policy = FinalizePolicy(args.policy, COVERAGE_FLAGS[args.coverage])
    table = score_trace(args.trace, policy)
    data = encode_table(table)
    info = sys.stdout if args.output else sys.stderr
    if args.output:
        Path(args.output).write_bytes(data)
    else:
        sys.stdout.write(data.decode("utf-8"))
    for line in component_summary(table):
        print(line, file=info)
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    table = read_table(args.table)
    report = analysis.rank(
        table, args.component, args.direction, args.k, _load_labels(args.labels)
    )
    if args.format == "jsonl":
        sys.stdout.write(_jsonl(report.to_records()))
    else:
        print(analysis.render_rank(report, _use_color()))
    if args.output:
        Path(args.output).write_text(_jsonl(report.to_records()), encoding="utf-8")
    return EXIT_OK


def build_report(
    table: ActionTable, labels: LabelMap, component: str, direction: str, k: int
) -> tuple[analysis.ClassStats, analysis.EnrichmentReport]:
    stats = analysis.class_stats(table, labels, component)
    enrichment = analysis.extreme_enrichment(table, labels, component, direction, k)
    return stats, enrichment


def cmd_report(args: argparse.Namespace) -> int:
    table = read_table(args.table)
    labels = read_label_map(args.labels)
    stats, enrichment = build_report(table, labels, args.component, args.direction, args.k)
    color = _use_color()
    if args.format == "jsonl":
        sys.stdout.write(_jsonl(stats.to_records() + enrichment.to_records()))
    else:
        print(analysis.render_class_stats(stats, color))
        print()
        print(analysis.render_enrichment(enrichment, color))
    if args.output:
        Path(args.output).write_text(
            _jsonl(stats.to_records() + enrichment.to_records()), encoding="utf-8"
        )
    return EXIT_OK


def cmd_gallery(args: argparse.Namespace) -> int:
    table = read_table(args.table)
    manifest = analysis.gallery_manifest(
        table, _load_labels(args.labels), args.component, args.k
    )
    for warning in manifest.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    text = _jsonl(manifest.to_records())
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
        print(analysis.render_gallery(manifest))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def run_demo(
    out_dir: str | Path,
    preset_name: str = "classify",
    seed: int = 1,
    noise: float | None = None,
    epochs: int | None = None,
    k: int = analysis.DEFAULT_K,
) -> str:
    """Train the toy model, write trace + labels, then score, rank and report.

    Returns the text report (also written to ``report.txt``).
    """
    overrides: dict[str, Any] = {"seed": seed}
    if noise is not None:
        overrides["noise_rate"] = noise
    if epochs is not None:
        overrides["epochs"] = epochs
    config = preset(preset_name, **overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    eval_set = generate_blobs(config, "test")
    labels = eval_set.label_map()
    write_label_map(out / "labels.aclm", labels)
    noisy = set(eval_set.noisy_ids())
    (out / "noisy.txt").write_text("".join(f"{s}\n" for s in sorted(noisy)), encoding="utf-8")
    noise_labels = LabelMap.from_labels(
        {sid: "noisy" if sid in noisy else "clean" for sid in eval_set.ids}
    )
    write_label_map(out / "noise.aclm", noise_labels)

    header = TraceHeader(
        run_id=f"demo-{preset_name}-seed{seed}",
        split="test",
        components=config.components,
        labels="labels.aclm",
    )
    with TraceWriter(out / "trace.aclt", header) as writer:
        train_and_trace(config, eval_set, writer)

    table = score_trace(out / "trace.aclt", FinalizePolicy())
    (out / "table.acts").write_bytes(encode_table(table))

    rank_records: list[dict[str, Any]] = []
    sections = []
    for component in [*table.components, TOTAL]:
        for direction in analysis.DIRECTIONS:
            report = analysis.rank(table, component, direction, k, labels)
            rank_records += report.to_records()
            sections.append(analysis.render_rank(report))
    (out / "ranks.jsonl").write_text(_jsonl(rank_records), encoding="utf-8")

    # extremes = top 20% so the noise audit has room for every flipped label
    k_extreme = max(1, len(table) // 5)
    report_records: list[dict[str, Any]] = []
    for lm in (labels, noise_labels):
        stats, enrichment = build_report(table, lm, TOTAL, "hardest", k_extreme)
        report_records += stats.to_records() + enrichment.to_records()
        sections.append(analysis.render_class_stats(stats))
        sections.append(analysis.render_enrichment(enrichment))
    (out / "report.jsonl").write_text(_jsonl(report_records), encoding="utf-8")

    manifest = analysis.gallery_manifest(table, labels, TOTAL, k)
    (out / "gallery.jsonl").write_text(_jsonl(manifest.to_records()), encoding="utf-8")
    sections.append(analysis.render_gallery(manifest))

    text = "\n\n".join(["\n".join(component_summary(table)), *sections]) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    return text


def cmd_demo(args: argparse.Namespace) -> int:
    text = run_demo(args.output, args.preset, args.seed, args.noise, args.epochs, args.k)
    sys.stdout.write(text)
    with open(Path(args.output) / "trace.aclt", "rb") as fh:
        summary = validate_trace(fh)
    print(f"trace validation: {'VALID' if summary.valid else 'INVALID'}")
    return EXIT_OK if summary.valid else EXIT_DOMAIN


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actionledger",
        description="Per-sample difficulty scores from accumulated training losses.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a .aclt trace")
    p.add_argument("trace")
    p.add_argument("--json", action="store_true", help="print the summary as JSON")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("score", help="compute the action table of a trace")
    p.add_argument("trace")
    p.add_argument("--policy", choices=("sum", "mean"), default="sum")
    p.add_argument("--coverage", choices=tuple(COVERAGE_FLAGS), default="allow")
    p.add_argument("-o", "--output", help="write the .acts table here (default: stdout)")
    p.set_defaults(func=cmd_score)

    def add_table_args(p: argparse.ArgumentParser, labels_required: bool = False) -> None:
        p.add_argument("table")
        p.add_argument("--labels", required=labels_required, help=".aclm label map")
        p.add_argument("--component", default=TOTAL)
        p.add_argument("-k", type=_positive_int, default=analysis.DEFAULT_K)

    p = sub.add_parser("rank", help="hardest or easiest samples")
    add_table_args(p)
    p.add_argument("--direction", choices=analysis.DIRECTIONS, default="hardest")
    p.add_argument("--format", choices=("text", "jsonl"), default="text")
    p.add_argument("-o", "--output", help="also write machine-readable lines here")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("report", help="per-class statistics and extreme-set enrichment")
    add_table_args(p, labels_required=True)
    p.add_argument("--direction", choices=analysis.DIRECTIONS, default="hardest")
    p.add_argument("--format", choices=("text", "jsonl"), default="text")
    p.add_argument("-o", "--output", help="also write machine-readable lines here")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gallery", help="manifest of hardest and easiest rows")
    add_table_args(p)
    p.add_argument("-o", "--output", help="write the manifest here (default: stdout)")
    p.set_defaults(func=cmd_gallery)

    p = sub.add_parser("demo", help="train the toy model and run the whole pipeline")
    p.add_argument("--preset", choices=sorted(PRESETS), default="classify")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--noise", type=float, default=None, help="label-noise rate override")
    p.add_argument("--epochs", type=_positive_int, default=None)
    p.add_argument("-k", type=_positive_int, default=analysis.DEFAULT_K)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ActionLedgerError, DivergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
