"""Command line interface.

Ten subcommands cover the pipeline: ingest, stats, stratify, sample,
mix, export, pool, distill, eval, report. Every command takes --config
pointing at the flat key-value run configuration; artifacts land under
the configured output directory (or --out) with a snapshot of the config
alongside, so a finished directory is self-describing.

Exit codes: 0 success, 1 validation or usage error, 2 transport
exhaustion. Re-running a command either reproduces its outputs byte for
byte or refuses to overwrite without --force.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import corpus, distill, figures, harness
from .client import CompletionCache, InferenceClient
from .config import RunConfig, load_config, parse_bands
from .corpus import CorpusStore
from .errors import (
    IoFailure,
    PipelineError,
    SchemaViolation,
    TransportError,
)

log = logging.getLogger(__name__)

_SNAPSHOT_NAME = "config_snapshot.txt"


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


class WorkspaceLock:
    """One process per workspace. Stale locks from dead pids are reclaimed."""

    def __init__(self, workspace: Path):
        self.path = Path(workspace) / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
            except FileExistsError:
                if self._holder_alive():
                    raise SchemaViolation(
                        f"workspace is locked by a live process "
                        f"({self.path})") from None
                self.path.unlink(missing_ok=True)
                continue
            with os.fdopen(fd, "w") as fh:
                fh.write(str(os.getpid()))
            return self
        raise SchemaViolation(f"could not acquire workspace lock {self.path}")

    def _holder_alive(self) -> bool:
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            return False
        try:
            os.kill(pid, 0)
        except (ProcessLookupError, ValueError):
            return False
        except PermissionError:
            return True
        return True

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def write_stable(path: Path, data: str | bytes, force: bool = False) -> Path:
    """Write an artifact only if absent or unchanged; refuse otherwise.

    This is what makes every command safe to re-run: identical content is
    a no-op, different content demands --force.
    """
    path = Path(path)
    raw = data.encode("utf-8") if isinstance(data, str) else data
    if path.exists():
        if path.read_bytes() == raw:
            return path
        if not force:
            raise IoFailure(
                f"refusing to overwrite {path}: content differs (use --force)")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(raw)
    return path


def _snapshot_config(cfg: RunConfig, out_dir: Path, force: bool):
    write_stable(Path(out_dir) / _SNAPSHOT_NAME, cfg.raw_text, force)


def _store(cfg: RunConfig) -> CorpusStore:
    return CorpusStore(cfg.store_dir)


def _client(cfg: RunConfig, endpoint_name: str) -> InferenceClient:
    return InferenceClient(cfg.endpoint(endpoint_name),
                           CompletionCache(cfg.cache_dir))


def _image_loader(cfg: RunConfig, store: CorpusStore):
    def load(obj):
        if obj.image_ref is None:
            return None
        return store.resolve_image(obj.image_ref, cfg.image_root)
    return load


def _csv_text(fieldnames, rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


# --- commands ---

def cmd_ingest(cfg: RunConfig, args) -> int:
    store = _store(cfg)
    manifest = corpus.ingest(args.infile, store, args.name, args.provenance,
                             image_root=cfg.image_root)
    out = Path(args.out) if args.out else cfg.output_dir / "manifests" / f"{args.name}.json"
    corpus.save_manifest(manifest, out, force=args.force)
    _snapshot_config(cfg, out.parent, args.force)
    print(f"ingested {len(manifest)} records into {cfg.store_dir}")
    print(f"manifest: {out}")
    return 0


def cmd_stats(cfg: RunConfig, args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    print(json.dumps(corpus.domain_stats(manifest), indent=2))
    return 0


def cmd_stratify(cfg: RunConfig, args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    bands = parse_bands(args.bands) if args.bands else cfg.bands
    result = corpus.stratify_by_length(manifest, bands)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "strata" / manifest.name
    out_dir.mkdir(parents=True, exist_ok=True)
    for low, high in sorted(bands):
        stratum = result.strata[corpus.band_label(low, high)]
        corpus.save_manifest(stratum, out_dir / f"band-{low}-{high}.json",
                             force=args.force)
        print(f"{corpus.band_label(low, high):>14}: {len(stratum)} records")
    corpus.save_manifest(result.overflow, out_dir / "overflow.json",
                         force=args.force)
    print(f"{'overflow':>14}: {len(result.overflow)} records")
    _snapshot_config(cfg, out_dir, args.force)
    return 0


def cmd_sample(cfg: RunConfig, args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    seed = args.seed if args.seed is not None else cfg.seed("sample")
    sampled = corpus.sample_subset(manifest, args.n, seed)
    out = (Path(args.out) if args.out
           else cfg.output_dir / "manifests" / f"{sampled.name}.json")
    corpus.save_manifest(sampled, out, force=args.force)
    _snapshot_config(cfg, out.parent, args.force)
    print(f"sampled {len(sampled)} of {len(manifest)} (seed {seed})")
    print(f"manifest: {out}")
    return 0


def cmd_mix(cfg: RunConfig, args) -> int:
    parts = []
    for path in args.manifests:
        part = corpus.load_manifest(path)
        parts.append((part.name, part))
    mixed = corpus.mix(parts, args.name)
    out = (Path(args.out) if args.out
           else cfg.output_dir / "manifests" / f"{args.name}.json")
    corpus.save_manifest(mixed, out, force=args.force)
    _snapshot_config(cfg, out.parent, args.force)
    total_in = sum(len(p) for _, p in parts)
    print(f"mixed {total_in} records into {len(mixed)} unique")
    print(f"manifest: {out}")
    return 0


def cmd_export(cfg: RunConfig, args) -> int:
    manifest = corpus.load_manifest(args.manifest)
    store = _store(cfg)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "export" / manifest.name
    result = corpus.export_training_set(manifest, store, out_dir,
                                        image_root=cfg.image_root,
                                        force=args.force)
    _snapshot_config(cfg, out_dir, args.force)
    print(f"exported {len(manifest)} records ({result.image_count} images)")
    print(f"records: {result.records_path}")
    print(f"recipe:  {result.training_manifest_path}")
    return 0


def cmd_pool(cfg: RunConfig, args) -> int:
    problems = distill.build_problem_pool(args.infile,
                                          check_composition=args.check_composition)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "pool"
    counts: dict[str, int] = {}
    for p in problems:
        counts[p.dataset] = counts.get(p.dataset, 0) + 1
    stats = {"total": len(problems), "per_dataset": dict(sorted(counts.items()))}

    kept = problems
    filter_rows = []
    if args.base:
        store = _store(cfg)
        outcome = distill.base_model_filter(
            problems, _client(cfg, args.base), _image_loader(cfg, store),
            max_inflight=cfg.max_inflight)
        kept = list(outcome.kept)
        flagged = set(outcome.flagged)
        for p in problems:
            if p.id in outcome.base_answers:
                row = {"problem_id": p.id, "outcome": "excluded",
                       "base_answer": outcome.base_answers[p.id]}
            elif p.id in flagged:
                row = {"problem_id": p.id, "outcome": "kept_flagged",
                       "base_answer": ""}
            else:
                row = {"problem_id": p.id, "outcome": "kept", "base_answer": ""}
            filter_rows.append(row)
        stats["kept"] = len(kept)
        stats["excluded"] = len(outcome.excluded)
        stats["flagged"] = len(outcome.flagged)

    lines = [json.dumps({f: getattr(p, f) for f in distill.POOL_FIELDS},
                        ensure_ascii=False) for p in kept]
    write_stable(out_dir / "pool.jsonl", "\n".join(lines) + "\n", args.force)
    write_stable(out_dir / "pool_stats.json",
                 json.dumps(stats, indent=2) + "\n", args.force)
    if filter_rows:
        write_stable(out_dir / "filter_report.csv",
                     _csv_text(("problem_id", "outcome", "base_answer"),
                               filter_rows), args.force)
    _snapshot_config(cfg, out_dir, args.force)
    print(json.dumps(stats, indent=2))
    return 0


def cmd_distill(cfg: RunConfig, args) -> int:
    problems = distill.build_problem_pool(args.pool)
    store = _store(cfg)
    policy = cfg.policy if args.mode is None else replace(cfg.policy,
                                                          mode=args.mode)
    result = distill.run_distillation_stage(
        problems, _client(cfg, args.teacher), _image_loader(cfg, store),
        role_tag=args.role, policy=policy, sampling=cfg.sampling,
        max_inflight=args.max_inflight or cfg.max_inflight)

    out_dir = Path(args.out) if args.out else cfg.output_dir / "distill" / args.role
    write_stable(out_dir / "run_report.csv",
                 _csv_text(distill.REPORT_FIELDS, result.rows), args.force)
    docs = [{f: getattr(r, f) for f in corpus.RECORD_FIELDS}
            for r in result.records]
    write_stable(out_dir / "records.jsonl",
                 "".join(json.dumps(d, ensure_ascii=False) + "\n" for d in docs),
                 args.force)
    name = args.name or f"distilled-{args.role}"
    provenance = (corpus.PROVENANCE_SELF_DISTILLED
                  if args.role == "self_distilled_m0"
                  else corpus.PROVENANCE_TEACHER_VISUAL)
    if docs:
        manifest = corpus.ingest(docs, store, name, provenance,
                                 image_root=cfg.image_root)
        corpus.save_manifest(manifest, out_dir / "manifest.json",
                             force=args.force)
    _snapshot_config(cfg, out_dir, args.force)
    print(f"problems: {len(problems)}, retained records: {len(result.records)}")
    print(f"difficulty counts: {result.difficulty_counts()}")
    print(f"report: {out_dir / 'run_report.csv'}")
    return 0


def cmd_eval(cfg: RunConfig, args) -> int:
    items = harness.load_benchmark(args.benchmark_file)
    store = _store(cfg)
    run = harness.evaluate(items, _client(cfg, args.subject),
                           sampling=cfg.sampling,
                           image_loader=_image_loader(cfg, store),
                           max_inflight=cfg.max_inflight)
    out_dir = Path(args.out) if args.out else cfg.output_dir / "eval" / args.subject
    write_stable(out_dir / "run.json",
                 json.dumps(run.to_dict(), indent=2, ensure_ascii=False) + "\n",
                 args.force)
    _snapshot_config(cfg, out_dir, args.force)
    report = harness.score(run)
    for name, acc in report.per_benchmark.items():
        correct, total = report.counts[name]
        print(f"{name:>14}: {acc:5.1f}  ({correct}/{total})")
    print(f"{'average':>14}: {report.average:5.2f}")
    print(f"run: {out_dir / 'run.json'}")
    return 0


def _print_table(headers, rows):
    widths = [max(len(str(h)), *(len(str(r[i])) for r in rows)) if rows else len(str(h))
              for i, h in enumerate(headers)]
    line = "  ".join(str(h).ljust(w) for h, w in zip(headers, widths))
    print(line)
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(str(c).ljust(w) for c, w in zip(row, widths)))


def _report_from_run(cfg: RunConfig, args, out_dir: Path) -> int:
    run = harness.load_run(args.run)
    mismatched = harness.audit_verdicts(run)
    if mismatched:
        raise SchemaViolation(
            f"stored verdicts disagree with responses for: "
            f"{', '.join(mismatched[:5])}")
    baseline_run = harness.load_run(args.baseline_run) if args.baseline_run else None
    report = harness.score(run)

    report_rows = [{"benchmark": name,
                    "n_correct": report.counts[name][0],
                    "n_total": report.counts[name][1],
                    "accuracy": f"{report.per_benchmark[name]:.1f}"}
                   for name in report.per_benchmark]
    report_rows.append({"benchmark": "Average", "n_correct": "", "n_total": "",
                        "accuracy": f"{report.average:.2f}"})
    write_stable(out_dir / "report.csv",
                 _csv_text(("benchmark", "n_correct", "n_total", "accuracy"),
                           report_rows), args.force)

    rows = harness.length_analysis(run, baseline_run)
    csv_rows = [{**r, "baseline_accuracy":
                 "" if r["baseline_accuracy"] is None else r["baseline_accuracy"]}
                for r in rows]
    write_stable(out_dir / "lengths.csv",
                 _csv_text(harness.LENGTH_ANALYSIS_FIELDS, csv_rows), args.force)
    write_stable(out_dir / "lengths.png",
                 figures.length_accuracy_figure(rows, title=run.model), args.force)
    write_stable(out_dir / "accuracy.png",
                 figures.accuracy_figure(report.per_benchmark, report.average,
                                         title=run.model), args.force)
    if report.per_difficulty:
        difficulty_rows = [{"difficulty": k, "accuracy": v}
                           for k, v in report.per_difficulty.items()]
        write_stable(out_dir / "difficulty.csv",
                     _csv_text(("difficulty", "accuracy"), difficulty_rows),
                     args.force)
        write_stable(out_dir / "difficulty.png",
                     figures.difficulty_figure(report.per_difficulty,
                                               title=run.model), args.force)

    _print_table(("benchmark", "accuracy", "mean length"),
                 [(name, f"{report.per_benchmark[name]:.1f}",
                   f"{report.mean_thought_length[name]:.1f}")
                  for name in report.per_benchmark])
    print(f"\ncross-benchmark average: {report.average:.2f}")
    if report.missing_benchmarks:
        print(f"missing benchmarks: {', '.join(report.missing_benchmarks)}")
    print(f"report dir: {out_dir}")
    return 0


def _report_from_accuracies(cfg: RunConfig, args, out_dir: Path) -> int:
    try:
        text = Path(args.accuracies).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read {args.accuracies}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    required = {"model", *harness.BENCHMARKS}
    if reader.fieldnames is None or not required.issubset(reader.fieldnames):
        raise SchemaViolation(
            f"accuracies file must have columns: {', '.join(sorted(required))}")

    out_rows = []
    averages: dict[str, float] = {}
    for lineno, row in enumerate(reader, start=2):
        values = {}
        for name in harness.BENCHMARKS:
            cell = (row.get(name) or "").strip()
            if cell in ("", "-"):
                continue
            try:
                values[name] = float(cell)
            except ValueError as exc:
                raise SchemaViolation(f"bad accuracy {cell!r}",
                                      line=lineno, field=name) from exc
        out_row = {"model": row["model"],
                   **{b: (row.get(b) or "").strip() for b in harness.BENCHMARKS}}
        if len(values) == len(harness.BENCHMARKS):
            report = harness.report_from_accuracies(values)
            out_row["average"] = f"{report.average:.2f}"
            averages[row["model"]] = report.average
        else:
            out_row["average"] = ""
        out_rows.append(out_row)

    write_stable(out_dir / "report.csv",
                 _csv_text(("model", *harness.BENCHMARKS, "average"), out_rows),
                 args.force)
    if averages:
        write_stable(out_dir / "averages.png",
                     figures.accuracy_figure(averages, None,
                                             title="cross-benchmark average"),
                     args.force)
    _print_table(("model", *harness.BENCHMARKS, "average"),
                 [tuple(r[c] for c in ("model", *harness.BENCHMARKS, "average"))
                  for r in out_rows])
    print(f"\nreport dir: {out_dir}")
    return 0


def cmd_report(cfg: RunConfig, args) -> int:
    out_dir = Path(args.out) if args.out else cfg.output_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.run:
        code = _report_from_run(cfg, args, out_dir)
    else:
        code = _report_from_accuracies(cfg, args, out_dir)
    _snapshot_config(cfg, out_dir, args.force)
    return code


# --- wiring ---

def build_parser() -> _Parser:
    parser = _Parser(prog="longthought",
                     description="Curate, distill, and evaluate long-thought "
                                 "instruction corpora.")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress details to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        p.add_argument("--config", required=True, help="run config file")
        p.add_argument("--force", action="store_true",
                       help="overwrite artifacts whose content changed")
        p.add_argument("--out", help="output path or directory")
        return p

    p = add("ingest", cmd_ingest, "load a JSONL corpus into the store")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--provenance", default=corpus.PROVENANCE_TEXT)

    p = add("stats", cmd_stats, "print corpus statistics")
    p.add_argument("--manifest", required=True)

    p = add("stratify", cmd_stratify, "split a corpus by thought length")
    p.add_argument("--manifest", required=True)
    p.add_argument("--bands", help="e.g. 0-2000,2000-4000,4000-8000")

    p = add("sample", cmd_sample, "take a seeded uniform sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int)

    p = add("mix", cmd_mix, "concatenate corpora with content dedup")
    p.add_argument("--manifests", nargs="+", required=True)
    p.add_argument("--name", required=True)

    p = add("export", cmd_export, "write the training bundle")
    p.add_argument("--manifest", required=True)

    p = add("pool", cmd_pool, "validate a problem pool, optionally filter it")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--check-composition", action="store_true")
    p.add_argument("--base", help="endpoint name of the base model filter")

    p = add("distill", cmd_distill, "run a rollout distillation stage")
    p.add_argument("--pool", required=True)
    p.add_argument("--teacher", required=True, help="endpoint name")
    p.add_argument("--mode", choices=("binned", "random"))
    p.add_argument("--role", choices=sorted(distill.ROLE_SOURCES),
                   default="teacher_qvq")
    p.add_argument("--name", help="manifest name for retained records")
    p.add_argument("--max-inflight", type=int)

    p = add("eval", cmd_eval, "evaluate an endpoint on a benchmark file")
    p.add_argument("--benchmark-file", required=True)
    p.add_argument("--subject", required=True, help="endpoint name")

    p = add("report", cmd_report, "score a run and render report artifacts")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--run", help="run.json produced by eval")
    group.add_argument("--accuracies",
                       help="CSV of per-benchmark accuracies by model")
    p.add_argument("--baseline-run", help="run.json of the baseline model")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg.workspace.mkdir(parents=True, exist_ok=True)
        with WorkspaceLock(cfg.workspace):
            return args.fn(cfg, args)
    except TransportError as exc:
        print(f"transport error: {exc}", file=sys.stderr)
        return 2
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
