"""Command-line entry point: graph generation, training, evaluation, theorem verification, experiments."""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from focal import ndmath as nd
from focal.events import append_event, configure, utc_now
from focal.fusion import PARAMS_FORMAT_VERSION, FocalParams
from focal.hetgraph import FORMAT_VERSION, HetGraph, load_graph, save_graph
from focal.objective import METRIC_NAMES, MetricsReport, metrics_to_dict, metrics_to_text
from focal.settings import bundled_config, config_hash, file_sha256, load_json_object, max_threads, write_json
from focal.synthgen import SynthConfig, describe, generate
from focal.theoremlab import (
    THEOREMS,
    LabConfig,
    TheoremCheckFailed,
    TheoremReport,
    report_to_text,
    require_passed,
    run_gradchecks,
    run_oversmoothing,
    run_suite,
    write_curves,
)
from focal.trainer import (
    ABLATION_MODES,
    SWEEP_KEYS,
    DivergenceError,
    FocalConfig,
    TrainReport,
    ablation_mode,
    evaluate,
    load_params,
    metapath_subset,
    save_params,
    sweep,
    train,
)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2


# -- helpers -----------------------------------------------------------------------


def parse_int_list(text: str, *, what: str = "seed") -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(f"{what} list must be comma-separated integers, got {text!r}") from exc
    if not values:
        raise ValueError(f"empty {what} list")
    if any(v < 0 for v in values):
        raise ValueError(f"{what} values must be non-negative, got {text!r}")
    return values


def parse_float_list(text: str) -> list[float]:
    try:
        values = [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(f"values must be comma-separated numbers, got {text!r}") from exc
    if not values:
        raise ValueError("empty value list")
    return values


def focal_config(path: str | None, seed: int | None = None) -> FocalConfig:
    cfg = FocalConfig.from_file(path) if path else FocalConfig.from_dict(bundled_config("focal.json"))
    return cfg if seed is None else replace(cfg, seed=seed)


def start_run(out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    configure(out / "events.jsonl")
    return out


def write_manifest(out: Path, command: str, config: dict[str, Any], **extra: Any) -> None:
    manifest = {
        "command": command,
        "created_at": utc_now(),
        "config": config,
        "config_hash": config_hash(config),
        "format_versions": {"graph": FORMAT_VERSION, "params": PARAMS_FORMAT_VERSION},
        **extra,
    }
    write_json(out / "manifest.json", manifest)


def write_metrics(out: Path, report: MetricsReport, stem: str = "metrics") -> None:
    write_json(out / f"{stem}.json", metrics_to_dict(report))
    (out / f"{stem}.txt").write_text(metrics_to_text(report), encoding="utf-8")


def aggregate_metrics(reports: Sequence[MetricsReport]) -> dict[str, dict[str, float]]:
    """Per-metric mean and sample standard deviation."""
    if len(reports) < 2:
        raise ValueError("aggregation needs at least two runs")
    out = {}
    for name in METRIC_NAMES:
        values = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        if np.all(values == values[0]):
            out[name] = {"mean": float(values[0]), "std": 0.0}
        else:
            out[name] = {"mean": float(values.mean()), "std": float(values.std(ddof=1))}
    return out


def aggregate_to_text(aggregate: dict[str, dict[str, float]]) -> str:
    return "".join(f"{name}.{stat}={value!r}\n" for name, stats in aggregate.items() for stat, value in stats.items())


def multi_seed(
    g: HetGraph, cfg: FocalConfig, seeds: Sequence[int]
) -> tuple[list[tuple[FocalParams, TrainReport]], dict[str, dict[str, float]]]:
    """Train once per seed (in parallel) and aggregate test metrics; the first failure propagates."""
    if len(seeds) < 2:
        raise ValueError("multi-seed runs need at least two seeds")
    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        runs = list(pool.map(lambda s: train(g, replace(cfg, seed=s)), seeds))
    tests = []
    for seed, (_, report) in zip(seeds, runs):
        if report.test is None:
            raise ValueError(f"seed {seed}: graph has an empty test split")
        tests.append(report.test)
    aggregate = aggregate_metrics(tests)
    append_event("multi_seed_completed", {"seeds": list(seeds), "micro_f1": aggregate["micro_f1"]})
    return runs, aggregate


def _write_run(out: Path, params: FocalParams, report: TrainReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    save_params(params, out / "params.json")
    write_json(out / "report.json", report.to_dict())
    if report.test is not None:
        write_metrics(out, report.test)


def _write_reports(out: Path, reports: Sequence[TheoremReport]) -> None:
    for report in reports:
        write_json(out / "reports" / f"{report.theorem}.json", report.to_dict())
        (out / "reports" / f"{report.theorem}.txt").write_text(report_to_text(report), encoding="utf-8")
        write_curves(report, out / "plots")
        status = "PASS" if report.passed else "FAIL"
        print(f"{status} {report.theorem} ({report.runtime:.2f}s)")
        for check in report.failed_checks():
            print(f"  failed: {check}", file=sys.stderr)


# -- commands -------------------------------------------------------------------------


def cmd_gen(args: argparse.Namespace) -> int:
    data = load_json_object(Path(args.config)) if args.config else bundled_config("synth.json")
    cfg = SynthConfig.from_dict({**data, "seed": args.seed})
    out = Path(args.out)
    g = generate(cfg)
    save_graph(g, out)
    manifest = {
        "command": "gen",
        "created_at": utc_now(),
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg.to_dict()),
        "format_versions": {"graph": FORMAT_VERSION},
        "graph_sha256": file_sha256(out),
    }
    write_json(out.with_name(out.name + ".manifest.json"), manifest)
    print(f"Wrote graph {out} ({g.total_nodes} nodes, {sum(e.shape[0] for e in g.edges)} edges)")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    seeds = parse_int_list(args.seed)
    cfg = focal_config(args.config, seeds[0])
    out = start_run(Path(args.out))
    g = load_graph(args.graph)
    extra = {"seeds": seeds, "graph": str(args.graph), "graph_sha256": file_sha256(Path(args.graph))}
    write_manifest(out, "train", cfg.to_dict(), **extra)

    if len(seeds) == 1:
        params, report = train(g, cfg)
        _write_run(out, params, report)
        test = "n/a" if report.test is None else f"{report.test.micro_f1:.4f}"
        print(f"Best epoch {report.best_epoch}/{report.epochs_run}, val micro-F1 {report.best_val_micro_f1:.4f}")
        print(f"Test micro-F1 {test}")
        return EXIT_OK

    runs, aggregate = multi_seed(g, cfg, seeds)
    for seed, (params, report) in zip(seeds, runs):
        _write_run(out / f"seed{seed}", params, report)
    write_json(out / "aggregate.json", {"seeds": seeds, "metrics": aggregate})
    (out / "aggregate.txt").write_text(aggregate_to_text(aggregate), encoding="utf-8")
    micro = aggregate["micro_f1"]
    print(f"Test micro-F1 over {len(seeds)} seeds: {micro['mean']:.4f} +/- {micro['std']:.4f}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = focal_config(args.config)
    out = start_run(Path(args.out))
    g = load_graph(args.graph)
    params = load_params(args.params)
    report = evaluate(params, g, cfg, args.split)
    write_metrics(out, report)
    write_manifest(
        out,
        "eval",
        cfg.to_dict(),
        split=args.split,
        graph_sha256=file_sha256(Path(args.graph)),
        params_sha256=file_sha256(Path(args.params)),
    )
    sys.stdout.write(metrics_to_text(report))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    data = load_json_object(Path(args.config)) if args.config else bundled_config("theorems.json")
    lab = LabConfig.from_dict(data).with_seed(args.seed)
    focal = focal_config(args.focal_config, args.seed) if args.focal_config else None
    out = start_run(Path(args.out))
    write_manifest(out, "verify-theorems", lab.to_dict(), suite=args.suite, seed=args.seed, strict=args.strict)
    reports = run_suite(args.suite, lab, focal)
    _write_reports(out, reports)
    summary = {r.theorem: r.passed for r in reports}
    write_json(out / "summary.json", summary)
    print(f"{sum(summary.values())}/{len(summary)} theorem reports passed")
    if args.strict:
        require_passed(reports)
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    out = start_run(Path(args.out))
    write_manifest(out, "gradcheck", {"seed": args.seed, "points": args.points}, seed=args.seed)
    report = run_gradchecks(args.seed, args.points)
    _write_reports(out, [report])
    require_passed([report])
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    seeds = parse_int_list(args.seed)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()] if args.modes else list(ABLATION_MODES)
    cfg = focal_config(args.config, seeds[0])
    variants = {mode: ablation_mode(cfg, mode) for mode in modes}
    out = start_run(Path(args.out))
    g = load_graph(args.graph)
    write_manifest(out, "ablate", cfg.to_dict(), modes=modes, seeds=seeds, graph_sha256=file_sha256(Path(args.graph)))

    jobs = [(mode, seed) for mode in modes for seed in seeds]

    def run(job: tuple[str, int]) -> MetricsReport:
        mode, seed = job
        _, report = train(g, replace(variants[mode], seed=seed))
        if report.test is None:
            raise ValueError("ablation needs a non-empty test split")
        return report.test

    with ThreadPoolExecutor(max_workers=max_threads()) as pool:
        results = dict(zip(jobs, pool.map(run, jobs)))
    rows = []
    for mode in modes:
        tests = [results[(mode, s)] for s in seeds]
        row: dict[str, Any] = {"mode": mode}
        for name in METRIC_NAMES:
            values = [getattr(t, name) for t in tests]
            row[name] = float(np.mean(values))
            row[f"{name}_std"] = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        rows.append(row)
        print(f"{mode:>16}  micro-F1 {row['micro_f1']:.4f}  macro-F1 {row['macro_f1']:.4f}")
    write_json(out / "ablation.json", {"seeds": seeds, "rows": rows})
    return EXIT_OK


def cmd_describe(args: argparse.Namespace) -> int:
    summary = describe(load_graph(args.graph))
    text = json.dumps(summary, indent=2, ensure_ascii=True)
    if args.out:
        write_json(Path(args.out), summary)
    print(text)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    if args.key not in SWEEP_KEYS:
        raise ValueError(f"cannot sweep {args.key!r}; expected one of {', '.join(SWEEP_KEYS)}")
    cfg = focal_config(args.config, args.seed)
    if args.key == "metapaths":
        values: list[Any] = [name.strip() for name in args.values.split(",") if name.strip()]
        if not values:
            raise ValueError("--values needs at least one meta-path name")
        for name in values:
            metapath_subset(cfg, name)
    else:
        values = parse_float_list(args.values)
    out = start_run(Path(args.out))
    g = load_graph(args.graph)
    write_manifest(out, "sweep", cfg.to_dict(), key=args.key, values=values, graph_sha256=file_sha256(Path(args.graph)))
    rows = sweep(g, cfg, args.key, values)
    write_json(out / "sweep.json", {"key": args.key, "rows": rows})
    for row in rows:
        micro = row["test"]["micro_f1"] if row["test"] else math.nan
        print(f"{args.key}={row[args.key]!r}  val micro-F1 {row['best_val_micro_f1']:.4f}  test micro-F1 {micro:.4f}")
    return EXIT_OK


def cmd_oversmooth(args: argparse.Namespace) -> int:
    seeds = parse_int_list(args.seed)
    depths = parse_int_list(args.depths, what="depth")
    cfg = focal_config(args.config, seeds[0])
    out = start_run(Path(args.out))
    g = load_graph(args.graph)
    write_manifest(out, "oversmooth", cfg.to_dict(), depths=depths, seeds=seeds)
    report = run_oversmoothing(g, cfg, depths, seeds=seeds)
    _write_reports(out, [report])
    if args.strict:
        require_passed([report])
    return EXIT_OK


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="focal", description="Heterogeneous GNN training and theorem verification")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="Generate a planted synthetic graph")
    gen.add_argument("--config", help="Synthetic generator config (JSON)")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", required=True, help="Graph file to write")
    gen.set_defaults(func=cmd_gen)

    tr = sub.add_parser("train", help="Train FOCAL; several comma-separated seeds aggregate mean and std")
    tr.add_argument("--graph", required=True)
    tr.add_argument("--config", help="Model config (JSON)")
    tr.add_argument("--seed", required=True, help="Seed or comma-separated seeds")
    tr.add_argument("--out", required=True, help="Run directory")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="Evaluate saved parameters on a split")
    ev.add_argument("--graph", required=True)
    ev.add_argument("--params", required=True)
    ev.add_argument("--config", help="Model config (JSON)")
    ev.add_argument("--split", default="test", choices=("train", "val", "test"))
    ev.add_argument("--out", required=True)
    ev.set_defaults(func=cmd_eval)

    verify = sub.add_parser("verify-theorems", help="Run the theorem verification suite")
    verify.add_argument("--suite", default="all", choices=("all",) + THEOREMS)
    verify.add_argument("--seed", type=int, required=True)
    verify.add_argument("--config", help="Theorem lab config (JSON)")
    verify.add_argument("--focal-config", help="Model config for the architectural guarantees")
    verify.add_argument("--strict", action="store_true", help="Exit 2 when any check fails")
    verify.add_argument("--out", required=True)
    verify.set_defaults(func=cmd_verify)

    gc = sub.add_parser("gradcheck", help="Finite-difference checks of every layer")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--points", type=int, default=10)
    gc.add_argument("--out", required=True)
    gc.set_defaults(func=cmd_gradcheck)

    ablate = sub.add_parser("ablate", help="Train ablation variants side by side")
    ablate.add_argument("--graph", required=True)
    ablate.add_argument("--config", help="Model config (JSON)")
    ablate.add_argument("--seed", required=True, help="Seed or comma-separated seeds")
    ablate.add_argument("--modes", help=f"Comma-separated subset of {', '.join(ABLATION_MODES)}")
    ablate.add_argument("--out", required=True)
    ablate.set_defaults(func=cmd_ablate)

    desc = sub.add_parser("describe", help="Summarise a graph file")
    desc.add_argument("--graph", required=True)
    desc.add_argument("--out", help="Optional JSON output file")
    desc.set_defaults(func=cmd_describe)

    sw = sub.add_parser("sweep", help="Hyperparameter sensitivity")
    sw.add_argument("--graph", required=True)
    sw.add_argument("--config", help="Model config (JSON)")
    sw.add_argument("--seed", type=int, required=True)
    sw.add_argument("--key", required=True, choices=SWEEP_KEYS)
    sw.add_argument(
        "--values",
        required=True,
        help="Comma-separated values; metapaths takes path names (relations joined by /) or all",
    )
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep)

    smooth = sub.add_parser("oversmooth", help="Micro-F1 against depth for FOCAL and the COA-only model")
    smooth.add_argument("--graph", required=True)
    smooth.add_argument("--config", help="Model config (JSON)")
    smooth.add_argument("--seed", required=True, help="Seed or comma-separated seeds")
    smooth.add_argument("--depths", default="2,4,6")
    smooth.add_argument("--strict", action="store_true")
    smooth.add_argument("--out", required=True)
    smooth.set_defaults(func=cmd_oversmooth)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse has already printed usage to stderr
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    try:
        return args.func(args)
    except (DivergenceError, TheoremCheckFailed, nd.NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        configure(None)


if __name__ == "__main__":
    raise SystemExit(main())
