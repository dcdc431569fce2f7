#!/usr/bin/env python3
from __future__ import annotations

import argparse
import importlib
import sys
import time
from pathlib import Path


def run_benchmark(iterations: int, targets: int, threshold_ms: float) -> int:
    root_dir = Path(__file__).resolve().parents[1]
    if str(root_dir) not in sys.path:
        sys.path.insert(0, str(root_dir))

    events = importlib.import_module("focal.events")
    fusion = importlib.import_module("focal.fusion")
    ndmath = importlib.import_module("focal.ndmath")
    synthgen = importlib.import_module("focal.synthgen")
    trainer = importlib.import_module("focal.trainer")
    events.configure(None)

    g = synthgen.generate(synthgen.SynthConfig(num_targets=targets, seed=0))
    cfg = trainer.FocalConfig(dropout=0.0)
    params = trainer.init_params(cfg, fusion.ModelShape.from_graph(g, cfg.metapaths), trainer.seed_streams(0)[0])
    plan = fusion.build_plan(g, cfg.metapaths)
    nodes = g.splits.train

    start = time.perf_counter()
    for _ in range(iterations):
        result = fusion.focal_forward(params, plan, cfg, nodes, training=True)
        loss = trainer.objective_value(result, g.labels[nodes], cfg)
        ndmath.backward(result.tape, loss)
    elapsed_ms = (time.perf_counter() - start) * 1000.0

    print(
        f"perf-smoke elapsed={elapsed_ms:.2f}ms "
        f"iterations={iterations} nodes={g.total_nodes} threshold={threshold_ms:.2f}ms"
    )
    if elapsed_ms > threshold_ms:
        print("Performance budget exceeded", flush=True)
        return 1
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description="Forward/backward timing smoke on a synthetic graph")
    parser.add_argument("--iterations", type=int, default=20)
    parser.add_argument("--targets", type=int, default=400)
    parser.add_argument("--threshold-ms", type=float, default=15000.0)
    args = parser.parse_args()

    return run_benchmark(args.iterations, args.targets, args.threshold_ms)


if __name__ == "__main__":
    raise SystemExit(main())
