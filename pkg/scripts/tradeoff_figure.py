#!/usr/bin/env python3
"""Rank-vs-iterations trade-off at a fixed step budget on the flat-spectrum
matrix teacher: held-out error for boosted rank-1 against single higher-rank
adapters. Writes runs/tradeoff/{sweep.csv,sweep.json,tradeoff.svg}."""

import os

from xgblora.probes import expressiveness_sweep
from xgblora.reporting import svg_line_plot
from xgblora.tasks import gen_teacher_dataset

OUT = "runs/tradeoff"
BUDGET = 512

if __name__ == "__main__":
    data, task = gen_teacher_dataset(
        "teacher-matrix", [16, 16], n=128, seed=5, delta_kind="rotation", delta_scale=4.0
    )
    rt_grid = [(1, 64), (1, 16), (1, 4), (1, 1), (2, 1), (4, 1), (8, 1), (16, 1)]
    report = expressiveness_sweep(task, data, total_steps=BUDGET, rt_grid=rt_grid, seeds=range(5))

    os.makedirs(OUT, exist_ok=True)
    report.write_csv(os.path.join(OUT, "sweep.csv"))
    report.write_json(os.path.join(OUT, "sweep.json"))

    boosted = [(p.params["t"], p.mean) for p in report.points if p.params["r"] == 1 and p.params["t"] >= 1]
    single = [(p.params["r"], p.mean) for p in report.points if p.params["t"] == 1]
    svg = svg_line_plot(
        {
            "boosted rank-1 (x = iterations)": sorted(boosted),
            "single adapter (x = rank)": sorted(single),
        },
        f"held-out error at K={BUDGET}",
        "iterations / rank",
        "error",
    )
    with open(os.path.join(OUT, "tradeoff.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg)

    print(f"{'r':>4} {'T':>4} {'error':>12} {'std':>10} {'eta':>5}")
    for p in report.points:
        print(
            f"{p.params['r']:>4} {p.params['t']:>4} {p.mean:>12.6f} {p.std:>10.6f} "
            f"{p.extras['eta'][0]:>5}"
        )
    print(f"wrote {OUT}/sweep.csv, sweep.json, tradeoff.svg")
