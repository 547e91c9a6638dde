#!/usr/bin/env python3
"""Accuracy versus steps-per-booster at a fixed budget on desk parity:
many weak boosters on rotating random layer subsets against the fixed-
subset single-booster endpoint. Writes runs/kappa/{kappa.csv,kappa.json,
kappa.svg}."""

import os

from xgblora.models import build_transformer
from xgblora.probes import kappa_sweep
from xgblora.reporting import svg_line_plot
from xgblora.tasks import gen_sequence_dataset
from xgblora.tensor import Rng

OUT = "runs/kappa"
BUDGET = 512

if __name__ == "__main__":
    train = gen_sequence_dataset("parity", seq_len=4, n=256, seed=0)

    def builder():
        return build_transformer(
            vocab=2, d_model=32, n_layers=4, n_heads=4, d_ff=64, rng=Rng(1), max_seq=4
        )

    report = kappa_sweep(
        train, builder, total_steps=BUDGET, kappa_grid=(4, 8, 64, 128, BUDGET),
        seeds=(0, 1, 2, 3, 4), sample_layers=2,
    )
    os.makedirs(OUT, exist_ok=True)
    report.write_csv(os.path.join(OUT, "kappa.csv"))
    report.write_json(os.path.join(OUT, "kappa.json"))
    pts = sorted((p.params["kappa"], p.mean) for p in report.points)
    svg = svg_line_plot(
        {"boosted rank-1": pts},
        f"parity accuracy vs steps-per-booster at K={BUDGET}",
        "steps per booster",
        "train accuracy",
    )
    with open(os.path.join(OUT, "kappa.svg"), "w", encoding="utf-8") as fh:
        fh.write(svg)

    print(f"{'kappa':>6} {'accuracy':>9} {'std':>7} {'eta':>5}")
    for p in report.points:
        print(f"{p.params['kappa']:>6} {p.mean:>9.4f} {p.std:>7.4f} {p.extras['eta'][0]:>5}")
    for name, ok in sorted(report.checks.items()):
        print(f"[{'pass' if ok else 'FAIL'}] {name}")
    print(f"wrote {OUT}/kappa.csv, kappa.json, kappa.svg")
