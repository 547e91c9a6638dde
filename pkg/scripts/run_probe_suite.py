#!/usr/bin/env python3
"""Run all five bound probes with their default desk-scale settings and
write CSV + JSON reports under runs/probes/. Exits nonzero if any probe
check fails."""

import sys

from xgblora.cli import main

OUT = "runs/probes"

if __name__ == "__main__":
    worst = 0
    for which in ("lemma1", "lemma2", "lemma3", "theorem1", "theorem2"):
        print(f"== probe {which} ==")
        rc = main(["probe", which, "--seed", "0", "--out-dir", OUT])
        worst = max(worst, rc)
    sys.exit(worst)
