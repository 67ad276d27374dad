#!/usr/bin/env python3
"""Latency-versus-parameter data with the drift-plus-penalty oracle controller.

Writes one CSV per swept variable under --out (compute, GER count, data size, V).
"""
import argparse
from pathlib import Path

from skyrescue.harness.sweep import SweepSpec, run_sweep, sweep_csv

GRIDS = {
    "ger_compute": [1.0, 2.0, 4.0, 8.0],  # TFLOPs per GER
    "ger_count": [30, 45, 60, 75, 90],
    "data_size": [12.5, 50.0, 87.5, 125.0],  # GB per subarea
    "V": [0.1, 0.5, 1.0, 5.0],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=500)
    ap.add_argument("--vars", default=",".join(GRIDS))
    ap.add_argument("--workers", type=int)
    ap.add_argument("--out", default="runs/sweeps")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for var in args.vars.split(","):
        rows = run_sweep(SweepSpec(var, GRIDS[var], slots=args.slots), workers=args.workers)
        (out / f"latency_vs_{var}.csv").write_text(sweep_csv(rows))
        for r in rows:
            print(f"{var}={r['value']:g}: latency {r['mean_latency_s']:.3f} s, energy {r['mean_energy_j']:.1f} J")


if __name__ == "__main__":
    main()
