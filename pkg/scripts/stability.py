#!/usr/bin/env python3
"""Long-run queue stability and the latency/energy trade-off in V."""
import argparse

from skyrescue.harness.oracles import stability_check, v_sweep
from skyrescue.scenario import GenConfig, generate_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--slots", type=int, default=10_000)
    ap.add_argument("--sweep-slots", type=int, default=2000)
    ap.add_argument("--scenario-seed", type=int, default=7)
    args = ap.parse_args()
    scn = generate_scenario(GenConfig(), args.scenario_seed)
    rep = stability_check(scn, slots=args.slots)
    for p in rep["per_uav"]:
        print(f"uav {p['uav']}: budget {p['budget_j']:.1f} J, Q(T)/T {p['q_over_t_j']:.3f} J "
              f"({p['ratio']:.2e} of budget), mean excess {p['mean_excess_j']:.1f} J")
    for r in v_sweep(scn, slots=args.sweep_slots):
        print(f"V={r['V']:g}: latency {r['mean_latency_s']:.3f} s, excess {r['mean_excess_j']:.1f} J")


if __name__ == "__main__":
    main()
