#!/usr/bin/env python3
"""Train the learning variants on the desk scenario and compare eval latency.

    python3 scripts/train_desk.py --episodes 300 --seeds 0,1,2 --out runs/desk
"""
import argparse
import json
from pathlib import Path

import numpy as np

from skyrescue.maddpg import Trainer, TrainerConfig, curve_csv, moving_average
from skyrescue.scenario import GenConfig, generate_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--episodes", type=int, default=300)
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--variants", default="hg,plain,random,greedy-local")
    ap.add_argument("--hidden", default="64,64")
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--scenario-seed", type=int, default=7)
    ap.add_argument("--out", default="runs/desk")
    args = ap.parse_args()

    scn = generate_scenario(GenConfig(), args.scenario_seed)
    hidden = tuple(int(x) for x in args.hidden.split(","))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for variant in args.variants.split(","):
        lat = []
        for seed in (int(s) for s in args.seeds.split(",")):
            cfg = TrainerConfig(episodes=args.episodes, hidden=hidden, batch_size=args.batch, seed=seed)
            res = Trainer(scn, cfg, variant).run()
            (out / f"{variant}_seed{seed}_curve.csv").write_text(curve_csv(res.curve))
            ma = moving_average([c.mean_reward for c in res.curve], 30)
            lat.append(res.eval_metrics["mean_latency_s"])
            print(f"{variant:>12} seed {seed}: eval latency {lat[-1]:.3f} s, reward MA30 {ma[0]:.3f} -> {ma[-1]:.3f}")
        summary[variant] = {"mean_eval_latency_s": float(np.mean(lat)), "per_seed": lat}
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
