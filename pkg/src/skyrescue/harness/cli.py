"""``skyrescue`` command line.

Subcommands: gen, validate, train, eval, sweep, oracle, plotdata. Every run
writes ``manifest.json`` into its ``--out`` directory with the full config,
seeds and a sha256 of every artifact. Exit codes: 0 ok, 1 runtime error,
2 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..assignment import assignment_csv
from ..env import EnvConfig, RescueEnv, episode_log_lines
from ..maddpg import BATCH_PRESETS, VARIANTS, Trainer, TrainerConfig, config_dict, curve_csv
from ..scenario import GenConfig, ScenarioError, generate_scenario, load_scenario, save_scenario, validate
from . import oracles
from .plotdata import emit_plotdata, write_trace
from .sweep import SWEEP_VARS, SweepSpec, parse_grid, run_sweep, sweep_csv


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args: dict, config: dict, seeds: dict) -> Path:
    arts = {str(p.relative_to(out)): _sha256(p) for p in sorted(out.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}
    doc = {"tool": "skyrescue", "version": __version__, "command": command, "args": args,
           "config": config, "seeds": seeds, "artifacts": arts}
    p = out / "manifest.json"
    p.write_text(json.dumps(doc, indent=1, sort_keys=True, default=str) + "\n")
    return p


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _scenario(args) -> tuple:
    if args.scenario:
        data = Path(args.scenario).read_bytes()
        return load_scenario(data), data
    scn = generate_scenario(GenConfig(n_uavs=args.uavs, rounds=args.rounds, n_gers=args.gers), args.scenario_seed)
    return scn, save_scenario(scn)


def _trainer_config(args) -> TrainerConfig:
    batch = args.batch if args.batch is not None else BATCH_PRESETS[args.batch_preset]
    env = EnvConfig(V=args.V, reward_scale=args.reward_scale, alloc_mode=args.alloc)
    return TrainerConfig(episodes=args.episodes, lr_actor=args.lr, lr_critic=args.lr, batch_size=batch,
                         hidden=_ints(args.hidden), denoise_steps=args.steps, seed=args.seed,
                         eval_episodes=args.eval_episodes, env=env)


# -- subcommands -----------------------------------------------------------------


def cmd_gen(args) -> int:
    cfg = GenConfig(n_uavs=args.uavs, rounds=args.rounds, n_gers=args.gers)
    scn = generate_scenario(cfg, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    p = out / f"{args.name}.scn.json"
    p.write_bytes(save_scenario(scn))
    write_manifest(out, "gen", vars(args), dataclasses.asdict(cfg), {"scenario": args.seed})
    print(p)
    return 0


def cmd_validate(args) -> int:
    scn = load_scenario(Path(args.file).read_bytes())
    vs = validate(scn)
    for v in vs:
        print(v)
    print("valid" if not vs else f"{len(vs)} violation(s)")
    return 0 if not vs else 1


def _log_writer(fh, unit):
    def log(ep, trs, m):
        for line in episode_log_lines(ep, trs, unit):
            fh.write(line + "\n")
    return log


def cmd_train(args) -> int:
    if args.manifest:
        saved = json.loads(Path(args.manifest).read_text())["args"]
        saved["out"], saved["manifest"] = args.out, None
        args = argparse.Namespace(**saved)
    scn, raw = _scenario(args)
    cfg = _trainer_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.scn.json").write_bytes(raw)
    tr = Trainer(scn, cfg, args.variant)
    with open(out / "episodes.jsonl", "w") as fh:
        res = tr.run(_log_writer(fh, cfg.env.energy_unit_j))
    (out / "learning_curve.csv").write_text(curve_csv(res.curve))
    kept = []
    with open(out / "eval.jsonl", "w") as fh:
        base = _log_writer(fh, cfg.env.energy_unit_j)

        def log(ep, trs, m):
            base(ep, trs, m)
            if not kept:
                kept.extend(trs)
        metrics = tr.evaluate(log=log)
    problems = oracles.audit(tr.env, kept)
    metrics.update({"variant": args.variant, "train_violations": res.violations, "unflagged": len(problems)})
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    write_trace(out / "trace.json", scn, kept, cfg.env.energy_unit_j)
    (out / "rounds.csv").write_text(assignment_csv(tr.env.rounds))
    tr.save_checkpoints(out / "checkpoints")
    write_manifest(out, "train", vars(args), config_dict(cfg), {"trainer": cfg.seed, "scenario": args.scenario_seed})
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    run = Path(args.run)
    man = json.loads((run / "manifest.json").read_text())
    saved = argparse.Namespace(**man["args"])
    scn = load_scenario((run / "scenario.scn.json").read_bytes())
    cfg = _trainer_config(saved)
    tr = Trainer(scn, cfg, saved.variant)
    if tr.learning:
        tr.load_checkpoints(run / "checkpoints")
    metrics = tr.evaluate(episodes=args.episodes, offset=args.offset)
    out = Path(args.out) if args.out else run / "eval"
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(json.dumps(metrics, indent=1, sort_keys=True) + "\n")
    write_manifest(out, "eval", vars(args), man["config"], {"offset": args.offset})
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    if args.manifest:
        saved = json.loads(Path(args.manifest).read_text())["args"]
        saved["out"], saved["manifest"] = args.out, None
        args = argparse.Namespace(**saved)
    grid = parse_grid(args.grid)
    tr = _trainer_config(args)
    gen = GenConfig(n_uavs=args.uavs, rounds=args.rounds, n_gers=args.gers)
    spec = SweepSpec(var=args.var, grid=grid, gen=gen, trainer=tr, scenario_seed=args.scenario_seed,
                     eval_seeds=_ints(args.eval_seeds), slots=args.slots, policy=args.policy)
    rows = run_sweep(spec, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(sweep_csv(rows))
    write_manifest(out, "sweep", vars(args), {"trainer": config_dict(tr), "gen": dataclasses.asdict(gen)},
                   {"scenario": args.scenario_seed, "eval": list(spec.eval_seeds)})
    for r in rows:
        print(json.dumps(r, sort_keys=True))
    return 0


def cmd_oracle(args) -> int:
    out = None
    if args.kind == "assignment":
        if not args.matrix:
            raise UsageError("--matrix is required for the assignment oracle")
        M = np.array([[float(x) for x in row.split(",")] for row in args.matrix.split(";")])
        res = {"optimal_cost": oracles.oracle_assignment(M)}
    elif args.kind == "perslot":
        scn, _ = _scenario(args)
        env = RescueEnv(scn, EnvConfig(V=args.V), seed=args.seed)
        env.reset(args.episode)
        for q in env.queues:
            q.q_value = args.q
        targets = np.flatnonzero(env.obs[args.uav].action_mask)
        ti, f = oracles.oracle_perslot(env, args.uav, oracles.FRACTIONS, targets)
        kind, ger = env.target_of(args.uav, ti)
        res = {"target_index": ti, "target": kind, "ger": ger, "local_fraction": f}
    else:
        scn, _ = _scenario(args)
        rep = oracles.stability_check(scn, slots=args.slots, V=args.V, seed=args.seed)
        res = {"slots": rep["slots"], "per_uav": rep["per_uav"], "max_ratio": rep["max_ratio"]}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"oracle_{args.kind}.json").write_text(json.dumps(res, indent=1, sort_keys=True, default=float) + "\n")
        write_manifest(out, "oracle", vars(args), {}, {"seed": args.seed})
    print(json.dumps(res, sort_keys=True, default=float))
    return 0


def cmd_plotdata(args) -> int:
    for p in emit_plotdata(args.run, args.out, args.window):
        print(p)
    return 0


# -- parser ----------------------------------------------------------------------


def _world_args(p, scenario=True):
    if scenario:
        p.add_argument("--scenario", help="scenario JSON; generated from --scenario-seed when omitted")
    p.add_argument("--scenario-seed", type=int, default=7)
    p.add_argument("--uavs", type=int, default=3)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--gers", type=int, default=75)


def _train_args(p):
    p.add_argument("--episodes", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch", type=int)
    p.add_argument("--batch-preset", choices=sorted(BATCH_PRESETS), default="default")
    p.add_argument("--hidden", default="256,256")
    p.add_argument("--steps", type=int, default=5, help="denoising steps")
    p.add_argument("--V", type=float, default=0.5)
    p.add_argument("--reward-scale", type=float, default=10.0)
    p.add_argument("--alloc", choices=("equal", "proportional"), default="equal")
    p.add_argument("--eval-episodes", type=int, default=10)
    p.add_argument("--manifest", help="replay the arguments stored in a previous run's manifest")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="skyrescue", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a scenario")
    p.add_argument("--uavs", type=int, default=3)
    p.add_argument("--rounds", type=int, default=5)
    p.add_argument("--gers", type=int, default=75)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--name", default="scenario")
    p.add_argument("--out", default=".")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("file")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("train", help="train or roll out a variant")
    p.add_argument("--variant", choices=VARIANTS, default="hg")
    _world_args(p)
    _train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained run")
    p.add_argument("--run", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--offset", type=int, default=2_000_000)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="sweep one variable over a grid")
    p.add_argument("--var", choices=SWEEP_VARS, required=True)
    p.add_argument("--grid", required=True, help="comma list; trailing unit allowed, e.g. 12.5,50,125GB")
    p.add_argument("--policy", choices=("oracle", "hg", "plain"), default="oracle")
    p.add_argument("--slots", type=int, default=500)
    p.add_argument("--eval-seeds", default="1000000")
    p.add_argument("--workers", type=int)
    _world_args(p, scenario=False)
    _train_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("oracle", help="brute-force reference solvers")
    p.add_argument("kind", choices=("assignment", "perslot", "stability"))
    p.add_argument("--matrix", help="rows separated by ';', entries by ','")
    _world_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episode", type=int, default=0)
    p.add_argument("--uav", type=int, default=0)
    p.add_argument("--q", type=float, default=0.0, help="queue value in kJ")
    p.add_argument("--V", type=float, default=0.5)
    p.add_argument("--slots", type=int, default=10_000)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("plotdata", help="emit plot-ready CSVs for a run")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.add_argument("--window", type=int, default=30)
    p.set_defaults(fn=cmd_plotdata)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.cmd is None:
            raise UsageError("missing subcommand")
        return args.fn(args)
    except UsageError as e:
        print(f"skyrescue: usage error: {e}", file=sys.stderr)
        return 2
    except (ScenarioError, OSError, ValueError, RuntimeError, KeyError) as e:
        print(f"skyrescue: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
