"""Parameter sweeps: one isolated run per grid point, optionally in parallel."""
from __future__ import annotations

import csv
import io
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..env import EnvConfig, RescueEnv
from ..maddpg import TrainerConfig, Trainer
from ..scenario import GenConfig, generate_scenario
from .oracles import perslot_choice, run_control

SWEEP_VARS = ("V", "ger_compute", "ger_count", "data_size", "denoise_steps", "batch", "lr")
TRAINING_VARS = ("denoise_steps", "batch", "lr")
_UNITS = {"gb": 1.0, "tflops": 1.0, "tf": 1.0, "": 1.0}


class SweepError(ValueError):
    pass


def parse_grid(text: str) -> list[float]:
    """'12.5,50,125GB' -> [12.5, 50.0, 125.0]; a trailing unit applies to every value."""
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise SweepError("empty grid")
    m = re.fullmatch(r"([-+0-9.eE]+)\s*([A-Za-z]*)", parts[-1])
    if not m:
        raise SweepError(f"bad grid value {parts[-1]!r}")
    unit = m.group(2).lower()
    if unit not in _UNITS:
        raise SweepError(f"unknown unit {m.group(2)!r}")
    parts[-1] = m.group(1)
    try:
        return [float(p) * _UNITS[unit] for p in parts]
    except ValueError as e:
        raise SweepError(str(e)) from None


@dataclass
class SweepSpec:
    var: str
    grid: list
    gen: GenConfig = field(default_factory=GenConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    scenario_seed: int = 7
    eval_seeds: tuple = (1_000_000,)
    slots: int = 500  # controller slots per grid point when no training is involved
    policy: str = "oracle"  # oracle | hg | plain

    def __post_init__(self):
        if self.var not in SWEEP_VARS:
            raise SweepError(f"unknown sweep variable {self.var!r}")
        if not self.grid:
            raise SweepError("grid must be non-empty")
        if self.var in TRAINING_VARS and self.policy == "oracle":
            self.policy = "hg"
        if min(self.eval_seeds) < self.trainer.episodes:
            raise SweepError("eval seeds must be disjoint from training episode indices")


def point_config(spec: SweepSpec, value: float):
    gen, tr = spec.gen, spec.trainer
    env = tr.env
    if spec.var == "V":
        env = replace(env, V=float(value))
    elif spec.var == "ger_compute":
        gen = replace(gen, ger_tflops=(float(value), float(value)))
    elif spec.var == "ger_count":
        gen = replace(gen, n_gers=int(value))
    elif spec.var == "data_size":
        gen = replace(gen, data_gb=(float(value), float(value)))
    elif spec.var == "denoise_steps":
        tr = replace(tr, denoise_steps=int(value))
    elif spec.var == "batch":
        tr = replace(tr, batch_size=int(value))
    elif spec.var == "lr":
        tr = replace(tr, lr_actor=float(value), lr_critic=float(value))
    return gen, replace(tr, env=env)


def run_point(spec: SweepSpec, value: float) -> dict:
    gen, tr = point_config(spec, value)
    scn = generate_scenario(gen, spec.scenario_seed)
    if spec.policy == "oracle":
        lat, en, q = [], [], []
        for s in spec.eval_seeds:
            env = RescueEnv(scn, tr.env, seed=tr.seed)
            run = run_control(env, perslot_choice, spec.slots, first_episode=s)
            lat.append(run.mean_latency())
            en.append(run.mean_energy_j())
            q.append(float(np.mean(run.q_final)) * tr.env.energy_unit_j)
        return {"var": spec.var, "value": value, "mean_latency_s": float(np.mean(lat)),
                "mean_energy_j": float(np.mean(en)), "mean_q": float(np.mean(q))}
    trainer = Trainer(scn, tr, spec.policy)
    res = trainer.run()
    lat, en = [], []
    for s in spec.eval_seeds:
        m = trainer.evaluate(offset=s)
        lat.append(m["mean_latency_s"])
        en.append(m["mean_energy_j"])
    return {"var": spec.var, "value": value, "mean_latency_s": float(np.mean(lat)),
            "mean_energy_j": float(np.mean(en)), "mean_q": float(res.curve[-1].mean_q) if res.curve else 0.0}


def max_workers() -> int:
    cap = os.environ.get("SKYRESCUE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise SweepError(f"SKYRESCUE_THREADS={cap!r} is not an integer") from None
    return n


def run_sweep(spec: SweepSpec, workers: int | None = None) -> list[dict]:
    """Rows come back in grid order whatever the execution order."""
    workers = max_workers() if workers is None else workers
    if workers <= 1 or len(spec.grid) == 1:
        return [run_point(spec, v) for v in spec.grid]
    with ProcessPoolExecutor(max_workers=min(workers, len(spec.grid))) as ex:
        return list(ex.map(run_point, [spec] * len(spec.grid), spec.grid))


SWEEP_COLUMNS = ["var", "value", "mean_latency_s", "mean_energy_j", "mean_q"]


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([r["var"]] + [repr(float(r[k])) for k in SWEEP_COLUMNS[1:]])
    return buf.getvalue()
