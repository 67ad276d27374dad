"""Brute-force reference solvers and the drift-plus-penalty control loop.

These are written independently of the fast paths they check: the assignment
oracle enumerates permutations, the per-slot oracle scans candidates in plain
Python with its own tie-break, and the auditor recomputes every constraint from
logged positions and decisions.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from ..costmodel import GER, LOCAL
from ..env import EnvConfig, RescueEnv, Transition, action_for
from ..lyapunov import per_slot_argmin, stability_report
from ..kinematics import slot_distance


class TooLarge(ValueError):
    pass


FRACTIONS = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


def oracle_assignment(matrix, limit: int = 8) -> float:
    """Minimum total cost over all injective row -> column maps."""
    C = np.asarray(matrix, dtype=float)
    n, m = C.shape
    if n > limit or m > limit:
        raise TooLarge(f"{n}x{m} exceeds {limit}x{limit}")
    if n > m:
        raise ValueError("rows must not exceed columns")
    best = math.inf
    for cols in itertools.permutations(range(m), n):
        s = 0.0
        for r, c in enumerate(cols):
            s += C[r, c]
        best = min(best, s)
    return 0.0 if n == 0 else best


def oracle_perslot(env: RescueEnv, u: int, fractions, targets):
    """Exhaustive scan of V*t + Q*(e - budget) over targets x fractions.

    Every candidate is evaluated from scratch. Returns (target_index, local_fraction).
    Ties: lower energy, then earlier candidate.
    """
    q = env.queues[u]
    best, best_key = None, None
    k = 0
    for ti in targets:
        for f in fractions:
            cost, dec, _, _ = env.evaluate(u, int(ti), float(f))
            e = cost.e_total_j / env.cfg.energy_unit_j
            val = q.penalty_weight * cost.t_total_s + q.q_value * (e - q.budget)
            key = (val, e, k)
            if best_key is None or key < best_key:
                best, best_key = (int(ti), dec.local_fraction), key
            k += 1
    return best


def perslot_choice(env: RescueEnv, u: int, fractions=FRACTIONS, targets=None):
    """Fast path: candidate table + :func:`per_slot_argmin` in queue units."""
    if targets is None:
        targets = np.flatnonzero(env.obs[u].action_mask)
    unit = env.cfg.energy_unit_j
    rows = env.candidate_table(u, targets, fractions)
    cands = [((ti, f), t, e / unit) for ti, f, t, e in rows]
    return per_slot_argmin(cands, env.queues[u])


def min_energy_choice(env: RescueEnv, u: int, fractions=FRACTIONS, targets=None):
    if targets is None:
        targets = np.flatnonzero(env.obs[u].action_mask)
    rows = env.candidate_table(u, targets, fractions)
    i = min(range(len(rows)), key=lambda k: (rows[k][3], rows[k][2], k))
    return rows[i][0], rows[i][1]


@dataclass
class ControlRun:
    slots: int
    latency: np.ndarray  # (slots, U)
    energy_j: np.ndarray  # (slots, U)
    q_final: np.ndarray  # queue units
    histories: list
    transitions: list = field(default_factory=list)

    def mean_latency(self) -> float:
        return float(self.latency.mean())

    def mean_energy_j(self) -> float:
        return float(self.energy_j.mean())


def run_control(env: RescueEnv, chooser, slots: int, first_episode: int = 0, keep: bool = False) -> ControlRun:
    """Drive every UAV with ``chooser(env, u) -> (target_index, local_fraction)``
    for ``slots`` slots; queues carry over across episode boundaries."""
    lat, en, kept = [], [], []
    ep = first_episode
    env.reset(ep)
    while len(lat) < slots:
        if env.done:
            ep += 1
            env.reset(ep, keep_queues=True)
        raw = []
        for u in range(env.U):
            ti, f = chooser(env, u)
            raw.append(action_for(ti, 1.0 - f, env.act_dim))
        trs = env.step(raw)
        lat.append([t.info["cost"].t_total_s for t in trs])
        en.append([t.info["cost"].e_total_j for t in trs])
        if keep:
            kept.extend(trs)
    return ControlRun(slots, np.array(lat), np.array(en), np.array([q.q_value for q in env.queues]),
                      [q.history for q in env.queues], kept)


def reference_budgets(scn, cfg: EnvConfig, slots: int, margin: float, seed: int) -> np.ndarray:
    """Per-UAV budget = margin x mean slot energy of the min-energy policy."""
    ref = run_control(RescueEnv(scn, cfg, seed=seed), min_energy_choice, slots)
    return margin * ref.energy_j.mean(axis=0)


def stability_check(scn, slots: int = 10_000, V: float = 0.5, margin: float = 1.2, seed: int = 0,
                    cfg: EnvConfig | None = None, ref_slots: int = 2500, check: bool = False) -> dict:
    """Per-UAV budget = margin x the min-energy policy's mean; then run the
    drift-plus-penalty controller and report Q(T)/T against the budget.

    With ``check`` the logged transitions are audited and the unflagged
    problems are returned under ``"problems"``.
    """
    base = cfg or EnvConfig()
    budgets = reference_budgets(scn, base, ref_slots, margin, seed)
    env = RescueEnv(scn, EnvConfig(**{**base.__dict__, "V": V, "budget_j": tuple(budgets)}), seed=seed)
    run = run_control(env, perslot_choice, slots, keep=check)
    problems = audit(env, run.transitions) if check else []
    run.transitions = []
    unit = env.cfg.energy_unit_j
    per = []
    for u, h in enumerate(run.histories):
        rep = stability_report(h)
        per.append({"uav": u, "budget_j": float(budgets[u]), "q_over_t_j": rep["q_over_t"] * unit,
                    "ratio": rep["q_over_t"] * unit / budgets[u], "mean_excess_j": rep["mean_excess"] * unit})
    return {"slots": slots, "per_uav": per, "max_ratio": max(p["ratio"] for p in per), "run": run,
            "problems": problems}


def v_sweep(scn, Vs=(0.1, 0.5, 1.0, 5.0), slots: int = 2000, margin: float = 1.2, seed: int = 0,
            cfg: EnvConfig | None = None, ref_slots: int = 2500, check: bool = False) -> list[dict]:
    """Oracle controller at each V on the same seeds and budgets."""
    base = cfg or EnvConfig()
    budgets = reference_budgets(scn, base, ref_slots, margin, seed)
    out = []
    for V in Vs:
        env = RescueEnv(scn, EnvConfig(**{**base.__dict__, "V": V, "budget_j": tuple(budgets)}), seed=seed)
        run = run_control(env, perslot_choice, slots, keep=check)
        out.append({"V": V, "mean_latency_s": run.mean_latency(),
                    "mean_excess_j": float((run.energy_j - budgets[None, :]).mean()),
                    "mean_energy_j": run.mean_energy_j(),
                    "problems": audit(env, run.transitions) if check else []})
    return out


# -- constraint audit ------------------------------------------------------------


def audit(env: RescueEnv, transitions: list[Transition], tol: float = 1e-9) -> list[str]:
    """Recompute (18b)-(18k) from the logged decisions and positions.

    Returns a description of every violation that is NOT flagged in the log, or
    that is flagged without the penalty being reflected in the reward.
    """
    scn = env.scn
    cfg = env.cfg
    problems = []
    by_slot: dict = {}
    for t in transitions:
        by_slot.setdefault((t.info.get("episode", 0), t.info["slot"]), []).append(t)
    paths: dict = {}
    prev: dict = {}
    for (ep, slot), trs in sorted(by_slot.items(), key=lambda kv: kv[0]):
        ids = [t.agent_id for t in trs]
        if sorted(ids) != list(range(env.U)):
            problems.append(f"18c: slot {slot} decisions for {ids}")
        load: dict = {}
        used: dict = {}
        for t in trs:
            d = t.info["decision"]
            flagged = {v.constraint for v in t.info["flags"]}
            if not (-tol <= d.local_fraction <= 1 + tol):
                problems.append(f"18b: uav {t.agent_id} slot {slot} fraction {d.local_fraction}")
            if d.target == GER:
                load[d.ger] = load.get(d.ger, 0.0) + (1.0 - d.local_fraction)
                if d.local_fraction < 1.0:
                    used[d.ger] = used.get(d.ger, 0.0) + d.alloc_flops
                if d.alloc_flops < -tol or d.alloc_flops > scn.gers[d.ger].f_max_flops * (1 + tol):
                    problems.append(f"18g: uav {t.agent_id} slot {slot} alloc {d.alloc_flops}")
            c = t.info["cost"]
            tau = env.deadline
            if d.local_fraction > 0 and c.t_local_s > tau and "18e" not in flagged:
                problems.append(f"18e unflagged: uav {t.agent_id} slot {slot}")
            if d.local_fraction < 1 and c.t_ger_s > tau and "18f" not in flagged:
                problems.append(f"18f unflagged: uav {t.agent_id} slot {slot}")
            # mobility, from positions
            u = t.agent_id
            key = (ep, u)
            p0 = prev.get(key, scn.uavs[u].start_m)
            step = slot_distance(p0, t.info["position"])
            prev[key] = t.info["position"]
            spec = scn.uavs[u]
            lo = scn.time.slot_s * spec.d_min_m / scn.time.horizon_s
            if (step < lo - 1e-6 or step > scn.time.slot_s * spec.v_max_mps + 1e-6) and "18i" not in flagged:
                problems.append(f"18i unflagged: uav {u} slot {slot} step {step}")
            paths[key] = paths.get(key, 0.0) + step
            if paths[key] > spec.l_max_m + 1e-6 and "18j" not in flagged:
                problems.append(f"18j unflagged: uav {u} slot {slot}")
            # reward must reflect the penalty exactly
            r0 = -(cfg.V * c.t_total_s + t.info["q_before"] * t.info["y"]) / cfg.reward_scale
            expect = r0 - (cfg.violation_penalty if flagged else 0.0)
            if not math.isclose(t.reward, expect, rel_tol=1e-12, abs_tol=1e-12):
                problems.append(f"reward: uav {u} slot {slot} {t.reward} != {expect}")
        for j, s in load.items():
            if s > 1 + tol:
                problems.append(f"18d: GER {j} slot {slot} offloaded share {s}")
        for j, a in used.items():
            if a > scn.gers[j].f_max_flops * (1 + tol):
                problems.append(f"18h: GER {j} slot {slot} allocated {a}")
        for a in trs:
            for b in trs:
                if a.agent_id < b.agent_id:
                    if slot_distance(a.info["position"], b.info["position"]) < scn.safety_distance_m:
                        fa = {v.constraint for v in a.info["flags"]}
                        fb = {v.constraint for v in b.info["flags"]}
                        if "18k" not in fa or "18k" not in fb:
                            problems.append(f"18k unflagged: uavs {a.agent_id},{b.agent_id} slot {slot}")
    return problems
