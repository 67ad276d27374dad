"""Multi-agent slot environment.

Each UAV works in one subarea per round. In every slot it observes its own
state and the GERs of that subarea, picks a target (local / GER / airship) and
an offloading ratio, flies one slot toward the target, and pays the latency and
energy of Eqs. (8)-(17). A per-UAV virtual queue tracks the energy overspend.

Observation layout (length ``4 + 3 * max_gers``)::

    [x_u, y_u, f_u, q_u, (x_j, y_j, f_j) * max_gers]

positions are divided by the region size, compute by the largest compute
capacity in the scenario, and ``q_u`` is mapped to ``q / (q + budget)``.
Padded GER slots are all-zero; ``Observation.action_mask`` marks which targets
are legal.

Raw action layout (length ``max_gers + 3``)::

    [logit_local, logit_ger_1 .. logit_ger_max, logit_airship, offload_ratio]
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import assignment as asg
from .channel import link_rng, link_sample
from .costmodel import AIRSHIP, GER, LOCAL, SlotCost, SlotDecision, Task, cost_grid, slot_cost
from .kinematics import Trapped, UavKinState, advance, route_toward, slot_distance
from .lyapunov import VirtualQueue, queue_update
from .scenario import Scenario, Violation

TASK_STREAM = 1_000_003
AIRSHIP_NODE = 0


class UnassignedAgent(RuntimeError):
    pass


class LengthMismatch(ValueError):
    pass


class ActionCountMismatch(ValueError):
    pass


@dataclass
class EnvConfig:
    V: float = 0.5
    reward_scale: float = 10.0
    violation_penalty: float = 1.0
    energy_unit_j: float = 1e3  # queue and reward energy are expressed in this unit
    max_gers: int | None = None
    alloc_mode: str = "equal"  # or "proportional"
    full_task_energy: bool = False
    route_margin_m: float = 50.0
    data_jitter: tuple = (0.5, 1.5)
    deadline_s: float | None = None  # defaults to the slot length
    budget_j: float | tuple | None = None  # overrides the scenario budget; scalar or one per UAV
    assigner: str = "hungarian"  # or "round_robin"


@dataclass
class Observation:
    vector: np.ndarray
    action_mask: np.ndarray  # bool, length max_gers + 2
    ger_ids: tuple  # scenario GER index per slot, -1 for padding
    subarea: int
    uav: int


@dataclass(frozen=True)
class AgentAction:
    target_index: int  # 0 local, 1..max_gers GER slot, max_gers + 1 airship
    ratio: float  # offloaded share; local fraction = 1 - ratio


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    agent_id: int
    done: bool
    mask: np.ndarray
    next_mask: np.ndarray
    info: dict = field(default_factory=dict)


def decode_and_mask(raw, obs: Observation) -> AgentAction:
    raw = np.asarray(raw, dtype=float)
    mask = obs.action_mask
    if raw.shape != (len(mask) + 1,):
        raise LengthMismatch(f"raw action length {raw.shape} != {len(mask) + 1}")
    logits = np.where(mask, raw[:-1], -np.inf)
    target = int(np.argmax(logits)) if mask.any() else 0
    ratio = float(np.clip(raw[-1], 0.0, 1.0))
    return AgentAction(target_index=target, ratio=ratio)


def action_for(target_index: int, ratio: float, act_dim: int) -> np.ndarray:
    """Raw vector that decodes to the given (legal) target and ratio."""
    raw = np.zeros(act_dim)
    raw[target_index] = 1.0
    raw[-1] = ratio
    return raw


class RescueEnv:
    def __init__(self, scn: Scenario, cfg: EnvConfig | None = None, seed: int = 0):
        self.scn = scn
        self.cfg = cfg or EnvConfig()
        self.seed = seed
        self.U = len(scn.uavs)
        self.max_gers = self.cfg.max_gers if self.cfg.max_gers is not None else scn.max_gers_per_subarea
        self.obs_dim = 4 + 3 * self.max_gers
        self.act_dim = self.max_gers + 3
        self.slots = scn.time.slots_per_episode
        self.deadline = self.cfg.deadline_s if self.cfg.deadline_s is not None else scn.time.slot_s
        budget_j = self.cfg.budget_j if self.cfg.budget_j is not None else scn.energy_budget_j
        self.budgets = list(np.broadcast_to(np.asarray(budget_j, dtype=float), (self.U,)) / self.cfg.energy_unit_j)
        self.f_norm = max([u.compute_flops for u in scn.uavs] + [g.f_max_flops for g in scn.gers])
        self._gers_by_sub = [scn.gers_in(b) for b in range(len(scn.subareas))]
        self._rounds_cache = None
        self.queues = self._fresh_queues()
        self.episode = 0
        self.reset(0)

    # -- episode bookkeeping -----------------------------------------------------

    def plan_rounds(self) -> list[asg.RoundAssignment]:
        if self.cfg.assigner == "round_robin":
            return asg.round_robin(self.scn)
        if self._rounds_cache is None:
            self._rounds_cache = asg.assign_rounds(self.scn)
        return self._rounds_cache

    def reset(self, episode: int, keep_queues: bool = False) -> list[Observation]:
        self.episode = episode
        self.k = 0
        self.rounds = self.plan_rounds()
        self.kin = [UavKinState(*u.start_m, h=u.altitude_m) for u in self.scn.uavs]
        self._prep_cache = {}
        self.remaining_j = [u.e_max_j for u in self.scn.uavs]
        self.path_m = [0.0] * self.U
        if not keep_queues:
            self.queues = self._fresh_queues()
        self.tasks = [self._draw_task(u) for u in range(self.U)]
        self.obs = [self.observe(u) for u in range(self.U)]
        return self.obs

    def _fresh_queues(self) -> list[VirtualQueue]:
        return [VirtualQueue(budget=b, penalty_weight=self.cfg.V) for b in self.budgets]

    @property
    def done(self) -> bool:
        return self.k >= self.slots

    def subarea(self, u: int, k: int | None = None) -> int:
        k = self.k if k is None else k
        r = min(k, self.slots - 1) // self.scn.time.slots_per_round
        try:
            return self.rounds[r].mapping[u]
        except (IndexError, KeyError):
            raise UnassignedAgent(f"uav {u} has no subarea in round {r}") from None

    def _draw_task(self, u: int) -> Task:
        sa = self.scn.subareas[self.subarea(u)]
        rng = link_rng(self.seed, self.episode, self.k, u, TASK_STREAM)
        jit = rng.uniform(*self.cfg.data_jitter)
        return Task(data_bits=sa.data_bits / self.scn.time.slots_per_round * jit,
                    intensity_cycles_per_bit=sa.intensity_cycles_per_bit, deadline_s=self.deadline)

    def demand_flops(self, u: int) -> float:
        t = self.tasks[u]
        return t.cycles / (t.deadline_s * self.scn.consts.cycles_per_flop)

    # -- observation / action ------------------------------------------------------

    def observe(self, u: int) -> Observation:
        b = self.subarea(u)
        W, H = self.scn.region_m
        st = self.kin[u]
        q = self.queues[u].q_value
        vec = np.zeros(self.obs_dim)
        vec[:4] = (st.x / W, st.y / H, self.scn.uavs[u].compute_flops / self.f_norm, q / (q + self.budgets[u]))
        ids = self._gers_by_sub[b][: self.max_gers]
        mask = np.zeros(self.max_gers + 2, dtype=bool)
        mask[0] = True
        demand = self.demand_flops(u)
        enough = False
        for s, j in enumerate(ids):
            g = self.scn.gers[j]
            vec[4 + 3 * s: 7 + 3 * s] = (g.position_m[0] / W, g.position_m[1] / H, g.f_max_flops / self.f_norm)
            if g.f_max_flops > 0:
                mask[1 + s] = True
                enough |= g.f_max_flops >= demand
        mask[-1] = not enough
        ger_ids = tuple(ids) + (-1,) * (self.max_gers - len(ids))
        return Observation(vector=vec, action_mask=mask, ger_ids=ger_ids, subarea=b, uav=u)

    def target_of(self, u: int, target_index: int):
        """(kind, ger id or None) for a decoded target index."""
        if target_index == 0:
            return LOCAL, None
        if target_index == self.max_gers + 1:
            return AIRSHIP, None
        return GER, self.obs[u].ger_ids[target_index - 1]

    # -- per-candidate evaluation (pure) -----------------------------------------------

    def _waypoint(self, u: int, kind: str, ger):
        if kind == GER:
            return self.scn.gers[ger].position_m
        return self.scn.subareas[self.subarea(u)].center_m

    def _route(self, u: int, kind: str, ger):
        st = self.kin[u]
        spec = self.scn.uavs[u]
        c = self.scn.consts
        try:
            return route_toward(st, self._waypoint(u, kind, ger), self.scn.risk_sources, self.scn.time.slot_s,
                                spec.v_max_mps, self.cfg.route_margin_m, c.detect_segments, c.sensing_range_m), False
        except Trapped:
            return (st.heading_rad, 0.0, []), True

    def _link(self, u: int, kind: str, ger):
        st = self.kin[u]
        up = (st.x, st.y, st.h)
        if kind == GER:
            g = self.scn.gers[ger]
            rng = link_rng(self.seed, self.episode, self.k, u, 1 + ger)
            return link_sample(up, (*g.position_m, 0.0), self.scn.consts, rng)
        a = self.scn.airship
        rng = link_rng(self.seed, self.episode, self.k, u, AIRSHIP_NODE)
        return link_sample(up, (*a.position_m, a.altitude_m), self.scn.consts, rng, p_los=1.0)

    def prepare(self, u: int, target_index: int) -> dict:
        """Route and link for one target; cached for the current slot."""
        key = (self.episode, self.k, u, target_index)
        hit = self._prep_cache.get(key)
        if hit is None:
            if len(self._prep_cache) > 4096:
                self._prep_cache.clear()
            hit = self._prep_cache[key] = self._prepare(u, target_index)
        return hit

    def _prepare(self, u: int, target_index: int) -> dict:
        kind, ger = self.target_of(u, target_index)
        (heading, speed, dd), trapped = self._route(u, kind, ger)
        rate, cap = 0.0, 0.0
        if kind != LOCAL:
            rate = self._link(u, kind, ger).rate_bps
            cap = self.scn.gers[ger].f_max_flops if kind == GER else self.scn.airship.compute_flops
        return {"kind": kind, "ger": ger, "heading": heading, "speed": speed, "detect": dd,
                "trapped": trapped, "rate": rate, "cap": cap}

    def cost_of(self, u: int, prep: dict, local_fraction: float, alloc_flops: float | None = None):
        kind = prep["kind"]
        if kind == LOCAL:
            local_fraction = 1.0
        alloc = 0.0 if kind == LOCAL else (prep["cap"] if alloc_flops is None else alloc_flops)
        cost = slot_cost(self.tasks[u], local_fraction, self.scn.uavs[u].compute_flops, prep["rate"], alloc,
                         prep["speed"], prep["detect"], self.scn.consts, self.cfg.full_task_energy)
        dec = SlotDecision(target=kind, local_fraction=local_fraction, ger=prep["ger"], alloc_flops=alloc,
                           heading_rad=prep["heading"], speed_mps=prep["speed"])
        return cost, dec

    def evaluate(self, u: int, target_index: int, local_fraction: float, alloc_flops: float | None = None):
        """Cost of one candidate for UAV u in the current slot, without side effects.

        Returns (SlotCost, SlotDecision, detect_distances, trapped).
        """
        prep = self.prepare(u, target_index)
        cost, dec = self.cost_of(u, prep, local_fraction, alloc_flops)
        return cost, dec, prep["detect"], prep["trapped"]

    def candidate_table(self, u: int, target_indices, fractions):
        """[(target_index, local_fraction, t_total, e_total_j)] over targets x fractions.

        A UAV is assumed alone on its GER (distinct subareas never share GERs).
        """
        rows = []
        fr = np.asarray(fractions, dtype=float)
        for ti in target_indices:
            p = self.prepare(u, int(ti))
            f = np.ones_like(fr) if p["kind"] == LOCAL else fr
            alloc = 0.0 if p["kind"] == LOCAL else p["cap"]
            t, e = cost_grid(self.tasks[u], f, self.scn.uavs[u].compute_flops, p["rate"], alloc, p["speed"],
                             p["detect"], self.scn.consts, self.cfg.full_task_energy)
            rows += [(int(ti), float(a), float(b), float(c)) for a, b, c in zip(f, t, e)]
        return rows

    # -- stepping ------------------------------------------------------------------

    def step(self, raw_actions) -> list[Transition]:
        if len(raw_actions) != self.U:
            raise ActionCountMismatch(f"{len(raw_actions)} actions for {self.U} UAVs")
        if self.done:
            raise RuntimeError("episode finished; call reset()")
        cfg = self.cfg
        acts = [decode_and_mask(a, self.obs[u]) for u, a in enumerate(raw_actions)]
        targets = [self.target_of(u, a.target_index) for u, a in enumerate(acts)]
        fracs = [1.0 if kind == LOCAL else 1.0 - a.ratio for a, (kind, _) in zip(acts, targets)]

        # resource allocation at each GER among the UAVs offloading to it
        users: dict = {}
        for u, (kind, ger) in enumerate(targets):
            if kind == GER and fracs[u] < 1.0:
                users.setdefault(ger, []).append(u)
        alloc = [None] * self.U
        for j, us in users.items():
            cap = self.scn.gers[j].f_max_flops
            if cfg.alloc_mode == "proportional" and len(us) > 1:
                dem = np.array([(1 - fracs[u]) * self.tasks[u].cycles for u in us])
                for u, d in zip(us, dem):
                    alloc[u] = cap * d / dem.sum()
            else:
                for u in us:
                    alloc[u] = cap / len(us)

        results = [self.evaluate(u, acts[u].target_index, fracs[u], alloc[u]) for u in range(self.U)]

        # move, then check mobility constraints for this slot
        old = [s.position for s in self.kin]
        new_kin = []
        flags = [list(res[0].flags) for res in results]
        delta = self.scn.time.slot_s
        for u, (cost, dec, dd, trapped) in enumerate(results):
            spec = self.scn.uavs[u]
            st = advance(self.kin[u], dec.heading_rad, dec.speed_mps, delta, spec.v_max_mps)
            new_kin.append(st)
            step_m = slot_distance(old[u], st.position)
            lo = delta * spec.d_min_m / self.scn.time.horizon_s
            if trapped or step_m < lo - 1e-9 or step_m > delta * spec.v_max_mps + 1e-9:
                flags[u].append(Violation("18i", (f"uav{u}",), "trapped" if trapped else f"step {step_m:.2f} m"))
            self.path_m[u] += step_m
            if self.path_m[u] > spec.l_max_m + 1e-9:
                flags[u].append(Violation("18j", (f"uav{u}",), f"path {self.path_m[u]:.1f} m"))
        for u in range(self.U):
            for v in range(u + 1, self.U):
                if slot_distance(new_kin[u].position, new_kin[v].position) < self.scn.safety_distance_m:
                    vio = Violation("18k", (f"uav{u}", f"uav{v}"), "separation below safety distance")
                    flags[u].append(vio)
                    flags[v].append(vio)

        obs_before = self.obs
        q_before = [q.q_value for q in self.queues]
        rewards = []
        for u, (cost, dec, dd, trapped) in enumerate(results):
            e_units = cost.e_total_j / cfg.energy_unit_j
            y = e_units - self.queues[u].budget
            r = -(cfg.V * cost.t_total_s + q_before[u] * y) / cfg.reward_scale
            if flags[u]:
                r -= cfg.violation_penalty
            rewards.append(r)
            queue_update(self.queues[u], e_units)
            self.remaining_j[u] -= cost.e_total_j

        slot = self.k
        self.kin = new_kin
        self.k += 1
        done = self.done
        if not done:
            self.tasks = [self._draw_task(u) for u in range(self.U)]
            self.obs = [self.observe(u) for u in range(self.U)]
        out = []
        for u in range(self.U):
            cost, dec = results[u][0], results[u][1]
            nxt = self.obs[u] if not done else obs_before[u]
            out.append(Transition(
                obs=obs_before[u].vector, action=np.asarray(raw_actions[u], dtype=float), reward=rewards[u],
                next_obs=nxt.vector, agent_id=u, done=done, mask=obs_before[u].action_mask,
                next_mask=nxt.action_mask,
                info={"episode": self.episode, "slot": slot, "cost": cost, "decision": dec, "action": acts[u], "q_before": q_before[u],
                      "y": cost.e_total_j / cfg.energy_unit_j - self.queues[u].budget, "flags": tuple(flags[u]),
                      "subarea": obs_before[u].subarea, "position": new_kin[u].position,
                      "speed": dec.speed_mps, "heading": dec.heading_rad, "remaining_j": self.remaining_j[u]},
            ))
        return out


# -- policies and rollouts ----------------------------------------------------------


class RandomPolicy:
    def __init__(self, act_dim: int):
        self.act_dim = act_dim

    def act(self, obs: Observation, rng: np.random.Generator, explore: float = 0.0) -> np.ndarray:
        raw = rng.standard_normal(self.act_dim)
        raw[-1] = rng.uniform()
        return raw


class LocalPolicy:
    def __init__(self, act_dim: int):
        self.act_dim = act_dim

    def act(self, obs: Observation, rng: np.random.Generator, explore: float = 0.0) -> np.ndarray:
        return action_for(0, 0.0, self.act_dim)


@dataclass
class EpisodeMetrics:
    mean_reward: float
    mean_latency_s: float
    mean_energy_j: float
    final_q: list
    mean_q: float
    violations: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def episode_metrics(env: RescueEnv, transitions: list[Transition]) -> EpisodeMetrics:
    n = max(len(transitions), 1)
    return EpisodeMetrics(
        mean_reward=sum(t.reward for t in transitions) / n,
        mean_latency_s=sum(t.info["cost"].t_total_s for t in transitions) / n,
        mean_energy_j=sum(t.info["cost"].e_total_j for t in transitions) / n,
        final_q=[q.q_value * env.cfg.energy_unit_j for q in env.queues],
        mean_q=sum(t.info["q_before"] for t in transitions) / n * env.cfg.energy_unit_j,
        violations=sum(len(t.info["flags"]) for t in transitions),
    )


def run_episode(env: RescueEnv, policies, episode: int, rng: np.random.Generator, explore: float = 0.0,
                keep_queues: bool = False, on_slot=None):
    """Roll one episode. ``policies`` is one object per UAV with ``act(obs, rng, explore)``.

    ``on_slot(transitions)`` is called after every slot (used by trainers).
    """
    env.reset(episode, keep_queues=keep_queues)
    out: list[Transition] = []
    while not env.done:
        raw = [policies[u].act(env.obs[u], rng, explore) for u in range(env.U)]
        trs = env.step(raw)
        out.extend(trs)
        if on_slot is not None:
            on_slot(trs)
    return out, episode_metrics(env, out)


def episode_log_lines(episode: int, transitions: list[Transition], energy_unit_j: float = 1e3):
    for t in transitions:
        a = t.info["action"]
        yield json.dumps({
            "episode": episode, "slot": t.info["slot"], "uav": t.agent_id,
            "action": {"target": a.target_index, "ratio": a.ratio},
            "reward": t.reward, "t_total": t.info["cost"].t_total_s, "e_total": t.info["cost"].e_total_j,
            "q": t.info["q_before"] * energy_unit_j,
        }, sort_keys=True)
