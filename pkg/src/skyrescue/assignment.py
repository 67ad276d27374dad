"""Subarea selection: a normalized per-round cost matrix and a label-adjusting Hungarian
solver for rectangular (rows <= cols) minimum-cost assignment."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .scenario import Scenario


class Infeasible(ValueError):
    pass


class CardinalityMismatch(ValueError):
    pass


@dataclass
class CostMatrix:
    entries: np.ndarray  # rows = UAVs, cols = candidate subareas
    cols: tuple  # subarea ids for each column
    row_labels: np.ndarray | None = None
    col_labels: np.ndarray | None = None


@dataclass(frozen=True)
class RoundAssignment:
    round: int
    mapping: dict  # uav -> subarea
    total_cost: float
    costs: dict  # uav -> entry cost


@dataclass
class UavAssignState:
    position: tuple
    remaining_j: float


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v, dtype=float)
    return (v - lo) / (hi - lo)


def build_cost_matrix(scn: Scenario, uav_states, remaining: list[int], normalize: bool = True) -> CostMatrix:
    """cost = dist + data + intensity - remaining energy - mean GER compute.

    With ``normalize`` each term is min-max scaled to [0, 1] over the matrix
    (a constant term scales to 0).
    """
    if not remaining:
        raise ValueError("no remaining subareas")
    sub = [scn.subareas[b] for b in remaining]
    pos = np.array([s.position for s in uav_states], dtype=float)
    centers = np.array([s.center_m for s in sub], dtype=float)
    dist = np.hypot(pos[:, None, 0] - centers[None, :, 0], pos[:, None, 1] - centers[None, :, 1])
    data = np.array([s.data_bits for s in sub], dtype=float)
    inten = np.array([s.intensity_cycles_per_bit for s in sub], dtype=float)
    energy = np.array([s.remaining_j for s in uav_states], dtype=float)
    fb = np.array([s.mean_ger_flops for s in sub], dtype=float)
    if normalize:
        dist, data, inten, energy, fb = (_minmax(x) for x in (dist, data, inten, energy, fb))
    entries = dist + data[None, :] + inten[None, :] - energy[:, None] - fb[None, :]
    return CostMatrix(entries=entries, cols=tuple(remaining))


def hungarian_solve(matrix) -> tuple[list[int], float, np.ndarray, np.ndarray]:
    """Minimum-cost injective row->column assignment.

    Row labels start at the row minima and column labels at zero; labels are
    adjusted along shortest augmenting paths so that ``C >= alpha + beta``
    holds throughout with equality on matched pairs. Among equally cheap
    frontier columns an unmatched one is preferred, then the lowest index.

    Returns (assignment, total_cost, row_labels, col_labels).
    """
    C = np.asarray(matrix, dtype=float)
    if C.ndim != 2:
        raise ValueError("cost matrix must be 2-D")
    n, m = C.shape
    if n > m:
        raise ValueError("rows must not exceed columns")
    if not np.all(np.isfinite(C)):
        raise Infeasible("non-finite cost entries")
    if n == 0:
        return [], 0.0, np.zeros(0), np.zeros(m)

    # 1-based padding: column 0 is the virtual root of each search
    Cp = np.zeros((n + 1, m + 1))
    Cp[1:, 1:] = C
    u = np.zeros(n + 1)
    u[1:] = C.min(axis=1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j] = row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    inf = math.inf

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = Cp[i0] - u[i0] - v
            upd = ~used & (cur < minv)
            upd[0] = False
            minv[upd] = cur[upd]
            way[upd] = j0
            cand = np.where(used, inf, minv)
            cand[0] = inf
            delta = cand.min()
            ties = np.flatnonzero(cand == delta)
            free = ties[p[ties] == 0]
            j1 = int(free[0] if free.size else ties[0])
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    assignment = [0] * n
    for j in range(1, m + 1):
        if p[j]:
            assignment[p[j] - 1] = j - 1
    total = float(sum(C[r, c] for r, c in enumerate(assignment)))
    return assignment, total, u[1:].copy(), v[1:].copy()


def solve(cm: CostMatrix) -> tuple[dict, float]:
    a, total, alpha, beta = hungarian_solve(cm.entries)
    cm.row_labels, cm.col_labels = alpha, beta
    return {r: cm.cols[c] for r, c in enumerate(a)}, total


def default_round_energy(scn: Scenario, u: int, b: int) -> float:
    """Rough energy of one round spent on subarea b: full-speed flight plus half
    of the subarea's data computed on board."""
    c = scn.consts
    spec = scn.uavs[u]
    sa = scn.subareas[b]
    prop = c.propulsion_coeff * spec.v_max_mps**2 * scn.time.slots_per_round
    comp = c.capacitance_coeff * spec.compute_flops**2 * 0.5 * sa.data_bits * sa.intensity_cycles_per_bit
    return prop + comp


def assign_rounds(scn: Scenario, uav_states=None, normalize: bool = True,
                  energy_model=default_round_energy) -> list[RoundAssignment]:
    """One Hungarian solve per round on the shrinking set of unassigned subareas.

    Between rounds each UAV is moved to its subarea centre and its remaining
    energy is reduced by ``energy_model(scn, u, b)``.
    """
    U, R = len(scn.uavs), scn.time.rounds
    if len(scn.subareas) != U * R:
        raise CardinalityMismatch(f"{len(scn.subareas)} subareas != {U} UAVs x {R} rounds")
    if uav_states is None:
        uav_states = [UavAssignState(s.start_m, s.e_max_j) for s in scn.uavs]
    states = [UavAssignState(tuple(s.position), float(s.remaining_j)) for s in uav_states]
    # canonical column order makes the result independent of input ordering
    remaining = sorted(range(len(scn.subareas)), key=lambda b: scn.subareas[b].center_m)
    out = []
    for r in range(R):
        cm = build_cost_matrix(scn, states, remaining, normalize)
        mapping, total = solve(cm)
        costs = {uu: float(cm.entries[uu, cm.cols.index(b)]) for uu, b in mapping.items()}
        out.append(RoundAssignment(round=r, mapping=mapping, total_cost=total, costs=costs))
        for uu, b in mapping.items():
            states[uu] = UavAssignState(scn.subareas[b].center_m,
                                        states[uu].remaining_j - energy_model(scn, uu, b))
        taken = set(mapping.values())
        remaining = [b for b in remaining if b not in taken]
    return out


def round_robin(scn: Scenario) -> list[RoundAssignment]:
    """Baseline: UAV u takes subarea r*U + u in round r."""
    U = len(scn.uavs)
    return [RoundAssignment(round=r, mapping={u: r * U + u for u in range(U)}, total_cost=math.nan, costs={})
            for r in range(scn.time.rounds)]


def assignment_csv(rounds: list[RoundAssignment]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["round", "uav", "subarea", "cost"])
    for ra in rounds:
        for u in sorted(ra.mapping):
            w.writerow([ra.round, u, ra.mapping[u], ra.costs.get(u, "")])
    return buf.getvalue()
