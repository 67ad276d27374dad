"""Virtual energy queue and the drift-plus-penalty per-slot controller."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np


class EmptyCandidates(ValueError):
    pass


@dataclass
class VirtualQueue:
    budget: float
    penalty_weight: float = 1.0
    q_value: float = 0.0
    theta: float = 0.0  # bound constant; cancels in the argmin, never computed
    history: list = field(default_factory=list)  # (q before update, y) per slot


def queue_update(q: VirtualQueue, e_total: float) -> VirtualQueue:
    """Q' = max(Q + e - budget, 0). Mutates ``q`` (single writer) and returns it."""
    if e_total < 0:
        raise ValueError("negative slot energy")
    y = e_total - q.budget
    q.history.append((q.q_value, y))
    q.q_value = max(q.q_value + y, 0.0)
    return q


def per_slot_cost(q: VirtualQueue, t_total: float, e_total: float) -> float:
    return q.penalty_weight * t_total + q.q_value * (e_total - q.budget)


def per_slot_argmin(candidates, q: VirtualQueue):
    """candidates: sequence of (decision, t_total, e_total).

    Ties on cost go to the lower energy, then the lower index.
    """
    if len(candidates) == 0:
        raise EmptyCandidates("no candidates")
    t = np.array([c[1] for c in candidates], dtype=float)
    e = np.array([c[2] for c in candidates], dtype=float)
    cost = q.penalty_weight * t + q.q_value * (e - q.budget)
    order = np.lexsort((np.arange(len(candidates)), e, cost))
    return candidates[int(order[0])][0]


def stability_report(history) -> dict:
    """history: list of (q_before, y) as recorded by :func:`queue_update`."""
    if len(history) < 2:
        raise ValueError("need at least two slots")
    q_last, y_last = history[-1]
    q_final = max(q_last + y_last, 0.0)
    ys = np.array([h[1] for h in history])
    return {"q_over_t": q_final / len(history), "mean_excess": float(ys.mean()), "theta": 0.0}


def queue_csv(rows) -> str:
    """rows: iterable of (slot, uav, q_joules, y_k)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "uav", "q_joules", "y_k"])
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
