"""Per-slot latency and energy bookkeeping for one UAV's offloading decision.

``local_fraction`` is the share of the task computed on board; the rest goes to
the chosen remote node (a GER or the airship).
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .scenario import PhysConstants, Violation

LOCAL = "local"
GER = "ger"
AIRSHIP = "airship"


class OffloadError(ValueError):
    pass


@dataclass(frozen=True)
class Task:
    data_bits: float
    intensity_cycles_per_bit: float
    deadline_s: float

    @property
    def cycles(self) -> float:
        return self.data_bits * self.intensity_cycles_per_bit


@dataclass(frozen=True)
class SlotDecision:
    target: str  # LOCAL | GER | AIRSHIP
    local_fraction: float
    ger: int | None = None
    alloc_flops: float = 0.0
    heading_rad: float = 0.0
    speed_mps: float = 0.0


@dataclass(frozen=True)
class SlotCost:
    t_local_s: float
    t_tran_s: float
    t_comp_s: float
    t_ger_s: float
    t_total_s: float
    e_tran_j: float
    e_comp_j: float
    e_prop_j: float
    e_dete_j: float
    e_total_j: float
    flags: tuple = field(default=())


def local_latency(task: Task, local_fraction: float, f_u: float, cycles_per_flop: float = 1.0) -> float:
    return local_fraction * task.cycles / (f_u * cycles_per_flop)


def offload_latency(task: Task, local_fraction: float, rate_bps: float, alloc_flops: float,
                    cycles_per_flop: float = 1.0) -> tuple[float, float, float]:
    share = 1.0 - local_fraction
    if share <= 0.0:
        return 0.0, 0.0, 0.0
    if rate_bps <= 0.0:
        raise OffloadError("zero-rate-offload")
    if alloc_flops <= 0.0:
        raise OffloadError("zero-alloc-offload")
    t_tran = share * task.data_bits / rate_bps
    t_comp = share * task.cycles / (alloc_flops * cycles_per_flop)
    return t_tran, t_comp, t_tran + t_comp


def detection_energy(detect_distances, unit_energy: float) -> float:
    return unit_energy * sum(sum(ds) for ds in detect_distances)


def slot_energy(task: Task, local_fraction: float, t_tran_s: float, speed_mps: float, detect_distances,
                consts: PhysConstants, f_u: float, full_task_energy: bool = False) -> tuple[float, float, float, float]:
    """Returns (e_tran, e_comp, e_prop, e_dete) in joules."""
    e_tran = consts.tx_power_w * t_tran_s
    share = 1.0 if full_task_energy else local_fraction
    e_comp = consts.capacitance_coeff * f_u**2 * share * task.cycles
    e_prop = consts.propulsion_coeff * speed_mps**2
    e_dete = detection_energy(detect_distances, consts.detect_unit_energy)
    return e_tran, e_comp, e_prop, e_dete


def deadline_flags(task: Task, local_fraction: float, t_local: float, t_ger: float) -> tuple[Violation, ...]:
    out = []
    if local_fraction > 0 and t_local > task.deadline_s:
        out.append(Violation("18e", (), f"local part {t_local:.3f}s > deadline {task.deadline_s}s"))
    if local_fraction < 1 and t_ger > task.deadline_s:
        out.append(Violation("18f", (), f"remote part {t_ger:.3f}s > deadline {task.deadline_s}s"))
    return tuple(out)


def slot_cost(task: Task, local_fraction: float, f_u: float, rate_bps: float, alloc_flops: float,
              speed_mps: float, detect_distances, consts: PhysConstants, full_task_energy: bool = False) -> SlotCost:
    t_local = local_latency(task, local_fraction, f_u, consts.cycles_per_flop)
    t_tran, t_comp, t_ger = offload_latency(task, local_fraction, rate_bps, alloc_flops, consts.cycles_per_flop)
    e_tran, e_comp, e_prop, e_dete = slot_energy(task, local_fraction, t_tran, speed_mps, detect_distances,
                                                 consts, f_u, full_task_energy)
    return SlotCost(
        t_local_s=t_local, t_tran_s=t_tran, t_comp_s=t_comp, t_ger_s=t_ger, t_total_s=t_local + t_ger,
        e_tran_j=e_tran, e_comp_j=e_comp, e_prop_j=e_prop, e_dete_j=e_dete,
        e_total_j=e_tran + e_comp + e_prop + e_dete,
        flags=deadline_flags(task, local_fraction, t_local, t_ger),
    )


def total_latency(costs) -> float:
    return sum(c.t_local_s + c.t_ger_s for c in costs)


COST_COLUMNS = ["slot", "uav", "t_local", "t_tran", "t_comp", "t_total",
                "e_tran", "e_comp", "e_prop", "e_dete", "e_total"]


def costs_csv(rows) -> str:
    """rows: iterable of (slot, uav, SlotCost)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COST_COLUMNS)
    for slot, uav, c in rows:
        w.writerow([slot, uav, c.t_local_s, c.t_tran_s, c.t_comp_s, c.t_total_s,
                    c.e_tran_j, c.e_comp_j, c.e_prop_j, c.e_dete_j, c.e_total_j])
    return buf.getvalue()


def cost_grid(task: Task, fractions, f_u: float, rate_bps: float, alloc_flops: float, speed_mps: float,
              detect_distances, consts: PhysConstants, full_task_energy: bool = False):
    """(t_total, e_total) over an array of local fractions for one fixed target.

    Uses the same operation order as :func:`slot_cost`, so each entry equals
    the scalar result bit for bit.
    """
    f = np.asarray(fractions, dtype=float)
    cpf = consts.cycles_per_flop
    share = 1.0 - f
    off = share > 0.0
    if off.any() and rate_bps <= 0.0:
        raise OffloadError("zero-rate-offload")
    if off.any() and alloc_flops <= 0.0:
        raise OffloadError("zero-alloc-offload")
    t_local = f * task.cycles / (f_u * cpf)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_tran = np.where(off, share * task.data_bits / rate_bps, 0.0)
        t_comp = np.where(off, share * task.cycles / (alloc_flops * cpf), 0.0)
    t_ger = t_tran + t_comp
    e_tran = consts.tx_power_w * t_tran
    e_share = np.ones_like(f) if full_task_energy else f
    e_comp = consts.capacitance_coeff * f_u**2 * e_share * task.cycles
    e_prop = consts.propulsion_coeff * speed_mps**2
    e_dete = detection_energy(detect_distances, consts.detect_unit_energy)
    return t_local + t_ger, e_tran + e_comp + e_prop + e_dete
