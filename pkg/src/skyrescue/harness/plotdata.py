"""Run artifacts (episode traces, GER resource maps) and CSV plot-data export."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..costmodel import GER, costs_csv, SlotCost
from ..kinematics import trajectories_csv
from ..lyapunov import queue_csv


class MissingArtifact(FileNotFoundError):
    pass


@dataclass
class ResourceMap:
    slot: int
    ger: list  # GER ids
    position_m: list
    f_max_flops: list
    remaining_flops: list

    def rows(self):
        for j, p, fm, rem in zip(self.ger, self.position_m, self.f_max_flops, self.remaining_flops):
            yield [self.slot, j, p[0], p[1], fm, rem, fm - rem]


def resource_maps(scn, transitions) -> list[ResourceMap]:
    """Per-slot snapshot of every GER's capacity and what remains after allocation."""
    by_slot: dict = {}
    for t in transitions:
        by_slot.setdefault(t.info["slot"], []).append(t)
    out = []
    fmax = np.array([g.f_max_flops for g in scn.gers])
    for slot in sorted(by_slot):
        rem = fmax.copy()
        for t in by_slot[slot]:
            d = t.info["decision"]
            if d.target == GER and d.local_fraction < 1.0:
                rem[d.ger] -= d.alloc_flops
        out.append(ResourceMap(slot, list(range(len(fmax))), [g.position_m for g in scn.gers],
                               fmax.tolist(), np.maximum(rem, 0.0).tolist()))
    return out


def trace_records(scn, transitions, energy_unit_j: float = 1e3) -> list[dict]:
    I = scn.time.slots_per_round
    out = []
    for t in transitions:
        d, c = t.info["decision"], t.info["cost"]
        x, y = t.info["position"]
        out.append({
            "episode": t.info.get("episode", 0), "slot": t.info["slot"], "round": t.info["slot"] // I,
            "uav": t.agent_id, "x_m": x, "y_m": y, "h_m": scn.uavs[t.agent_id].altitude_m,
            "speed_mps": t.info["speed"], "heading_rad": t.info["heading"], "subarea": t.info["subarea"],
            "target": d.target, "ger": d.ger, "local_fraction": d.local_fraction, "alloc_flops": d.alloc_flops,
            "reward": t.reward, "q_joules": t.info["q_before"] * energy_unit_j,
            "y_k": t.info["y"] * energy_unit_j, "cost": {k: getattr(c, k) for k in c.__dataclass_fields__ if k != "flags"},
            "flags": [v.constraint for v in t.info["flags"]],
        })
    return out


def write_trace(path, scn, transitions, energy_unit_j: float = 1e3) -> None:
    recs = trace_records(scn, transitions, energy_unit_j)
    maps = [{"slot": m.slot, "remaining_flops": m.remaining_flops} for m in resource_maps(scn, transitions)]
    Path(path).write_text(json.dumps({"slots": recs, "resource_map": maps}, sort_keys=True) + "\n")


def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def emit_plotdata(run_dir, out_dir=None, window: int = 30) -> list[Path]:
    """Write plot-ready CSVs for a train run (learning_curve.csv, trace.json, ...)
    or a sweep run (metrics.csv). Returns the written paths."""
    from ..maddpg import moving_average
    from ..scenario import load_scenario

    run = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run / "plotdata"
    curve_p, sweep_p = run / "learning_curve.csv", run / "metrics.csv"
    if not curve_p.exists() and not sweep_p.exists():
        raise MissingArtifact(f"{run}: no learning_curve.csv or metrics.csv")
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name, text):
        p = out / name
        p.write_text(text)
        written.append(p)

    if sweep_p.exists():
        rows = _read_csv(sweep_p)
        var = rows[0]["var"] if rows else "value"
        put(f"latency_vs_{var}.csv", _csv([[r["value"], r["mean_latency_s"], r["mean_energy_j"], r["mean_q"]]
                                           for r in rows], [var, "mean_latency_s", "mean_energy_j", "mean_q"]))
    if curve_p.exists():
        rows = _read_csv(curve_p)
        rew = [float(r["mean_reward"]) for r in rows]
        ma = moving_average(rew, window) if rows else []
        pad = len(rew) - len(ma)
        put("reward_curve.csv", _csv([[r["episode"], r["mean_reward"], (ma[i - pad] if i >= pad else "")]
                                      for i, r in enumerate(rows)], ["episode", "mean_reward", "moving_avg"]))
        put("queue_energy.csv", _csv([[r["episode"], r["mean_energy_j"], r["mean_q"]] for r in rows],
                                     ["episode", "mean_energy_j", "mean_q"]))
        trace_p = run / "trace.json"
        if not trace_p.exists():
            raise MissingArtifact(f"{run}: trace.json")
        trace = json.loads(trace_p.read_text())
        recs = trace["slots"]
        put("trajectory.csv", trajectories_csv(
            [(r["slot"], r["uav"], r["x_m"], r["y_m"], r["h_m"], r["speed_mps"], r["heading_rad"]) for r in recs]))
        put("queue_trace.csv", queue_csv([(r["slot"], r["uav"], r["q_joules"], r["y_k"]) for r in recs]))
        put("costs.csv", costs_csv([(r["slot"], r["uav"], SlotCost(**r["cost"])) for r in recs]))
        seen, sub_rows = set(), []
        for r in recs:
            k = (r["round"], r["uav"])
            if k not in seen:
                seen.add(k)
                sub_rows.append([r["round"], r["uav"], r["subarea"]])
        put("subarea_rounds.csv", _csv(sorted(sub_rows), ["round", "uav", "subarea"]))
        scn = load_scenario((run / "scenario.scn.json").read_bytes())
        rm_rows = []
        for m in trace["resource_map"]:
            for j, g in enumerate(scn.gers):
                rem = m["remaining_flops"][j]
                rm_rows.append([m["slot"], j, g.position_m[0], g.position_m[1], g.f_max_flops, rem,
                                g.f_max_flops - rem])
        put("resource_map.csv", _csv(rm_rows, ["slot", "ger", "x_m", "y_m", "f_max_flops", "remaining_flops",
                                               "allocated_flops"]))
    return written
