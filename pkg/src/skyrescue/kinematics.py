"""Slot-level UAV motion at fixed altitude, mobility constraint checks and a
deterministic obstacle-deflecting waypoint router.

Headings are measured clockwise from north: heading 0 moves +y, pi/2 moves +x.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .scenario import RiskSource, Scenario, Violation

TWO_PI = 2.0 * math.pi


class SpeedOutOfRange(ValueError):
    pass


class Trapped(RuntimeError):
    pass


@dataclass(frozen=True)
class UavKinState:
    x: float
    y: float
    h: float
    heading_rad: float = 0.0
    speed_mps: float = 0.0

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass
class Trajectory:
    start: tuple[float, float]
    end: tuple[float, float]
    positions: list  # slot positions L_u(t_1..t_I), each (x, y)

    def distances(self) -> np.ndarray:
        pts = np.asarray([self.start, *self.positions], dtype=float)
        return np.hypot(*np.diff(pts, axis=0).T) if len(pts) > 1 else np.zeros(0)


def slot_distance(a, b) -> float:
    return math.hypot(b[0] - a[0], b[1] - a[1])


def wrap_heading(h: float) -> float:
    """Map to [0, 2pi); tiny negatives would otherwise round to exactly 2pi."""
    w = h % TWO_PI
    return 0.0 if w >= TWO_PI else w


def advance(state: UavKinState, heading_rad: float, speed_mps: float, delta_s: float,
            v_max: float | None = None) -> UavKinState:
    if speed_mps < 0 or (v_max is not None and speed_mps > v_max * (1 + 1e-12)):
        raise SpeedOutOfRange(f"speed {speed_mps} outside [0, {v_max}]")
    step = speed_mps * delta_s
    return replace(
        state,
        x=state.x + step * math.sin(heading_rad),
        y=state.y + step * math.cos(heading_rad),
        heading_rad=wrap_heading(heading_rad),
        speed_mps=speed_mps,
    )


def check_mobility(trajs: list[Trajectory], scn: Scenario) -> list[Violation]:
    """Flags (18i) per-slot step bounds, (18j) path length, (18k) pairwise separation."""
    out: list[Violation] = []
    delta = scn.time.slot_s
    horizon = scn.time.horizon_s
    for u, tr in enumerate(trajs):
        spec = scn.uavs[u]
        lo = delta * spec.d_min_m / horizon
        hi = delta * spec.v_max_mps
        d = tr.distances()
        for i, di in enumerate(d):
            if di < lo - 1e-9 or di > hi + 1e-9:
                out.append(Violation("18i", (f"uav{u}", f"slot{i}"), f"step {di:.3f} m outside [{lo:.3f}, {hi:.3f}]"))
        if d.sum() > spec.l_max_m + 1e-9:
            out.append(Violation("18j", (f"uav{u}",), f"path {d.sum():.1f} m exceeds {spec.l_max_m:.1f} m"))
    n_slots = min((len(t.positions) for t in trajs), default=0)
    for i in range(n_slots):
        for u in range(len(trajs)):
            for v in range(u + 1, len(trajs)):
                if slot_distance(trajs[u].positions[i], trajs[v].positions[i]) < scn.safety_distance_m:
                    out.append(Violation("18k", (f"uav{u}", f"uav{v}", f"slot{i}"), "separation below safety distance"))
    return out


def segment_hits_circle(p, q, center, radius) -> bool:
    px, py = p
    dx, dy = q[0] - px, q[1] - py
    fx, fy = px - center[0], py - center[1]
    a = dx * dx + dy * dy
    if a == 0.0:
        return fx * fx + fy * fy < radius * radius
    t = max(0.0, min(1.0, -(fx * dx + fy * dy) / a))
    cx, cy = fx + t * dx, fy + t * dy
    return cx * cx + cy * cy < radius * radius


def _heading_to(p, q) -> float:
    return math.atan2(q[0] - p[0], q[1] - p[1]) % TWO_PI


def _ang_diff(a: float, b: float) -> float:
    return abs((a - b + math.pi) % TWO_PI - math.pi)


def detect_distances(p, q, risks, m: int, sensing_range: float) -> list[list[float]]:
    """Midpoint distances of the m equal segments of p->q to every risk in range."""
    out = []
    for r in risks:
        if slot_distance(p, r.position_m) > sensing_range:
            continue
        ds = []
        for k in range(m):
            f = (k + 0.5) / m
            mid = (p[0] + f * (q[0] - p[0]), p[1] + f * (q[1] - p[1]))
            ds.append(slot_distance(mid, r.position_m))
        out.append(ds)
    return out


def route_toward(state: UavKinState, target, risks: list[RiskSource], delta_s: float, v_max: float,
                 margin_m: float = 50.0, m: int = 4, sensing_range: float = math.inf,
                 n_probe: int = 72):
    """Greedy step toward ``target``, deflecting tangentially around inflated risk cylinders.

    Returns ``(heading, speed, detect_distances)``.
    """
    p = state.position
    dist = slot_distance(p, target)
    speed = min(v_max, dist / delta_s)
    step = speed * delta_s
    want = _heading_to(p, target) if dist > 0 else state.heading_rad

    def endpoint(h):
        return (p[0] + step * math.sin(h), p[1] + step * math.cos(h))

    def clear(h):
        q = endpoint(h)
        return not any(segment_hits_circle(p, q, r.position_m, r.radius_m + margin_m) for r in risks)

    heading = want
    if step > 0 and not clear(want):
        cands = []
        for r in risks:
            rr = r.radius_m + margin_m
            dc = slot_distance(p, r.position_m)
            if dc <= rr:
                # inside the inflated zone: leave radially
                cands.append(_heading_to(r.position_m, p))
                continue
            base = _heading_to(p, r.position_m)
            half = math.asin(min(1.0, rr / dc))
            cands += [(base + half + 1e-6) % TWO_PI, (base - half - 1e-6) % TWO_PI]
        cands.sort(key=lambda h: (_ang_diff(h, want), h))
        found = next((h for h in cands if clear(h)), None)
        if found is None:
            probes = sorted(((want + k * TWO_PI / n_probe) % TWO_PI for k in range(1, n_probe)),
                            key=lambda h: (_ang_diff(h, want), h))
            found = next((h for h in probes if clear(h)), None)
        if found is None:
            raise Trapped(f"no feasible heading from {p}")
        heading = found
    q = (p[0] + step * math.sin(heading), p[1] + step * math.cos(heading))
    return heading, speed, detect_distances(p, q, risks, m, sensing_range)


def trajectories_csv(rows) -> str:
    """rows: iterable of (slot, uav_id, x_m, y_m, h_m, speed_mps, heading_rad)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "uav_id", "x_m", "y_m", "h_m", "speed_mps", "heading_rad"])
    for r in rows:
        w.writerow(r)
    return buf.getvalue()
