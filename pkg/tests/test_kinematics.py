import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from skyrescue.kinematics import (
    SpeedOutOfRange, Trajectory, Trapped, UavKinState, advance, check_mobility, detect_distances,
    route_toward, segment_hits_circle, slot_distance, trajectories_csv,
)
from skyrescue.scenario import GenConfig, RiskSource, generate_scenario

coords = st.floats(-1e4, 1e4, allow_nan=False)


def test_slot_distance_examples():
    assert slot_distance((0, 0), (3, 4)) == 5.0
    assert slot_distance((7, 7), (7, 7)) == 0.0
    assert slot_distance((0, 0), (30 * 1.0, 0)) == 30.0


@given(coords, coords, coords, coords)
def test_slot_distance_symmetric(a, b, c, d):
    assert slot_distance((a, b), (c, d)) == slot_distance((c, d), (a, b)) >= 0


def test_advance_examples():
    s = UavKinState(0.0, 0.0, 50.0)
    n = advance(s, 0.0, 10.0, 1.0, 30.0)
    assert (n.x, n.y, n.h) == pytest.approx((0.0, 10.0, 50.0))
    assert advance(s, 1.0, 0.0, 1.0).position == (0.0, 0.0)
    e = advance(s, math.pi / 2, 30.0, 2.0, 30.0)
    assert e.x == pytest.approx(60.0) and e.y == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(SpeedOutOfRange):
        advance(s, 0.0, 31.0, 1.0, 30.0)
    with pytest.raises(SpeedOutOfRange):
        advance(s, 0.0, -1.0, 1.0, 30.0)


@given(h=st.floats(-10, 10), v=st.floats(0, 30), dt=st.floats(0.1, 100))
def test_advance_bounded(h, v, dt):
    s = UavKinState(1.0, 2.0, 50.0)
    n = advance(s, h, v, dt, 30.0)
    assert n.h == 50.0
    assert slot_distance(s.position, n.position) <= 30.0 * dt * (1 + 1e-9)
    assert 0 <= n.heading_rad < 2 * math.pi


@pytest.fixture(scope="module")
def line_world():
    return generate_scenario(GenConfig(n_uavs=2, rounds=1, n_gers=2, n_risks=0, slots_per_round=3, slot_s=1.0), 0)


def test_mobility_examples(line_world):
    scn = line_world
    still = Trajectory((0, 0), (0, 0), [(0, 0)] * 4)
    assert check_mobility([still], scn) == []
    D = scn.safety_distance_m
    a = Trajectory((0, 0), (0, 3), [(0, i) for i in range(4)])
    b = Trajectory((D / 2, 0), (D / 2, 3), [(D / 2, i) for i in range(4)])
    vs = check_mobility([a, b], scn)
    assert [v.constraint for v in vs].count("18k") == 4
    fast = Trajectory((0, 0), (31, 0), [(0, 0), (31, 0)])
    assert [v.constraint for v in check_mobility([fast], scn)] == ["18i"]


def _brute(trajs, scn):
    out = set()
    for u, t in enumerate(trajs):
        spec = scn.uavs[u]
        lo, hi = scn.time.slot_s * spec.d_min_m / scn.time.horizon_s, scn.time.slot_s * spec.v_max_mps
        pts = [t.start, *t.positions]
        ds = [math.dist(p, q) for p, q in zip(pts[:-1], pts[1:])]
        out |= {("18i", u, i) for i, d in enumerate(ds) if d < lo - 1e-9 or d > hi + 1e-9}
        if sum(ds) > spec.l_max_m + 1e-9:
            out.add(("18j", u, -1))
    for i in range(len(trajs[0].positions)):
        for u in range(len(trajs)):
            for v in range(u + 1, len(trajs)):
                if math.dist(trajs[u].positions[i], trajs[v].positions[i]) < scn.safety_distance_m:
                    out.add(("18k", u * 10 + v, i))
    return out


@given(st.lists(st.tuples(st.floats(0, 200), st.floats(0, 200)), min_size=8, max_size=8))
def test_check_mobility_matches_brute_force(line_world, pts):
    scn = line_world
    trajs = [Trajectory(pts[0], pts[3], pts[1:4]), Trajectory(pts[4], pts[7], pts[5:8])]
    got = set()
    for v in check_mobility(trajs, scn):
        if v.constraint == "18i":
            got.add(("18i", int(v.entities[0][3:]), int(v.entities[1][4:])))
        elif v.constraint == "18j":
            got.add(("18j", int(v.entities[0][3:]), -1))
        else:
            got.add(("18k", int(v.entities[0][3:]) * 10 + int(v.entities[1][3:]), int(v.entities[2][4:])))
    assert got == _brute(trajs, scn)


def test_route_unobstructed():
    h, v, dd = route_toward(UavKinState(0, 0, 50), (0, 60), [], 1.0, 30.0)
    assert h == pytest.approx(0.0) and v == 30.0 and dd == []


def test_route_deflects_around_risk():
    risk = RiskSource((0.0, 500.0), 100.0)
    h, v, _ = route_toward(UavKinState(0, 0, 50), (0, 2000), [risk], 60.0, 30.0, margin_m=50.0)
    q = (1800 * math.sin(h), 1800 * math.cos(h))
    assert not segment_hits_circle((0, 0), q, risk.position_m, 150.0)
    assert h != pytest.approx(0.0)


def test_route_trapped():
    ring = [RiskSource((100 * math.sin(a), 100 * math.cos(a)), 40.0) for a in np.linspace(0, 2 * math.pi, 24, endpoint=False)]
    with pytest.raises(Trapped):
        route_toward(UavKinState(0, 0, 50), (0, 5000), ring, 60.0, 30.0, margin_m=20.0)


def test_detect_midpoints_by_hand():
    risk = RiskSource((0.0, 30.0), 1.0)
    got = detect_distances((0, 0), (40, 0), [risk], 4, math.inf)
    mids = [5.0, 15.0, 25.0, 35.0]
    assert got == [pytest.approx([math.hypot(x, 30.0) for x in mids])]
    assert detect_distances((0, 0), (40, 0), [risk], 4, 10.0) == []


@given(x=st.floats(-5000, 5000), y=st.floats(-5000, 5000))
def test_route_converges_without_obstacles(x, y):
    s = UavKinState(0.0, 0.0, 50.0)
    target = (x, y)
    d0 = slot_distance(s.position, target)
    for _ in range(400):
        h, v, _ = route_toward(s, target, [], 10.0, 30.0)
        s = advance(s, h, v, 10.0, 30.0)
        d1 = slot_distance(s.position, target)
        assert d1 <= d0 + 1e-9
        d0 = d1
        if d1 <= 300.0:
            break
    assert d0 <= 300.0


def test_trajectory_csv_header():
    text = trajectories_csv([(0, 1, 2.0, 3.0, 50.0, 30.0, 0.5)])
    assert text.splitlines()[0] == "slot,uav_id,x_m,y_m,h_m,speed_mps,heading_rad"
