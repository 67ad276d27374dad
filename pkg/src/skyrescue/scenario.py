"""World description: entities, physical constants, generation, validation and
the ``.scn.json`` document format.

All quantities are SI internally. Documents may carry a handful of
alternate-unit keys (``*_dbm``, ``*_mw``, ``*_wh``, ``*_gb``, ``*_tflops``,
``*_km``) which are converted on load; :func:`save_scenario` always writes
the canonical SI keys.
"""
from __future__ import annotations

import dataclasses
import json
import math
import typing
from dataclasses import dataclass, field

import numpy as np

Point = typing.Tuple[float, float]

GB_BITS = 8e9
TFLOPS = 1e12
WH_J = 3600.0


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0) * 1e-3


class ScenarioError(ValueError):
    pass


class ParseError(ScenarioError):
    """Malformed document; ``path`` names the offending field."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}" if path else msg)
        self.path = path


class InvariantViolation(ScenarioError):
    def __init__(self, violations: list["Violation"]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


class GenerationError(ScenarioError):
    """``kind`` is ``invalid-count`` or ``region-too-small``."""

    def __init__(self, kind: str, msg: str):
        super().__init__(f"{kind}: {msg}")
        self.kind = kind


@dataclass(frozen=True)
class Violation:
    constraint: str
    entities: tuple = ()
    detail: str = ""

    def __str__(self) -> str:
        ents = ",".join(str(e) for e in self.entities)
        return f"[{self.constraint}] {self.detail} ({ents})" if ents else f"[{self.constraint}] {self.detail}"


@dataclass(frozen=True)
class PhysConstants:
    carrier_freq_hz: float = 2e9
    light_speed_mps: float = 299_792_458.0
    ref_distance_m: float = 1.0
    pathloss_exp_los: float = 2.0
    pathloss_exp_nlos: float = 2.8
    shadow_std_los_db: float = 1.0
    shadow_std_nlos_db: float = 3.0
    nakagami_shape_los: float = 3.0
    nakagami_shape_nlos: float = 1.0
    mean_rx_power: float = 1.0
    bandwidth_hz: float = 1e10
    tx_power_w: float = 0.1
    noise_power_w: float = dbm_to_w(-115.0)
    capacitance_coeff: float = 1e-35
    propulsion_coeff: float = 5.0
    detect_unit_energy: float = 1e-3
    detect_segments: int = 4
    los_param_a: float = 9.61
    los_param_b: float = 0.16
    sensing_range_m: float = 3000.0
    cycles_per_flop: float = 1.0


@dataclass(frozen=True)
class UavSpec:
    start_m: Point
    end_m: Point
    altitude_m: float
    compute_flops: float
    e_max_j: float
    v_max_mps: float
    d_min_m: float
    l_max_m: float


@dataclass(frozen=True)
class GerSpec:
    position_m: Point
    f_max_flops: float


@dataclass(frozen=True)
class AirshipSpec:
    position_m: Point
    altitude_m: float
    compute_flops: float


@dataclass(frozen=True)
class Subarea:
    bounds_m: typing.Tuple[float, float, float, float]  # x0, y0, x1, y1
    center_m: Point
    data_bits: float
    intensity_cycles_per_bit: float
    mean_ger_flops: float

    def contains(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds_m
        return x0 <= p[0] < x1 and y0 <= p[1] < y1


@dataclass(frozen=True)
class RiskSource:
    position_m: Point
    radius_m: float


@dataclass(frozen=True)
class TimeSpec:
    slots_per_round: int
    slot_s: float
    rounds: int

    @property
    def slots_per_episode(self) -> int:
        return self.slots_per_round * self.rounds

    @property
    def horizon_s(self) -> float:
        return self.slots_per_episode * self.slot_s


@dataclass(frozen=True)
class Scenario:
    region_m: Point
    uavs: typing.Tuple[UavSpec, ...]
    gers: typing.Tuple[GerSpec, ...]
    airship: AirshipSpec
    subareas: typing.Tuple[Subarea, ...]
    risk_sources: typing.Tuple[RiskSource, ...]
    time: TimeSpec
    consts: PhysConstants
    energy_budget_j: float
    safety_distance_m: float
    seed: int

    def subarea_of(self, p) -> int:
        for b, sa in enumerate(self.subareas):
            if sa.contains(p):
                return b
        # points on the far region edge belong to the last row/col cell
        x = min(p[0], self.region_m[0] * (1 - 1e-12))
        y = min(p[1], self.region_m[1] * (1 - 1e-12))
        for b, sa in enumerate(self.subareas):
            if sa.contains((x, y)):
                return b
        return -1

    def gers_in(self, b: int) -> list[int]:
        return [j for j, g in enumerate(self.gers) if self.subareas[b].contains(g.position_m)]

    @property
    def max_gers_per_subarea(self) -> int:
        return max((len(self.gers_in(b)) for b in range(len(self.subareas))), default=0)


@dataclass
class GenConfig:
    n_uavs: int = 3
    rounds: int = 5
    n_subareas: int | None = None  # defaults to n_uavs * rounds
    n_gers: int = 75
    region_m: Point = (50_000.0, 50_000.0)
    slots_per_round: int = 5
    slot_s: float = 60.0
    data_gb: Point = (12.5, 125.0)
    intensity: Point = (200.0, 500.0)
    ger_tflops: Point = (0.0, 10.0)
    uav_tflops: float = 5.0
    uav_altitude_m: float = 50.0
    e_max_wh: float = 200.0
    v_max_mps: float = 30.0
    d_min_m: float = 0.0
    airship_altitude_m: float = 600.0
    airship_tflops: float = 20.0
    n_risks: int = 10
    risk_radius_m: float = 300.0
    safety_distance_m: float = 100.0
    energy_budget_j: float | None = None  # defaults to e_max / slots per episode
    consts: PhysConstants = field(default_factory=PhysConstants)


def _grid_shape(n: int) -> tuple[int, int]:
    rows = int(math.isqrt(n))
    while n % rows:
        rows -= 1
    return rows, n // rows


def generate_scenario(config: GenConfig, seed: int) -> Scenario:
    U = config.n_uavs
    B = config.n_subareas if config.n_subareas is not None else U * config.rounds
    if U < 1:
        raise GenerationError("invalid-count", "need at least one UAV")
    if config.rounds < 1 or B < 1 or B % (U * config.rounds):
        raise GenerationError("invalid-count", f"{B} subareas not divisible by U*rounds={U * config.rounds}")
    if B != U * config.rounds:
        raise GenerationError("invalid-count", f"{B} subareas != U*rounds={U * config.rounds}")
    W, Hh = config.region_m
    if W / U <= config.safety_distance_m:
        raise GenerationError("region-too-small", "UAV spacing below safety distance")

    rng = np.random.default_rng(seed)
    rows, cols = _grid_shape(B)
    cw, ch = W / cols, Hh / rows

    # GERs: equal share per subarea, remainder to random cells
    counts = np.full(B, config.n_gers // B)
    extra = rng.choice(B, size=config.n_gers % B, replace=False)
    counts[extra] += 1
    gers = []
    cells = []
    for b in range(B):
        r, c = divmod(b, cols)
        x0, y0 = c * cw, r * ch
        cells.append((x0, y0, x0 + cw, y0 + ch))
        for _ in range(counts[b]):
            pos = (float(x0 + rng.uniform(0.05, 0.95) * cw), float(y0 + rng.uniform(0.05, 0.95) * ch))
            f = float(rng.uniform(*config.ger_tflops) * TFLOPS)
            gers.append(GerSpec(position_m=pos, f_max_flops=f))

    subareas = []
    for b, (x0, y0, x1, y1) in enumerate(cells):
        fs = [g.f_max_flops for g in gers if x0 <= g.position_m[0] < x1 and y0 <= g.position_m[1] < y1]
        subareas.append(
            Subarea(
                bounds_m=(float(x0), float(y0), float(x1), float(y1)),
                center_m=(float((x0 + x1) / 2), float((y0 + y1) / 2)),
                data_bits=float(rng.uniform(*config.data_gb) * GB_BITS),
                intensity_cycles_per_bit=float(rng.uniform(*config.intensity)),
                mean_ger_flops=float(np.mean(fs)) if fs else 0.0,
            )
        )

    T = config.slots_per_round * config.rounds
    uavs = []
    for u in range(U):
        start = (float((u + 0.5) * W / U), float(Hh / 2))
        uavs.append(
            UavSpec(
                start_m=start,
                end_m=start,
                altitude_m=config.uav_altitude_m,
                compute_flops=config.uav_tflops * TFLOPS,
                e_max_j=config.e_max_wh * WH_J,
                v_max_mps=config.v_max_mps,
                d_min_m=config.d_min_m,
                l_max_m=config.v_max_mps * config.slot_s * T,
            )
        )

    keepout = [g.position_m for g in gers] + [u.start_m for u in uavs]
    clearance = config.risk_radius_m * 2.0 + config.safety_distance_m
    risks = []
    tries = 0
    while len(risks) < config.n_risks:
        tries += 1
        if tries > 10_000:
            raise GenerationError("region-too-small", "cannot place risk sources clear of GERs and UAVs")
        p = (float(rng.uniform(0, W)), float(rng.uniform(0, Hh)))
        if all(math.dist(p, q) > clearance for q in keepout):
            risks.append(RiskSource(position_m=p, radius_m=config.risk_radius_m))

    budget = config.energy_budget_j
    if budget is None:
        budget = config.e_max_wh * WH_J / T

    return Scenario(
        region_m=(float(W), float(Hh)),
        uavs=tuple(uavs),
        gers=tuple(gers),
        airship=AirshipSpec(
            position_m=(float(W / 2), float(Hh / 2)),
            altitude_m=config.airship_altitude_m,
            compute_flops=config.airship_tflops * TFLOPS,
        ),
        subareas=tuple(subareas),
        risk_sources=tuple(risks),
        time=TimeSpec(slots_per_round=config.slots_per_round, slot_s=config.slot_s, rounds=config.rounds),
        consts=config.consts,
        energy_budget_j=float(budget),
        safety_distance_m=config.safety_distance_m,
        seed=int(seed),
    )


# -- validation ---------------------------------------------------------------

def _rect_overlap(a, b) -> float:
    w = min(a[2], b[2]) - max(a[0], b[0])
    h = min(a[3], b[3]) - max(a[1], b[1])
    return max(w, 0.0) * max(h, 0.0)


def validate(scn: Scenario) -> list[Violation]:
    """Static invariants of a scenario. Returns an empty list when all hold."""
    out: list[Violation] = []
    c = scn.consts
    for f in dataclasses.fields(c):
        v = getattr(c, f.name)
        if not isinstance(v, bool) and not v > 0:
            out.append(Violation("consts", (f.name,), "must be strictly positive"))
    if c.pathloss_exp_nlos < c.pathloss_exp_los:
        out.append(Violation("consts", ("pathloss_exp_nlos",), "NLoS exponent below LoS exponent"))
    for name in ("nakagami_shape_los", "nakagami_shape_nlos"):
        if getattr(c, name) < 0.5:
            out.append(Violation("consts", (name,), "Nakagami shape below 0.5"))

    if len(scn.uavs) < 1:
        out.append(Violation("uav-count", (), "no UAVs"))
    if len(scn.subareas) != len(scn.uavs) * scn.time.rounds:
        out.append(Violation("subarea-count", (), f"{len(scn.subareas)} subareas for "
                                                   f"{len(scn.uavs)} UAVs x {scn.time.rounds} rounds"))

    W, H = scn.region_m
    area = 0.0
    for b, sa in enumerate(scn.subareas):
        x0, y0, x1, y1 = sa.bounds_m
        if not (0 <= x0 < x1 <= W and 0 <= y0 < y1 <= H):
            out.append(Violation("subarea-coverage", (f"subarea{b}",), "outside the rescue region"))
        area += (x1 - x0) * (y1 - y0)
        for b2 in range(b + 1, len(scn.subareas)):
            if _rect_overlap(sa.bounds_m, scn.subareas[b2].bounds_m) > 0:
                out.append(Violation("subarea-overlap", (f"subarea{b}", f"subarea{b2}"), "subarea overlap"))
    if scn.subareas and not math.isclose(area, W * H, rel_tol=1e-9):
        out.append(Violation("subarea-coverage", (), "subareas do not tile the region"))

    for j, g in enumerate(scn.gers):
        n_in = sum(sa.contains(g.position_m) for sa in scn.subareas)
        if n_in != 1:
            out.append(Violation("ger-subarea", (f"ger{j}",), f"GER lies in {n_in} subareas"))
        if g.f_max_flops < 0:
            out.append(Violation("18g", (f"ger{j}",), "negative GER compute capacity"))

    for u, spec in enumerate(scn.uavs):
        if spec.v_max_mps <= 0:
            out.append(Violation("18i", (f"uav{u}",), "non-positive speed limit"))
        elif spec.d_min_m / scn.time.horizon_s > spec.v_max_mps:
            out.append(Violation("18i", (f"uav{u}",), "minimum step exceeds maximum step"))
        if spec.l_max_m < 0:
            out.append(Violation("18j", (f"uav{u}",), "negative path budget"))
        if spec.compute_flops <= 0 or spec.e_max_j <= 0:
            out.append(Violation("uav-spec", (f"uav{u}",), "non-positive compute or energy"))
    for u in range(len(scn.uavs)):
        for v in range(u + 1, len(scn.uavs)):
            if math.dist(scn.uavs[u].start_m, scn.uavs[v].start_m) < scn.safety_distance_m:
                out.append(Violation("18k", (f"uav{u}", f"uav{v}"), "start positions closer than safety distance"))
    if scn.energy_budget_j <= 0:
        out.append(Violation("18a", (), "non-positive energy budget"))
    return out


# -- serialization --------------------------------------------------------------

_ALT_UNITS = {
    "_dbm": ("_w", dbm_to_w),
    "_mw": ("_w", lambda v: v * 1e-3),
    "_wh": ("_j", lambda v: v * WH_J),
    "_gb": ("_bits", lambda v: v * GB_BITS),
    "_tflops": ("_flops", lambda v: v * TFLOPS),
    "_km": ("_m", lambda v: v * 1e3),
}


def _convert(v, fn):
    if isinstance(v, list):
        return [_convert(x, fn) for x in v]
    return fn(v)


def _normalize_keys(doc: dict, path: str) -> dict:
    out = {}
    for k, v in doc.items():
        key, val = k, v
        for suf, (canon, fn) in _ALT_UNITS.items():
            if k.endswith(suf):
                key = k[: -len(suf)] + canon
                try:
                    val = _convert(v, fn)
                except TypeError:
                    raise ParseError(f"{path}{k}", "expected a number") from None
                break
        if key in out:
            raise ParseError(f"{path}{k}", "field given twice in different units")
        out[key] = val
    return out


def _to_doc(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_doc(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_doc(x) for x in obj]
    return obj


def _from_doc(tp, doc, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(doc, dict):
            raise ParseError(path, "expected an object")
        doc = _normalize_keys(doc, path + "." if path else "")
        hints = typing.get_type_hints(tp)
        names = {f.name for f in dataclasses.fields(tp)}
        for k in doc:
            if k not in names:
                raise ParseError(f"{path}.{k}" if path else k, "unknown field")
        kwargs = {}
        for f in dataclasses.fields(tp):
            sub = f"{path}.{f.name}" if path else f.name
            if f.name not in doc:
                raise ParseError(sub, "missing field")
            kwargs[f.name] = _from_doc(hints[f.name], doc[f.name], sub)
        return tp(**kwargs)
    if origin is tuple:
        args = typing.get_args(tp)
        if not isinstance(doc, list):
            raise ParseError(path, "expected an array")
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_from_doc(args[0], x, f"{path}[{i}]") for i, x in enumerate(doc))
        if len(doc) != len(args):
            raise ParseError(path, f"expected {len(args)} elements")
        return tuple(_from_doc(a, x, f"{path}[{i}]") for i, (a, x) in enumerate(zip(args, doc)))
    if tp is bool:
        if not isinstance(doc, bool):
            raise ParseError(path, "expected a boolean")
        return doc
    if tp is int:
        if isinstance(doc, bool) or not isinstance(doc, int):
            raise ParseError(path, "expected an integer")
        return doc
    if tp is float:
        if isinstance(doc, bool) or not isinstance(doc, (int, float)):
            raise ParseError(path, "expected a number")
        return float(doc)
    raise ParseError(path, f"unsupported type {tp!r}")


def save_scenario(scn: Scenario) -> bytes:
    return (json.dumps(_to_doc(scn), indent=1, sort_keys=True) + "\n").encode("utf-8")


def load_scenario(document: bytes | str) -> Scenario:
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno}", e.msg) from None
    scn = _from_doc(Scenario, doc, "")
    bad = validate(scn)
    if bad:
        raise InvariantViolation(bad)
    return scn
