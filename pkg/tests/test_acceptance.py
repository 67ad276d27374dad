"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records a PASS/FAIL line (see ``acceptance_report``); the lines are
repeated in the pytest terminal summary.
"""
import time

import numpy as np
import pytest

from acceptance_report import report
from gradcheck import fd_max_rel, random_minibatch
from skyrescue import diffusion as dif
from skyrescue.assignment import hungarian_solve
from skyrescue.channel import link_rng, link_sample, sample_fading, sample_shadowing
from skyrescue.env import EnvConfig, RescueEnv
from skyrescue.harness import oracles
from skyrescue.maddpg import Critic, DiffusionActor, Trainer, TrainerConfig, actor_objective_grads, \
    critic_update, encode_action, moving_average
from skyrescue.scenario import GenConfig, PhysConstants, generate_scenario

pytestmark = pytest.mark.acceptance

E2E_SEEDS = (0, 1, 2)
E2E_EPISODES = 300
E2E_HIDDEN = (64, 64)
E2E_BATCH = 64


# -- 1. Hungarian exactness ------------------------------------------------------------


def _edge_cases():
    yield np.zeros((5, 5))
    yield np.ones((4, 6))
    yield np.array([[1.0, 2.0], [2.0, 1.0]])
    yield np.tile(np.arange(6.0), (6, 1))  # every row identical
    yield np.tile(np.arange(6.0)[:, None], (1, 6))  # every column identical
    z = np.random.default_rng(1).integers(0, 4, size=(6, 6)).astype(float)
    z[2] = 0.0  # zero row
    yield z
    z = np.random.default_rng(2).integers(0, 4, size=(5, 7)).astype(float)
    z[:, 3] = 0.0  # zero column
    yield z
    yield np.full((7, 7), -3.0)
    yield np.eye(7)
    yield 1.0 - np.eye(7)
    yield np.zeros((1, 1))
    yield np.zeros((0, 3))


def test_criterion_1_hungarian_exact():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    bad = 0
    mats = list(_edge_cases())
    for k in range(1000):
        n = int(rng.integers(1, 8))
        m = int(rng.integers(n, 8))
        if k % 2:
            C = rng.integers(-4, 5, size=(n, m)).astype(float)  # many ties
        else:
            C = rng.uniform(-10, 10, size=(n, m))
        mats.append(C)
    for C in mats:
        a, total, _, _ = hungarian_solve(C)
        ok = len(set(a)) == len(a) and total == oracles.oracle_assignment(C)
        bad += not ok
    dt = time.perf_counter() - t0
    report(1, bad == 0 and dt < 10, "Hungarian exactness",
           f"{len(mats) - bad}/{len(mats)} exact matches in {dt:.1f} s")


# -- 2. Hungarian complexity ---------------------------------------------------------------


def test_criterion_2_hungarian_cubic():
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    med = {}
    for n in (100, 400):
        ts = []
        for _ in range(20):
            C = rng.uniform(0, 1, size=(n, n))
            s = time.perf_counter()
            hungarian_solve(C)
            ts.append(time.perf_counter() - s)
        med[n] = float(np.median(ts))
    ratio = med[400] / med[100]
    dt = time.perf_counter() - t0
    report(2, ratio <= 27 and dt < 60, "Hungarian O(n^3) scaling",
           f"median {med[100] * 1e3:.1f} ms -> {med[400] * 1e3:.1f} ms, ratio {ratio:.1f} <= 27 ({dt:.0f} s)")


# -- 3. per-slot optimality ----------------------------------------------------------------


def test_criterion_3_perslot_optimal():
    rng = np.random.default_rng(33)
    t0 = time.perf_counter()
    agree, worlds = 0, 100
    for w in range(worlds):
        scn = generate_scenario(GenConfig(n_uavs=2, rounds=1, n_gers=12, n_risks=3), int(rng.integers(2**31)))
        env = RescueEnv(scn, EnvConfig(V=float(rng.uniform(0.1, 5))), seed=w)
        env.reset(int(rng.integers(1000)))
        u = int(rng.integers(env.U))
        env.queues[u].q_value = float(rng.choice([0.0, rng.uniform(0, 50)]))
        live = np.flatnonzero(env.obs[u].action_mask)
        targets = [0] + [int(t) for t in rng.permutation(live[live > 0])[:2]]
        assert len(targets) == 3
        ref = oracles.oracle_perslot(env, u, oracles.FRACTIONS, targets)
        fast = oracles.perslot_choice(env, u, oracles.FRACTIONS, targets)
        agree += ref == fast
    dt = time.perf_counter() - t0
    report(3, agree == worlds and dt < 10, "per-slot argmin optimality",
           f"{agree}/{worlds} worlds agree on 33-candidate grids in {dt:.1f} s")


# -- shared control runs (4, 5, 10) ----------------------------------------------------------


@pytest.fixture(scope="session")
def stability_run(desk):
    t0 = time.perf_counter()
    rep = oracles.stability_check(desk, slots=10_000, V=0.5, margin=1.2, seed=0, check=True)
    rep["elapsed"] = time.perf_counter() - t0
    return rep


@pytest.fixture(scope="session")
def v_rows(desk):
    t0 = time.perf_counter()
    rows = oracles.v_sweep(desk, (0.1, 0.5, 1.0, 5.0), slots=2000, margin=1.2, seed=0, check=True)
    return rows, time.perf_counter() - t0


def test_criterion_4_lyapunov_stability(stability_run):
    r = stability_run
    worst = max(r["per_uav"], key=lambda p: p["ratio"])
    report(4, r["max_ratio"] < 0.01 and r["elapsed"] < 60, "queue stability",
           f"max Q(T)/T = {r['max_ratio']:.2e} x budget (uav {worst['uav']}, budget {worst['budget_j']:.0f} J) "
           f"after {r['slots']} slots in {r['elapsed']:.0f} s")


def test_criterion_5_v_tradeoff(v_rows):
    rows, dt = v_rows
    lat = [r["mean_latency_s"] for r in rows]
    exc = [r["mean_excess_j"] for r in rows]
    lat_ok = all(b <= a + 0.02 * abs(a) for a, b in zip(lat, lat[1:]))
    exc_ok = all(b >= a - 0.02 * abs(a) for a, b in zip(exc, exc[1:]))
    report(5, lat_ok and exc_ok and dt < 300, "V trade-off",
           "latency " + ", ".join(f"{x:.2f}" for x in lat) + " s; excess "
           + ", ".join(f"{x:.1f}" for x in exc) + f" J over V=0.1,0.5,1,5 ({dt:.0f} s)")


# -- 6. channel moments ---------------------------------------------------------------------


def test_criterion_6_channel_moments():
    t0 = time.perf_counter()
    rng = np.random.default_rng(6)
    errs = {}
    for w in (0.5, 1.0, 3.0, 10.0):
        h2 = sample_fading(w, 2.0, rng, size=1_000_000) ** 2
        errs[w] = abs(h2.mean() / 2.0 - 1.0)
    sd = float(np.std(sample_shadowing(4.0, rng, size=1_000_000)))
    c = PhysConstants()
    mono = True
    for key in range(50):
        rates = [link_sample((d, 0.0, 50.0), (0, 0, 0), c, link_rng(6, key), p_los=1.0).rate_bps
                 for d in (1.0, 10.0, 100.0, 1000.0, 5000.0, 20000.0)]
        mono &= all(a >= b for a, b in zip(rates, rates[1:]))
    dt = time.perf_counter() - t0
    ok = max(errs.values()) < 0.01 and abs(sd / 4.0 - 1) < 0.01 and mono and dt < 30
    report(6, ok, "channel moments",
           "E[h^2] rel err " + ", ".join(f"w={w:g}:{e:.1e}" for w, e in errs.items())
           + f"; shadow std {sd:.4f}/4; rate monotone={mono} ({dt:.1f} s)")


# -- 7. gradient integrity --------------------------------------------------------------------


def test_criterion_7_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(77)
    U, od, ad = 3, 10, 5
    cfg = TrainerConfig(hidden=(32, 32), denoise_steps=5)
    worst = {"actor": 0.0, "critic": 0.0, "eps-net": 0.0}
    for rep_ in range(10):  # 10 parameter/input draws x 10 probes per network
        actor = DiffusionActor(od, ad, rng, cfg)
        critic = Critic(U, od, ad, rng, cfg.hidden)
        target = Critic(U, od, ad, rng, cfg.hidden)
        mb = random_minibatch(8, U, od, ad, rng, weights=rng.uniform(0.2, 1, 8))
        noise = actor.draw_noise(8, rng)
        _, g, _ = actor_objective_grads(1, actor, critic, mb, rng, cfg, 0.5, noise)
        f = lambda: actor_objective_grads(1, actor, critic, mb, rng, cfg, 0.5, noise)[0]
        worst["actor"] = max(worst["actor"], fd_max_rel(actor.mlp.params, g, f, rng, probes=10))
        nxt = encode_action(rng.normal(size=mb.act.shape), mb.next_mask, 0.5)
        _, _, g = critic_update(1, critic, target, None, mb, nxt, 0.9, 0.5)
        f = lambda: critic_update(1, critic, target, None, mb, nxt, 0.9, 0.5)[0]
        worst["critic"] = max(worst["critic"], fd_max_rel(critic.mlp.params, g, f, rng, probes=10))
        seed = int(rng.integers(2**31))
        x0, cond = mb.act[:, 0], mb.obs[:, 0]
        _, g = dif.denoising_loss_and_grad(actor.net, actor.schedule, x0, cond, np.random.default_rng(seed))
        f = lambda: dif.denoising_loss(actor.net, actor.schedule, x0, cond, np.random.default_rng(seed))
        worst["eps-net"] = max(worst["eps-net"], fd_max_rel(actor.mlp.params, g, f, rng, probes=10))
    dt = time.perf_counter() - t0
    report(7, max(worst.values()) < 1e-4 and dt < 60, "gradient integrity",
           ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f" max rel err over 100 probes each ({dt:.1f} s)")


# -- 8. diffusion sanity ------------------------------------------------------------------------


class _ZeroEps:
    x_dim = 2

    def __call__(self, x, cond, t):
        return np.zeros_like(x)


class _OracleEps:
    def __init__(self, sched, x0):
        self.s, self.x0 = sched, x0

    def forward(self, x, cond, t):
        ab = self.s.alpha_bars[np.asarray(t) - 1][:, None]
        return (x - np.sqrt(ab) * self.x0) / np.sqrt(1 - ab), None


def test_criterion_8_diffusion_sanity():
    t0 = time.perf_counter()
    s = dif.make_schedule()
    var = 1.0
    for t in range(s.steps, 0, -1):
        var = var / s.alphas[t - 1] + (s.betas[t - 1] if t > 1 else 0.0)
    x = dif.reverse_sample(_ZeroEps(), s, np.zeros((1, 1)), np.random.default_rng(8), batch=100_000)
    rel = float(np.max(np.abs(x.var(axis=0) / var - 1)))
    x0 = np.random.default_rng(9).normal(size=(256, 4))
    loss = dif.denoising_loss(_OracleEps(s, x0), s, x0, None, np.random.default_rng(10))
    dt = time.perf_counter() - t0
    report(8, rel < 0.02 and loss < 1e-12 and dt < 30, "diffusion sanity",
           f"variance {x.var():.4f} vs {var:.4f} (rel {rel:.1e}); oracle loss {loss:.1e} ({dt:.1f} s)")


# -- 9. end-to-end learning -----------------------------------------------------------------------


@pytest.fixture(scope="session")
def e2e(desk):
    """Train hg / plain / random on three seeds; audit every episode as it is logged."""
    t0 = time.perf_counter()
    out = {}
    for variant in ("hg", "plain", "random"):
        runs = []
        for seed in E2E_SEEDS:
            cfg = TrainerConfig(episodes=E2E_EPISODES, hidden=E2E_HIDDEN, batch_size=E2E_BATCH, seed=seed)
            tr = Trainer(desk, cfg, variant)
            problems = []
            log = lambda ep, trs, m: problems.extend(oracles.audit(tr.env, trs))
            res = tr.run(log)
            ev_problems = []
            tr.evaluate(log=lambda ep, trs, m: ev_problems.extend(oracles.audit(tr.env, trs)))
            runs.append({"res": res, "problems": problems + ev_problems})
        out[variant] = runs
    out["elapsed"] = time.perf_counter() - t0
    return out


def test_criterion_9_end_to_end(e2e):
    lat = {v: float(np.mean([r["res"].eval_metrics["mean_latency_s"] for r in e2e[v]]))
           for v in ("hg", "plain", "random")}
    rewards = np.mean([[c.mean_reward for c in r["res"].curve] for r in e2e["hg"]], axis=0)
    ma = moving_average(rewards, 30)
    a = lat["hg"] <= 0.9 * lat["random"]
    b = lat["hg"] <= lat["plain"]
    c = ma[-1] > ma[0]
    report(9, a and b and c and e2e["elapsed"] < 1800, "end-to-end learning",
           f"eval latency hg {lat['hg']:.3f} s, plain {lat['plain']:.3f} s, random {lat['random']:.3f} s "
           f"[(a) {a} (b) {b}]; reward MA30 {ma[0]:.3f} -> {ma[-1]:.3f} [(c) {c}] ({e2e['elapsed'] / 60:.1f} min)")


# -- 10. constraint soundness ------------------------------------------------------------------------


def test_criterion_10_constraint_soundness(stability_run, v_rows, e2e):
    problems = list(stability_run["problems"])
    for r in v_rows[0]:
        problems += r["problems"]
    for v in ("hg", "plain", "random"):
        for r in e2e[v]:
            problems += r["problems"]
    report(10, not problems, "constraint soundness",
           f"{len(problems)} unflagged violations or unpenalized flags across all acceptance runs"
           + (f"; first: {problems[0]}" if problems else ""))
