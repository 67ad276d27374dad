"""Centralised-critic / decentralised-actor training with prioritised replay.

Actors are either the conditional diffusion sampler or a plain Gaussian MLP.
Each agent owns a critic over the joint observation and the joint *encoded*
action. The encoding is the softmax over the masked target logits followed by
the clipped ratio channel, so it has the raw action's length and is
differentiable in the raw action.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diffusion as dif
from .env import EnvConfig, LocalPolicy, RandomPolicy, RescueEnv, run_episode
from .neural import Adam, Mlp, load_params, net_arrays, save_params
from .scenario import Scenario


class EmptyMemory(RuntimeError):
    pass


class ShapeMismatch(ValueError):
    pass


VARIANTS = ("hg", "plain", "random", "greedy-local")
BATCH_PRESETS = {"default": 256, "large": 512, "tuned": 300}


@dataclass
class TrainerConfig:
    episodes: int = 300
    lr_actor: float = 1e-4
    lr_critic: float = 1e-4
    batch_size: int = 256
    gamma: float = 0.9
    psi: float = 0.01
    eps0: float = 0.9
    eps_decay: float = 1e-4
    eps_floor: float = 0.05
    capacity: int = 100_000
    warmup: int | None = None  # defaults to batch_size
    updates_per_slot: int = 1
    hidden: tuple = (256, 256)
    denoise_steps: int = 5
    beta_start: float = 0.05
    beta_end: float = 0.5
    lambda_bc: float = 0.05
    ratio_reg: float = 1.0
    softmax_temp: float = 0.5
    per_eps: float = 1e-3
    per_beta0: float = 0.4
    eval_episodes: int = 10
    seed: int = 0
    env: EnvConfig = field(default_factory=EnvConfig)

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.psi <= 1:
            raise ValueError("psi must lie in (0, 1]")

    def epsilon(self, episode: int) -> float:
        return max(self.eps_floor, self.eps0 * (1.0 - self.eps_decay) ** episode)


# -- replay ---------------------------------------------------------------------


@dataclass
class Minibatch:
    idx: np.ndarray
    weights: np.ndarray
    obs: np.ndarray  # (B, U, obs_dim)
    act: np.ndarray  # (B, U, act_dim) raw
    mask: np.ndarray  # (B, U, act_dim - 1)
    rew: np.ndarray  # (B, U)
    next_obs: np.ndarray
    next_mask: np.ndarray
    done: np.ndarray  # (B,)


class PrioritizedReplay:
    """Ring buffer of joint slot records; P(i) proportional to priority_i."""

    def __init__(self, capacity: int, n_agents: int, obs_dim: int, act_dim: int, eps: float = 1e-3):
        self.capacity, self.eps = capacity, eps
        U = n_agents
        self.obs = np.zeros((capacity, U, obs_dim))
        self.act = np.zeros((capacity, U, act_dim))
        self.mask = np.zeros((capacity, U, act_dim - 1), dtype=bool)
        self.rew = np.zeros((capacity, U))
        self.next_obs = np.zeros((capacity, U, obs_dim))
        self.next_mask = np.zeros((capacity, U, act_dim - 1), dtype=bool)
        self.done = np.zeros(capacity)
        self.prio = np.zeros(capacity)
        self.pos = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, obs, act, mask, rew, next_obs, next_mask, done, priority: float | None = None) -> int:
        i = self.pos
        self.obs[i], self.act[i], self.mask[i] = obs, act, mask
        self.rew[i], self.next_obs[i], self.next_mask[i], self.done[i] = rew, next_obs, next_mask, float(done)
        top = self.prio[: self.size].max() if self.size else 1.0
        self.prio[i] = top if priority is None else priority
        self.pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def push_transitions(self, trs) -> int:
        """Store one slot's per-agent transitions as a joint record."""
        trs = sorted(trs, key=lambda t: t.agent_id)
        return self.push(np.stack([t.obs for t in trs]), np.stack([t.action for t in trs]),
                         np.stack([t.mask for t in trs]), np.array([t.reward for t in trs]),
                         np.stack([t.next_obs for t in trs]), np.stack([t.next_mask for t in trs]), trs[0].done)

    def probabilities(self) -> np.ndarray:
        p = self.prio[: self.size]
        return p / p.sum()

    def sample(self, batch: int, rng: np.random.Generator, beta: float = 0.4) -> Minibatch:
        if self.size == 0:
            raise EmptyMemory("replay memory is empty")
        if batch > self.size:
            raise ValueError(f"batch {batch} exceeds memory size {self.size}")
        p = self.probabilities()
        idx = rng.choice(self.size, size=batch, p=p)
        w = (self.size * p[idx]) ** (-beta)
        w = w / w.max()
        return Minibatch(idx, w, self.obs[idx], self.act[idx], self.mask[idx], self.rew[idx],
                         self.next_obs[idx], self.next_mask[idx], self.done[idx])

    def update_priorities(self, idx, td_abs) -> None:
        self.prio[np.asarray(idx)] = np.asarray(td_abs, dtype=float) + self.eps


# -- action encoding ------------------------------------------------------------


def encode_action(raw, mask, temp: float = 1.0):
    """Critic-side action features: masked softmax of the logits, clipped ratio."""
    raw = np.asarray(raw, dtype=float)
    z = np.where(mask, raw[..., :-1] / temp, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    sm = ez / ez.sum(axis=-1, keepdims=True)
    return np.concatenate([sm, np.clip(raw[..., -1:], 0.0, 1.0)], axis=-1)


def encode_action_backward(raw, mask, grad_enc, temp: float = 1.0):
    """Gradient of a scalar w.r.t. the raw action given its gradient w.r.t. the encoding."""
    raw = np.asarray(raw, dtype=float)
    sm = encode_action(raw, mask, temp)[..., :-1]
    g = grad_enc[..., :-1]
    g_logit = sm * (g - (g * sm).sum(axis=-1, keepdims=True)) / temp
    r = raw[..., -1:]
    g_ratio = grad_enc[..., -1:] * ((r > 0) & (r < 1))
    return np.concatenate([g_logit, g_ratio], axis=-1)


def ratio_penalty(raw, weight: float):
    """weight * mean squared excursion of the ratio channel outside [0, 1], and its gradient."""
    r = raw[..., -1]
    out = np.minimum(r, 0.0) + np.maximum(r - 1.0, 0.0)
    n = r.shape[0]
    g = np.zeros_like(raw)
    g[..., -1] = 2.0 * weight * out / n
    return weight * float(np.sum(out**2) / n), g


# -- networks -------------------------------------------------------------------


class Critic:
    def __init__(self, n_agents: int, obs_dim: int, act_dim: int, rng, hidden=(256, 256)):
        self.U, self.obs_dim, self.act_dim = n_agents, obs_dim, act_dim
        self.mlp = Mlp([n_agents * (obs_dim + act_dim), *hidden, 1], rng)

    def inputs(self, obs, enc):
        B = obs.shape[0]
        return np.concatenate([obs.reshape(B, -1), enc.reshape(B, -1)], axis=1)

    def forward(self, obs, enc):
        q, tape = self.mlp.forward(self.inputs(obs, enc))
        return q[:, 0], tape

    def backward(self, tape, grad_q):
        """Returns (param grads, grad wrt encoded joint action of shape (B, U, act_dim))."""
        grads, gin = self.mlp.backward(tape, np.asarray(grad_q)[:, None])
        B = gin.shape[0]
        return grads, gin[:, self.U * self.obs_dim:].reshape(B, self.U, self.act_dim)


class DiffusionActor:
    kind = "diffusion"

    def __init__(self, obs_dim: int, act_dim: int, rng, cfg: TrainerConfig):
        self.schedule = dif.make_schedule(cfg.denoise_steps, cfg.beta_start, cfg.beta_end)
        self.net = dif.EpsilonNet(act_dim, obs_dim, cfg.denoise_steps, rng, cfg.hidden)
        self.act_dim = act_dim

    @property
    def mlp(self):
        return self.net.mlp

    def act(self, obs, rng, explore: float = 0.0):
        return dif.reverse_sample(self.net, self.schedule, obs.vector, rng, noise_scale=explore)[0]

    def sample_batch(self, cond, rng, noise_scale: float = 0.0):
        return dif.reverse_sample(self.net, self.schedule, cond, rng, noise_scale=noise_scale)

    def regenerate(self, cond, noise, noise_scale):
        return dif.chain_forward(self.net, self.schedule, cond, noise, noise_scale)

    def regen_backward(self, tapes, grad_x0):
        return dif.chain_backward(self.net, self.schedule, tapes, grad_x0)

    def draw_noise(self, n, rng):
        return dif.draw_chain_noise(self.schedule, n, self.act_dim, rng)


class GaussianActor:
    """Deterministic MLP mean plus N(0, explore^2) exploration noise."""

    kind = "gaussian"

    def __init__(self, obs_dim: int, act_dim: int, rng, cfg: TrainerConfig):
        self._mlp = Mlp([obs_dim, *cfg.hidden, act_dim], rng)
        self.act_dim = act_dim

    @property
    def mlp(self):
        return self._mlp

    def act(self, obs, rng, explore: float = 0.0):
        mean = self._mlp(obs.vector)
        return mean + explore * rng.standard_normal(self.act_dim)

    def sample_batch(self, cond, rng, noise_scale: float = 0.0):
        mean = self._mlp(np.atleast_2d(cond))
        return mean + noise_scale * rng.standard_normal(mean.shape)

    def regenerate(self, cond, noise, noise_scale):
        y, tape = self._mlp.forward(np.atleast_2d(cond))
        return y, tape

    def regen_backward(self, tape, grad_x0):
        return self._mlp.backward(tape, grad_x0)[0]

    def draw_noise(self, n, rng):
        return None


def soft_update(target: Mlp, online: Mlp, psi: float) -> None:
    """theta' <- psi * theta + (1 - psi) * theta'."""
    for pt, po in zip(target.params, online.params):
        if pt.shape != po.shape:
            raise ShapeMismatch(f"{pt.shape} vs {po.shape}")
        pt *= 1.0 - psi
        pt += psi * po
    target.touch()


def _copy_into(dst: Mlp, src: Mlp) -> None:
    for a, b in zip(dst.params, src.params):
        a[...] = b
    dst.touch()


# -- updates --------------------------------------------------------------------


def critic_update(u: int, critic: Critic, target_critic: Critic, opt: Adam | None, mb: Minibatch,
                  next_enc: np.ndarray, gamma: float, temp: float = 1.0):
    """One importance-weighted TD step for agent u's critic.

    ``next_enc`` is the encoded joint next action from the target actors.
    Returns (loss, |TD| per sample, param grads).
    """
    q_next, _ = target_critic.forward(mb.next_obs, next_enc)
    y = mb.rew[:, u] + gamma * (1.0 - mb.done) * q_next
    q, tape = critic.forward(mb.obs, encode_action(mb.act, mb.mask, temp))
    td = y - q
    B = len(q)
    loss = float(np.sum(mb.weights * td**2) / B)
    grads, _ = critic.backward(tape, 2.0 * mb.weights * (q - y) / B)
    if opt is not None:
        opt.step(grads)
    return loss, np.abs(td), grads


def actor_objective_grads(u: int, actor, critic: Critic, mb: Minibatch, rng, cfg: TrainerConfig,
                          noise_scale: float = 0.0, noise=None):
    """Loss = -mean Q(O, A with own action regenerated) + ratio penalty (+ bc term outside).

    Returns (loss, param grads, regenerated raw actions).
    """
    B = mb.obs.shape[0]
    cond = mb.obs[:, u]
    if noise is None:
        noise = actor.draw_noise(B, rng)
    x0, tapes = actor.regenerate(cond, noise, noise_scale)
    enc = encode_action(mb.act, mb.mask, cfg.softmax_temp)
    enc[:, u] = encode_action(x0, mb.mask[:, u], cfg.softmax_temp)
    q, ctape = critic.forward(mb.obs, enc)
    _, g_enc = critic.backward(ctape, -np.ones(B) / B)
    g_raw = encode_action_backward(x0, mb.mask[:, u], g_enc[:, u], cfg.softmax_temp)
    pen, g_pen = ratio_penalty(x0, cfg.ratio_reg)
    grads = actor.regen_backward(tapes, g_raw + g_pen)
    return float(-q.mean()) + pen, grads, x0


def actor_update(u: int, actor, critic: Critic, opt: Adam, mb: Minibatch, rng, cfg: TrainerConfig,
                 noise_scale: float = 0.0) -> float:
    loss, grads, _ = actor_objective_grads(u, actor, critic, mb, rng, cfg, noise_scale)
    if cfg.lambda_bc > 0 and actor.kind == "diffusion":
        bc, bc_grads = dif.denoising_loss_and_grad(actor.net, actor.schedule, mb.act[:, u], mb.obs[:, u], rng)
        grads = [g + cfg.lambda_bc * b for g, b in zip(grads, bc_grads)]
        loss += cfg.lambda_bc * bc
    opt.step(grads)
    return loss


# -- trainer --------------------------------------------------------------------


@dataclass
class CurveRow:
    episode: int
    mean_reward: float
    mean_latency_s: float
    mean_energy_j: float
    mean_q: float


@dataclass
class TrainResult:
    variant: str
    curve: list
    eval_metrics: dict
    actors: list
    critics: list
    violations: int = 0
    transitions_seen: int = 0
    audit: list = field(default_factory=list)


class Trainer:
    def __init__(self, scn: Scenario, cfg: TrainerConfig, variant: str = "hg"):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.scn, self.cfg, self.variant = scn, cfg, variant
        env_cfg = EnvConfig(**{**asdict(cfg.env), "assigner": "round_robin" if variant == "plain" else "hungarian"})
        self.env = RescueEnv(scn, env_cfg, seed=cfg.seed)
        ss = np.random.SeedSequence(cfg.seed)
        init_ss, self._roll_ss, self._upd_ss = ss.spawn(3)
        init = np.random.default_rng(init_ss)
        self.rng_roll = np.random.default_rng(self._roll_ss)
        self.rng_upd = np.random.default_rng(self._upd_ss)
        U, od, ad = self.env.U, self.env.obs_dim, self.env.act_dim
        self.learning = variant in ("hg", "plain")
        if variant == "random":
            self.policies = [RandomPolicy(ad) for _ in range(U)]
        elif variant == "greedy-local":
            self.policies = [LocalPolicy(ad) for _ in range(U)]
        else:
            cls = DiffusionActor if variant == "hg" else GaussianActor
            self.actors = [cls(od, ad, init, cfg) for _ in range(U)]
            self.target_actors = [cls(od, ad, init, cfg) for _ in range(U)]
            self.critics = [Critic(U, od, ad, init, cfg.hidden) for _ in range(U)]
            self.target_critics = [Critic(U, od, ad, init, cfg.hidden) for _ in range(U)]
            for t, o in zip(self.target_actors + self.target_critics, self.actors + self.critics):
                _copy_into(t.mlp, o.mlp)
            self.actor_opts = [Adam(a.mlp, cfg.lr_actor) for a in self.actors]
            self.critic_opts = [Adam(c.mlp, cfg.lr_critic) for c in self.critics]
            self.memory = PrioritizedReplay(cfg.capacity, U, od, ad, cfg.per_eps)
            self.policies = self.actors
        self.updates = 0
        self._explore = cfg.eps0

    def _per_beta(self, episode: int) -> float:
        frac = min(1.0, episode / max(1, self.cfg.episodes - 1))
        return self.cfg.per_beta0 + (1.0 - self.cfg.per_beta0) * frac

    def update(self, episode: int) -> None:
        cfg = self.cfg
        mb = self.memory.sample(cfg.batch_size, self.rng_upd, self._per_beta(episode))
        next_raw = np.stack([self.target_actors[u].sample_batch(mb.next_obs[:, u], self.rng_upd)
                             for u in range(self.env.U)], axis=1)
        next_enc = encode_action(next_raw, mb.next_mask, cfg.softmax_temp)
        tds = []
        for u in range(self.env.U):
            _, td, _ = critic_update(u, self.critics[u], self.target_critics[u], self.critic_opts[u], mb,
                                     next_enc, cfg.gamma, cfg.softmax_temp)
            tds.append(td)
        for u in range(self.env.U):
            actor_update(u, self.actors[u], self.critics[u], self.actor_opts[u], mb, self.rng_upd, cfg,
                         noise_scale=self._explore)
        for u in range(self.env.U):
            soft_update(self.target_critics[u].mlp, self.critics[u].mlp, cfg.psi)
            soft_update(self.target_actors[u].mlp, self.actors[u].mlp, cfg.psi)
        self.memory.update_priorities(mb.idx, np.mean(tds, axis=0))
        self.updates += 1

    def run(self, log=None) -> TrainResult:
        cfg = self.cfg
        warm = cfg.warmup if cfg.warmup is not None else cfg.batch_size
        curve, violations, seen = [], 0, 0
        for ep in range(cfg.episodes):
            self._explore = cfg.epsilon(ep) if self.learning else 0.0

            def on_slot(trs, ep=ep):
                if not self.learning:
                    return
                self.memory.push_transitions(trs)
                if len(self.memory) >= max(warm, cfg.batch_size):
                    for _ in range(cfg.updates_per_slot):
                        self.update(ep)

            trs, m = run_episode(self.env, self.policies, ep, self.rng_roll, self._explore, on_slot=on_slot)
            violations += m.violations
            seen += len(trs)
            curve.append(CurveRow(ep, m.mean_reward, m.mean_latency_s, m.mean_energy_j, m.mean_q))
            if log is not None:
                log(ep, trs, m)
        return TrainResult(self.variant, curve, self.evaluate(), getattr(self, "actors", []),
                           getattr(self, "critics", []), violations, seen)

    def evaluate(self, episodes: int | None = None, offset: int = 1_000_000, log=None) -> dict:
        """Greedy rollouts (no intermediate chain noise) on episodes disjoint from training."""
        n = self.cfg.eval_episodes if episodes is None else episodes
        rng = np.random.default_rng([self.cfg.seed, offset])
        lat, en, rew, vio = [], [], [], 0
        for k in range(n):
            trs, m = run_episode(self.env, self.policies, offset + k, rng, 0.0)
            lat.append(m.mean_latency_s)
            en.append(m.mean_energy_j)
            rew.append(m.mean_reward)
            vio += m.violations
            if log is not None:
                log(offset + k, trs, m)
        return {"mean_latency_s": float(np.mean(lat)), "mean_energy_j": float(np.mean(en)),
                "mean_reward": float(np.mean(rew)), "violations": vio, "episodes": n}

    def save_checkpoints(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        if not self.learning:
            return paths
        for u, (a, c) in enumerate(zip(self.actors, self.critics)):
            p = out / f"agent{u}.bin"
            save_params(p, {**net_arrays("actor", a.mlp), **net_arrays("critic", c.mlp)})
            paths.append(p)
        return paths


    def load_checkpoints(self, ckpt_dir) -> None:
        """Restore actor and critic parameters written by :meth:`save_checkpoints`."""
        for u, (a, c) in enumerate(zip(self.actors, self.critics)):
            arrays = load_params(Path(ckpt_dir) / f"agent{u}.bin")
            for prefix, net in (("actor", a.mlp), ("critic", c.mlp)):
                for name, p in net_arrays(prefix, net).items():
                    if arrays[name].shape != p.shape:
                        raise ShapeMismatch(f"{name}: {arrays[name].shape} vs {p.shape}")
                    p[...] = arrays[name]
                net.touch()


def train(scn: Scenario, cfg: TrainerConfig, variant: str = "hg", log=None) -> TrainResult:
    tr = Trainer(scn, cfg, variant)
    res = tr.run(log)
    res.trainer = tr
    return res


CURVE_COLUMNS = ["episode", "mean_reward", "mean_latency_s", "mean_energy_j", "mean_q"]


def curve_csv(curve) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_COLUMNS)
    for r in curve:
        w.writerow([r.episode] + [repr(float(x)) for x in (r.mean_reward, r.mean_latency_s, r.mean_energy_j, r.mean_q)])
    return buf.getvalue()


def moving_average(x, window: int = 30) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if len(x) < window:
        window = max(1, len(x))
    return np.convolve(x, np.ones(window) / window, mode="valid")


def config_dict(cfg: TrainerConfig) -> dict:
    return json.loads(json.dumps(asdict(cfg)))
