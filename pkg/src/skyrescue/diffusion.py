"""Conditional denoising-diffusion sampler used as the actor.

Index convention: schedule arrays are 0-based, ``betas[t - 1]`` is beta_t for
t = 1..T. The reverse step is

    x_{t-1} = x_t / sqrt(a_t) - b_t / sqrt(a_t (1 - abar_t)) * eps(x_t, g, t) + sqrt(b_t) * z

with z = 0 on the final step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .neural import Mlp


class InvalidRange(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.betas)

    def coeffs(self, t: int) -> tuple[float, float, float]:
        """(1/sqrt(alpha_t), eps coefficient, noise std) for step t (1-based)."""
        a, b, ab = self.alphas[t - 1], self.betas[t - 1], self.alpha_bars[t - 1]
        return 1.0 / np.sqrt(a), b / np.sqrt(a * (1.0 - ab)), np.sqrt(b)


def make_schedule(steps: int = 5, beta_start: float = 0.05, beta_end: float = 0.5) -> NoiseSchedule:
    if steps < 1 or not (0.0 < beta_start <= beta_end < 1.0):
        raise InvalidRange(f"bad schedule T={steps}, beta=({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, steps) if steps > 1 else np.array([beta_start])
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas, alpha_bars=np.cumprod(alphas))


class EpsilonNet:
    """MLP over [x_t, condition, one-hot(t)] predicting the injected noise."""

    def __init__(self, x_dim: int, cond_dim: int, steps: int, rng: np.random.Generator, hidden=(256, 256)):
        self.x_dim, self.cond_dim, self.steps = x_dim, cond_dim, steps
        self.mlp = Mlp([x_dim + cond_dim + steps, *hidden, x_dim], rng)

    @property
    def params(self):
        return self.mlp.params

    def _inputs(self, x, cond, t):
        x = np.atleast_2d(x)
        cond = np.atleast_2d(cond)
        if cond.shape[0] == 1 and x.shape[0] > 1:
            cond = np.broadcast_to(cond, (x.shape[0], cond.shape[1]))
        onehot = np.zeros((x.shape[0], self.steps))
        onehot[np.arange(x.shape[0]), np.asarray(t, dtype=int) - 1] = 1.0
        return np.concatenate([x, cond, onehot], axis=1)

    def forward(self, x, cond, t):
        return self.mlp.forward(self._inputs(x, cond, t))

    def backward(self, tape, grad_out):
        grads, gin = self.mlp.backward(tape, grad_out)
        return grads, gin[:, : self.x_dim]

    def __call__(self, x, cond, t):
        return self.forward(x, cond, t)[0]


def reverse_sample(net, schedule: NoiseSchedule, cond, rng: np.random.Generator,
                   noise_scale: float = 1.0, batch: int | None = None) -> np.ndarray:
    """Draw x_0 by running the full reverse chain from x_T ~ N(0, I)."""
    cond = np.atleast_2d(np.asarray(cond, dtype=float))
    n = batch if batch is not None else cond.shape[0]
    x = rng.standard_normal((n, net.x_dim))
    for t in range(schedule.steps, 0, -1):
        a, b, s = schedule.coeffs(t)
        eps = net(x, cond, t)
        x = a * x - b * eps
        if t > 1:
            x = x + s * noise_scale * rng.standard_normal(x.shape)
    return x


def draw_chain_noise(schedule: NoiseSchedule, n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Frozen noises for a reparameterized chain: index 0 is x_T, index k is z for t = T - k + 1."""
    return rng.standard_normal((schedule.steps, n, dim))


def chain_forward(net, schedule: NoiseSchedule, cond, noise: np.ndarray, noise_scale: float = 1.0):
    """Deterministic chain given frozen ``noise``; returns (x_0, tapes)."""
    T = schedule.steps
    x = noise[0]
    tapes = []
    for t in range(T, 0, -1):
        a, b, s = schedule.coeffs(t)
        eps, tape = net.forward(x, cond, t)
        tapes.append(tape)
        x = a * x - b * eps
        if t > 1:
            x = x + s * noise_scale * noise[T - t + 1]
    return x, tapes


def chain_backward(net, schedule: NoiseSchedule, tapes, grad_x0: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients of a scalar whose gradient w.r.t. x_0 is ``grad_x0``."""
    T = schedule.steps
    gx = np.atleast_2d(grad_x0)
    total = None
    for t in range(1, T + 1):
        a, b, _ = schedule.coeffs(t)
        pg, gin = net.backward(tapes[T - t], -b * gx)
        total = pg if total is None else [acc + g for acc, g in zip(total, pg)]
        gx = a * gx + gin
    return total


def _noised(schedule, x0, t, eps):
    ab = schedule.alpha_bars[np.asarray(t) - 1][:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def denoising_loss(net, schedule: NoiseSchedule, x0, cond, rng: np.random.Generator) -> float:
    return denoising_loss_and_grad(net, schedule, x0, cond, rng, grad=False)[0]


def denoising_loss_and_grad(net, schedule: NoiseSchedule, x0, cond, rng: np.random.Generator, grad: bool = True):
    """mean_i ||eps_i - eps_hat(sqrt(abar) x0_i + sqrt(1 - abar) eps_i, g_i, t_i)||^2."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    n = x0.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    t = rng.integers(1, schedule.steps + 1, size=n)
    eps = rng.standard_normal(x0.shape)
    xt = _noised(schedule, x0, t, eps)
    pred, tape = net.forward(xt, cond, t)
    resid = pred - eps
    loss = float(np.sum(resid**2) / n)
    if not grad:
        return loss, None
    grads, _ = net.backward(tape, 2.0 * resid / n)
    return loss, grads

