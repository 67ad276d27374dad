"""Dense networks with hand-written reverse-mode gradients and Adam.

Everything runs in float64 so finite-difference checks are meaningful.
Inputs are batched row-wise: ``x`` has shape (batch, in_dim) or (in_dim,).
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ShapeMismatch(ValueError):
    pass


class StaleTape(RuntimeError):
    pass


_ACT = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
    "linear": (lambda z: z, lambda z, a: np.ones_like(z)),
}


@dataclass
class GradTape:
    net_id: int
    version: int
    squeeze: bool
    inputs: list = field(default_factory=list)  # layer inputs
    pre: list = field(default_factory=list)  # pre-activations
    post: list = field(default_factory=list)  # activations


class Mlp:
    def __init__(self, sizes, rng: np.random.Generator, hidden: str = "relu", output: str = "linear"):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.acts = [hidden] * (len(sizes) - 2) + [output]
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, fan_out))
        self.version = 0

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def forward(self, x) -> tuple[np.ndarray, GradTape]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.sizes[0]:
            raise ShapeMismatch(f"input width {x.shape[-1]} != {self.sizes[0]}")
        tape = GradTape(id(self), self.version, squeeze)
        a = x
        for k in range(self.n_layers):
            W, b = self.params[2 * k], self.params[2 * k + 1]
            z = a @ W + b
            tape.inputs.append(a)
            tape.pre.append(z)
            a = _ACT[self.acts[k]][0](z)
            tape.post.append(a)
        return (a[0] if squeeze else a), tape

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: GradTape, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Returns (parameter gradients, gradient w.r.t. the input)."""
        if tape.net_id != id(self) or tape.version != self.version:
            raise StaleTape("tape does not match the current parameters")
        g = np.asarray(grad_out, dtype=float)
        if tape.squeeze:
            g = g[None, :]
        grads = [None] * len(self.params)
        for k in reversed(range(self.n_layers)):
            g = g * _ACT[self.acts[k]][1](tape.pre[k], tape.post[k])
            grads[2 * k] = tape.inputs[k].T @ g
            grads[2 * k + 1] = g.sum(axis=0)
            g = g @ self.params[2 * k].T
        return grads, (g[0] if tape.squeeze else g)

    def touch(self) -> None:
        """Mark parameters as changed (invalidates outstanding tapes)."""
        self.version += 1

    def copy(self) -> "Mlp":
        other = object.__new__(Mlp)
        other.sizes, other.acts = self.sizes, list(self.acts)
        other.params = [p.copy() for p in self.params]
        other.version = 0
        return other

    def n_params(self) -> int:
        return sum(p.size for p in self.params)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float) -> None:
    """In-place adaptive-moment update of ``params``."""
    if len(params) != len(grads):
        raise ShapeMismatch("params/grads length mismatch")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeMismatch(f"{p.shape} vs {g.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class Adam:
    def __init__(self, net: Mlp, lr: float):
        self.net, self.lr = net, lr
        self.state = AdamState.like(net.params)

    def step(self, grads) -> None:
        adam_step(self.net.params, grads, self.state, self.lr)
        self.net.touch()


# -- checkpoints ----------------------------------------------------------------

_MAGIC = b"SKRP"


def save_params(path, arrays: dict[str, np.ndarray]) -> None:
    """Flat little-endian float32 blob with a shape header, plus ``<path>.json`` manifest."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(arrays)))
        for name, a in arrays.items():
            f.write(struct.pack("<I", a.ndim))
            f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    manifest = {"format": "skyrescue-params-v1", "dtype": "float32-le",
                "arrays": [{"name": k, "shape": list(a.shape)} for k, a in arrays.items()]}
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_params(path) -> dict[str, np.ndarray]:
    path = Path(path)
    names = [a["name"] for a in json.loads(Path(str(path) + ".json").read_text())["arrays"]]
    raw = path.read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError("not a parameter checkpoint")
    (count,), off = struct.unpack_from("<I", raw, 4), 8
    shapes = []
    for _ in range(count):
        (nd,) = struct.unpack_from("<I", raw, off)
        off += 4
        shapes.append(struct.unpack_from(f"<{nd}I", raw, off))
        off += 4 * nd
    out = {}
    for name, shp in zip(names, shapes):
        n = int(np.prod(shp)) if shp else 1
        out[name] = np.frombuffer(raw, dtype="<f4", count=n, offset=off).reshape(shp).astype(float)
        off += 4 * n
    return out


def net_arrays(prefix: str, net: Mlp) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k // 2}.{'W' if k % 2 == 0 else 'b'}": p for k, p in enumerate(net.params)}
