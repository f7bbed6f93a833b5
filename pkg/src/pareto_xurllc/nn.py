"""Small dense networks in float64 with hand-written reverse mode."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity")
_ACT_CODE = {a: i for i, a in enumerate(ACTIVATIONS)}
MAGIC = b"PXNN"
VERSION = 1


class NoForwardError(RuntimeError):
    pass


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(name, z, a):
    if name == "tanh":
        return 1.0 - a * a
    if name == "relu":
        return (z > 0).astype(float)
    return np.ones_like(z)


@dataclass
class Mlp:
    widths: list
    acts: list
    W: list = field(default_factory=list)
    b: list = field(default_factory=list)
    _cache: tuple | None = field(default=None, repr=False, compare=False)

    @classmethod
    def create(cls, widths, acts=None, rng=None, hidden_act: str = "tanh") -> "Mlp":
        widths = [int(w) for w in widths]
        if len(widths) < 2:
            raise ValueError("need at least input and output widths")
        if acts is None:
            acts = [hidden_act] * (len(widths) - 2) + ["identity"]
        if len(acts) != len(widths) - 1 or any(a not in ACTIVATIONS for a in acts):
            raise ValueError(f"one activation per layer from {ACTIVATIONS}")
        rng = rng if rng is not None else np.random.default_rng(0)
        W, b = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            lim = 1.0 / np.sqrt(fan_in)
            W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            b.append(rng.uniform(-lim, lim, size=fan_out))
        return cls(widths, list(acts), W, b)

    def copy(self) -> "Mlp":
        return Mlp(list(self.widths), list(self.acts), [w.copy() for w in self.W], [v.copy() for v in self.b])

    # parameters as a flat vector -----------------------------------------
    def params(self) -> list:
        out = []
        for w, v in zip(self.W, self.b):
            out += [w, v]
        return out

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def unflatten(self, vec) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} parameters, got {vec.size}")
        i = 0
        for p in self.params():
            n = p.size
            p[...] = vec[i:i + n].reshape(p.shape)
            i += n

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    # forward / backward ----------------------------------------------------
    def forward(self, x, cache: bool = True) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.widths[0]:
            raise ValueError(f"input width {x.shape[-1]} != {self.widths[0]}")
        single = x.ndim == 1
        a = np.atleast_2d(x)
        zs, as_ = [], [a]
        for W, b, act in zip(self.W, self.b, self.acts):
            z = a @ W + b
            a = _act(act, z)
            zs.append(z)
            as_.append(a)
        if cache:
            self._cache = (zs, as_, single)
        return a[0] if single else a

    __call__ = forward

    def backward(self, upstream) -> "GradTape":
        """Gradient of sum(upstream * output) w.r.t. every parameter and the input."""
        if self._cache is None:
            raise NoForwardError("backward called without a cached forward pass")
        zs, as_, single = self._cache
        g = np.atleast_2d(np.asarray(upstream, dtype=float))
        dW = [None] * len(self.W)
        db = [None] * len(self.b)
        for i in reversed(range(len(self.W))):
            g = g * _act_grad(self.acts[i], zs[i], as_[i + 1])
            dW[i] = as_[i].T @ g
            db[i] = g.sum(axis=0)
            g = g @ self.W[i].T
        return GradTape(dW, db, g[0] if single else g)


@dataclass
class GradTape:
    dW: list
    db: list
    dx: np.ndarray | None = None

    def flatten(self) -> np.ndarray:
        out = []
        for w, v in zip(self.dW, self.db):
            out += [w.ravel(), v.ravel()]
        return np.concatenate(out)

    def scaled(self, c: float) -> "GradTape":
        return GradTape([c * w for w in self.dW], [c * v for v in self.db],
                        None if self.dx is None else c * self.dx)

    def __add__(self, other: "GradTape") -> "GradTape":
        return GradTape([a + b for a, b in zip(self.dW, other.dW)],
                        [a + b for a, b in zip(self.db, other.db)], None)


def zero_tape(net: Mlp) -> GradTape:
    return GradTape([np.zeros_like(w) for w in net.W], [np.zeros_like(v) for v in net.b])


def _check_finite(vec, where: str):
    if not np.all(np.isfinite(vec)):
        bad = int(np.flatnonzero(~np.isfinite(vec))[0])
        raise FloatingPointError(f"non-finite gradient in {where} at flat index {bad}")


def sgd_step(net: Mlp, grad, lr: float, name: str = "net") -> Mlp:
    g = grad.flatten() if isinstance(grad, GradTape) else np.asarray(grad, float)
    _check_finite(g, name)
    net.unflatten(net.flatten() - lr * g)
    return net


@dataclass
class Adam:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0

    def step(self, net: Mlp, grad, name: str = "net") -> Mlp:
        g = grad.flatten() if isinstance(grad, GradTape) else np.asarray(grad, float)
        _check_finite(g, name)
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * g
        self.v = self.beta2 * self.v + (1 - self.beta2) * g * g
        mh = self.m / (1 - self.beta1 ** self.t)
        vh = self.v / (1 - self.beta2 ** self.t)
        net.unflatten(net.flatten() - self.lr * mh / (np.sqrt(vh) + self.eps))
        return net


def adam_step(net: Mlp, tape, lr: float, state: Adam | None = None) -> Adam:
    state = state or Adam(lr=lr)
    state.lr = lr
    state.step(net, tape)
    return state


# snapshot format: MAGIC | u32 version | u32 n_layers+1 | u32 widths... | u8 act codes... | f64 params
def save(net: Mlp, path) -> None:
    head = MAGIC + struct.pack("<II", VERSION, len(net.widths))
    head += struct.pack(f"<{len(net.widths)}I", *net.widths)
    head += struct.pack(f"<{len(net.acts)}B", *[_ACT_CODE[a] for a in net.acts])
    Path(path).write_bytes(head + net.flatten().astype("<f8").tobytes())


def load(path) -> Mlp:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a network snapshot (bad magic)")
    ver, nw = struct.unpack_from("<II", raw, 4)
    if ver != VERSION:
        raise ValueError(f"unsupported snapshot version {ver}")
    off = 12
    widths = list(struct.unpack_from(f"<{nw}I", raw, off))
    off += 4 * nw
    codes = struct.unpack_from(f"<{nw - 1}B", raw, off)
    off += nw - 1
    net = Mlp.create(widths, [ACTIVATIONS[c] for c in codes])
    net.unflatten(np.frombuffer(raw[off:], dtype="<f8"))
    return net
