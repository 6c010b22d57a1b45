"""Network building blocks on top of the autodiff graph.

Every forward function is written against a backend object, so the same
code runs in two modes: recording on a :class:`~safeloco.autodiff.Graph`
for training, or as plain numpy (``NumpyOps``) for rollouts where no
gradients are needed.  Both paths execute the identical op sequence.
"""

from __future__ import annotations

import math

import numpy as np

from .autodiff import ConfigurationError, ParamStore, TrainingError

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
LOG_2PI = math.log(2.0 * math.pi)


class NumpyOps:
    """Gradient-free twin of :class:`Graph` with the same method names."""

    def constant(self, value):
        return np.asarray(value, dtype=np.float64)

    def param(self, store: ParamStore, name: str):
        return store[name]

    def add(self, a, b):
        return a + b

    def sub(self, a, b):
        return a - b

    def mul(self, a, b):
        return a * b

    def neg(self, a):
        return -a

    def scale(self, a, c):
        return a * float(c)

    def add_const(self, a, c):
        return a + float(c)

    def matmul(self, a, b):
        return a @ b

    def tanh(self, a):
        return np.tanh(a)

    def sigmoid(self, a):
        return 1.0 / (1.0 + np.exp(-a))

    def exp(self, a):
        return np.exp(a)

    def log(self, a):
        return np.log(a)

    def maximum(self, a, b):
        return np.where(a > b, a, b)

    def minimum(self, a, b):
        return np.where(a < b, a, b)

    def relu0(self, a):
        return np.where(a > 0.0, a, 0.0)

    def clip(self, a, lo, hi):
        return np.clip(a, lo, hi)

    def square(self, a):
        return a * a

    def sum(self, a, axis=None):
        if axis is None:
            return np.asarray(a.sum())
        return a.sum(axis=1)

    def mean(self, a):
        return np.asarray(a.mean())

    def concat(self, parts, axis=-1):
        return np.concatenate(parts, axis=axis)

    def slice_cols(self, a, start, stop):
        if a.ndim == 1:
            return a[start:stop]
        return a[:, start:stop]


NUMPY_OPS = NumpyOps()


def _value(x):
    """Raw array behind either a Node or a numpy array."""
    return x.data if hasattr(x, "data") else x


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def orthogonal(rng: np.random.Generator, shape: tuple[int, int], gain: float = 1.0) -> np.ndarray:
    """Orthogonal-ish init: QR of a Gaussian draw, sign-fixed for determinism."""
    rows, cols = shape
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return gain * q[:rows, :cols]


def init_linear(store: ParamStore, prefix: str, n_in: int, n_out: int,
                rng: np.random.Generator, gain: float = 1.0) -> None:
    store.create(f"{prefix}/W", orthogonal(rng, (n_in, n_out), gain))
    store.create(f"{prefix}/b", np.zeros(n_out))


def linear(ops, store: ParamStore, prefix: str, x):
    w = ops.param(store, f"{prefix}/W")
    b = ops.param(store, f"{prefix}/b")
    return ops.add(ops.matmul(x, w), b)


def init_mlp(store: ParamStore, prefix: str, n_in: int, widths: list[int],
             rng: np.random.Generator, gain: float = 1.0,
             final_gain: float | None = None) -> None:
    """Hidden layers at ``gain``; an explicit ``final_gain`` shrinks the last one."""
    prev = n_in
    for i, w in enumerate(widths):
        g = gain
        if final_gain is not None and i == len(widths) - 1:
            g = final_gain
        init_linear(store, f"{prefix}/l{i}", prev, w, rng, g)
        prev = w


def mlp_forward(ops, store: ParamStore, prefix: str, x, widths: list[int],
                activation: str = "tanh", final_activation: str | None = None):
    """MLP with the given hidden/output widths.

    The input width must match the first layer's parameter shape; a
    mismatch raises :class:`ConfigurationError` from the matmul.
    """
    act = {"tanh": ops.tanh, "sigmoid": ops.sigmoid, None: lambda v: v}
    h = x
    for i, _ in enumerate(widths):
        h = linear(ops, store, f"{prefix}/l{i}", h)
        last = i == len(widths) - 1
        h = act[final_activation if last else activation](h)
    return h


# ---------------------------------------------------------------------------
# GRU cell
# ---------------------------------------------------------------------------


def init_gru(store: ParamStore, prefix: str, n_in: int, hidden: int,
             rng: np.random.Generator, scale: float = 1.0) -> None:
    """Per-gate GRU parameters: update z, reset r, candidate n."""
    for gate in ("z", "r", "n"):
        store.create(f"{prefix}/W{gate}", orthogonal(rng, (n_in, hidden), scale))
        store.create(f"{prefix}/U{gate}", orthogonal(rng, (hidden, hidden), scale))
        store.create(f"{prefix}/b{gate}", np.zeros(hidden))


def gru_step(ops, store: ParamStore, prefix: str, hidden, x):
    """One GRU step: h' = (1-z)*n + z*h, n = tanh(Wn x + Un (r*h) + bn)."""
    h_width = _value(hidden).shape[-1]
    wz = ops.param(store, f"{prefix}/Wz")
    if _value(x).shape[-1] != _value(wz).shape[0]:
        raise ConfigurationError(
            f"gru_step: input width {_value(x).shape[-1]} does not match "
            f"parameters {_value(wz).shape[0]}"
        )
    if h_width != _value(wz).shape[1]:
        raise ConfigurationError("gru_step: hidden width does not match parameters")

    def gate(name, act, state):
        pre = ops.add(ops.add(ops.matmul(x, ops.param(store, f"{prefix}/W{name}")),
                              ops.matmul(state, ops.param(store, f"{prefix}/U{name}"))),
                      ops.param(store, f"{prefix}/b{name}"))
        return act(pre)

    z = gate("z", ops.sigmoid, hidden)
    r = gate("r", ops.sigmoid, hidden)
    n = gate("n", ops.tanh, ops.mul(r, hidden))
    one_minus_z = ops.add_const(ops.neg(z), 1.0)
    return ops.add(ops.mul(one_minus_z, n), ops.mul(z, hidden))


# ---------------------------------------------------------------------------
# diagonal Gaussian policy head
# ---------------------------------------------------------------------------


class GaussianHead:
    """Diagonal Gaussian with state-independent log-std vector.

    ``mean`` is a backend value of shape (B, d) or (d,), ``log_std`` a
    value of shape (d,) kept inside [LOG_STD_MIN, LOG_STD_MAX].
    """

    def __init__(self, ops, mean, log_std):
        self.ops = ops
        self.mean = mean
        self.log_std = log_std
        self.dim = _value(log_std).shape[-1]

    def log_prob(self, action):
        """Sum over dimensions of the per-dim Gaussian log densities."""
        ops = self.ops
        if _value(action).shape[-1] != self.dim:
            raise ConfigurationError("action dim does not match head dim")
        inv_std = ops.exp(ops.neg(self.log_std))
        z = ops.mul(ops.sub(action, self.mean), inv_std)
        sq = ops.sum(ops.square(z), axis=-1) if _value(z).ndim == 2 else ops.sum(ops.square(z))
        ls_sum = ops.sum(self.log_std)
        half = ops.scale(sq, -0.5)
        const = -0.5 * self.dim * LOG_2PI
        return ops.add_const(ops.sub(half, ls_sum), const)

    def entropy(self):
        """Differential entropy, sum over dimensions."""
        ops = self.ops
        const = 0.5 * self.dim * (1.0 + LOG_2PI)
        return ops.add_const(ops.sum(self.log_std), const)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        mean = _value(self.mean)
        std = np.exp(_value(self.log_std))
        return mean + std * rng.standard_normal(mean.shape)


def clamp_log_std(store: ParamStore, name: str) -> None:
    store.set_(name, np.clip(store[name], LOG_STD_MIN, LOG_STD_MAX))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


class AdamState:
    """First/second moment buffers, lazily matched to the parameter set."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 3e-4, betas: tuple[float, float] = (0.9, 0.999),
              eps: float = 1e-8) -> None:
    """Standard bias-corrected Adam update, applied in parameter-name order."""
    b1, b2 = betas
    state.t += 1
    t = state.t
    for name in params.names():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise ConfigurationError(f"gradient shape mismatch for {name!r}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        params[name][...] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.version += 1


__all__ = [
    "NumpyOps", "NUMPY_OPS", "orthogonal", "init_linear", "linear",
    "init_mlp", "mlp_forward", "init_gru", "gru_step", "GaussianHead",
    "clamp_log_std", "AdamState", "adam_step", "LOG_STD_MIN", "LOG_STD_MAX",
]
