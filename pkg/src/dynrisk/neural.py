"""Feed-forward networks, reverse-mode gradients, Adam, and policies.

Networks are fixed-architecture MLPs with SiLU hidden layers stored as
plain numpy arrays; backprop is hand-rolled against cached activations.
Nothing here builds a general computation graph: the training losses seed
per-row output gradients and the chain rule does the rest.  Indicator and
positive-part factors inside losses are always treated as constants of the
forward pass, so no gradient flows through those kinks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mlp",
    "OptimState",
    "GaussianPolicy",
    "TabularSoftmaxPolicy",
    "sync_target",
    "grad_through",
    "NumericalError",
]

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0


class NumericalError(RuntimeError):
    """A loss or gradient became non-finite."""


def _sigmoid(u):
    out = np.empty_like(u)
    pos = u >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-u[pos]))
    eu = np.exp(u[~pos])
    out[~pos] = eu / (1.0 + eu)
    return out


def _apply_output(tag, u):
    kind = tag[0]
    if kind in ("identity", "linear_heads"):
        return u
    if kind == "softplus":
        return np.logaddexp(0.0, u)
    if kind == "scaled_sigmoid":
        lo, hi = tag[1], tag[2]
        return lo + (hi - lo) * _sigmoid(u)
    raise ValueError(f"unknown output activation {tag!r}")


def _output_deriv(tag, u):
    kind = tag[0]
    if kind in ("identity", "linear_heads"):
        return np.ones_like(u)
    if kind == "softplus":
        return _sigmoid(u)
    if kind == "scaled_sigmoid":
        lo, hi = tag[1], tag[2]
        s = _sigmoid(u)
        return (hi - lo) * s * (1.0 - s)
    raise ValueError(f"unknown output activation {tag!r}")


class Mlp:
    """Fully connected net: SiLU hidden layers, configurable output map.

    ``output`` is a tag tuple: ("identity",), ("softplus",),
    ("scaled_sigmoid", lo, hi) or ("linear_heads",).
    """

    def __init__(self, sizes, output=("identity",), rng=None):
        self.sizes = list(int(s) for s in sizes)
        if len(self.sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.output = tuple(output)
        _apply_output(self.output, np.zeros(1))  # validate tag early
        self.W = []
        self.b = []
        for n_in, n_out in zip(self.sizes, self.sizes[1:]):
            if rng is None:
                w = np.zeros((n_in, n_out))
            else:
                bound = math.sqrt(6.0 / (n_in + n_out))
                w = rng.uniform(-bound, bound, size=(n_in, n_out))
            self.W.append(w)
            self.b.append(np.zeros(n_out))

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.W, self.b))

    def forward(self, x: np.ndarray) -> np.ndarray:
        y, _ = self.forward_cached(np.atleast_2d(x), keep=False)
        return y

    def forward_cached(self, x: np.ndarray, keep: bool = True):
        """Forward pass; with ``keep`` the cache feeds :meth:`backward`."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"input dim {x.shape[1]} != expected {self.sizes[0]}")
        pre = []
        acts = [x]
        h = x
        n_layers = len(self.W)
        for l, (w, b) in enumerate(zip(self.W, self.b)):
            u = h @ w + b
            pre.append(u)
            if l < n_layers - 1:
                h = u * _sigmoid(u)  # SiLU
            else:
                h = _apply_output(self.output, u)
            acts.append(h)
        cache = (pre, acts) if keep else None
        return h, cache

    def backward(self, cache, d_out: np.ndarray):
        """Per-parameter gradients for row-seeded output gradients d_out."""
        pre, acts = cache
        d_out = np.atleast_2d(np.asarray(d_out, dtype=float))
        grads_W = [None] * len(self.W)
        grads_b = [None] * len(self.b)
        delta = d_out * _output_deriv(self.output, pre[-1])
        for l in range(len(self.W) - 1, -1, -1):
            grads_W[l] = acts[l].T @ delta
            grads_b[l] = delta.sum(axis=0)
            if l > 0:
                s = _sigmoid(pre[l - 1])
                dsilu = s * (1.0 + pre[l - 1] * (1.0 - s))
                delta = (delta @ self.W[l].T) * dsilu
        return grads_W, grads_b

    # Flat parameter views, used by optimisers / checkpoints / FD oracles.
    def get_flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for pair in zip(self.W, self.b) for a in pair])

    def set_flat(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=float)
        i = 0
        for l in range(len(self.W)):
            n = self.W[l].size
            self.W[l] = v[i : i + n].reshape(self.W[l].shape).copy()
            i += n
            n = self.b[l].size
            self.b[l] = v[i : i + n].copy()
            i += n
        if i != v.size:
            raise ValueError("flat parameter vector has wrong length")

    @staticmethod
    def flatten_grads(grads_W, grads_b) -> np.ndarray:
        return np.concatenate(
            [a.reshape(-1) for pair in zip(grads_W, grads_b) for a in pair]
        )

    def clone(self) -> "Mlp":
        other = Mlp(self.sizes, self.output, rng=None)
        sync_target(self, other)
        return other


def sync_target(source: Mlp, target: Mlp) -> None:
    """Hard copy of parameters; architectures must match exactly."""
    if source.sizes != target.sizes or source.output != target.output:
        raise ValueError(
            f"architecture mismatch: {source.sizes}/{source.output} vs "
            f"{target.sizes}/{target.output}"
        )
    target.W = [w.copy() for w in source.W]
    target.b = [b.copy() for b in source.b]


def grad_through(net: Mlp, x, loss_fn):
    """Gradient of a scalar loss composed of one forward pass.

    ``loss_fn(y)`` must return (value, d_value/d_y).  Raises
    :class:`NumericalError` when the result is not finite, naming the
    first offending parameter block.
    """
    y, cache = net.forward_cached(x)
    value, dy = loss_fn(y)
    gw, gb = net.backward(cache, dy)
    for l, (a, b) in enumerate(zip(gw, gb)):
        if not (np.isfinite(a).all() and np.isfinite(b).all()):
            raise NumericalError(f"non-finite gradient in layer {l}")
    return value, (gw, gb)


@dataclass
class OptimState:
    """Adam accumulators plus a stepped exponential learning-rate schedule."""

    n_params: int
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 1.0
    decay_interval: int = 1
    floor: float = 0.0
    t: int = field(default=0, init=False)
    epochs: int = field(default=0, init=False)
    m: np.ndarray = field(default=None, init=False)
    v: np.ndarray = field(default=None, init=False)

    def __post_init__(self):
        self.initial_lr = self.lr
        self.m = np.zeros(self.n_params)
        self.v = np.zeros(self.n_params)

    def step(self, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
        """One Adam update with bias correction; returns new parameters."""
        if not np.isfinite(grads).all():
            raise NumericalError("non-finite gradient passed to Adam")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grads
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grads**2
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def schedule_step(self) -> None:
        """Tick one epoch; decay the rate every ``decay_interval`` epochs."""
        self.epochs += 1
        if self.decay_interval > 0 and self.epochs % self.decay_interval == 0:
            self.lr = max(self.floor, self.lr * self.decay)

    def state_arrays(self) -> dict:
        return {
            "m": self.m,
            "v": self.v,
            "t": np.array(self.t),
            "epochs": np.array(self.epochs),
            "lr": np.array(self.lr),
        }

    def load_state_arrays(self, d) -> None:
        self.m = np.asarray(d["m"], dtype=float).copy()
        self.v = np.asarray(d["v"], dtype=float).copy()
        self.t = int(d["t"])
        self.epochs = int(d["epochs"])
        self.lr = float(d["lr"])


class GaussianPolicy:
    """Diagonal Gaussian over raw actions: mean from an MLP, learned log-std.

    Sampling is reparameterised (mean + std * z); log-densities are always
    evaluated on the raw pre-squash sample, matching how environments
    apply their own deterministic output maps.
    """

    def __init__(self, mean_net: Mlp, obs_dim: int | None = None, init_log_std=None):
        self.net = mean_net
        self.obs_dim = obs_dim if obs_dim is not None else mean_net.sizes[0]
        dim = mean_net.sizes[-1]
        if init_log_std is None:
            init_log_std = math.log(0.5)
        self.log_std = np.full(dim, float(init_log_std))

    @property
    def action_dim(self) -> int:
        return self.log_std.size

    def _obs(self, states):
        return np.atleast_2d(states)[:, : self.obs_dim]

    def mean(self, states) -> np.ndarray:
        return self.net.forward(self._obs(states))

    def raw_actions(self, states, z) -> np.ndarray:
        return self.mean(states) + np.exp(self.log_std) * np.atleast_2d(z)

    def log_prob(self, states, raw) -> np.ndarray:
        mean = self.mean(states)
        std = np.exp(self.log_std)
        zs = (np.atleast_2d(raw) - mean) / std
        return -np.sum(
            self.log_std + 0.5 * math.log(2.0 * math.pi) + 0.5 * zs**2, axis=1
        )

    def weighted_logprob_grad(self, states, raw, weights):
        """Value and gradients of sum_b w_b * log pi(raw_b | s_b).

        Weights are data; the gradient flows through the mean network and
        the log-std parameters only.
        """
        obs = self._obs(states)
        mean, cache = self.net.forward_cached(obs)
        std = np.exp(self.log_std)
        zs = (np.atleast_2d(raw) - mean) / std
        w = np.asarray(weights, dtype=float)
        logp = -np.sum(
            self.log_std + 0.5 * math.log(2.0 * math.pi) + 0.5 * zs**2, axis=1
        )
        value = float(np.dot(w, logp))
        d_mean = w[:, None] * zs / std
        gw, gb = self.net.backward(cache, d_mean)
        g_log_std = np.sum(w[:, None] * (zs**2 - 1.0), axis=0)
        return value, (gw, gb), g_log_std

    def clip_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([self.net.get_flat(), self.log_std])

    def set_flat(self, v) -> None:
        v = np.asarray(v, dtype=float)
        n = self.net.n_params
        self.net.set_flat(v[:n])
        self.log_std = v[n:].copy()

    @property
    def n_params(self) -> int:
        return self.net.n_params + self.log_std.size


class TabularSoftmaxPolicy:
    """Softmax over logits per discrete state id; for tree environments.

    States carry the node id in component 1; the normal draw is mapped
    through the standard normal CDF into a uniform to invert the
    categorical CDF, so the simulation contract stays draw-compatible
    with Gaussian policies.
    """

    def __init__(self, n_states: int, n_actions: int):
        self.theta = np.zeros((n_states, n_actions))

    @property
    def n_actions(self) -> int:
        return self.theta.shape[1]

    def _probs(self, ids):
        logits = self.theta[ids]
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def probs(self, ids) -> np.ndarray:
        return self._probs(np.asarray(ids, dtype=int))

    def raw_actions(self, states, z) -> np.ndarray:
        from .envs.base import norm_cdf

        states = np.atleast_2d(states)
        ids = states[:, 1].astype(int)
        p = self._probs(ids)
        u = norm_cdf(np.atleast_2d(z)[:, 0])
        cum = np.cumsum(p, axis=1)
        action = (u[:, None] > cum).sum(axis=1)
        action = np.minimum(action, self.n_actions - 1)
        return action.astype(float)[:, None]

    def log_prob(self, states, raw) -> np.ndarray:
        states = np.atleast_2d(states)
        ids = states[:, 1].astype(int)
        acts = np.atleast_2d(raw)[:, 0].astype(int)
        p = self._probs(ids)
        return np.log(p[np.arange(len(acts)), acts])

    def weighted_logprob_grad(self, states, raw, weights):
        states = np.atleast_2d(states)
        ids = states[:, 1].astype(int)
        acts = np.atleast_2d(raw)[:, 0].astype(int)
        w = np.asarray(weights, dtype=float)
        p = self._probs(ids)
        value = float(np.dot(w, np.log(p[np.arange(len(acts)), acts])))
        d = -p * w[:, None]
        d[np.arange(len(acts)), acts] += w
        grad = np.zeros_like(self.theta)
        np.add.at(grad, ids, d)
        return value, grad

    def get_flat(self) -> np.ndarray:
        return self.theta.reshape(-1).copy()

    def set_flat(self, v) -> None:
        self.theta = np.asarray(v, dtype=float).reshape(self.theta.shape).copy()

    @property
    def n_params(self) -> int:
        return self.theta.size
