"""Co-integrated eight-asset engine driven by an error-correction model.

Log-prices relative to their start follow daily dynamics
``Y' = Y + Pi Y + c + u`` with Gaussian noise ``u ~ N(0, Sigma_u)``; the
fitted coefficient tables ship as plain-text data files.  Decisions are
taken every ``steps_per_period`` days and wealth compounds like the
portfolio environment.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .base import Env

__all__ = ["VecmSpec", "VecmEnv", "vecm_step", "load_vecm_spec", "VECM_ASSETS"]

VECM_ASSETS = ("AAL", "AMZN", "CCL", "FB", "IBM", "INTC", "LYFT", "OXY")


class VecmConfigError(ValueError):
    """Inconsistent co-integration engine configuration."""


@dataclass(frozen=True)
class VecmSpec:
    Pi: np.ndarray
    Sigma_u: np.ndarray
    C_det: np.ndarray
    T: int = 24
    steps_per_period: int = 10

    def __post_init__(self):
        pi = np.asarray(self.Pi, dtype=float)
        sig = np.asarray(self.Sigma_u, dtype=float)
        c = np.asarray(self.C_det, dtype=float).reshape(-1)
        d = pi.shape[0]
        if pi.shape != (d, d):
            raise VecmConfigError(f"Pi must be square, got {pi.shape}")
        if sig.shape != (d, d):
            raise VecmConfigError(f"Sigma_u shape {sig.shape} != ({d}, {d})")
        if c.shape != (d,):
            raise VecmConfigError(f"C_det shape {c.shape} != ({d},)")
        if not np.allclose(sig, sig.T, atol=1e-10):
            raise VecmConfigError("Sigma_u must be symmetric")
        if np.linalg.eigvalsh(sig).min() < -1e-10:
            raise VecmConfigError("Sigma_u must be positive semi-definite")
        if self.T < 1 or self.steps_per_period < 1:
            raise VecmConfigError("T and steps_per_period must be >= 1")
        object.__setattr__(self, "Pi", pi)
        object.__setattr__(self, "Sigma_u", sig)
        object.__setattr__(self, "C_det", c)

    @property
    def d(self) -> int:
        return self.Pi.shape[0]


def _read_matrix(name: str) -> np.ndarray:
    text = resources.files("dynrisk.data").joinpath(name).read_text(encoding="utf-8")
    rows = [
        [float(v) for v in line.split()]
        for line in text.splitlines()
        if line.strip() and not line.lstrip().startswith("#")
    ]
    return np.asarray(rows, dtype=float)


def load_vecm_spec(T: int = 24, steps_per_period: int = 10) -> VecmSpec:
    """Load the bundled coefficient estimates.

    The printed covariance is rounded and very slightly asymmetric, so it
    is symmetrised and its eigenvalues floored at zero before use.
    """
    pi = _read_matrix("vecm_pi.txt")
    sig = _read_matrix("vecm_sigma_u.txt")
    c = _read_matrix("vecm_c.txt").reshape(-1)
    sig = 0.5 * (sig + sig.T)
    w, v = np.linalg.eigh(sig)
    sig = (v * np.clip(w, 0.0, None)) @ v.T
    sig = 0.5 * (sig + sig.T)
    return VecmSpec(Pi=pi, Sigma_u=sig, C_det=c, T=T, steps_per_period=steps_per_period)


def _noise_factor(spec: VecmSpec) -> np.ndarray:
    w, v = np.linalg.eigh(spec.Sigma_u)
    if w.min() < -1e-10:
        raise VecmConfigError("Sigma_u factorisation failed (negative eigenvalue)")
    return v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))


def vecm_step(y, spec: VecmSpec, rng) -> np.ndarray:
    """One daily transition of the log-price vector."""
    y = np.asarray(y, dtype=float)
    if y.shape[-1] != spec.d:
        raise VecmConfigError(f"state dim {y.shape[-1]} != {spec.d}")
    u = _noise_factor(spec) @ rng.standard_normal(spec.d)
    return y + spec.Pi @ y + spec.C_det + u


class VecmEnv(Env):
    """State (t/T, S_1..S_d, wealth); prices recovered as exp of log-returns."""

    def __init__(self, spec: VecmSpec):
        super().__init__()
        self.spec = spec
        self.T = spec.T
        self.initial_wealth = 1.0
        self.state_dim = 1 + spec.d + 1
        self.obs_dim = 1 + spec.d
        self.action_dim = spec.d
        self.noise_dim = spec.d * spec.steps_per_period
        self._L = _noise_factor(spec)

    def draw_initial(self, rng) -> np.ndarray:
        return np.concatenate([[0.0], np.ones(self.spec.d), [1.0]])

    def squash(self, raw_actions):
        raw = np.atleast_2d(raw_actions)
        shifted = raw - raw.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def _step(self, t, states, raw_actions, eps):
        sp = self.spec
        d, m = sp.d, sp.steps_per_period
        prices = states[:, 1 : 1 + d]
        wealth = states[:, -1]
        y = np.log(prices)
        u_all = eps.reshape(-1, m, d) @ self._L.T
        for j in range(m):
            y = y + y @ sp.Pi.T + sp.C_det + u_all[:, j]
        prices_next = np.exp(y)

        weights = self.squash(raw_actions)
        growth = np.sum(weights * (prices_next / prices), axis=1)
        wealth_next = wealth * growth
        cost = wealth - wealth_next
        nxt = np.concatenate(
            [
                np.full((states.shape[0], 1), (t + 1) / self.T),
                prices_next,
                wealth_next[:, None],
            ],
            axis=1,
        )
        return nxt, cost
