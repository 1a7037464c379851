"""Multi-asset portfolio market with correlated drivers.

Each asset follows either geometric Brownian motion or an exponential
mean-reverting process whose time-dependent level is chosen so both share
the same expected price path.  The agent's raw actions are pushed through
a softmax so investment proportions live on the simplex; wealth compounds
multiplicatively and costs are per-period wealth decrements.

The state the agent observes is (t/T, prices); a trailing wealth
component is carried as bookkeeping only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Env

__all__ = ["PortfolioSpec", "PortfolioEnv", "correlation_matrix"]


def correlation_matrix(n: int, rho) -> np.ndarray:
    """Expand a scalar pairwise correlation into a full matrix."""
    rho_m = np.asarray(rho, dtype=float)
    if rho_m.ndim == 0:
        rho_m = np.full((n, n), float(rho_m))
        np.fill_diagonal(rho_m, 1.0)
    return rho_m


@dataclass(frozen=True)
class PortfolioSpec:
    T: int = 12
    dynamics: tuple[str, ...] = ("gbm", "gbm", "gbm")
    mu: tuple[float, ...] = (0.03, 0.06, 0.09)
    sigma: tuple[float, ...] = (0.06, 0.12, 0.18)
    kappa: float = 2.0
    rho: float = 0.2
    include_riskfree: bool = False
    dt: float | None = None

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        n = len(self.dynamics)
        if len(self.mu) != n or len(self.sigma) != n:
            raise ValueError("dynamics, mu, sigma must have equal lengths")
        for tag in self.dynamics:
            if tag not in ("gbm", "exp_ou"):
                raise ValueError(f"unknown dynamics tag {tag!r}")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma must be >= 0")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.dt is None:
            object.__setattr__(self, "dt", 1.0 / self.T)
        rho_m = correlation_matrix(n, self.rho)
        if rho_m.shape != (n, n):
            raise ValueError("rho matrix has wrong shape")
        if not np.allclose(rho_m, rho_m.T, atol=1e-12):
            raise ValueError("rho must be symmetric")
        if not np.allclose(np.diag(rho_m), 1.0, atol=1e-12):
            raise ValueError("rho must have a unit diagonal")
        if np.linalg.eigvalsh(rho_m).min() < -1e-10:
            raise ValueError("rho must be positive semi-definite")

    @property
    def n_assets(self) -> int:
        return len(self.dynamics)


class PortfolioEnv(Env):
    """State (t/T, S_1..S_I, wealth); observed prefix excludes wealth."""

    def __init__(self, spec: PortfolioSpec):
        super().__init__()
        self.spec = spec
        self.T = spec.T
        self.initial_wealth = 1.0
        n = spec.n_assets
        self.state_dim = 1 + n + 1
        self.obs_dim = 1 + n
        self.action_dim = n + (1 if spec.include_riskfree else 0)
        self.noise_dim = n
        rho_m = correlation_matrix(n, spec.rho)
        w, v = np.linalg.eigh(rho_m)
        self._chol = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))
        self._mu = np.asarray(spec.mu)
        self._sigma = np.asarray(spec.sigma)
        self._is_gbm = np.asarray([tag == "gbm" for tag in spec.dynamics])

    def draw_initial(self, rng) -> np.ndarray:
        return np.concatenate([[0.0], np.ones(self.spec.n_assets), [1.0]])

    def squash(self, raw_actions):
        raw = np.atleast_2d(raw_actions)
        shifted = raw - raw.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def _reversion_level(self, time):
        k = self.spec.kappa
        return self._mu * time - self._sigma**2 * (1.0 - np.exp(-2.0 * k * time)) / (4.0 * k)

    def _step(self, t, states, raw_actions, eps):
        sp = self.spec
        dt = sp.dt
        prices = states[:, 1 : 1 + sp.n_assets]
        wealth = states[:, -1]
        shocks = eps @ self._chol.T

        drift = (self._mu - 0.5 * self._sigma**2) * dt
        vol = self._sigma * math.sqrt(dt)
        gbm_next = prices * np.exp(drift + vol * shocks)

        k = sp.kappa
        decay = math.exp(-k * dt)
        ou_sd = self._sigma * math.sqrt((1.0 - decay * decay) / (2.0 * k))
        theta_now = self._reversion_level(t * dt)
        theta_next = self._reversion_level((t + 1) * dt)
        x = np.log(prices) - theta_now
        ou_next = np.exp(x * decay + ou_sd * shocks + theta_next)

        prices_next = np.where(self._is_gbm, gbm_next, ou_next)

        weights = self.squash(raw_actions)
        returns = prices_next / prices
        if sp.include_riskfree:
            returns = np.concatenate([returns, np.ones((returns.shape[0], 1))], axis=1)
        growth = np.sum(weights * returns, axis=1)
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
