"""Statistical-arbitrage market: one mean-reverting asset, inventory limits.

The trader buys/sells a quantity each period subject to quadratic
transaction costs; at the horizon the position is marked to market with a
quadratic liquidation penalty.  Costs are wealth decrements, so they
telescope to minus the terminal wealth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .base import Env

__all__ = ["StatArbSpec", "StatArbEnv", "ou_step", "ou_stationary_std"]


@dataclass(frozen=True)
class StatArbSpec:
    T: int = 5
    kappa: float = 2.0
    mu: float = 1.0
    sigma: float = 0.2
    phi1: float = 0.005
    phi2: float = 0.5
    q_min: float = -5.0
    q_max: float = 5.0
    a_min: float = -2.0
    a_max: float = 2.0
    dt: float | None = None
    q0: str = "zero"  # "zero" | "uniform"

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.kappa <= 0:
            raise ValueError("kappa must be > 0")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not self.q_min < self.q_max:
            raise ValueError("q_min must be < q_max")
        if not self.a_min < self.a_max:
            raise ValueError("a_min must be < a_max")
        if self.phi1 < 0 or self.phi2 < 0:
            raise ValueError("phi1 and phi2 must be >= 0")
        if self.q0 not in ("zero", "uniform"):
            raise ValueError(f"q0 must be 'zero' or 'uniform', got {self.q0!r}")
        if self.dt is None:
            object.__setattr__(self, "dt", 1.0 / self.T)
        if self.dt <= 0:
            raise ValueError("dt must be > 0")


def ou_step(s, spec: StatArbSpec, z):
    """Exact mean-reverting transition over one period (never Euler)."""
    decay = math.exp(-spec.kappa * spec.dt)
    sd = spec.sigma * math.sqrt((1.0 - decay * decay) / (2.0 * spec.kappa))
    return spec.mu + (np.asarray(s, dtype=float) - spec.mu) * decay + sd * np.asarray(z)


def ou_stationary_std(spec: StatArbSpec) -> float:
    return spec.sigma / math.sqrt(2.0 * spec.kappa)


class StatArbEnv(Env):
    """State (t/T, price, inventory); raw action squashed into (a_min, a_max).

    Trades are projected so inventory stays inside [q_min, q_max]; the
    executed quantity (post-projection) is what incurs costs.
    """

    def __init__(self, spec: StatArbSpec):
        super().__init__()
        self.spec = spec
        self.T = spec.T
        self.state_dim = 3
        self.obs_dim = 3
        self.action_dim = 1
        self.noise_dim = 1

    def draw_initial(self, rng) -> np.ndarray:
        sp = self.spec
        s0 = sp.mu + ou_stationary_std(sp) * rng.standard_normal()
        q0 = 0.0 if sp.q0 == "zero" else rng.uniform(sp.q_min, sp.q_max)
        return np.array([0.0, s0, q0])

    def squash(self, raw_actions):
        sp = self.spec
        raw = np.atleast_2d(raw_actions)[:, :1]
        return sp.a_min + (sp.a_max - sp.a_min) / (1.0 + np.exp(-raw))

    def _step(self, t, states, raw_actions, eps):
        sp = self.spec
        price = states[:, 1]
        q = states[:, 2]
        trade = self.squash(raw_actions)[:, 0]
        q_new = np.clip(q + trade, sp.q_min, sp.q_max)
        executed = q_new - q
        price_next = ou_step(price, sp, eps[:, 0])
        cost = executed * price + executed**2 * sp.phi1
        if t == self.T - 1:
            cost = cost - q_new * price_next + q_new**2 * sp.phi2
        nxt = np.stack(
            [np.full_like(price, (t + 1) / self.T), price_next, q_new], axis=1
        )
        return nxt, cost

    def grid_axes(self, n_price: int = 21, n_inv: int = 21):
        """Probe axes over (price, inventory) for tables and policy grids."""
        sp = self.spec
        sd = ou_stationary_std(sp)
        price = np.linspace(sp.mu - 3.5 * sd, sp.mu + 3.5 * sd, n_price)
        inv = np.linspace(sp.q_min, sp.q_max, n_inv)
        return price, inv
