"""Tiny deterministic environments used for smoke tests and sanity checks."""

from __future__ import annotations

import numpy as np

from .base import Env

__all__ = ["ConstantCostEnv"]


class ConstantCostEnv(Env):
    """Every transition costs the same constant, whatever the action."""

    def __init__(self, T: int = 3, cost: float = 1.0, action_dim: int = 1):
        super().__init__()
        self.T = T
        self.cost = cost
        self.state_dim = 2
        self.obs_dim = 2
        self.action_dim = action_dim
        self.noise_dim = 1

    def draw_initial(self, rng) -> np.ndarray:
        return np.array([0.0, 0.0])

    def _step(self, t, states, raw_actions, eps):
        n = states.shape[0]
        nxt = np.stack([np.full(n, (t + 1) / self.T), np.zeros(n)], axis=1)
        return nxt, np.full(n, self.cost)
