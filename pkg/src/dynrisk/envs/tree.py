"""Finite decision trees wrapped as episodic environments.

States are (t/T, node id); the policy's raw output is interpreted as a
discrete action index (tabular policies emit indices directly).  Chance
edges are resolved by mapping the transition noise through the normal CDF
into a uniform draw.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from ..oracle import FiniteTreeMdp
from .base import Env, norm_cdf

__all__ = ["TreeEnv", "load_bundled_tree"]


def load_bundled_tree() -> FiniteTreeMdp:
    """The two-period up/down tree that ships with the package."""
    path = resources.files("dynrisk.data").joinpath("two_period_tree.txt")
    with resources.as_file(path) as p:
        return FiniteTreeMdp.from_file(p)


class TreeEnv(Env):
    def __init__(self, mdp: FiniteTreeMdp):
        super().__init__()
        self.mdp = mdp
        self.T = mdp.T
        self.state_dim = 2
        self.obs_dim = 2
        self.action_dim = 1
        self.noise_dim = 1
        self.n_actions = max(len(a) for a in mdp.actions.values() if a)
        # Dense per-(node, action) edge tables for vectorised stepping.
        self._cum = {}
        self._child = {}
        self._cost = {}
        for node, acts in mdp.actions.items():
            for a, edges in enumerate(acts):
                probs = np.array([p for p, _, _ in edges])
                self._cum[(node, a)] = np.cumsum(probs)
                self._child[(node, a)] = np.array([c for _, c, _ in edges])
                self._cost[(node, a)] = np.array([c for _, _, c in edges])

    def draw_initial(self, rng) -> np.ndarray:
        return np.array([0.0, float(self.mdp.root)])

    def squash(self, raw_actions):
        raw = np.atleast_2d(raw_actions)[:, :1]
        return np.clip(np.rint(raw), 0, self.n_actions - 1)

    def _step(self, t, states, raw_actions, eps):
        nodes = states[:, 1].astype(int)
        acts = self.squash(raw_actions)[:, 0].astype(int)
        u = norm_cdf(eps[:, 0])
        nxt_node = np.empty(states.shape[0], dtype=int)
        cost = np.empty(states.shape[0])
        for key in set(zip(nodes.tolist(), acts.tolist())):
            mask = (nodes == key[0]) & (acts == key[1])
            a = min(key[1], len(self.mdp.actions[key[0]]) - 1)
            cum = self._cum[(key[0], a)]
            idx = np.searchsorted(cum, u[mask], side="left")
            idx = np.minimum(idx, cum.size - 1)
            nxt_node[mask] = self._child[(key[0], a)][idx]
            cost[mask] = self._cost[(key[0], a)][idx]
        nxt = np.stack(
            [np.full(states.shape[0], (t + 1) / self.T), nxt_node.astype(float)], axis=1
        )
        return nxt, cost
