"""Episodic simulator contracts shared by all market environments.

An environment exposes vectorised one-step transitions; a policy maps
(state, standard-normal draw) to a raw action.  Episodes draw all
randomness from a per-episode substream in a fixed order (initial state,
then policy draws, then transition noise), so batches are bit-reproducible
given the seed and episode index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Env",
    "DeterministicPolicy",
    "EpisodeBatch",
    "episode",
    "simulate_batch",
    "norm_cdf",
    "seed_entropy",
]

_erf = np.frompyfunc(math.erf, 1, 1)


def norm_cdf(x):
    """Standard normal CDF, elementwise."""
    return 0.5 * (1.0 + _erf(np.asarray(x, dtype=float) / math.sqrt(2.0)).astype(float))


def seed_entropy(seed) -> tuple[int, ...]:
    """Normalise a seed (int or tuple of ints) into SeedSequence entropy."""
    if isinstance(seed, (tuple, list)):
        return tuple(int(v) for v in seed)
    return (int(seed),)


class Env:
    """Base environment: subclasses fill in the transition kernel.

    Attributes set by subclasses: ``T`` (periods), ``state_dim`` (full
    state incl. bookkeeping), ``obs_dim`` (prefix of the state that
    policies/critics observe), ``action_dim`` (raw policy outputs) and
    ``noise_dim`` (standard-normal draws per transition).
    ``transition_count`` tallies every simulated one-step transition.
    """

    T: int
    state_dim: int
    obs_dim: int
    action_dim: int
    noise_dim: int
    initial_wealth: float = 0.0

    def __init__(self):
        self.transition_count = 0

    def draw_initial(self, rng) -> np.ndarray:
        raise NotImplementedError

    def _step(self, t, states, raw_actions, eps):
        raise NotImplementedError

    def step_vec(self, t: int, states, raw_actions, eps):
        """Vectorised transition; returns (next_states, costs) and counts."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        raw_actions = np.atleast_2d(np.asarray(raw_actions, dtype=float))
        eps = np.atleast_2d(np.asarray(eps, dtype=float))
        if states.shape[1] != self.state_dim:
            raise ValueError(
                f"state dim {states.shape[1]} != expected {self.state_dim}"
            )
        self.transition_count += states.shape[0]
        return self._step(t, states, raw_actions, eps)

    def squash(self, raw_actions):
        """Map raw policy outputs to environment-native actions."""
        return np.asarray(raw_actions, dtype=float)


class DeterministicPolicy:
    """Fixed raw action regardless of state; ignores the normal draw."""

    def __init__(self, raw, action_dim: int | None = None):
        raw = np.atleast_1d(np.asarray(raw, dtype=float))
        self.raw = raw if action_dim is None else np.broadcast_to(raw, (action_dim,))

    def raw_actions(self, states, z):
        states = np.atleast_2d(states)
        return np.broadcast_to(self.raw, (states.shape[0], self.raw.size)).copy()


@dataclass
class EpisodeBatch:
    """B full trajectories over T periods.

    ``states``: (B, T+1, state_dim); ``actions``: (B, T, env action dim),
    already squashed; ``costs``: (B, T); ``raw_actions``: (B, T,
    action_dim) raw policy samples, kept so log-densities can be
    re-evaluated exactly.
    """

    states: np.ndarray
    actions: np.ndarray
    costs: np.ndarray
    raw_actions: np.ndarray

    @property
    def B(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.costs.shape[1]


def _rollout(env: Env, policy, s0, Z, E) -> EpisodeBatch:
    B = s0.shape[0]
    T = env.T
    states = np.empty((B, T + 1, env.state_dim))
    costs = np.empty((B, T))
    raws = np.empty((B, T, env.action_dim))
    actions = None
    states[:, 0] = s0
    for t in range(T):
        raw = policy.raw_actions(states[:, t], Z[:, t])
        raws[:, t] = raw
        squashed = np.atleast_2d(env.squash(raw))
        if actions is None:
            actions = np.empty((B, T, squashed.shape[1]))
        actions[:, t] = squashed
        states[:, t + 1], costs[:, t] = env.step_vec(t, states[:, t], raw, E[:, t])
    return EpisodeBatch(states=states, actions=actions, costs=costs, raw_actions=raws)


def episode(env: Env, policy, rng) -> EpisodeBatch:
    """Simulate one trajectory; draws (initial, policy normals, noise) in order."""
    s0 = np.asarray(env.draw_initial(rng), dtype=float)[None, :]
    Z = rng.standard_normal((1, env.T, env.action_dim))
    E = rng.standard_normal((1, env.T, env.noise_dim))
    return _rollout(env, policy, s0, Z, E)


def simulate_batch(env: Env, policy, B: int, seed) -> EpisodeBatch:
    """Simulate B independent episodes; episode b uses substream (seed, b)."""
    if B < 1:
        raise ValueError("B must be at least 1")
    base = seed_entropy(seed)
    s0 = np.empty((B, env.state_dim))
    Z = np.empty((B, env.T, env.action_dim))
    E = np.empty((B, env.T, env.noise_dim))
    for b in range(B):
        rng = np.random.default_rng(base + (b,))
        s0[b] = env.draw_initial(rng)
        Z[b] = rng.standard_normal((env.T, env.action_dim))
        E[b] = rng.standard_normal((env.T, env.noise_dim))
    return _rollout(env, policy, s0, Z, E)
