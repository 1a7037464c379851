"""Value estimation by deep composite regression with consistent scores.

The value of a fixed policy decomposes into one network per risk
component: the first VaR level, nonnegative increments between successive
VaR levels, and a nonnegative gap between the spectral risk and the
weighted VaR combination.  Summing softplus heads keeps the implied VaR
estimates ordered and the risk estimate dominant without constraints.

Training minimises the summed consistent score of the composed estimates
against realised running risk-to-go, where the continuation value inside
the realised target comes from slowly updated target copies.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .envs.base import Env, simulate_batch, seed_entropy
from .neural import Mlp, NumericalError, OptimState, sync_target
from .risk import (
    BoundViolationError,
    ScoreParams,
    Spectrum,
    score_spectral_batch,
    score_spectral_grad_batch,
)

__all__ = ["ValueEnsemble", "CriticConfig", "compose_value", "critic_loss",
           "critic_loss_and_grads", "train_critic", "PHASE_CRITIC", "PHASE_ACTOR"]

PHASE_CRITIC = 0
PHASE_ACTOR = 1


@dataclass
class CriticConfig:
    epochs: int = 1000
    batch: int = 750
    target_interval: int = 400
    lr: float = 5e-3
    lr_decay: float = 0.95
    lr_decay_interval: int = 100
    lr_floor: float = 0.0
    hidden: tuple[int, ...] = (16, 16, 16, 16, 16)


class ValueEnsemble:
    """k networks composing (VaR levels, value); slow target copies included.

    Head 0 has an identity output; heads 1..k-1 are softplus, so
    cumulative sums of heads (the implied VaR levels) are nondecreasing
    and the value dominates the weighted VaR combination.
    """

    def __init__(self, spectrum: Spectrum, obs_dim: int,
                 hidden=(16, 16, 16, 16, 16), rng=None, lr_config: CriticConfig | None = None):
        self.spectrum = spectrum
        self.obs_dim = obs_dim
        k = spectrum.n_atoms + 1
        sizes = [obs_dim, *hidden, 1]
        self.nets = []
        for i in range(k):
            output = ("identity",) if i == 0 else ("softplus",)
            self.nets.append(Mlp(sizes, output=output, rng=rng))
        self.targets = [net.clone() for net in self.nets]
        cfg = lr_config or CriticConfig()
        self.opts = [
            OptimState(
                n_params=net.n_params,
                lr=cfg.lr,
                decay=cfg.lr_decay,
                decay_interval=cfg.lr_decay_interval,
                floor=cfg.lr_floor,
            )
            for net in self.nets
        ]

    @property
    def k(self) -> int:
        return len(self.nets)

    def _obs(self, states):
        return np.atleast_2d(states)[:, : self.obs_dim]

    def head_values(self, states, use_target=False, keep_cache=False):
        obs = self._obs(states)
        nets = self.targets if use_target else self.nets
        outs, caches = [], []
        for net in nets:
            y, cache = net.forward_cached(obs, keep=keep_cache)
            outs.append(y[:, 0])
            caches.append(cache)
        return np.stack(outs, axis=1), caches

    def sync_targets(self) -> None:
        for net, tgt in zip(self.nets, self.targets):
            sync_target(net, tgt)


def compose_value(heads: np.ndarray, spectrum: Spectrum):
    """Compose head outputs (N, k) into VaR levels (N, k-1) and values (N,)."""
    heads = np.atleast_2d(heads)
    k1 = spectrum.n_atoms
    var_levels = np.cumsum(heads[:, :k1], axis=1)
    value = heads[:, k1] + var_levels @ np.asarray(spectrum.weights)
    return var_levels, value


def ensemble_value(ensemble: ValueEnsemble, states, use_target=False):
    heads, _ = ensemble.head_values(states, use_target=use_target)
    return compose_value(heads, ensemble.spectrum)


def _flatten_targets(batch, ensemble: ValueEnsemble, C: float):
    """Realised running risk-to-go per (b, t), flattened in batch-major order.

    Interior periods add the target-net continuation value to the cost;
    the terminal period uses the cost alone.
    """
    B, T = batch.costs.shape
    y = batch.costs.copy()
    if T > 1:
        nxt = batch.states[:, 1:T].reshape(B * (T - 1), -1)
        _, v_next = ensemble_value(ensemble, nxt, use_target=True)
        y[:, : T - 1] += v_next.reshape(B, T - 1)
    bad = y + C <= 0.0
    if bad.any():
        b, t = np.argwhere(bad)[0]
        raise BoundViolationError(
            f"running risk-to-go {y[b, t]!r} at (t={t}, b={b}) breaches the "
            f"declared bound -C={-C!r}; enlarge the cost bound"
        )
    return y.reshape(-1)


def critic_loss(ensemble: ValueEnsemble, batch, score: ScoreParams) -> float:
    """Summed consistent score of current-net estimates against realisations."""
    B, T = batch.costs.shape
    y = _flatten_targets(batch, ensemble, score.cost_bound_C)
    states = batch.states[:, :T].reshape(B * T, -1)
    heads, _ = ensemble.head_values(states)
    var_levels, value = compose_value(heads, ensemble.spectrum)
    if np.any(value + score.cost_bound_C <= 0.0):
        i = int(np.argmax(value + score.cost_bound_C <= 0.0))
        b, t = divmod(i, T)
        raise BoundViolationError(
            f"value estimate {value[i]!r} at (t={t}, b={b}) breaches the bound"
        )
    return float(np.sum(score_spectral_batch(var_levels, value, y, score)))


def critic_loss_and_grads(ensemble: ValueEnsemble, batch, score: ScoreParams):
    """Loss plus per-network parameter gradients.

    Score derivatives are chained through the cumulative-sum composition;
    indicators inside the score are constants of the forward pass.
    """
    B, T = batch.costs.shape
    k1 = ensemble.spectrum.n_atoms
    weights = np.asarray(ensemble.spectrum.weights)
    y = _flatten_targets(ensemble=ensemble, batch=batch, C=score.cost_bound_C)
    states = batch.states[:, :T].reshape(B * T, -1)
    heads, caches = ensemble.head_values(states, keep_cache=True)
    var_levels, value = compose_value(heads, ensemble.spectrum)
    if np.any(value + score.cost_bound_C <= 0.0):
        i = int(np.argmax(value + score.cost_bound_C <= 0.0))
        b, t = divmod(i, T)
        raise BoundViolationError(
            f"value estimate {value[i]!r} at (t={t}, b={b}) breaches the bound"
        )
    loss = float(np.sum(score_spectral_batch(var_levels, value, y, score)))
    d_var, d_risk = score_spectral_grad_batch(var_levels, value, y, score)
    # d loss / d head_l: heads 0..k1-1 feed all var levels m >= l and the
    # value through the weighted composition; head k1 feeds the value only.
    tail_dvar = np.cumsum(d_var[:, ::-1], axis=1)[:, ::-1]  # sum_{m>=l} dS/da_m
    tail_w = np.cumsum(weights[::-1])[::-1]  # sum_{m>=l} p_m
    seeds = np.empty((states.shape[0], k1 + 1))
    seeds[:, :k1] = tail_dvar + tail_w[None, :] * d_risk[:, None]
    seeds[:, k1] = d_risk
    grads = []
    for i, net in enumerate(ensemble.nets):
        gw, gb = net.backward(caches[i], seeds[:, i : i + 1])
        grads.append(Mlp.flatten_grads(gw, gb))
    return loss, grads


def train_critic(
    ensemble: ValueEnsemble,
    env: Env,
    policy,
    score: ScoreParams,
    epochs: int,
    batch_size: int,
    target_interval: int,
    seed,
    iteration: int = 0,
    trace=None,
):
    """Fit the ensemble to the policy's value function; returns loss history.

    Every epoch simulates a fresh on-policy batch, takes one Adam step per
    head, ticks the schedules, and hard-copies the targets every
    ``target_interval`` epochs.  Deterministic given the seed.
    """
    if target_interval < 1:
        raise ValueError("target_interval must be >= 1")
    base = seed_entropy(seed)
    losses = []
    for epoch in range(1, epochs + 1):
        batch = simulate_batch(
            env, policy, batch_size, base + (PHASE_CRITIC, iteration, epoch)
        )
        loss, grads = critic_loss_and_grads(ensemble, batch, score)
        if not np.isfinite(loss):
            raise NumericalError(
                f"critic loss non-finite at iteration {iteration}, epoch {epoch}"
            )
        for net, opt, g in zip(ensemble.nets, ensemble.opts, grads):
            net.set_flat(opt.step(net.get_flat(), g))
            opt.schedule_step()
        if epoch % target_interval == 0:
            ensemble.sync_targets()
        losses.append(loss)
        if trace is not None:
            trace.add("critic", iteration, epoch, loss, ensemble.opts[0].lr)
    return losses
