"""Nested-simulation baseline: inner transitions instead of scoring functions.

The comparison method regresses a single value network on Monte-Carlo risk
targets computed from extra one-step transitions at every visited state,
and re-estimates the policy update's VaR multiplier from the same inner
samples.  It needs inner_M times the simulated transitions per critic
epoch that the score-based critic does, which is the whole point of the
comparison.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .actor import ActorConfig
from .critic import PHASE_ACTOR, PHASE_CRITIC
from .envs.base import Env, simulate_batch, seed_entropy
from .neural import Mlp, NumericalError, OptimState
from .oracle import empirical_spectral_axis, empirical_var_axis
from .risk import Spectrum

__all__ = ["NestedConfig", "NestedTrainConfig", "nested_targets", "run_nested"]


@dataclass
class NestedConfig:
    inner_M: int = 100
    epochs: int = 1000
    batch: int = 750
    target_interval: int = 400
    lr: float = 5e-3
    lr_decay: float = 0.95
    lr_decay_interval: int = 100
    lr_floor: float = 0.0
    hidden: tuple[int, ...] = (16, 16, 16, 16, 16)

    def __post_init__(self):
        if self.inner_M < 2:
            raise ValueError("inner_M must be >= 2 to resolve a tail")


@dataclass
class NestedTrainConfig:
    iterations: int = 1500
    critic: NestedConfig = field(default_factory=NestedConfig)
    actor: ActorConfig = field(default_factory=ActorConfig)
    snapshot_interval: int = 0
    eval_episodes: int = 10_000


def nested_targets(
    env: Env,
    policy,
    states,
    periods,
    value_net_target: Mlp | None,
    inner_M: int,
    spectrum: Spectrum,
    rng,
):
    """Monte-Carlo risk targets and VaR levels for each visited state.

    Simulates ``inner_M`` one-step transitions per state (actions
    resampled each time); interior states add the target net's value at
    the sampled next state, terminal states use the cost alone.  Returns
    (targets (N,), var_levels (N, k-1)).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    periods = np.asarray(periods, dtype=int)
    n = states.shape[0]
    targets = np.empty(n)
    var_levels = np.empty((n, spectrum.n_atoms))
    for t in np.unique(periods):
        mask = periods == t
        block = states[mask]
        m = block.shape[0]
        rep = np.repeat(block, inner_M, axis=0)
        z = rng.standard_normal((m * inner_M, env.action_dim))
        eps = rng.standard_normal((m * inner_M, env.noise_dim))
        raw = policy.raw_actions(rep, z)
        nxt, costs = env.step_vec(int(t), rep, raw, eps)
        if t == env.T - 1 or value_net_target is None:
            y = costs
        else:
            y = costs + value_net_target.forward(nxt[:, : value_net_target.sizes[0]])[:, 0]
        y = y.reshape(m, inner_M)
        targets[mask] = empirical_spectral_axis(y, spectrum)
        for j, alpha in enumerate(spectrum.thresholds):
            var_levels[mask, j] = empirical_var_axis(y, alpha)
    return targets, var_levels


def run_nested(
    env: Env,
    spectrum: Spectrum,
    policy,
    config: NestedTrainConfig,
    seed,
    out_dir=None,
    value_net: Mlp | None = None,
):
    """Actor-critic alternation with nested Monte-Carlo critic targets.

    Same alternation shape as the score-based training loop: per
    iteration, critic epochs of squared-error regression on nested
    targets, then actor epochs reusing inner samples for the VaR
    multiplier.  Returns (policy, value_net, ledger).
    """
    from . import artifacts

    base = seed_entropy(seed)
    ncfg = config.critic
    if value_net is None:
        value_net = Mlp(
            [env.obs_dim, *ncfg.hidden, 1],
            output=("identity",),
            rng=np.random.default_rng(base + (102,)),
        )
    value_target = value_net.clone()
    value_opt = OptimState(
        n_params=value_net.n_params,
        lr=ncfg.lr,
        decay=ncfg.lr_decay,
        decay_interval=ncfg.lr_decay_interval,
        floor=ncfg.lr_floor,
    )
    actor_opt = OptimState(
        n_params=policy.n_params,
        lr=config.actor.lr,
        decay=config.actor.lr_decay,
        decay_interval=config.actor.lr_decay_interval,
        floor=config.actor.lr_floor,
    )
    trace = artifacts.TraceWriter(out_dir / "loss_trace.csv" if out_dir else None)
    ledger = {
        "method": "nested",
        "iterations": config.iterations,
        "inner_M": ncfg.inner_M,
        "critic_outer_transitions": 0,
        "critic_inner_transitions": 0,
        "actor_outer_transitions": 0,
        "actor_inner_transitions": 0,
    }
    if out_dir is not None:
        artifacts.save_policy(out_dir / "policy_initial.npz", policy)
        artifacts.save_mlp(out_dir / "value_net_initial.npz", value_net)
    t_start = time.perf_counter()
    try:
        for it in range(1, config.iterations + 1):
            # Critic: squared-error regression on nested targets.
            for epoch in range(1, ncfg.epochs + 1):
                before = env.transition_count
                batch = simulate_batch(
                    env, policy, ncfg.batch, base + (PHASE_CRITIC, it, epoch)
                )
                outer = env.transition_count - before
                B, T = batch.costs.shape
                states = batch.states[:, :T].reshape(B * T, -1)
                periods = np.repeat(np.arange(T)[None, :], B, axis=0).reshape(-1)
                rng = np.random.default_rng(base + (PHASE_CRITIC, it, epoch, 7))
                before_inner = env.transition_count
                targets, _ = nested_targets(
                    env, policy, states, periods, value_target,
                    ncfg.inner_M, spectrum, rng,
                )
                inner = env.transition_count - before_inner
                obs = states[:, : env.obs_dim]
                pred, cache = value_net.forward_cached(obs)
                resid = pred[:, 0] - targets
                loss = float(np.sum(resid**2))
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"nested critic loss non-finite at ({it}, {epoch})"
                    )
                gw, gb = value_net.backward(cache, (2.0 * resid)[:, None])
                value_net.set_flat(
                    value_opt.step(value_net.get_flat(), Mlp.flatten_grads(gw, gb))
                )
                value_opt.schedule_step()
                if epoch % ncfg.target_interval == 0:
                    value_target = value_net.clone()
                ledger["critic_outer_transitions"] += outer
                ledger["critic_inner_transitions"] += inner
                trace.add("critic", it, epoch, loss, value_opt.lr)
            # Actor: policy gradient with inner-sample VaR multipliers.
            eff_batch = config.actor.effective_batch(spectrum)
            for epoch in range(1, config.actor.epochs + 1):
                before = env.transition_count
                batch = simulate_batch(
                    env, policy, eff_batch, base + (PHASE_ACTOR, it, epoch)
                )
                outer = env.transition_count - before
                B, T = batch.costs.shape
                states = batch.states[:, :T].reshape(B * T, -1)
                periods = np.repeat(np.arange(T)[None, :], B, axis=0).reshape(-1)
                rng = np.random.default_rng(base + (PHASE_ACTOR, it, epoch, 7))
                before_inner = env.transition_count
                _, var_levels = nested_targets(
                    env, policy, states, periods, value_target,
                    ncfg.inner_M, spectrum, rng,
                )
                inner = env.transition_count - before_inner
                y = batch.costs.copy()
                if T > 1:
                    nxt = batch.states[:, 1:T].reshape(B * (T - 1), -1)
                    y[:, : T - 1] += value_net.forward(nxt[:, : env.obs_dim])[:, 0].reshape(
                        B, T - 1
                    )
                alphas = np.asarray(spectrum.thresholds)
                wts = np.asarray(spectrum.weights)
                excess = np.clip(y.reshape(-1)[:, None] - var_levels, 0.0, None)
                w = excess @ (wts / (1.0 - alphas))
                raw = batch.raw_actions.reshape(B * T, -1)
                parts = policy.weighted_logprob_grad(states, raw, w)
                loss = parts[0]
                if not np.isfinite(loss):
                    raise NumericalError(
                        f"nested actor loss non-finite at ({it}, {epoch})"
                    )
                from .actor import _policy_grad_flat

                policy.set_flat(actor_opt.step(policy.get_flat(), _policy_grad_flat(policy, parts)))
                if hasattr(policy, "clip_log_std"):
                    policy.clip_log_std()
                actor_opt.schedule_step()
                ledger["actor_outer_transitions"] += outer
                ledger["actor_inner_transitions"] += inner
                trace.add("actor", it, epoch, loss, actor_opt.lr)
    finally:
        ledger["wall_time_s"] = time.perf_counter() - t_start
        ledger["total_transitions"] = sum(
            v for k, v in ledger.items() if k.endswith("_transitions")
        )
        if config.iterations > 0 and ncfg.epochs > 0:
            ledger["critic_inner_transitions_per_epoch"] = ledger[
                "critic_inner_transitions"
            ] / (config.iterations * ncfg.epochs)
        if out_dir is not None:
            trace.flush()
            artifacts.save_policy(out_dir / "policy_final.npz", policy)
            artifacts.save_mlp(out_dir / "value_net_final.npz", value_net)
            artifacts.write_ledger(out_dir / "run_ledger.csv", ledger)
    return policy, value_net, ledger
