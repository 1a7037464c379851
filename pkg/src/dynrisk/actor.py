"""Policy-gradient updates driven by the critic's saddle-point estimates.

The gradient of the one-step risk recursion reduces to a positive-part
weighted score-function estimator: transitions whose realised running
risk-to-go exceeds the critic's VaR level contribute, weighted by the
spectrum, and everything value-related is treated as a constant.  The
mini-batch is inflated by 1/(1 - alpha_min) so the expected number of
contributing transitions stays comparable to the risk-neutral case.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .critic import (
    PHASE_ACTOR,
    CriticConfig,
    ValueEnsemble,
    ensemble_value,
    train_critic,
)
from .envs.base import Env, simulate_batch, seed_entropy
from .neural import NumericalError, OptimState
from .risk import ScoreParams, Spectrum

__all__ = ["ActorConfig", "TrainConfig", "actor_loss", "actor_weights",
           "actor_loss_and_grads", "train_actor", "run_actor_critic"]


@dataclass
class ActorConfig:
    epochs: int = 30
    batch: int = 500
    lr: float = 4e-3
    lr_decay: float = 0.95
    lr_decay_interval: int = 50
    lr_floor: float = 5e-4

    def effective_batch(self, spectrum: Spectrum) -> int:
        """Mini-batch inflated by the smallest spectrum threshold's tail."""
        return math.ceil(self.batch / (1.0 - spectrum.alpha_min) - 1e-9)


@dataclass
class TrainConfig:
    iterations: int = 1500
    critic: CriticConfig = field(default_factory=CriticConfig)
    actor: ActorConfig = field(default_factory=ActorConfig)
    hidden: tuple[int, ...] = (16, 16, 16, 16, 16)
    snapshot_interval: int = 0  # 0 disables periodic evaluation snapshots
    eval_episodes: int = 10_000


def actor_weights(policy, ensemble: ValueEnsemble, batch):
    """Per-transition positive-part weights, all value terms held constant.

    Interior periods use cost plus current-net continuation value; the
    terminal period uses the cost alone.  Weight of transition (b, t) is
    sum_m (p_m / (1 - alpha_m)) * max(0, y - VaR_m(s_t)).
    """
    spectrum = ensemble.spectrum
    B, T = batch.costs.shape
    y = batch.costs.copy()
    if T > 1:
        nxt = batch.states[:, 1:T].reshape(B * (T - 1), -1)
        _, v_next = ensemble_value(ensemble, nxt)
        y[:, : T - 1] += v_next.reshape(B, T - 1)
    states = batch.states[:, :T].reshape(B * T, -1)
    var_levels, _ = ensemble_value(ensemble, states)
    alphas = np.asarray(spectrum.thresholds)
    weights = np.asarray(spectrum.weights)
    excess = np.clip(y.reshape(-1)[:, None] - var_levels, 0.0, None)
    return excess @ (weights / (1.0 - alphas))


def actor_loss(policy, ensemble: ValueEnsemble, batch) -> float:
    """Surrogate loss: weighted sum of log-densities of the taken actions."""
    B, T = batch.costs.shape
    w = actor_weights(policy, ensemble, batch)
    states = batch.states[:, :T].reshape(B * T, -1)
    raw = batch.raw_actions.reshape(B * T, -1)
    return float(np.dot(w, policy.log_prob(states, raw)))


def actor_loss_and_grads(policy, ensemble: ValueEnsemble, batch):
    B, T = batch.costs.shape
    w = actor_weights(policy, ensemble, batch)
    states = batch.states[:, :T].reshape(B * T, -1)
    raw = batch.raw_actions.reshape(B * T, -1)
    return policy.weighted_logprob_grad(states, raw, w)


def _policy_grad_flat(policy, grad_parts):
    """Stack the policy gradient parts into the flat parameter layout."""
    if len(grad_parts) == 3:  # Gaussian: value, (gw, gb), g_log_std
        from .neural import Mlp

        _, (gw, gb), g_log_std = grad_parts
        return np.concatenate([Mlp.flatten_grads(gw, gb), g_log_std])
    _, grad = grad_parts
    return grad.reshape(-1)


def train_actor(
    policy,
    ensemble: ValueEnsemble,
    env: Env,
    cfg: ActorConfig,
    opt: OptimState,
    seed,
    iteration: int = 0,
    trace=None,
):
    """Run actor epochs with fresh weighted batches; returns loss history."""
    base = seed_entropy(seed)
    eff_batch = cfg.effective_batch(ensemble.spectrum)
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        batch = simulate_batch(
            env, policy, eff_batch, base + (PHASE_ACTOR, iteration, epoch)
        )
        parts = actor_loss_and_grads(policy, ensemble, batch)
        loss = parts[0]
        if not np.isfinite(loss):
            raise NumericalError(
                f"actor loss non-finite at iteration {iteration}, epoch {epoch}"
            )
        grad = _policy_grad_flat(policy, parts)
        policy.set_flat(opt.step(policy.get_flat(), grad))
        if hasattr(policy, "clip_log_std"):
            policy.clip_log_std()
        opt.schedule_step()
        losses.append(loss)
        if trace is not None:
            trace.add("actor", iteration, epoch, loss, opt.lr)
    return losses


def run_actor_critic(
    env: Env,
    spectrum: Spectrum,
    policy,
    score: ScoreParams,
    config: TrainConfig,
    seed,
    out_dir=None,
    ensemble: ValueEnsemble | None = None,
):
    """Alternate critic and actor phases for ``config.iterations`` rounds.

    Returns (policy, ensemble, ledger dict).  When ``out_dir`` is given,
    checkpoints, loss traces and evaluation snapshots are written there;
    partial artifacts are flushed if a phase aborts.
    """
    from . import artifacts

    base = seed_entropy(seed)
    if ensemble is None:
        ensemble = ValueEnsemble(
            spectrum,
            env.obs_dim,
            hidden=config.hidden,
            rng=np.random.default_rng(base + (101,)),
            lr_config=config.critic,
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
        "method": "elicitable",
        "iterations": config.iterations,
        "critic_transitions": 0,
        "actor_transitions": 0,
    }
    if out_dir is not None:
        artifacts.save_policy(out_dir / "policy_initial.npz", policy)
        artifacts.save_ensemble(out_dir / "ensemble_initial.npz", ensemble)
    t_start = time.perf_counter()
    try:
        for it in range(1, config.iterations + 1):
            before = env.transition_count
            train_critic(
                ensemble,
                env,
                policy,
                score,
                epochs=config.critic.epochs,
                batch_size=config.critic.batch,
                target_interval=config.critic.target_interval,
                seed=base,
                iteration=it,
                trace=trace,
            )
            mid = env.transition_count
            train_actor(
                policy,
                ensemble,
                env,
                config.actor,
                actor_opt,
                seed=base,
                iteration=it,
                trace=trace,
            )
            after = env.transition_count
            ledger["critic_transitions"] += mid - before
            ledger["actor_transitions"] += after - mid
            if (
                out_dir is not None
                and config.snapshot_interval
                and it % config.snapshot_interval == 0
            ):
                snap = out_dir / "snapshots" / f"iter_{it:05d}"
                artifacts.write_eval_artifacts(
                    snap, env, policy, spectrum,
                    episodes=min(config.eval_episodes, 2000),
                    seed=base + (999, it),
                )
    finally:
        ledger["wall_time_s"] = time.perf_counter() - t_start
        ledger["total_transitions"] = (
            ledger["critic_transitions"] + ledger["actor_transitions"]
        )
        if config.iterations > 0 and config.critic.epochs > 0:
            ledger["critic_transitions_per_epoch"] = ledger["critic_transitions"] / (
                config.iterations * config.critic.epochs
            )
        if out_dir is not None:
            trace.flush()
            artifacts.save_policy(out_dir / "policy_final.npz", policy)
            artifacts.save_ensemble(out_dir / "ensemble_final.npz", ensemble)
            artifacts.write_ledger(out_dir / "run_ledger.csv", ledger)
    return policy, ensemble, ledger
