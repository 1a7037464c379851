"""Run artifacts: checkpoints, loss traces, evaluation CSVs, run ledger.

All CSVs are comma-separated UTF-8 with a header row; floats print with 9
significant digits.  Checkpoints are versioned npz archives that
round-trip parameters bit-exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .critic import CriticConfig, ValueEnsemble
from .envs.base import Env, simulate_batch
from .envs.portfolio import PortfolioEnv
from .envs.statarb import StatArbEnv
from .envs.tree import TreeEnv
from .envs.vecm import VecmEnv
from .neural import GaussianPolicy, Mlp, TabularSoftmaxPolicy
from .oracle import empirical_cvar, empirical_var
from .risk import Spectrum

CHECKPOINT_VERSION = 1

__all__ = [
    "fmt",
    "write_csv",
    "write_ledger",
    "read_ledger",
    "TraceWriter",
    "save_mlp",
    "load_mlp",
    "save_policy",
    "load_policy",
    "save_ensemble",
    "load_ensemble",
    "eval_episodes",
    "policy_grid_rows",
    "write_eval_artifacts",
]


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.9g}"
    return str(x)


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def write_ledger(path, ledger: dict) -> None:
    write_csv(path, ["key", "value"], sorted(ledger.items()))


def read_ledger(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["key"]] = row["value"]
    return out


class TraceWriter:
    """Appends (phase, iteration, epoch, loss, lr) rows to a CSV."""

    HEADER = ["phase", "iteration", "epoch", "loss", "lr"]

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self._fh = None
        self._writer = None

    def add(self, phase, iteration, epoch, loss, lr) -> None:
        if self.path is None:
            return
        if self._writer is None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            new = not self.path.exists()
            self._fh = open(self.path, "a", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh)
            if new:
                self._writer.writerow(self.HEADER)
        self._writer.writerow([phase, iteration, epoch, fmt(loss), fmt(lr)])

    def flush(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
            self._writer = None


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def _output_tag_arrays(tag):
    kind = tag[0]
    params = np.asarray(tag[1:], dtype=float)
    return np.str_(kind), params


def _output_tag_from(kind, params):
    kind = str(kind)
    if params.size:
        return (kind, *(float(p) for p in params))
    return (kind,)


def _mlp_payload(prefix, net: Mlp) -> dict:
    kind, params = _output_tag_arrays(net.output)
    return {
        f"{prefix}sizes": np.asarray(net.sizes),
        f"{prefix}output_kind": kind,
        f"{prefix}output_params": params,
        f"{prefix}params": net.get_flat(),
    }


def _mlp_from_payload(prefix, data) -> Mlp:
    net = Mlp(
        [int(s) for s in data[f"{prefix}sizes"]],
        output=_output_tag_from(data[f"{prefix}output_kind"], data[f"{prefix}output_params"]),
    )
    net.set_flat(np.asarray(data[f"{prefix}params"], dtype=float))
    return net


def _save(path, payload: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, version=np.asarray(CHECKPOINT_VERSION), **payload)


def save_mlp(path, net: Mlp, counters: dict | None = None) -> None:
    payload = {"kind": np.str_("mlp")}
    payload.update(_mlp_payload("net_", net))
    if counters:
        for key, val in counters.items():
            payload[f"counter_{key}"] = np.asarray(val)
    _save(path, payload)


def load_mlp(path) -> Mlp:
    with np.load(path, allow_pickle=False) as data:
        return _mlp_from_payload("net_", data)


def save_policy(path, policy, counters: dict | None = None) -> None:
    if isinstance(policy, GaussianPolicy):
        payload = {"kind": np.str_("gaussian_policy")}
        payload.update(_mlp_payload("net_", policy.net))
        payload["log_std"] = policy.log_std
        payload["obs_dim"] = np.asarray(policy.obs_dim)
    elif isinstance(policy, TabularSoftmaxPolicy):
        payload = {"kind": np.str_("tabular_policy"), "theta": policy.theta}
    else:
        raise TypeError(f"cannot checkpoint policy of type {type(policy)!r}")
    if counters:
        for key, val in counters.items():
            payload[f"counter_{key}"] = np.asarray(val)
    _save(path, payload)


def load_policy(path):
    with np.load(path, allow_pickle=False) as data:
        kind = str(data["kind"])
        if kind == "gaussian_policy":
            net = _mlp_from_payload("net_", data)
            policy = GaussianPolicy(net, obs_dim=int(data["obs_dim"]))
            policy.log_std = np.asarray(data["log_std"], dtype=float).copy()
            return policy
        if kind == "tabular_policy":
            theta = np.asarray(data["theta"], dtype=float)
            policy = TabularSoftmaxPolicy(theta.shape[0], theta.shape[1])
            policy.theta = theta.copy()
            return policy
        raise ValueError(f"unknown checkpoint kind {kind!r}")


def save_ensemble(path, ensemble: ValueEnsemble, counters: dict | None = None) -> None:
    payload = {
        "kind": np.str_("value_ensemble"),
        "thresholds": np.asarray(ensemble.spectrum.thresholds),
        "weights": np.asarray(ensemble.spectrum.weights),
        "obs_dim": np.asarray(ensemble.obs_dim),
    }
    for i, (net, tgt, opt) in enumerate(
        zip(ensemble.nets, ensemble.targets, ensemble.opts)
    ):
        payload.update(_mlp_payload(f"net{i}_", net))
        payload[f"target{i}_params"] = tgt.get_flat()
        for key, val in opt.state_arrays().items():
            payload[f"opt{i}_{key}"] = val
    if counters:
        for key, val in counters.items():
            payload[f"counter_{key}"] = np.asarray(val)
    _save(path, payload)


def load_ensemble(path, lr_config: CriticConfig | None = None) -> ValueEnsemble:
    with np.load(path, allow_pickle=False) as data:
        spectrum = Spectrum(
            tuple(float(a) for a in data["thresholds"]),
            tuple(float(p) for p in data["weights"]),
        )
        sizes = [int(s) for s in data["net0_sizes"]]
        ensemble = ValueEnsemble(
            spectrum,
            obs_dim=int(data["obs_dim"]),
            hidden=tuple(sizes[1:-1]),
            lr_config=lr_config,
        )
        for i in range(ensemble.k):
            ensemble.nets[i] = _mlp_from_payload(f"net{i}_", data)
            ensemble.targets[i] = ensemble.nets[i].clone()
            ensemble.targets[i].set_flat(np.asarray(data[f"target{i}_params"], dtype=float))
            ensemble.opts[i].load_state_arrays(
                {key: data[f"opt{i}_{key}"] for key in ("m", "v", "t", "epochs", "lr")}
            )
    return ensemble


# ---------------------------------------------------------------------------
# Evaluation exports
# ---------------------------------------------------------------------------

def eval_episodes(env: Env, policy, episodes: int, seed):
    """Roll out evaluation episodes; returns (batch, wealth paths (B, T+1))."""
    batch = simulate_batch(env, policy, episodes, seed)
    wealth = env.initial_wealth - np.concatenate(
        [np.zeros((batch.B, 1)), np.cumsum(batch.costs, axis=1)], axis=1
    )
    return batch, wealth


def pnl_rows(wealth: np.ndarray):
    B, Tp1 = wealth.shape
    for b in range(B):
        for t in range(Tp1):
            yield (b, t, wealth[b, t])


def risk_summary_rows(costs: np.ndarray, spectrum: Spectrum):
    terminal_cost = costs.sum(axis=1)
    pnl = -terminal_cost
    qs = np.quantile(pnl, [0.05, 0.25, 0.5, 0.75, 0.95])
    for alpha in spectrum.thresholds:
        yield (
            alpha,
            empirical_var(terminal_cost, alpha),
            empirical_cvar(terminal_cost, alpha),
            pnl.mean(),
            *qs,
        )


RISK_HEADER = [
    "alpha", "terminal_cost_var", "terminal_cost_cvar",
    "pnl_mean", "pnl_q05", "pnl_q25", "pnl_q50", "pnl_q75", "pnl_q95",
]


def _mean_action(env: Env, policy, states: np.ndarray) -> np.ndarray:
    z = np.zeros((states.shape[0], env.action_dim))
    return env.squash(policy.raw_actions(states, z))


def policy_grid_rows(env: Env, policy):
    """Env-specific policy grid: (header, rows)."""
    if isinstance(env, StatArbEnv):
        price_ax, inv_ax = env.grid_axes()
        rows = []
        for t in range(env.T):
            pg, qg = np.meshgrid(price_ax, inv_ax, indexing="ij")
            states = np.stack(
                [np.full(pg.size, t / env.T), pg.reshape(-1), qg.reshape(-1)], axis=1
            )
            acts = _mean_action(env, policy, states)[:, 0]
            rows.extend(
                (t, p, q, a)
                for p, q, a in zip(pg.reshape(-1), qg.reshape(-1), acts)
            )
        return ["period", "price", "inventory", "action"], rows
    if isinstance(env, (PortfolioEnv, VecmEnv)):
        n = env.obs_dim - 1
        ax = np.linspace(0.7, 1.3, 13)
        g1, g2 = np.meshgrid(ax, ax, indexing="ij")
        prices = np.ones((g1.size, n))
        prices[:, 0] = g1.reshape(-1)
        if n > 1:
            prices[:, 1] = g2.reshape(-1)
        states = np.concatenate(
            [np.zeros((g1.size, 1)), prices,
             np.full((g1.size, 1), env.initial_wealth)], axis=1
        )
        weights = _mean_action(env, policy, states)
        header = ["period", "price_1", "price_2"] + [
            f"weight_{i + 1}" for i in range(weights.shape[1])
        ]
        rows = [
            (0, g1.reshape(-1)[i], g2.reshape(-1)[i], *weights[i])
            for i in range(g1.size)
        ]
        return header, rows
    if isinstance(env, TreeEnv) and hasattr(policy, "probs"):
        rows = []
        for node in sorted(env.mdp.actions):
            if not env.mdp.actions[node]:
                continue
            p = policy.probs([node])[0]
            rows.append((env.mdp.depth[node], node, *p))
        header = ["period", "node"] + [f"prob_action_{a}" for a in range(env.n_actions)]
        return header, rows
    raise ValueError(f"no policy grid defined for env {type(env).__name__}")


def write_eval_artifacts(out_dir, env, policy, spectrum, episodes, seed) -> None:
    out_dir = Path(out_dir)
    if episodes > 0:
        batch, wealth = eval_episodes(env, policy, episodes, seed)
        write_csv(out_dir / "pnl.csv", ["episode", "period", "wealth"], pnl_rows(wealth))
        write_csv(
            out_dir / "risk_summary.csv",
            RISK_HEADER,
            risk_summary_rows(batch.costs, spectrum),
        )
    else:
        write_csv(out_dir / "pnl.csv", ["episode", "period", "wealth"], [])
        write_csv(out_dir / "risk_summary.csv", RISK_HEADER, [])
    header, rows = policy_grid_rows(env, policy)
    write_csv(out_dir / "policy_grid.csv", header, rows)
