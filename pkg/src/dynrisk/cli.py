"""Command-line entry point: train, eval, oracle, simulate.

``train`` runs the selected method end-to-end and leaves a self-describing
artifact directory (resolved config, checkpoints, traces, ledger).
``eval`` re-evaluates a trained artifact directory.  ``oracle`` runs the
built-in verification suites and exits non-zero on any failure.
``simulate`` rolls out the environment alone and dumps transitions.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .actor import run_actor_critic
from .config import ConfigError, RunConfig, build_env, build_policy, resolve_score_params
from .envs import DeterministicPolicy, load_bundled_tree, simulate_batch
from .nested import run_nested
from .neural import Mlp, grad_through
from .oracle import (
    empirical_cvar,
    empirical_var,
    tree_dynamic_risk,
    tree_static_precommitment,
)
from .risk import Spectrum

__all__ = ["main", "cmd_train", "cmd_eval", "cmd_oracle", "cmd_simulate"]


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    if getattr(args, "threads", None) is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg.threads = args.threads
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    env = build_env(cfg)
    score = resolve_score_params(cfg, env)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    policy = build_policy(cfg, env)
    (out / "config.ini").write_text(cfg.to_ini(), encoding="utf-8")
    if cfg.method == "elicitable":
        _, _, ledger = run_actor_critic(
            env, cfg.spectrum, policy, score, cfg.train_config(), cfg.seed, out_dir=out
        )
    else:
        _, _, ledger = run_nested(
            env, cfg.spectrum, policy, cfg.nested_train_config(), cfg.seed, out_dir=out
        )
    artifacts.write_eval_artifacts(
        out, env, artifacts.load_policy(out / "policy_final.npz"),
        cfg.spectrum, episodes=cfg.eval_episodes, seed=(cfg.seed, 777),
    )
    print(f"artifacts written to {out}")
    for key, val in sorted(ledger.items()):
        print(f"  {key} = {val}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.checkpoint)
    config_path = run_dir / "config.ini"
    if not config_path.exists():
        print(f"error: {run_dir} is not an artifact directory (missing config.ini)",
              file=sys.stderr)
        return 2
    cfg = RunConfig.from_file(config_path)
    if args.seed is not None:
        cfg.seed = args.seed
    env = build_env(cfg)
    policy = artifacts.load_policy(run_dir / "policy_final.npz")
    probe = env.draw_initial(np.random.default_rng(0))[None, :]
    try:
        policy.raw_actions(probe, np.zeros((1, env.action_dim)))
    except (ValueError, IndexError) as exc:
        print(f"error: checkpoint/env mismatch: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else run_dir
    artifacts.write_eval_artifacts(
        out, env, policy, cfg.spectrum, episodes=args.episodes, seed=(cfg.seed, 778)
    )
    print(f"evaluation artifacts written to {out}")
    return 0


def _check(report, name, ok, detail=""):
    report.append((name, bool(ok), detail))
    return bool(ok)


def _tree_suite(report) -> None:
    tree = load_bundled_tree()
    plan, risk, _ = tree_static_precommitment(tree, 0.9)
    _check(report, "tree.static_up_down_value", abs(risk - (-0.7)) < 1e-12,
           f"risk={risk!r}")
    _check(report, "tree.static_plan", plan == (0, 1), f"plan={plan}")
    for alpha in (0.7, 0.75, 0.8, 0.85, 0.9, 0.99):
        vals, pol = tree_dynamic_risk(tree, Spectrum.cvar(alpha))
        _check(
            report,
            f"tree.dynamic_up_up_alpha_{alpha}",
            pol[0] == 0 and pol[2] == 0,
            f"root={pol[0]} mid={pol[2]}",
        )
    vals, _ = tree_dynamic_risk(tree, Spectrum.cvar(0.9))
    _check(report, "tree.dynamic_value_alpha_0.9", abs(vals[0]) < 1e-12,
           f"value={vals[0]!r}")


def _cvar_suite(report) -> None:
    rng = np.random.default_rng(20240901)
    ok_dom = ok_trans = ok_homog = ok_sub = True
    for _ in range(100):
        n = int(rng.integers(5, 200))
        x = rng.normal(size=n) * rng.uniform(0.5, 3.0)
        y = rng.normal(size=n)
        alpha = float(rng.uniform(0.05, 0.95))
        gamma = float(rng.normal())
        beta = float(rng.uniform(0.1, 4.0))
        ok_dom &= empirical_cvar(x, alpha) >= empirical_var(x, alpha) - 1e-12
        ok_trans &= abs(
            empirical_cvar(x + gamma, alpha) - empirical_cvar(x, alpha) - gamma
        ) < 1e-9
        ok_homog &= abs(
            empirical_cvar(beta * x, alpha) - beta * empirical_cvar(x, alpha)
        ) < 1e-9
        ok_sub &= empirical_cvar(x + y, alpha) <= (
            empirical_cvar(x, alpha) + empirical_cvar(y, alpha) + 1e-9
        )
    _check(report, "cvar.tail_dominance", ok_dom)
    _check(report, "cvar.translation_invariance", ok_trans)
    _check(report, "cvar.positive_homogeneity", ok_homog)
    _check(report, "cvar.subadditivity", ok_sub)


def _grad_suite(report) -> None:
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(5):
        net = Mlp([3, 8, 8, 1], output=("identity",), rng=rng)
        x = rng.normal(size=(16, 3))
        target = rng.normal(size=16)

        def loss_fn(y):
            resid = y[:, 0] - target
            return float(np.sum(resid**2)), (2.0 * resid)[:, None]

        _, (gw, gb) = grad_through(net, x, loss_fn)
        flat = Mlp.flatten_grads(gw, gb)
        theta = net.get_flat()
        h = 1e-5
        idx = rng.choice(theta.size, size=25, replace=False)
        for i in idx:
            up = theta.copy(); up[i] += h
            dn = theta.copy(); dn[i] -= h
            net.set_flat(up)
            f_up = loss_fn(net.forward(x))[0]
            net.set_flat(dn)
            f_dn = loss_fn(net.forward(x))[0]
            net.set_flat(theta)
            fd = (f_up - f_dn) / (2 * h)
            denom = max(abs(fd), abs(flat[i]), 1e-8)
            worst = max(worst, abs(fd - flat[i]) / denom)
    _check(report, "grad.finite_difference_agreement", worst < 1e-4,
           f"worst_rel_err={worst:.3g}")


def cmd_oracle(args) -> int:
    report: list[tuple[str, bool, str]] = []
    suites = {
        "tree": _tree_suite,
        "cvar": _cvar_suite,
        "grad": _grad_suite,
    }
    names = list(suites) if args.suite == "all" else [args.suite]
    for name in names:
        suites[name](report)
    failures = 0
    for name, ok, detail in report:
        status = "PASS" if ok else "FAIL"
        line = f"{status} {name}"
        if detail:
            line += f" {detail}"
        print(line)
        failures += 0 if ok else 1
    print(f"{'OK' if failures == 0 else 'FAILED'} {len(report) - failures}/{len(report)} checks passed")
    return 0 if failures == 0 else 1


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    env = build_env(cfg)
    policy = DeterministicPolicy(np.zeros(env.action_dim))
    batch = simulate_batch(env, policy, args.episodes, (cfg.seed, 555))
    out = Path(cfg.out)
    header = (
        ["episode", "period"]
        + [f"state_{i}" for i in range(env.state_dim)]
        + [f"action_{i}" for i in range(batch.actions.shape[2])]
        + ["cost"]
    )
    rows = []
    for b in range(batch.B):
        for t in range(batch.T):
            rows.append(
                (b, t, *batch.states[b, t], *batch.actions[b, t], batch.costs[b, t])
            )
    artifacts.write_csv(out / "transitions.csv", header, rows)
    print(f"wrote {len(rows)} transitions to {out / 'transitions.csv'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynrisk",
        description="Risk-sensitive actor-critic for dynamic spectral risk measures",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a policy per a config file")
    p_train.add_argument("--config", help="path to a run configuration file")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--out")
    p_train.add_argument("--iterations", type=int)
    p_train.add_argument("--threads", type=int)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a trained artifact directory")
    p_eval.add_argument("--checkpoint", required=True, help="artifact directory")
    p_eval.add_argument("--episodes", type=int, default=10_000)
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_eval)

    p_oracle = sub.add_parser("oracle", help="run verification suites")
    p_oracle.add_argument(
        "--suite", default="all", choices=["all", "tree", "cvar", "grad"]
    )
    p_oracle.set_defaults(func=cmd_oracle)

    p_sim = sub.add_parser("simulate", help="environment-only rollouts to CSV")
    p_sim.add_argument("--config", help="path to a run configuration file")
    p_sim.add_argument("--episodes", type=int, default=100)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--out")
    p_sim.add_argument("--threads", type=int)
    p_sim.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
