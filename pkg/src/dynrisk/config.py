"""Run configuration: INI-style files with sections, resolved and persisted.

Grammar: ``key = value`` pairs under ``[run]``, ``[env]``, ``[risk]``,
``[critic]``, ``[actor]`` and ``[nested]`` sections.  Every key has a
default, so presets only state what they change; the fully resolved
configuration is written next to the run artifacts so an artifact
directory is self-describing.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .actor import ActorConfig, TrainConfig
from .critic import CriticConfig
from .envs import (
    ConstantCostEnv,
    DeterministicPolicy,
    Env,
    PortfolioEnv,
    PortfolioSpec,
    StatArbEnv,
    StatArbSpec,
    TreeEnv,
    load_bundled_tree,
    load_vecm_spec,
    simulate_batch,
    VecmEnv,
)
from .nested import NestedConfig, NestedTrainConfig
from .neural import GaussianPolicy, Mlp, TabularSoftmaxPolicy
from .risk import ScoreParams, Spectrum

__all__ = ["ConfigError", "RunConfig", "build_env", "build_policy",
           "default_cost_bound", "resolve_score_params"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration; message names the field."""


_ENV_KINDS = ("statarb", "portfolio", "vecm", "tree", "constant")
_METHODS = ("elicitable", "nested")


@dataclass
class RunConfig:
    method: str = "elicitable"
    seed: int = 1
    out: str = "runs/latest"
    threads: int = 1
    iterations: int = 1500
    snapshot_interval: int = 0
    eval_episodes: int = 10_000

    env_kind: str = "statarb"
    env: dict = field(default_factory=dict)

    spectrum: Spectrum = field(default_factory=lambda: Spectrum.cvar(0.5))
    cost_bound: float | str = "auto"

    critic: CriticConfig = field(default_factory=CriticConfig)
    actor: ActorConfig = field(default_factory=ActorConfig)
    nested: NestedConfig = field(default_factory=NestedConfig)

    # ------------------------------------------------------------------
    @staticmethod
    def from_file(path) -> "RunConfig":
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        return RunConfig.from_parser(parser)

    @staticmethod
    def from_parser(parser) -> "RunConfig":
        cfg = RunConfig()
        get = _SectionReader(parser)
        cfg.method = get.choice("run", "method", cfg.method, _METHODS)
        cfg.seed = get.int("run", "seed", cfg.seed)
        cfg.out = get.str("run", "out", cfg.out)
        cfg.threads = get.int("run", "threads", cfg.threads, minimum=1)
        cfg.iterations = get.int("run", "iterations", cfg.iterations, minimum=0)
        cfg.snapshot_interval = get.int(
            "run", "snapshot_interval", cfg.snapshot_interval, minimum=0
        )
        cfg.eval_episodes = get.int("run", "eval_episodes", cfg.eval_episodes, minimum=0)

        cfg.env_kind = get.choice("env", "kind", cfg.env_kind, _ENV_KINDS)
        cfg.env = dict(parser.items("env")) if parser.has_section("env") else {}
        cfg.env.pop("kind", None)

        atoms = get.str("risk", "spectrum", "0.5:1.0")
        try:
            pairs = [tuple(float(v) for v in atom.split(":")) for atom in atoms.split(",")]
            cfg.spectrum = Spectrum(
                tuple(a for a, _ in pairs), tuple(p for _, p in pairs)
            )
        except (ValueError, IndexError) as exc:
            raise ConfigError(f"risk.spectrum: {exc}") from exc
        bound = get.str("risk", "cost_bound", "auto")
        if bound != "auto":
            try:
                cfg.cost_bound = float(bound)
            except ValueError as exc:
                raise ConfigError(f"risk.cost_bound must be 'auto' or a number") from exc
            if cfg.cost_bound <= 0:
                raise ConfigError("risk.cost_bound must be positive")

        cfg.critic = CriticConfig(
            epochs=get.int("critic", "epochs", 1000, minimum=0),
            batch=get.int("critic", "batch", 750, minimum=1),
            target_interval=get.int("critic", "target_interval", 400, minimum=1),
            lr=get.float("critic", "lr", 5e-3, positive=True),
            lr_decay=get.float("critic", "lr_decay", 0.95, positive=True),
            lr_decay_interval=get.int("critic", "lr_decay_interval", 100, minimum=1),
            lr_floor=get.float("critic", "lr_floor", 0.0),
            hidden=get.int_tuple("critic", "hidden", (16, 16, 16, 16, 16)),
        )
        cfg.actor = ActorConfig(
            epochs=get.int("actor", "epochs", 30, minimum=0),
            batch=get.int("actor", "batch", 500, minimum=1),
            lr=get.float("actor", "lr", 4e-3, positive=True),
            lr_decay=get.float("actor", "lr_decay", 0.95, positive=True),
            lr_decay_interval=get.int("actor", "lr_decay_interval", 50, minimum=1),
            lr_floor=get.float("actor", "lr_floor", 5e-4),
        )
        cfg.nested = NestedConfig(
            inner_M=get.int("nested", "inner_m", 100, minimum=2),
            epochs=cfg.critic.epochs,
            batch=cfg.critic.batch,
            target_interval=cfg.critic.target_interval,
            lr=cfg.critic.lr,
            lr_decay=cfg.critic.lr_decay,
            lr_decay_interval=cfg.critic.lr_decay_interval,
            lr_floor=cfg.critic.lr_floor,
            hidden=cfg.critic.hidden,
        )
        return cfg

    # ------------------------------------------------------------------
    def to_ini(self) -> str:
        lines = ["[run]"]
        lines.append(f"method = {self.method}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"out = {self.out}")
        lines.append(f"threads = {self.threads}")
        lines.append(f"iterations = {self.iterations}")
        lines.append(f"snapshot_interval = {self.snapshot_interval}")
        lines.append(f"eval_episodes = {self.eval_episodes}")
        lines.append("")
        lines.append("[env]")
        lines.append(f"kind = {self.env_kind}")
        for key, val in sorted(self.env.items()):
            lines.append(f"{key} = {val}")
        lines.append("")
        lines.append("[risk]")
        atoms = ",".join(
            f"{a:.9g}:{p:.9g}"
            for a, p in zip(self.spectrum.thresholds, self.spectrum.weights)
        )
        lines.append(f"spectrum = {atoms}")
        lines.append(f"cost_bound = {self.cost_bound}")
        lines.append("")
        lines.append("[critic]")
        c = self.critic
        lines.append(f"epochs = {c.epochs}")
        lines.append(f"batch = {c.batch}")
        lines.append(f"target_interval = {c.target_interval}")
        lines.append(f"lr = {c.lr}")
        lines.append(f"lr_decay = {c.lr_decay}")
        lines.append(f"lr_decay_interval = {c.lr_decay_interval}")
        lines.append(f"lr_floor = {c.lr_floor}")
        lines.append(f"hidden = {','.join(str(h) for h in c.hidden)}")
        lines.append("")
        lines.append("[actor]")
        a = self.actor
        lines.append(f"epochs = {a.epochs}")
        lines.append(f"batch = {a.batch}")
        lines.append(f"lr = {a.lr}")
        lines.append(f"lr_decay = {a.lr_decay}")
        lines.append(f"lr_decay_interval = {a.lr_decay_interval}")
        lines.append(f"lr_floor = {a.lr_floor}")
        lines.append("")
        lines.append("[nested]")
        lines.append(f"inner_m = {self.nested.inner_M}")
        lines.append("")
        return "\n".join(lines)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            iterations=self.iterations,
            critic=self.critic,
            actor=self.actor,
            hidden=self.critic.hidden,
            snapshot_interval=self.snapshot_interval,
            eval_episodes=self.eval_episodes,
        )

    def nested_train_config(self) -> NestedTrainConfig:
        return NestedTrainConfig(
            iterations=self.iterations,
            critic=self.nested,
            actor=self.actor,
            snapshot_interval=self.snapshot_interval,
            eval_episodes=self.eval_episodes,
        )


class _SectionReader:
    def __init__(self, parser):
        self.parser = parser

    def _raw(self, section, key):
        if self.parser.has_section(section) and self.parser.has_option(section, key):
            return self.parser.get(section, key)
        return None

    def str(self, section, key, default):
        raw = self._raw(section, key)
        return default if raw is None else raw.strip()

    def choice(self, section, key, default, allowed):
        val = self.str(section, key, default)
        if val not in allowed:
            raise ConfigError(f"{section}.{key} must be one of {allowed}, got {val!r}")
        return val

    def int(self, section, key, default, minimum=None):
        raw = self._raw(section, key)
        if raw is None:
            return default
        try:
            val = int(raw)
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be an integer, got {raw!r}") from exc
        if minimum is not None and val < minimum:
            raise ConfigError(f"{section}.{key} must be >= {minimum}, got {val}")
        return val

    def float(self, section, key, default, positive=False):
        raw = self._raw(section, key)
        if raw is None:
            val = default
        else:
            try:
                val = float(raw)
            except ValueError as exc:
                raise ConfigError(f"{section}.{key} must be a number, got {raw!r}") from exc
        if positive and val <= 0:
            raise ConfigError(f"{section}.{key} must be positive, got {val}")
        return val

    def int_tuple(self, section, key, default):
        raw = self._raw(section, key)
        if raw is None:
            return tuple(default)
        try:
            return tuple(int(v) for v in raw.split(","))
        except ValueError as exc:
            raise ConfigError(f"{section}.{key} must be comma-separated ints") from exc


# ---------------------------------------------------------------------------
# Environment / policy construction
# ---------------------------------------------------------------------------

def _env_float(env: dict, key, default):
    try:
        return float(env.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"env.{key} must be a number, got {env[key]!r}") from exc


def _env_int(env: dict, key, default):
    try:
        return int(env.get(key, default))
    except ValueError as exc:
        raise ConfigError(f"env.{key} must be an integer, got {env[key]!r}") from exc


def build_env(cfg: RunConfig) -> Env:
    kind = cfg.env_kind
    env = cfg.env
    if kind == "statarb":
        q_max = _env_float(env, "q_max", 5.0)
        a_max = _env_float(env, "a_max", 2.0)
        spec = StatArbSpec(
            T=_env_int(env, "t", 5),
            kappa=_env_float(env, "kappa", 2.0),
            mu=_env_float(env, "mu", 1.0),
            sigma=_env_float(env, "sigma", 0.2),
            phi1=_env_float(env, "phi1", 0.005),
            phi2=_env_float(env, "phi2", 0.5),
            q_min=-q_max,
            q_max=q_max,
            a_min=-a_max,
            a_max=a_max,
            q0=env.get("q0", "zero"),
        )
        return StatArbEnv(spec)
    if kind == "portfolio":
        dynamics = tuple(env.get("dynamics", "gbm,gbm,gbm").split(","))
        mu = tuple(float(v) for v in env.get("mu_vec", "0.03,0.06,0.09").split(","))
        sigma = tuple(float(v) for v in env.get("sigma_vec", "0.06,0.12,0.18").split(","))
        spec = PortfolioSpec(
            T=_env_int(env, "t", 12),
            dynamics=dynamics,
            mu=mu,
            sigma=sigma,
            kappa=_env_float(env, "kappa", 2.0),
            rho=_env_float(env, "rho", 0.2),
            include_riskfree=env.get("include_riskfree", "false").lower()
            in ("1", "true", "yes"),
        )
        return PortfolioEnv(spec)
    if kind == "vecm":
        spec = load_vecm_spec(
            T=_env_int(env, "t", 24),
            steps_per_period=_env_int(env, "steps_per_period", 10),
        )
        return VecmEnv(spec)
    if kind == "tree":
        return TreeEnv(load_bundled_tree())
    if kind == "constant":
        return ConstantCostEnv(
            T=_env_int(env, "t", 3), cost=_env_float(env, "cost", 1.0)
        )
    raise ConfigError(f"env.kind: unknown kind {kind!r}")


def build_policy(cfg: RunConfig, env: Env, rng=None):
    if isinstance(env, TreeEnv):
        n_states = max(env.mdp.actions) + 1
        return TabularSoftmaxPolicy(n_states, env.n_actions)
    if rng is None:
        rng = np.random.default_rng((cfg.seed, 100))
    output = ("softplus",) if isinstance(env, (PortfolioEnv, VecmEnv)) else ("identity",)
    net = Mlp(
        [env.obs_dim, *cfg.critic.hidden, env.action_dim], output=output, rng=rng
    )
    return GaussianPolicy(net, obs_dim=env.obs_dim)


def default_cost_bound(cfg: RunConfig, env: Env) -> float:
    """Per-environment default for the score's cost bound.

    Four times an a-priori bound on the running risk-to-go; for wealth
    environments the bound comes from pilot episodes under equal weights.
    """
    if isinstance(env, StatArbEnv):
        sp = env.spec
        return 4.0 * (
            sp.a_max * sp.T * (sp.mu + 3.0 * sp.sigma) + sp.q_max**2 * sp.phi2
        )
    if isinstance(env, (PortfolioEnv, VecmEnv)):
        pilot = simulate_batch(
            env,
            DeterministicPolicy(np.zeros(env.action_dim)),
            10_000,
            (cfg.seed, 4242),
        )
        wealth = env.initial_wealth - np.cumsum(pilot.costs, axis=1)
        y_max = float(np.max(np.abs(wealth)))
        return 4.0 * max(y_max, env.initial_wealth)
    if isinstance(env, TreeEnv):
        worst = max(
            abs(c) for acts in env.mdp.actions.values() for edges in acts
            for _, _, c in edges
        )
        return 4.0 * max(worst * env.T, 1.0)
    if isinstance(env, ConstantCostEnv):
        return 4.0 * max(abs(env.cost) * env.T, 1.0)
    raise ConfigError(f"no default cost bound for env {type(env).__name__}")


def resolve_score_params(cfg: RunConfig, env: Env) -> ScoreParams:
    bound = cfg.cost_bound
    if bound == "auto":
        bound = default_cost_bound(cfg, env)
        cfg.cost_bound = bound
    return ScoreParams(float(bound), cfg.spectrum)
