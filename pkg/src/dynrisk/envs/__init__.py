"""Episodic market simulators and the shared batch-simulation machinery."""

from .base import (
    DeterministicPolicy,
    Env,
    EpisodeBatch,
    episode,
    norm_cdf,
    seed_entropy,
    simulate_batch,
)
from .debug import ConstantCostEnv
from .portfolio import PortfolioEnv, PortfolioSpec, correlation_matrix
from .statarb import StatArbEnv, StatArbSpec, ou_stationary_std, ou_step
from .tree import TreeEnv, load_bundled_tree
from .vecm import VECM_ASSETS, VecmEnv, VecmSpec, load_vecm_spec, vecm_step

__all__ = [
    "Env",
    "EpisodeBatch",
    "DeterministicPolicy",
    "episode",
    "simulate_batch",
    "norm_cdf",
    "seed_entropy",
    "ConstantCostEnv",
    "StatArbSpec",
    "StatArbEnv",
    "ou_step",
    "ou_stationary_std",
    "PortfolioSpec",
    "PortfolioEnv",
    "correlation_matrix",
    "VecmSpec",
    "VecmEnv",
    "vecm_step",
    "load_vecm_spec",
    "VECM_ASSETS",
    "TreeEnv",
    "load_bundled_tree",
]
