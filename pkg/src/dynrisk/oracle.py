"""Independent brute-force references for risk estimation.

Everything here is deliberately simple and direct: exact tail integrals for
empirical VaR/CVaR/spectral risk, exhaustive grid minimisation of expected
scores, backward induction on finite trees, and nested Monte-Carlo
evaluation of a fixed policy.  These are the oracles the learned
estimators are tested against, so they never share code with the training
path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .risk import ScoreParams, Spectrum, score_spectral_batch

__all__ = [
    "empirical_var",
    "empirical_cvar",
    "empirical_spectral",
    "empirical_cvar_axis",
    "empirical_spectral_axis",
    "discrete_var",
    "discrete_cvar",
    "discrete_spectral",
    "grid_minimize_cvar_score",
    "grid_minimize_spectral_score",
    "FiniteTreeMdp",
    "TreeError",
    "tree_dynamic_risk",
    "tree_static_precommitment",
    "nested_dynamic_risk",
    "nested_dynamic_risk_table",
]


# ---------------------------------------------------------------------------
# Empirical estimators (exact integrals, left-continuous quantiles)
# ---------------------------------------------------------------------------

def empirical_var(samples, alpha: float) -> float:
    """Left-continuous empirical alpha-quantile: smallest y with F(y) >= alpha."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("empirical_var needs a nonempty sample")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    n = x.size
    idx = int(math.ceil(alpha * n - 1e-12))
    idx = min(max(idx, 1), n)
    return float(np.sort(x)[idx - 1])


def empirical_cvar(samples, alpha: float) -> float:
    """Exact CVaR of the empirical distribution.

    Evaluates (1/(1-alpha)) * integral_alpha^1 VaR_u du exactly, weighting
    the atom that straddles alpha by its remaining fraction -- not a
    top-k average.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size == 0:
        raise ValueError("empirical_cvar needs a nonempty sample")
    n = x.size
    return discrete_cvar(x, np.full(n, 1.0 / n), alpha)


def empirical_spectral(samples, s: Spectrum) -> float:
    """Weighted sum of empirical CVaRs over the spectrum atoms."""
    return float(
        sum(p * empirical_cvar(samples, a) for a, p in zip(s.thresholds, s.weights))
    )


def discrete_var(values, probs, alpha: float) -> float:
    """Left-continuous alpha-quantile of a finite distribution."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(probs[order])
    i = int(np.searchsorted(cum, alpha - 1e-12, side="left"))
    i = min(i, values.size - 1)
    return float(values[order][i])


def discrete_cvar(values, probs, alpha: float) -> float:
    """Exact CVaR of a finite distribution given atom probabilities."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError("atom probabilities must sum to 1")
    order = np.argsort(values, kind="stable")
    v = values[order]
    hi = np.cumsum(probs[order])
    hi[-1] = 1.0
    lo = np.concatenate(([0.0], hi[:-1]))
    w = np.minimum(hi, 1.0) - np.maximum(lo, alpha)
    w = np.clip(w, 0.0, None)
    return float(np.dot(v, w) / (1.0 - alpha))


def discrete_spectral(values, probs, s: Spectrum) -> float:
    return float(
        sum(p * discrete_cvar(values, probs, a) for a, p in zip(s.thresholds, s.weights))
    )


def empirical_var_axis(a: np.ndarray, alpha: float) -> np.ndarray:
    """Left-continuous empirical alpha-quantile along the last axis."""
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    idx = int(math.ceil(alpha * n - 1e-12))
    idx = min(max(idx, 1), n)
    return np.partition(a, idx - 1, axis=-1)[..., idx - 1]


def empirical_cvar_axis(a: np.ndarray, alpha: float) -> np.ndarray:
    """Exact empirical CVaR along the last axis (partition-based, no full sort)."""
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    i0 = int(math.ceil(alpha * n - 1e-12))
    i0 = min(max(i0, 1), n)
    part = np.partition(a, i0 - 1, axis=-1)[..., i0 - 1 :]
    tail = np.sort(part, axis=-1)
    idx = np.arange(i0, n + 1, dtype=float)
    w = np.minimum(idx / n, 1.0) - np.maximum((idx - 1) / n, alpha)
    return tail @ w / (1.0 - alpha)


def empirical_spectral_axis(a: np.ndarray, s: Spectrum) -> np.ndarray:
    out = 0.0
    for alpha, p in zip(s.thresholds, s.weights):
        out = out + p * empirical_cvar_axis(a, alpha)
    return out


# ---------------------------------------------------------------------------
# Grid minimisation of empirical expected scores
# ---------------------------------------------------------------------------

def _quantile_mean_term(samples, grid, alpha):
    """E[(1{y<=a} - alpha) a + 1{y>a} y] for every grid value a."""
    y = np.asarray(samples, dtype=float).reshape(-1)
    ind_le = (y[None, :] <= grid[:, None]).astype(float)
    return np.mean(
        (ind_le - alpha) * grid[:, None] + (1.0 - ind_le) * y[None, :], axis=1
    )


def grid_minimize_cvar_score(samples, alpha, C, lo, hi, step):
    """Exhaustive minimiser of the mean CVaR score over an (a1, a2) grid.

    The grid covers [lo, hi]^2 restricted to a1 <= a2; exact ties break to
    the lexicographically smallest (a1, a2).
    """
    y = np.asarray(samples, dtype=float).reshape(-1)
    grid = np.arange(lo, hi + step / 2, step)
    n_term = _quantile_mean_term(y, grid, alpha)
    log_y = np.mean(np.log(y + C))
    base = np.log(grid + C) - log_y - grid / (grid + C)  # a2-only terms
    scores = base[None, :] + n_term[:, None] / ((grid + C)[None, :] * (1.0 - alpha))
    scores[np.tril_indices(grid.size, k=-1)] = np.inf  # enforce a1 <= a2
    i, j = np.argwhere(scores == scores.min())[0]
    return float(grid[i]), float(grid[j])


def grid_minimize_spectral_score(samples, params: ScoreParams, lo, hi, step):
    """Exhaustive minimiser of the mean spectral score over the estimate grid.

    Searches nondecreasing VaR tuples jointly with the risk coordinate;
    exact ties break to the lexicographically smallest (VaR levels, risk).
    Only one- and two-atom spectra are supported, which covers the test
    corpus.
    """
    spec = params.spectrum
    y = np.asarray(samples, dtype=float).reshape(-1)
    C = params.cost_bound_C
    grid = np.arange(lo, hi + step / 2, step)
    log_y = np.mean(np.log(y + C))
    terms = [
        -p / (1.0 - a) * _quantile_mean_term(y, grid, a)
        for a, p in zip(spec.thresholds, spec.weights)
    ]
    if spec.n_atoms == 1:
        bracket = terms[0]
        valid = np.ones(grid.size, dtype=bool)
    elif spec.n_atoms == 2:
        bracket = terms[0][:, None] + terms[1][None, :]
        valid = grid[:, None] <= grid[None, :] + 1e-12
    else:
        raise NotImplementedError("grid oracle supports at most two atoms")
    best_val, best_vars, best_risk = np.inf, None, None
    for risk in grid:
        scores = np.log(risk + C) - log_y - (risk + bracket) / (risk + C)
        scores = np.where(valid, scores, np.inf)
        flat = np.argwhere(scores == scores.min())[0]
        val = float(scores[tuple(flat)])
        cand = tuple(float(grid[ix]) for ix in flat)
        if val < best_val or (val == best_val and cand < best_vars):
            best_val, best_vars, best_risk = val, cand, float(risk)
    return best_vars, best_risk


# ---------------------------------------------------------------------------
# Finite-tree MDP and exact dynamic-risk DP
# ---------------------------------------------------------------------------

class TreeError(ValueError):
    """Structural problem in a finite-tree MDP."""


@dataclass
class FiniteTreeMdp:
    """Finite-horizon decision tree.

    ``actions[node]`` lists, per action, the outgoing chance edges as
    (probability, child, cost) triples; leaves have no actions.  Every
    leaf must sit at depth T and outgoing probabilities must sum to one.
    """

    depth: dict[int, int]
    actions: dict[int, list[list[tuple[float, int, float]]]]
    root: int = 0
    T: int = field(init=False)

    def __post_init__(self):
        leaves = [n for n, acts in self.actions.items() if not acts]
        if not leaves:
            raise TreeError("tree has no leaves")
        depths = {self.depth[n] for n in leaves}
        if len(depths) != 1:
            raise TreeError(f"leaves at mixed depths {sorted(depths)}")
        self.T = depths.pop()
        for node, acts in self.actions.items():
            for a, edges in enumerate(acts):
                mass = sum(p for p, _, _ in edges)
                if abs(mass - 1.0) > 1e-12:
                    raise TreeError(
                        f"node {node} action {a}: probabilities sum to {mass!r}"
                    )
                for _, child, _ in edges:
                    if self.depth[child] != self.depth[node] + 1:
                        raise TreeError(
                            f"edge {node}->{child} skips a level"
                        )

    @staticmethod
    def from_file(path) -> "FiniteTreeMdp":
        """Parse the line-oriented tree format.

        Lines are either ``node <id> <depth>`` or
        ``edge <from> <action> <to> <prob> <cost>``; blank lines and
        ``#`` comments are ignored.
        """
        depth: dict[int, int] = {}
        actions: dict[int, list[list[tuple[float, int, float]]]] = {}
        with open(path, encoding="utf-8") as fh:
            for raw in fh:
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                parts = line.split()
                if parts[0] == "node":
                    nid = int(parts[1])
                    depth[nid] = int(parts[2])
                    actions.setdefault(nid, [])
                elif parts[0] == "edge":
                    src, act, dst = int(parts[1]), int(parts[2]), int(parts[3])
                    prob, cost = float(parts[4]), float(parts[5])
                    acts = actions.setdefault(src, [])
                    while len(acts) <= act:
                        acts.append([])
                    acts[act].append((prob, dst, cost))
                else:
                    raise TreeError(f"unrecognised line: {line!r}")
        return FiniteTreeMdp(depth=depth, actions=actions)


def tree_dynamic_risk(mdp: FiniteTreeMdp, s: Spectrum):
    """Backward induction with the one-step spectral risk applied exactly.

    Returns (value map, optimal action map); at decision nodes ties break
    to the lowest action index.
    """
    values: dict[int, float] = {}
    policy: dict[int, int] = {}
    for node in sorted(mdp.actions, key=lambda n: -mdp.depth[n]):
        acts = mdp.actions[node]
        if not acts:
            values[node] = 0.0
            continue
        best_val, best_a = np.inf, None
        for a, edges in enumerate(acts):
            outcomes = [c + values[child] for _, child, c in edges]
            probs = [p for p, _, _ in edges]
            risk = discrete_spectral(outcomes, probs, s)
            if risk < best_val - 1e-15:
                best_val, best_a = risk, a
        values[node] = best_val
        policy[node] = best_a
    return values, policy


def _plan_distribution(mdp: FiniteTreeMdp, plan):
    """Terminal-cumulative-cost atoms of a fixed action sequence."""
    atoms = {(mdp.root, 0.0): 1.0}
    for t in range(mdp.T):
        nxt: dict[tuple[int, float], float] = {}
        for (node, acc), mass in atoms.items():
            acts = mdp.actions[node]
            a = min(plan[t], len(acts) - 1)
            for p, child, c in acts[a]:
                key = (child, acc + c)
                nxt[key] = nxt.get(key, 0.0) + mass * p
            if not acts:
                raise TreeError(f"plan reaches leaf {node} before horizon")
        atoms = nxt
    out: dict[float, float] = {}
    for (_, acc), mass in atoms.items():
        out[acc] = out.get(acc, 0.0) + mass
    return list(out.keys()), list(out.values())


def tree_static_precommitment(mdp: FiniteTreeMdp, alpha: float):
    """Best pure action sequence under the static terminal-cost CVaR.

    Enumerates action sequences (the same move applied at whichever node
    is reached at that period) and returns (best plan, its CVaR, all
    plan risks).
    """
    n_actions = max(len(a) for a in mdp.actions.values() if a)
    plans = list(np.ndindex(*([n_actions] * mdp.T)))
    risks = {}
    for plan in plans:
        vals, probs = _plan_distribution(mdp, plan)
        risks[tuple(int(a) for a in plan)] = discrete_cvar(vals, probs, alpha)
    best = min(risks, key=lambda p: (risks[p], p))
    return best, risks[best], risks


# ---------------------------------------------------------------------------
# Nested Monte-Carlo evaluation of a fixed policy
# ---------------------------------------------------------------------------

def nested_dynamic_risk(
    env,
    policy,
    states,
    period: int,
    inner_M: int,
    s: Spectrum,
    seed,
    outer_N: int = 1,
    max_block: int = 1 << 19,
):
    """Recursive nested Monte-Carlo estimate of the dynamic risk.

    From each given state at ``period``, simulates ``inner_M`` one-step
    transitions (action resampled each time) and applies the empirical
    spectral risk to cost-plus-continuation samples, recursing until the
    terminal period.  ``outer_N`` independent replications are averaged.
    Deterministic given ``seed``; cost grows like inner_M**depth, so keep
    the remaining horizon small.
    """
    if inner_M < 2:
        raise ValueError("inner_M must be at least 2")
    if outer_N < 1:
        raise ValueError("outer_N must be at least 1")
    states = np.atleast_2d(np.asarray(states, dtype=float))
    reps = [
        _nested_level(env, policy, states, period, inner_M, s,
                      np.random.default_rng(_seed_entropy(seed) + (rep,)), max_block)
        for rep in range(outer_N)
    ]
    return np.mean(reps, axis=0)


def _seed_entropy(seed) -> tuple:
    if isinstance(seed, (tuple, list)):
        return tuple(int(v) for v in seed)
    return (int(seed),)


def _nested_level(env, policy, states, t, M, s, rng, max_block):
    n = states.shape[0]
    rows_per_chunk = max(1, max_block // M)
    out = np.empty(n)
    for start in range(0, n, rows_per_chunk):
        block = states[start : start + rows_per_chunk]
        m = block.shape[0]
        rep = np.repeat(block, M, axis=0)
        z = rng.standard_normal((m * M, env.action_dim))
        eps = rng.standard_normal((m * M, env.noise_dim))
        raw = policy.raw_actions(rep, z)
        nxt, costs = env.step_vec(t, rep, raw, eps)
        if t == env.T - 1:
            y = costs
        else:
            y = costs + _nested_level(env, policy, nxt, t + 1, M, s, rng, max_block)
        out[start : start + m] = empirical_spectral_axis(y.reshape(m, M), s)
    return out


def _interp_multilinear(axes, table, pts):
    """Multilinear interpolation of ``table`` (indexed by axes) at pts."""
    d = len(axes)
    idx, frac = [], []
    for j, ax in enumerate(axes):
        x = np.clip(pts[:, j], ax[0], ax[-1])
        i = np.clip(np.searchsorted(ax, x, side="right") - 1, 0, len(ax) - 2)
        idx.append(i)
        frac.append((x - ax[i]) / (ax[i + 1] - ax[i]))
    out = np.zeros(pts.shape[0])
    for corner in np.ndindex(*([2] * d)):
        w = np.ones(pts.shape[0])
        loc = []
        for j, bit in enumerate(corner):
            w = w * (frac[j] if bit else 1.0 - frac[j])
            loc.append(idx[j] + bit)
        out += w * table[tuple(loc)]
    return out


def nested_dynamic_risk_table(env, policy, s: Spectrum, inner_M: int, axes, seed):
    """Grid-table nested evaluation for horizons where full nesting blows up.

    Builds per-period value tables on the product grid ``axes`` (state
    dims excluding time) by one-step nested simulation with multilinear
    interpolation of the next-period table.  Returns the list of tables,
    terminal period last.
    """
    mesh = np.meshgrid(*axes, indexing="ij")
    grid_pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
    n = grid_pts.shape[0]
    rng = np.random.default_rng(_seed_entropy(seed))
    tables = [None] * env.T
    for t in range(env.T - 1, -1, -1):
        tcol = np.full((n, 1), t / env.T)
        states = np.concatenate([tcol, grid_pts], axis=1)
        rep = np.repeat(states, inner_M, axis=0)
        z = rng.standard_normal((n * inner_M, env.action_dim))
        eps = rng.standard_normal((n * inner_M, env.noise_dim))
        raw = policy.raw_actions(rep, z)
        nxt, costs = env.step_vec(t, rep, raw, eps)
        if t == env.T - 1:
            y = costs
        else:
            y = costs + _interp_multilinear(axes, tables[t + 1], nxt[:, 1:])
        vals = empirical_spectral_axis(y.reshape(n, inner_M), s)
        tables[t] = vals.reshape([len(a) for a in axes])
    return tables
