"""Finite-support spectra and strictly consistent scoring functions.

The one-step risk is a weighted sum of CVaRs at thresholds ``alpha_1 < ... <
alpha_{k-1}`` with positive weights summing to one.  The joint mapping
(VaR at each threshold, spectral risk) admits a strictly consistent scoring
function; we fix the log-type characterisation with a cost bound C, which
keeps the quantile terms constant and makes the score cheap to evaluate:

    S(a_1, ..., a_{k-1}, a_k, y)
        = log((a_k + C) / (y + C))
          - (1 / (a_k + C)) * [ a_k + sum_m (p_m / (1 - alpha_m))
              * ((1{y > a_m} - (1 - alpha_m)) a_m - 1{y > a_m} y) ]

valid whenever a_k + C > 0 and y + C > 0.  For a one-atom spectrum this is
exactly the (VaR, CVaR) score.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Spectrum",
    "ScoreParams",
    "RiskEstimate",
    "BoundViolationError",
    "validate_spectrum",
    "score_cvar",
    "score_spectral",
    "score_spectral_batch",
    "score_spectral_grad_batch",
]


class BoundViolationError(ValueError):
    """An argument of the log-type score is at or below the -C bound."""


@dataclass(frozen=True)
class Spectrum:
    """Finite-support spectral measure: thresholds and positive weights.

    ``thresholds`` must be strictly increasing inside (0, 1) and ``weights``
    must be positive and sum to one.  ``Spectrum.cvar(alpha)`` builds the
    one-atom special case.
    """

    thresholds: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(a) for a in self.thresholds))
        object.__setattr__(self, "weights", tuple(float(p) for p in self.weights))
        report = validate_spectrum(self)
        if report:
            raise ValueError("invalid spectrum: " + "; ".join(report))

    @staticmethod
    def cvar(alpha: float) -> "Spectrum":
        return Spectrum((alpha,), (1.0,))

    @property
    def n_atoms(self) -> int:
        return len(self.thresholds)

    @property
    def alpha_min(self) -> float:
        return self.thresholds[0]

    def to_records(self) -> list[dict]:
        return [
            {"threshold": a, "weight": p}
            for a, p in zip(self.thresholds, self.weights)
        ]

    @staticmethod
    def from_records(records) -> "Spectrum":
        return Spectrum(
            tuple(float(r["threshold"]) for r in records),
            tuple(float(r["weight"]) for r in records),
        )


def validate_spectrum(s) -> list[str]:
    """Return a list of violated invariants (empty list means valid)."""
    report = []
    thresholds = tuple(s.thresholds)
    weights = tuple(s.weights)
    if len(thresholds) != len(weights):
        report.append(
            f"thresholds ({len(thresholds)}) and weights ({len(weights)}) differ in length"
        )
    if len(thresholds) == 0:
        report.append("spectrum must have at least one atom")
    if any(not (0.0 < a < 1.0) for a in thresholds):
        report.append("thresholds must lie in the open interval (0, 1)")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        report.append("thresholds must be strictly increasing")
    if any(not (0.0 < p <= 1.0) for p in weights):
        report.append("weights must lie in (0, 1]")
    if weights and abs(sum(weights) - 1.0) > 1e-12:
        report.append(f"weights must sum to 1 (got {sum(weights)!r})")
    return report


@dataclass(frozen=True)
class ScoreParams:
    """Configuration of the log-type score: cost bound C and the spectrum."""

    cost_bound_C: float
    spectrum: Spectrum

    def __post_init__(self):
        if not self.cost_bound_C > 0.0:
            raise ValueError(f"cost_bound_C must be > 0, got {self.cost_bound_C!r}")


@dataclass(frozen=True)
class RiskEstimate:
    """Joint estimate (VaR levels per threshold, spectral risk).

    VaR levels must be nondecreasing and the risk must dominate the
    weighted VaR combination; the softplus-composed critic satisfies both
    by construction.
    """

    var_levels: tuple[float, ...]
    risk: float
    validate: bool = field(default=True, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "var_levels", tuple(float(v) for v in self.var_levels))
        object.__setattr__(self, "risk", float(self.risk))
        if not self.validate:
            return
        v = self.var_levels
        if any(b < a - 1e-12 for a, b in zip(v, v[1:])):
            raise ValueError(f"var_levels must be nondecreasing, got {v}")


def _check_bounds(y, risk, C):
    y = np.asarray(y, dtype=float)
    risk = np.asarray(risk, dtype=float)
    if np.any(y + C <= 0.0):
        bad = float(np.asarray(y).reshape(-1)[np.argmax((y + C <= 0.0).reshape(-1))])
        raise BoundViolationError(
            f"realised value y={bad!r} is at or below the declared bound -C={-C!r}"
        )
    if np.any(risk + C <= 0.0):
        bad = float(np.asarray(risk).reshape(-1)[np.argmax((risk + C <= 0.0).reshape(-1))])
        raise BoundViolationError(
            f"risk estimate a_k={bad!r} is at or below the declared bound -C={-C!r}"
        )


def score_cvar(a1: float, a2: float, y: float, alpha: float, C: float) -> float:
    """Strictly consistent score for the (VaR_alpha, CVaR_alpha) pair.

    Log-type characterisation with cost bound C; requires a2 + C > 0 and
    y + C > 0, else raises :class:`BoundViolationError`.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha!r}")
    _check_bounds(y, a2, C)
    ind_le = 1.0 if y <= a1 else 0.0
    ind_gt = 1.0 - ind_le
    return (
        np.log((a2 + C) / (y + C))
        - a2 / (a2 + C)
        + ((ind_le - alpha) * a1 + ind_gt * y) / ((a2 + C) * (1.0 - alpha))
    )


def score_spectral(estimates: RiskEstimate, y: float, params: ScoreParams) -> float:
    """Strictly consistent score for (VaR levels, spectral risk).

    Reduces exactly to :func:`score_cvar` for a one-atom spectrum.
    """
    spec = params.spectrum
    if len(estimates.var_levels) != spec.n_atoms:
        raise ValueError(
            f"estimate has {len(estimates.var_levels)} VaR levels, "
            f"spectrum has {spec.n_atoms} atoms"
        )
    var = np.asarray(estimates.var_levels, dtype=float)[None, :]
    out = score_spectral_batch(
        var, np.asarray([estimates.risk]), np.asarray([y]), params
    )
    return float(out[0])


def score_spectral_batch(var_levels, risk, y, params: ScoreParams):
    """Vectorised spectral score.

    var_levels: (N, k-1) nondecreasing rows; risk: (N,); y: (N,).
    Returns per-row scores (N,).
    """
    C = params.cost_bound_C
    alphas = np.asarray(params.spectrum.thresholds)
    weights = np.asarray(params.spectrum.weights)
    var_levels = np.asarray(var_levels, dtype=float)
    risk = np.asarray(risk, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_bounds(y, risk, C)

    ind_gt = (y[:, None] > var_levels).astype(float)  # (N, k-1)
    coef = weights / (1.0 - alphas)
    bracket = risk + np.sum(
        coef * ((ind_gt - (1.0 - alphas)) * var_levels - ind_gt * y[:, None]),
        axis=1,
    )
    return np.log((risk + C) / (y + C)) - bracket / (risk + C)


def score_spectral_grad_batch(var_levels, risk, y, params: ScoreParams):
    """Per-row partial derivatives of the spectral score.

    Indicators are treated as constants of the forward pass (no gradient
    flows through the kinks).  Returns ``(d_var, d_risk)`` with shapes
    (N, k-1) and (N,).
    """
    C = params.cost_bound_C
    alphas = np.asarray(params.spectrum.thresholds)
    weights = np.asarray(params.spectrum.weights)
    var_levels = np.asarray(var_levels, dtype=float)
    risk = np.asarray(risk, dtype=float)
    y = np.asarray(y, dtype=float)
    _check_bounds(y, risk, C)

    ind_gt = (y[:, None] > var_levels).astype(float)
    coef = weights / (1.0 - alphas)
    bracket = risk + np.sum(
        coef * ((ind_gt - (1.0 - alphas)) * var_levels - ind_gt * y[:, None]),
        axis=1,
    )
    d_var = -(coef * (ind_gt - (1.0 - alphas))) / (risk + C)[:, None]
    d_risk = bracket / (risk + C) ** 2
    return d_var, d_risk
