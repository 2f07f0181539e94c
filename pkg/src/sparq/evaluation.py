"""Correlation of objective quality scores against subjective ratings.

Rank correlations (Spearman, Kendall tau-b) measure prediction
monotonicity on the raw score pairs; a five-parameter monotone logistic
regression maps objective scores onto the subjective scale before the
accuracy statistics (Pearson correlation, MAE, RMS) are computed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.special import expit

_NM_MAX_ITER = 2000
_NM_ROUNDS = 4


@dataclass(frozen=True)
class LogisticFit:
    """Fitted five-parameter mapping from objective to subjective scale.

    Q(s) = g1 * (1/2 - 1/(1 + exp(g2 (s - g3)))) + g4 s + g5
    """

    gamma: tuple[float, float, float, float, float]
    converged: bool
    rms: float

    def predict(self, scores) -> np.ndarray:
        s = np.asarray(scores, dtype=np.float64)
        g1, g2, g3, g4, g5 = self.gamma
        return g1 * (0.5 - expit(-g2 * (s - g3))) + g4 * s + g5


@dataclass(frozen=True)
class EvalStats:
    """Correlation and accuracy summary of one score list."""

    srocc: float
    krocc: float
    cc: float
    mae: float
    rms: float
    fit: LogisticFit


def _check_pairs(objective, subjective, min_len: int = 3):
    obj = np.asarray(objective, dtype=np.float64).ravel()
    subj = np.asarray(subjective, dtype=np.float64).ravel()
    if obj.shape != subj.shape:
        raise ValueError(f"score lists differ in length: {obj.size} vs {subj.size}")
    if obj.size < min_len:
        raise ValueError(f"need at least {min_len} score pairs, got {obj.size}")
    if not (np.all(np.isfinite(obj)) and np.all(np.isfinite(subj))):
        raise ValueError("score lists must be finite")
    return obj, subj


def _check_not_constant(values: np.ndarray, name: str) -> None:
    if np.all(values == values[0]):
        raise ValueError(f"correlation undefined: {name} scores are constant")


def srocc(objective, subjective) -> float:
    """Spearman rank correlation; ties receive average ranks."""
    obj, subj = _check_pairs(objective, subjective)
    _check_not_constant(obj, "objective")
    _check_not_constant(subj, "subjective")
    return float(stats.spearmanr(obj, subj).statistic)


def krocc(objective, subjective) -> float:
    """Kendall rank correlation, tau-b variant with tie corrections."""
    obj, subj = _check_pairs(objective, subjective)
    _check_not_constant(obj, "objective")
    _check_not_constant(subj, "subjective")
    return float(stats.kendalltau(obj, subj, variant="b").statistic)


def _sse(gamma: np.ndarray, obj: np.ndarray, subj: np.ndarray) -> float:
    g1, g2, g3, g4, g5 = gamma
    q = g1 * (0.5 - expit(-g2 * (obj - g3))) + g4 * obj + g5
    diff = q - subj
    return float(diff @ diff)


def _affine_fit(obj: np.ndarray, subj: np.ndarray) -> tuple[float, float]:
    design = np.column_stack([obj, np.ones_like(obj)])
    (slope, intercept), *_ = np.linalg.lstsq(design, subj, rcond=None)
    return float(slope), float(intercept)


def fit_logistic(objective, subjective) -> LogisticFit:
    """Least-squares fit of the five-parameter logistic mapping.

    Runs Nelder-Mead from a data-driven start and from an affine-only
    start, restarting a few times from the best point; the plain affine
    least-squares solution is kept as a floor so the fitted RMS never
    exceeds it.
    """
    obj, subj = _check_pairs(objective, subjective, min_len=5)
    _check_not_constant(obj, "objective")
    slope, intercept = _affine_fit(obj, subj)
    starts = [
        np.array([
            float(subj.max() - subj.min()),
            1.0,
            float(np.median(obj)),
            0.0,
            float(subj.mean()),
        ]),
        np.array([0.0, 1.0, float(np.median(obj)), slope, intercept]),
    ]
    best = np.array([0.0, 1.0, float(np.median(obj)), slope, intercept])
    best_sse = _sse(best, obj, subj)
    converged = True
    for start in starts:
        current = start
        for _ in range(_NM_ROUNDS):
            result = optimize.minimize(
                _sse, current, args=(obj, subj), method="Nelder-Mead",
                options={"maxiter": _NM_MAX_ITER, "xatol": 1e-10, "fatol": 1e-12},
            )
            improved = result.fun < best_sse - 1e-15
            if result.fun < best_sse:
                best, best_sse = result.x, float(result.fun)
                converged = bool(result.success)
            current = result.x
            if not improved:
                break
    rms = float(np.sqrt(best_sse / obj.size))
    return LogisticFit(tuple(float(g) for g in best), converged, rms)


def evaluate(objective, subjective) -> EvalStats:
    """Full correlation summary of objective scores against subjective ones.

    Rank correlations use the raw pairs; Pearson correlation, MAE, and RMS
    are computed after the logistic mapping.
    """
    obj, subj = _check_pairs(objective, subjective, min_len=5)
    rank_s = srocc(obj, subj)
    rank_k = krocc(obj, subj)
    fit = fit_logistic(obj, subj)
    mapped = fit.predict(obj)
    _check_not_constant(mapped, "mapped objective")
    cc = float(np.corrcoef(mapped, subj)[0, 1])
    residual = mapped - subj
    mae = float(np.mean(np.abs(residual)))
    rms = float(np.sqrt(np.mean(residual * residual)))
    return EvalStats(srocc=rank_s, krocc=rank_k, cc=cc, mae=mae, rms=rms, fit=fit)
