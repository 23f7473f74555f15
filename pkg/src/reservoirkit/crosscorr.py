"""Time-delayed correlation discovery between related series.

Sample CCF with per-lag truncated sums, AR pre-whitening, significance
screening, the directed lag network, and exhaustive predictor-subset
selection.  Sign convention: a peak at negative lag h of ccf(x, y) means
the past of x correlates with the present of y, so x can help predict y.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LagCorrelation",
    "ccf",
    "ArFit",
    "ar_fit",
    "prewhiten",
    "significant_lags",
    "CcfNetwork",
    "build_network",
    "select_subset",
]

# two-sided normal quantiles for the supported significance levels
_Z_TABLE = {0.10: 1.6448536269514722, 0.05: 1.959963984540054, 0.01: 2.5758293035489004}


@dataclass(frozen=True)
class LagCorrelation:
    """Sample cross-correlation values over lags -H..H."""

    lags: np.ndarray
    values: np.ndarray
    n: int

    def value_at(self, lag: int) -> float:
        idx = np.where(self.lags == lag)[0]
        if idx.size == 0:
            raise KeyError(f"lag {lag} not computed")
        return float(self.values[idx[0]])


def ccf(x, y, max_lag: int) -> LagCorrelation:
    """Sample cross-correlation of x against y for lags -H..H.

    CCF(h) correlates x_{t+h} with y_t over their overlap, full-series
    means removed and per-lag truncated sums in both the numerator and the
    denominators.  ccf(x, x) is 1 at lag 0 by construction.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValueError("x and y must be 1-d and equal length")
    n = x.size
    if n <= max_lag + 2:
        raise ValueError(f"length {n} must exceed max_lag + 2 = {max_lag + 2}")
    xc = x - x.mean()
    yc = y - y.mean()
    if np.allclose(xc, 0) or np.allclose(yc, 0):
        raise ValueError("zero-variance series")
    lags = np.arange(-max_lag, max_lag + 1)
    values = np.empty(lags.size)
    for i, h in enumerate(lags):
        if h >= 0:
            a, b = xc[h:], yc[: n - h]
        else:
            a, b = xc[: n + h], yc[-h:]
        denom = np.sqrt(np.sum(a * a) * np.sum(b * b))
        values[i] = np.sum(a * b) / denom if denom > 0 else 0.0
    return LagCorrelation(lags=lags, values=values, n=n)


@dataclass(frozen=True)
class ArFit:
    """Least-squares AR(p) model with intercept."""

    order: int
    intercept: float
    coefficients: np.ndarray
    residuals: np.ndarray
    bic: float

    def filter(self, series) -> np.ndarray:
        """Residuals of ``series`` under this model's coefficients."""
        z = np.asarray(series, dtype=float)
        p = self.order
        pred = np.full(z.size - p, self.intercept)
        for j in range(1, p + 1):
            pred += self.coefficients[j - 1] * z[p - j: z.size - j]
        return z[p:] - pred


def _ar_design(x: np.ndarray, p: int):
    rows = x.size - p
    design = np.empty((rows, p + 1))
    design[:, 0] = 1.0
    for j in range(1, p + 1):
        design[:, j] = x[p - j: x.size - j]
    return design, x[p:]


def ar_fit(x, max_order: int, criterion: str = "bic") -> ArFit:
    """AR(p) by least squares, order chosen by minimal BIC (or AIC).

    The goal is only to remove strong temporal structure before a CCF, not
    to find the true generating model.
    """
    x = np.asarray(x, dtype=float)
    if max_order < 1:
        raise ValueError("max_order must be >= 1")
    if x.size <= 3 * max_order:
        raise ValueError(f"need more than {3 * max_order} points for max_order {max_order}")
    if np.allclose(x, x[0]):
        raise ValueError("zero-variance series")
    if criterion not in ("bic", "aic"):
        raise ValueError("criterion must be 'bic' or 'aic'")

    best = None
    for p in range(1, max_order + 1):
        design, target = _ar_design(x, p)
        beta, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
        if rank < design.shape[1]:
            raise ValueError(f"rank-deficient AR({p}) design matrix")
        resid = target - design @ beta
        n = target.size
        rss = float(resid @ resid)
        penalty = (p + 1) * (np.log(n) if criterion == "bic" else 2.0)
        score = n * np.log(max(rss / n, 1e-300)) + penalty
        if best is None or score < best[0]:
            best = (score, p, beta, resid)
    score, p, beta, resid = best
    return ArFit(
        order=p,
        intercept=float(beta[0]),
        coefficients=beta[1:].copy(),
        residuals=resid,
        bic=float(score),
    )


def prewhiten(x, y, max_order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Filter both series with the AR model fitted to x.

    Removes x's own temporal structure (and any structure the pair shares
    through it) so the CCF of the returned pair reflects genuine
    cross-dependence.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size != y.size:
        raise ValueError("x and y must have equal length")
    fit = ar_fit(x, max_order)
    return fit.residuals.copy(), fit.filter(y)


def significant_lags(corr: LagCorrelation, level: float = 0.05) -> list[int]:
    """Lags whose |CCF| exceeds z(level)/sqrt(n)."""
    if level in _Z_TABLE:
        z = _Z_TABLE[level]
    else:
        import scipy.special

        z = float(scipy.special.ndtri(1.0 - level / 2.0))
    cutoff = z / np.sqrt(corr.n)
    return [int(h) for h, v in zip(corr.lags, corr.values) if abs(v) > cutoff]


@dataclass(frozen=True)
class CcfNetwork:
    """Directed lag network: src -> dst with the predictive lag magnitudes.

    An edge (src, dst, {1, 2}) reads: src's values 1 and 2 steps back are
    significantly correlated with dst's present.  Lag-0 significance is
    recorded apart; it never creates an edge because the simultaneous
    value is unavailable at prediction time.
    """

    nodes: tuple[str, ...]
    edges: dict[tuple[str, str], tuple[int, ...]]
    lag0: dict[tuple[str, str], bool]

    def to_json(self) -> str:
        payload = {
            "nodes": list(self.nodes),
            "edges": [
                {"src": src, "dst": dst, "lags": list(lags)}
                for (src, dst), lags in sorted(self.edges.items())
            ],
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def build_network(
    series: dict[str, np.ndarray],
    max_lag: int,
    level: float = 0.05,
    max_order: int = 8,
) -> CcfNetwork:
    """Prewhitened pairwise CCF screening over every ordered pair.

    Significant negative lags h of ccf(x, y) create the edge x -> y
    carrying |h|.
    """
    if len(series) < 2:
        raise ValueError("need at least 2 series")
    names = tuple(series.keys())
    edges: dict[tuple[str, str], tuple[int, ...]] = {}
    lag0: dict[tuple[str, str], bool] = {}
    for src, dst in itertools.permutations(names, 2):
        xr, yr = prewhiten(series[src], series[dst], max_order)
        corr = ccf(xr, yr, max_lag)
        sig = significant_lags(corr, level)
        weights = tuple(sorted(-h for h in sig if h < 0))
        if weights:
            edges[(src, dst)] = weights
        if 0 in sig:
            lag0[(src, dst)] = True
    return CcfNetwork(nodes=names, edges=edges, lag0=lag0)


def select_subset(
    candidates: dict[str, np.ndarray],
    evaluate,
    max_exhaustive: int = 12,
    greedy: bool = False,
) -> tuple[tuple[str, ...], float]:
    """Find the candidate subset minimizing a validation-error functional.

    ``evaluate`` maps a tuple of candidate names (possibly empty) to a
    validation MAE; it must be pure.  All 2^c subsets are scored unless
    ``greedy`` requests forward selection (mandatory above
    ``max_exhaustive`` candidates).  Ties break toward smaller subsets,
    then lexicographic order.  Returns (best subset, its MAE); never worse
    than the empty subset.
    """
    names = sorted(candidates.keys())
    if len(names) > max_exhaustive and not greedy:
        raise ValueError(
            f"{len(names)} candidates exceed the exhaustive limit {max_exhaustive}; "
            "pass greedy=True for forward selection"
        )

    if greedy:
        chosen: list[str] = []
        best_err = float(evaluate(()))
        improved = True
        while improved and len(chosen) < len(names):
            improved = False
            for name in names:
                if name in chosen:
                    continue
                trial = tuple(sorted(chosen + [name]))
                err = float(evaluate(trial))
                if err < best_err:
                    best_err = err
                    best_add = name
                    improved = True
            if improved:
                chosen.append(best_add)
        return tuple(sorted(chosen)), best_err

    best_subset: tuple[str, ...] = ()
    best_err = float(evaluate(()))
    for size in range(1, len(names) + 1):
        for combo in itertools.combinations(names, size):
            err = float(evaluate(combo))
            if err < best_err:
                best_err = err
                best_subset = combo
    return best_subset, best_err
