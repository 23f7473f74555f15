"""Confidence-interval forecasting from tendency-conditioned error fits.

Training residuals are split into Increase/Decrease/Constant classes by the
relative change between the predicted value and the previous true value;
each class gets a normal-inverse-Gaussian and a Gaussian fit, the family
with the lower BIC wins, and interval bounds come from the fitted
distribution's quantiles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.integrate
import scipy.optimize
import scipy.special

__all__ = [
    "TendencyClass",
    "classify_tendency",
    "NigParams",
    "bessel_k1e",
    "bessel_k1",
    "nig_pdf",
    "nig_logpdf",
    "nig_sample",
    "fit_nig",
    "fit_gaussian",
    "model_bic",
    "ClassFit",
    "interval_bounds",
    "interval_metrics",
    "IntervalModel",
    "fit_interval_model",
]

_LABELS = ("Increase", "Decrease", "Constant")


@dataclass(frozen=True)
class TendencyClass:
    label: str
    threshold: float = 0.10

    def __post_init__(self):
        if self.label not in _LABELS:
            raise ValueError(f"label must be one of {_LABELS}")


def classify_tendency(y_prev_true: float, y_pred: float, threshold: float = 0.10) -> TendencyClass:
    """Classify the predicted move relative to the previous true value.

    Uses r = (y_prev_true - y_pred) / y_pred with the boundary inclusive:
    Increase when r >= threshold, Decrease when r <= -threshold, else
    Constant.  Note the direction: the *predicted* current value sits in
    the denominator and the *true previous* value in the numerator; this
    is deliberately kept as the class definition is written, however
    counterintuitive it reads.
    """
    if y_pred == 0:
        raise ValueError("y_pred must be nonzero (relative change undefined)")
    if not (np.isfinite(y_prev_true) and np.isfinite(y_pred)):
        raise ValueError("inputs must be finite")
    r = (y_prev_true - y_pred) / y_pred
    if r >= threshold:
        label = "Increase"
    elif r <= -threshold:
        label = "Decrease"
    else:
        label = "Constant"
    return TendencyClass(label=label, threshold=threshold)


# ---------------------------------------------------------------------------
# Modified Bessel function K1
# ---------------------------------------------------------------------------

# Chebyshev coefficients of sqrt(x) e^x K1(x) in t = (8/x - 2)/2, x >= 2.
# Generated offline against 40-digit arithmetic; relative error < 2e-15.
_K1E_CHEB = (
    1.3603130952422207,
    0.10392373657681715,
    -0.0028578168596228378,
    0.00019521551847126285,
    -1.9361979741794448e-05,
    2.406484947692242e-06,
    -3.501960603938864e-07,
    5.741084111870753e-08,
    -1.0345762543281702e-08,
    2.0150496242364394e-09,
    -4.1903552796158375e-10,
    9.218301478405365e-11,
    -2.1299811701280435e-11,
    5.139524917117465e-12,
    -1.2892893607216936e-12,
    3.34739997434926e-13,
    -8.985398230878609e-14,
    2.46652409226452e-14,
    -7.13207256673636e-15,
    2.01398027397183e-15,
    -7.261386638134481e-16,
    1.5108518573097075e-16,
)

_EULER_GAMMA = 0.5772156649015328606


def _k1e_small(x: np.ndarray) -> np.ndarray:
    """e^x K1(x) for 0 < x <= 2 from the exact ascending series."""
    half = x / 2.0
    q = half * half
    i1 = np.zeros_like(x)
    term = half.copy()
    series = np.zeros_like(x)
    coeff = np.ones_like(x)
    psi_a = -_EULER_GAMMA          # psi(1)
    psi_b = 1.0 - _EULER_GAMMA     # psi(2)
    for k in range(30):
        i1 += term
        series += (psi_a + psi_b) * coeff
        term = term * q / ((k + 1) * (k + 2))
        coeff = coeff * q / ((k + 1) * (k + 2))
        psi_a += 1.0 / (k + 1)
        psi_b += 1.0 / (k + 2)
    k1 = np.log(half) * i1 + 1.0 / x - (x / 4.0) * series
    return np.exp(x) * k1


def bessel_k1e(x) -> np.ndarray | float:
    """Exponentially scaled modified Bessel function e^x K1(x), x > 0.

    Exact ascending series below the x = 2 split, Chebyshev expansion of
    the scaled asymptotic form above it.
    """
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    x_arr = np.atleast_1d(x_arr)
    if np.any(x_arr <= 0):
        raise ValueError("k1e requires x > 0")
    out = np.empty_like(x_arr)
    small = x_arr <= 2.0
    if small.any():
        out[small] = _k1e_small(x_arr[small])
    if (~small).any():
        xl = x_arr[~small]
        t = (8.0 / xl - 2.0) / 2.0
        out[~small] = np.polynomial.chebyshev.chebval(t, _K1E_CHEB) / np.sqrt(xl)
    return float(out[0]) if scalar else out


def bessel_k1(x) -> np.ndarray | float:
    """Modified Bessel function of the second kind K1(x), x > 0."""
    x_arr = np.asarray(x, dtype=float)
    return bessel_k1e(x_arr) * np.exp(-x_arr)


# ---------------------------------------------------------------------------
# NIG distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NigParams:
    """Tail heaviness a > 0, asymmetry |b| <= a, location x0, scale sigma > 0."""

    a: float
    b: float
    x0: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("a must be > 0")
        if abs(self.b) > self.a:
            raise ValueError("|b| must be <= a")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")

    @property
    def gamma0(self) -> float:
        return math.sqrt(self.a * self.a - self.b * self.b)

    @property
    def mean(self) -> float:
        return self.x0 + self.sigma * self.b / self.gamma0

    @property
    def variance(self) -> float:
        return self.sigma**2 * self.a**2 / self.gamma0**3


def nig_logpdf(x, p: NigParams) -> np.ndarray | float:
    """Log-density, stable in the far tails via the scaled Bessel form."""
    x_arr = np.asarray(x, dtype=float)
    y = (x_arr - p.x0) / p.sigma
    root = np.sqrt(1.0 + y * y)
    z = p.a * root
    # log K1(z) = log k1e(z) - z keeps the exponent moderate: b*y - z <= 0
    return (
        np.log(p.a)
        + np.log(bessel_k1e(z))
        - z
        + p.gamma0
        + p.b * y
        - np.log(np.pi)
        - np.log(root)
        - np.log(p.sigma)
    )


def nig_pdf(x, p: NigParams) -> np.ndarray | float:
    """Normal-inverse-Gaussian density f((x - x0)/sigma) / sigma."""
    out = np.exp(nig_logpdf(x, p))
    return float(out) if np.isscalar(x) else out


def nig_sample(p: NigParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Exact draws via the inverse-Gaussian mixture representation.

    y | V ~ N(b V, V) with V ~ InverseGaussian(mean 1/gamma0, shape 1);
    x = x0 + sigma y.  Independent of the pdf/CDF code paths.
    """
    v = rng.wald(1.0 / p.gamma0, 1.0, size=size)
    y = p.b * v + np.sqrt(v) * rng.standard_normal(size)
    return p.x0 + p.sigma * y


def nig_loglik(samples, p: NigParams) -> float:
    return float(np.sum(nig_logpdf(np.asarray(samples, dtype=float), p)))


def _unpack(theta: np.ndarray) -> NigParams:
    a = math.exp(theta[0])
    b = a * math.tanh(theta[1])
    return NigParams(a=a, b=b, x0=theta[2], sigma=math.exp(theta[3]))


def fit_nig(samples, max_iter: int = 4000) -> tuple[NigParams, float]:
    """Maximum-likelihood NIG fit by derivative-free simplex search.

    Parameters are transformed (log for a and sigma, a*tanh for b) so every
    simplex point satisfies the invariants.  Starts from a moment-matched
    point plus two skewed variants and keeps the best optimum.  Returns
    (params, log-likelihood); raises if no start converges.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 8:
        raise ValueError("need at least 8 samples to fit a NIG")
    m1 = float(np.mean(x))
    v = float(np.var(x))
    if v <= 0:
        raise ValueError("samples have zero variance")
    kurt = float(np.mean((x - m1) ** 4) / v**2)
    gamma0 = 3.0 / max(kurt - 3.0, 0.3)
    sigma0 = math.sqrt(v * gamma0)

    def objective(theta):
        try:
            p = _unpack(theta)
        except (ValueError, OverflowError):
            return 1e300
        ll = nig_loglik(x, p)
        return -ll if np.isfinite(ll) else 1e300

    starts = [
        np.array([math.log(gamma0), 0.0, m1, math.log(sigma0)]),
        np.array([math.log(gamma0), 0.7, m1, math.log(sigma0)]),
        np.array([math.log(gamma0), -0.7, m1, math.log(sigma0)]),
    ]
    best = None
    failures = []
    for theta0 in starts:
        res = scipy.optimize.minimize(
            objective,
            theta0,
            method="Nelder-Mead",
            options={"maxiter": max_iter, "xatol": 1e-8, "fatol": 1e-10},
        )
        if not res.success:
            failures.append(res)
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        best_failed = min(failures, key=lambda r: r.fun)
        raise RuntimeError(
            f"NIG fit did not converge within {max_iter} iterations; "
            f"best point {_unpack(best_failed.x)} with loglik {-best_failed.fun:.6g}"
        )
    return _unpack(best.x), -float(best.fun)


def fit_gaussian(samples) -> tuple[tuple[float, float], float]:
    """Gaussian MLE: ((mean, sd), log-likelihood)."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples to fit a Gaussian")
    mean = float(np.mean(x))
    sd = float(np.std(x))
    if sd == 0:
        raise ValueError("samples have zero variance")
    ll = float(
        -0.5 * x.size * math.log(2 * math.pi) - x.size * math.log(sd)
        - 0.5 * np.sum((x - mean) ** 2) / sd**2
    )
    return (mean, sd), ll


def model_bic(loglik: float, param_count: int, sample_count: int) -> float:
    """BIC = k ln(n) - 2 loglik."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    return param_count * math.log(sample_count) - 2.0 * loglik


# ---------------------------------------------------------------------------
# Per-class fits and interval bounds
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassFit:
    """Chosen error distribution for one tendency class.

    Holds both candidate fits' BIC scores; ``family`` is the winner.
    """

    family: str  # "nig" or "gaussian"
    nig: NigParams
    gaussian: tuple[float, float]
    bic_nig: float
    bic_gaussian: float
    loglik_nig: float
    loglik_gaussian: float
    sample_count: int

    def pdf(self, x):
        if self.family == "nig":
            return nig_pdf(x, self.nig)
        mean, sd = self.gaussian
        x_arr = np.asarray(x, dtype=float)
        return np.exp(-0.5 * ((x_arr - mean) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))

    def cdf(self, x: float) -> float:
        if self.family == "gaussian":
            mean, sd = self.gaussian
            return float(scipy.special.ndtr((x - mean) / sd))
        val, _err = scipy.integrate.quad(
            lambda t: nig_pdf(t, self.nig), -np.inf, x, epsabs=1e-10, epsrel=1e-10, limit=400
        )
        return float(val)

    def quantile(self, prob: float, tol: float = 1e-8) -> float:
        """Inverse CDF; closed form for Gaussian, bisection for NIG."""
        if not 0.0 < prob < 1.0:
            raise ValueError("prob must be in (0, 1)")
        if self.family == "gaussian":
            mean, sd = self.gaussian
            return float(mean + sd * scipy.special.ndtri(prob))
        p = self.nig
        scale = p.sigma
        lo, hi = p.x0 - scale, p.x0 + scale
        for _ in range(80):
            if self.cdf(lo) < prob:
                break
            lo -= (p.x0 - lo) * 2 + scale
        else:
            raise RuntimeError("quantile bracket expansion failed (lower)")
        for _ in range(80):
            if self.cdf(hi) > prob:
                break
            hi += (hi - p.x0) * 2 + scale
        else:
            raise RuntimeError("quantile bracket expansion failed (upper)")
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            f = self.cdf(mid)
            if abs(f - prob) <= tol or (hi - lo) <= 1e-13 * max(1.0, abs(mid)):
                return mid
            if f < prob:
                lo = mid
            else:
                hi = mid
        raise RuntimeError("quantile bisection did not converge")


def _fit_class(residuals: np.ndarray) -> ClassFit:
    nig_params, ll_nig = fit_nig(residuals)
    gauss, ll_gauss = fit_gaussian(residuals)
    n = residuals.size
    bic_nig = model_bic(ll_nig, 4, n)
    bic_gauss = model_bic(ll_gauss, 2, n)
    return ClassFit(
        family="nig" if bic_nig < bic_gauss else "gaussian",
        nig=nig_params,
        gaussian=gauss,
        bic_nig=bic_nig,
        bic_gaussian=bic_gauss,
        loglik_nig=ll_nig,
        loglik_gaussian=ll_gauss,
        sample_count=n,
    )


def interval_bounds(y_pred: float, class_fit: ClassFit, pinc: float) -> tuple[float, float]:
    """(L, U) = y_pred + (Q(alpha/2), Q(1 - alpha/2)) with alpha = 1 - PINC."""
    if not 0.0 < pinc < 1.0:
        raise ValueError("pinc must be in (0, 1)")
    alpha = 1.0 - pinc
    lower = y_pred + class_fit.quantile(alpha / 2.0)
    upper = y_pred + class_fit.quantile(1.0 - alpha / 2.0)
    return float(lower), float(upper)


def interval_metrics(lower, upper, actuals, pinc: float) -> tuple[float, float, float]:
    """(PICP, ACE, PIAW) with boundary-inclusive coverage."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    actuals = np.asarray(actuals, dtype=float)
    if not (lower.shape == upper.shape == actuals.shape):
        raise ValueError("lower, upper and actuals must have equal lengths")
    if lower.size == 0:
        raise ValueError("empty input")
    covered = (actuals >= lower) & (actuals <= upper)
    picp = float(np.mean(covered))
    ace = picp - pinc
    piaw = float(np.mean(upper - lower))
    return picp, ace, piaw


# ---------------------------------------------------------------------------
# Whole-model fit over the three tendency classes
# ---------------------------------------------------------------------------

# classes with fewer residuals than this fall back to the pooled fit
MIN_CLASS_SAMPLES = 8


@dataclass(frozen=True)
class IntervalModel:
    class_fits: dict[str, ClassFit]
    pooled: ClassFit
    threshold: float
    pinc_levels: tuple[float, ...]

    def fit_for(self, label: str) -> ClassFit:
        return self.class_fits.get(label, self.pooled)

    def predict_intervals(self, y_prev_true, y_pred, pinc: float):
        """Per-step bounds; the class of step t comes from
        (previous true value, current prediction)."""
        y_prev_true = np.asarray(y_prev_true, dtype=float)
        y_pred = np.asarray(y_pred, dtype=float)
        if y_prev_true.shape != y_pred.shape:
            raise ValueError("y_prev_true and y_pred must have equal lengths")
        lower = np.empty(y_pred.size)
        upper = np.empty(y_pred.size)
        cache: dict[tuple[str, float], tuple[float, float]] = {}
        for t in range(y_pred.size):
            label = classify_tendency(y_prev_true[t], y_pred[t], self.threshold).label
            key = (label, pinc)
            if key not in cache:
                fit = self.fit_for(label)
                alpha = 1.0 - pinc
                cache[key] = (
                    fit.quantile(alpha / 2.0),
                    fit.quantile(1.0 - alpha / 2.0),
                )
            qlo, qhi = cache[key]
            lower[t] = y_pred[t] + qlo
            upper[t] = y_pred[t] + qhi
        return lower, upper


def fit_interval_model(
    y_true,
    y_pred,
    threshold: float = 0.10,
    pinc_levels=(0.6, 0.7, 0.8, 0.9),
) -> IntervalModel:
    """Fit tendency-conditioned error distributions to training residuals.

    Residuals are eps(t) = y_true(t) - y_pred(t), so adding the fitted
    quantiles to a prediction brackets the truth.  Classes with fewer than
    MIN_CLASS_SAMPLES residuals fall back to the pooled all-class fit.
    """
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-d and equal length")
    if y_true.size < 2:
        raise ValueError("need at least 2 steps")
    residuals = y_true - y_pred

    buckets: dict[str, list[float]] = {label: [] for label in _LABELS}
    for t in range(1, y_true.size):
        label = classify_tendency(y_true[t - 1], y_pred[t], threshold).label
        buckets[label].append(residuals[t])

    pooled = _fit_class(residuals)
    class_fits = {}
    for label, values in buckets.items():
        if len(values) >= MIN_CLASS_SAMPLES:
            class_fits[label] = _fit_class(np.asarray(values))
    return IntervalModel(
        class_fits=class_fits,
        pooled=pooled,
        threshold=threshold,
        pinc_levels=tuple(pinc_levels),
    )
