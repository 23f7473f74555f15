"""Forecasting and propagation variants built on the ESN core.

Ensemble averaging (E-RC), additive trend/seasonality/residual
decomposition (D-RC), delay-polynomial regression (NG-RC), and the
two-phase multi-step retraining used for high-dimensional targets.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import esn
from .esn import EsnConfig, FreeRunResult, LinearReadout, ReservoirMatrices, StateTrajectory

__all__ = [
    "EnsembleMember",
    "EnsembleModel",
    "ensemble_train",
    "ensemble_predict",
    "decompose_additive",
    "adf_statistic",
    "DrcConfig",
    "DecompositionModel",
    "drc_train",
    "drc_predict",
    "NgrcConfig",
    "NgrcModel",
    "ngrc_features",
    "ngrc_feature_count",
    "ngrc_train",
    "ngrc_predict",
    "MultiStepConfig",
    "MultiStepResult",
    "multi_step_train",
]

# Constant-only Dickey-Fuller 5% critical value, large-sample
ADF_CRITICAL_5PCT = -2.86


# ---------------------------------------------------------------------------
# Ensemble RC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleMember:
    matrices: ReservoirMatrices
    readout: LinearReadout
    config: EsnConfig
    x_end: np.ndarray
    y_end: np.ndarray


@dataclass(frozen=True)
class EnsembleModel:
    """Reservoirs sharing hyperparameters, differing only in their seeds."""

    members: tuple[EnsembleMember, ...]
    shared_config: EsnConfig

    @property
    def size(self) -> int:
        return len(self.members)


def ensemble_train(config: EsnConfig, n_ensemble: int, inputs, targets) -> EnsembleModel:
    """Train ``n_ensemble`` independent reservoirs on the same data.

    Member seeds derive from ``config.seed`` via SeedSequence, so the whole
    ensemble is reproducible from the one run seed.  Members whose state
    diverges are dropped with a warning as long as at least half survive.
    """
    if n_ensemble < 1:
        raise ValueError("n_ensemble must be >= 1")
    seeds = esn.member_seeds(config.seed, n_ensemble)
    members = []
    failures = []
    for seed in seeds:
        member_cfg = config.with_seed(int(seed))
        try:
            m = esn.build_reservoir(member_cfg)
            traj = esn.teacher_force(m, member_cfg, inputs, targets)
            ro = esn.fit_readout(
                traj,
                member_cfg.regularization,
                "quadratic" if member_cfg.quadratic_readout else "linear",
                member_cfg.output_activation,
            )
        except RuntimeError as exc:
            failures.append(str(exc))
            continue
        members.append(
            EnsembleMember(
                matrices=m,
                readout=ro,
                config=member_cfg,
                x_end=traj.states[-1],
                y_end=traj.targets[-1],
            )
        )
    if failures:
        if len(members) < (n_ensemble + 1) // 2:
            raise RuntimeError(
                f"{len(failures)}/{n_ensemble} ensemble members diverged: {failures[0]}"
            )
        warnings.warn(
            f"dropped {len(failures)}/{n_ensemble} diverged ensemble members",
            RuntimeWarning,
            stacklevel=2,
        )
    return EnsembleModel(members=tuple(members), shared_config=config)


def ensemble_predict(
    model: EnsembleModel, horizon: int, inputs_future=None
) -> np.ndarray:
    """Arithmetic mean of the members' autonomous predictions."""
    preds = [
        esn.free_run(
            mem.matrices,
            mem.readout,
            mem.x_end,
            mem.y_end,
            inputs_future=inputs_future,
            horizon=horizon,
            config=mem.config,
        ).predictions
        for mem in model.members
    ]
    return np.mean(preds, axis=0)


# ---------------------------------------------------------------------------
# Additive decomposition + stationarity check
# ---------------------------------------------------------------------------

def decompose_additive(series, period: int):
    """Classic moving-average additive decomposition.

    trend: centered moving average of window ``period`` (the standard
    half-weighted 2 x P window for even P), edges filled with the nearest
    defined trend value; seasonal: per-phase mean of the detrended series,
    re-centered to zero mean; residual: the exact remainder, so the three
    components always sum back to the input.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if period < 2:
        raise ValueError("period must be >= 2")
    if n < 2 * period:
        raise ValueError(f"need at least {2 * period} points for period {period}")

    if period % 2 == 0:
        weights = np.ones(period + 1)
        weights[0] = weights[-1] = 0.5
        weights /= period
        half = period // 2
    else:
        weights = np.full(period, 1.0 / period)
        half = (period - 1) // 2
    core = np.convolve(y, weights, mode="valid")
    trend = np.empty(n)
    trend[half:half + core.size] = core
    trend[:half] = core[0]
    trend[half + core.size:] = core[-1]

    detrended = y - trend
    # per-phase means over the positions where the moving average is defined
    valid = slice(half, half + core.size)
    phases = np.arange(n) % period
    seasonal_idx = np.zeros(period)
    for p in range(period):
        vals = detrended[valid][phases[valid] == p]
        seasonal_idx[p] = vals.mean() if vals.size else 0.0
    seasonal_idx -= seasonal_idx.mean()
    seasonal = seasonal_idx[phases]

    residual = y - trend - seasonal
    return trend, seasonal, residual


def adf_statistic(series, max_lag: int):
    """Augmented Dickey-Fuller t-statistic, constant-only, fixed lag order.

    Regresses dy_t on (y_{t-1}, dy_{t-1..max_lag}, intercept) and compares
    the t-statistic of the y_{t-1} coefficient with the asymptotic 5%
    critical value -2.86.  Returns (t_statistic, reject_unit_root).
    """
    y = np.asarray(series, dtype=float)
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if y.size <= max_lag + 2:
        raise ValueError(f"series length {y.size} too short for max_lag {max_lag}")
    dy = np.diff(y)
    rows = dy.size - max_lag
    x = np.empty((rows, 2 + max_lag))
    x[:, 0] = y[max_lag:-1]
    x[:, 1] = 1.0
    for j in range(1, max_lag + 1):
        x[:, 1 + j] = dy[max_lag - j: max_lag - j + rows]
    target = dy[max_lag:]

    beta, _, rank, _ = np.linalg.lstsq(x, target, rcond=None)
    if rank < x.shape[1]:
        raise ValueError("rank-deficient ADF regressor matrix")
    resid = target - x @ beta
    dof = rows - x.shape[1]
    if dof < 1:
        raise ValueError("not enough observations for the ADF regression")
    sigma2 = resid @ resid / dof
    cov = sigma2 * np.linalg.inv(x.T @ x)
    t_stat = float(beta[0] / np.sqrt(cov[0, 0]))
    return t_stat, t_stat < ADF_CRITICAL_5PCT


# ---------------------------------------------------------------------------
# Decomposition RC
# ---------------------------------------------------------------------------

_COMPONENTS = ("trend", "seasonal", "residual")


@dataclass(frozen=True)
class DrcConfig:
    """One ESN config plus ensemble size per decomposed component."""

    period: int
    configs: dict[str, EsnConfig]
    ensemble_sizes: dict[str, int]
    seasonal_mode: str = "lookup"  # or "rc"

    def __post_init__(self):
        for name in _COMPONENTS:
            if name not in self.configs or name not in self.ensemble_sizes:
                raise ValueError(f"missing component '{name}'")
        if self.seasonal_mode not in ("lookup", "rc"):
            raise ValueError("seasonal_mode must be 'lookup' or 'rc'")


@dataclass(frozen=True)
class DecompositionModel:
    period: int
    trend_model: EnsembleModel
    seasonal_model: EnsembleModel | None
    residual_model: EnsembleModel
    trend: np.ndarray
    seasonal: np.ndarray
    residual: np.ndarray
    seasonal_mode: str
    train_length: int


def drc_train(series, regressors, period: int, config: DrcConfig) -> DecompositionModel:
    """Decompose the series and train one ensemble per component.

    All components receive all regressor columns.  In 'lookup' mode the
    deterministic seasonal component is continued by phase lookup instead
    of a reservoir forecast.
    """
    y = np.asarray(series, dtype=float)
    trend, seasonal, residual = decompose_additive(y, period)
    trend_model = ensemble_train(
        config.configs["trend"], config.ensemble_sizes["trend"], regressors, trend
    )
    residual_model = ensemble_train(
        config.configs["residual"], config.ensemble_sizes["residual"], regressors, residual
    )
    seasonal_model = None
    if config.seasonal_mode == "rc":
        seasonal_model = ensemble_train(
            config.configs["seasonal"], config.ensemble_sizes["seasonal"], regressors, seasonal
        )
    return DecompositionModel(
        period=period,
        trend_model=trend_model,
        seasonal_model=seasonal_model,
        residual_model=residual_model,
        trend=trend,
        seasonal=seasonal,
        residual=residual,
        seasonal_mode=config.seasonal_mode,
        train_length=y.size,
    )


def drc_predict(model: DecompositionModel, horizon: int, inputs_future=None) -> np.ndarray:
    """Sum of the three component forecasts."""
    trend_fc = ensemble_predict(model.trend_model, horizon, inputs_future)[:, 0]
    residual_fc = ensemble_predict(model.residual_model, horizon, inputs_future)[:, 0]
    if model.seasonal_mode == "rc":
        seasonal_fc = ensemble_predict(model.seasonal_model, horizon, inputs_future)[:, 0]
    else:
        phases = (model.train_length + np.arange(horizon)) % model.period
        seasonal_idx = np.array(
            [model.seasonal[p] for p in range(model.period)]
        )
        seasonal_fc = seasonal_idx[phases]
    return trend_fc + seasonal_fc + residual_fc


# ---------------------------------------------------------------------------
# Next-generation RC
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NgrcConfig:
    delay_depth: int
    regularization: float = 0.0

    def __post_init__(self):
        if self.delay_depth < 1:
            raise ValueError("delay_depth must be >= 1")


def ngrc_feature_count(k: int) -> int:
    """1 bias + (k+1) linear terms + (k+1)(k+2)/2 pairwise products."""
    return 1 + (k + 1) + (k + 1) * (k + 2) // 2


def ngrc_features(series, k: int) -> np.ndarray:
    """Delay-polynomial feature rows for every step t >= k.

    Row t holds [1, y(t), ..., y(t-k), y(t-i)y(t-j) for 0 <= i <= j <= k],
    delays ordered current-first.
    """
    y = np.asarray(series, dtype=float)
    if y.ndim != 1:
        raise ValueError("ngrc_features expects a 1-d series")
    if y.size < k + 1:
        raise ValueError(f"need at least {k + 1} points of history for k={k}")
    rows = y.size - k
    lin = np.empty((rows, k + 1))
    for d in range(k + 1):
        lin[:, d] = y[k - d: y.size - d]
    feats = [np.ones((rows, 1)), lin]
    prods = [
        (lin[:, i] * lin[:, j])[:, None]
        for i in range(k + 1)
        for j in range(i, k + 1)
    ]
    feats.extend(prods)
    return np.concatenate(feats, axis=1)


@dataclass(frozen=True)
class NgrcModel:
    config: NgrcConfig
    weights: np.ndarray
    tail: np.ndarray  # last k+1 observations, newest last


def ngrc_train(series, config: NgrcConfig) -> NgrcModel:
    """Ridge-fit the next-step map on delay-polynomial features.

    Fully deterministic: no random matrices anywhere.
    """
    y = np.asarray(series, dtype=float)
    k = config.delay_depth
    if y.size < k + 2:
        raise ValueError("series too short to form one training pair")
    phi = ngrc_features(y[:-1], k)
    target = y[k + 1:]
    gram = phi.T @ phi + config.regularization * np.eye(phi.shape[1])
    try:
        weights = np.linalg.solve(gram, phi.T @ target)
    except np.linalg.LinAlgError:
        raise ValueError("singular NG-RC system; increase regularization") from None
    return NgrcModel(config=config, weights=weights, tail=y[-(k + 1):].copy())


def ngrc_predict(model: NgrcModel, horizon: int, context=None) -> np.ndarray:
    """Autonomous rollout from the training tail (or a supplied context)."""
    k = model.config.delay_depth
    window = np.asarray(context, dtype=float) if context is not None else model.tail
    if window.size < k + 1:
        raise ValueError(f"context must hold at least {k + 1} values")
    window = window[-(k + 1):].copy()
    out = np.empty(horizon)
    for t in range(horizon):
        row = ngrc_features(window, k)[-1]
        nxt = float(row @ model.weights)
        out[t] = nxt
        window = np.append(window[1:], nxt)
    return out


def ngrc_one_step(model: NgrcModel, series) -> np.ndarray:
    """One-step-ahead predictions along a held-out series."""
    y = np.asarray(series, dtype=float)
    phi = ngrc_features(y[:-1], model.config.delay_depth)
    return phi @ model.weights


# ---------------------------------------------------------------------------
# Multi-step training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiStepConfig:
    base: EsnConfig
    split_fraction: float = 0.85

    def __post_init__(self):
        if not 0.0 < self.split_fraction < 1.0:
            raise ValueError("split_fraction must be in (0, 1)")


@dataclass(frozen=True)
class MultiStepResult:
    matrices: ReservoirMatrices
    readout: LinearReadout
    phase_a_readout: LinearReadout
    x_end: np.ndarray
    y_end: np.ndarray
    phase_b_states: np.ndarray | None = None


def multi_step_train(
    inputs, targets, msconfig: MultiStepConfig, keep_phase_b: bool = False
) -> MultiStepResult:
    """Two-phase readout training that samples the self-feedback regime.

    Phase A teacher-forces the first split and ridge-fits a readout.
    Phase B free-runs across the second split, recording the states the
    reservoir visits under its own (imperfect) feedback; the true targets
    of that span are never consulted there.  Phase C refits the readout in
    closed form on the post-transient states of both phases against the
    true targets, so the linear map has seen the states the test phase
    will actually produce.
    """
    config = msconfig.base
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[:, None]
    t_total = targets.shape[0]
    t1 = int(round(msconfig.split_fraction * t_total))
    if t1 < 1 or t1 >= t_total:
        raise ValueError(
            f"split {msconfig.split_fraction} leaves an empty segment for length {t_total}"
        )
    inputs_all = esn._resolve_inputs(config, inputs, t_total)

    m = esn.build_reservoir(config)
    traj1 = esn.teacher_force(m, config, inputs_all[:t1], targets[:t1])
    feature_kind = "quadratic" if config.quadratic_readout else "linear"
    readout_a = esn.fit_readout(
        traj1, config.regularization, feature_kind, config.output_activation
    )

    run = esn.free_run(
        m,
        readout_a,
        traj1.states[-1],
        traj1.targets[-1],
        inputs_future=inputs_all[t1:],
        horizon=t_total - t1,
        config=config,
    )

    states_all = np.concatenate([traj1.states, run.states], axis=0)
    phi = esn._features(states_all[config.transient:], feature_kind)
    y_fit = esn._inverse_output(
        targets[config.transient:].astype(states_all.dtype), config.output_activation
    )
    gamma = config.regularization
    theta = esn._ridge_solve(phi, y_fit, gamma)
    readout_c = LinearReadout(
        w_out=theta.T,
        gamma_used=gamma,
        feature_kind=feature_kind,
        output_activation=config.output_activation,
    )

    return MultiStepResult(
        matrices=m,
        readout=readout_c,
        phase_a_readout=readout_a,
        x_end=run.states[-1],
        y_end=run.predictions[-1],
        phase_b_states=run.states if keep_phase_b else None,
    )
