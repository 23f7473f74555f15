"""Echo-state network core.

Construction, driving, and readout training for a single reservoir over
real- or complex-valued sequences.  Only the linear readout is trained;
the reservoir matrices stay fixed after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse

__all__ = [
    "EsnConfig",
    "ReservoirMatrices",
    "StateTrajectory",
    "LinearReadout",
    "FreeRunResult",
    "build_reservoir",
    "spectral_radius",
    "step_state",
    "teacher_force",
    "fit_readout",
    "apply_readout",
    "ridge_objective",
    "free_run",
]

_REAL = "real"
_COMPLEX = "complex"

# atanh(1 - 1e-9) ~ 10.7; clamp keeps the inverse output activation finite
_ATANH_CLIP = 1.0 - 1e-9


@dataclass(frozen=True)
class EsnConfig:
    """Hyperparameters of a single echo-state network.

    ``input_dim`` may be 0 (no input layer).  When it is positive but no
    input series is supplied to the driving functions, a constant input of
    ``constant_input_value`` is used instead, which injects extra
    variability into the state dynamics of output-only tasks.
    """

    state_dim: int
    spectral_radius: float
    density: float
    input_dim: int = 0
    output_dim: int = 1
    leaking_rate: float = 1.0
    regularization: float = 0.0
    transient: int = 10
    teacher_noise: float = 0.0
    quadratic_readout: bool = False
    scalar_field: str = _REAL
    seed: int = 0
    input_scale: float = 1.0
    output_activation: str = "identity"
    constant_input_value: float = 1.0

    def __post_init__(self):
        if self.state_dim < 1:
            raise ValueError("state_dim must be >= 1")
        if not 0.0 < self.leaking_rate <= 1.0:
            raise ValueError("leaking_rate must be in (0, 1]")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must be in (0, 1]")
        if self.spectral_radius < 0.0:
            raise ValueError("spectral_radius must be >= 0")
        if self.regularization < 0.0:
            raise ValueError("regularization must be >= 0")
        if self.teacher_noise < 0.0:
            raise ValueError("teacher_noise must be >= 0")
        if self.transient < 0:
            raise ValueError("transient must be >= 0")
        if self.scalar_field not in (_REAL, _COMPLEX):
            raise ValueError("scalar_field must be 'real' or 'complex'")
        if self.output_activation not in ("identity", "tanh"):
            raise ValueError("output_activation must be 'identity' or 'tanh'")

    @property
    def dtype(self):
        return np.complex128 if self.scalar_field == _COMPLEX else np.float64

    def with_seed(self, seed: int) -> "EsnConfig":
        return replace(self, seed=int(seed))


@dataclass(frozen=True)
class ReservoirMatrices:
    """Fixed random weights: sparse internal, dense input and feedback."""

    w: scipy.sparse.csr_matrix
    w_in: np.ndarray
    w_back: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.w.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def output_dim(self) -> int:
        return self.w_back.shape[1]


@dataclass(frozen=True)
class StateTrajectory:
    """Harvested internal states aligned with their inputs and targets.

    ``targets`` are stored without teacher noise; the noise only enters the
    feedback path during harvesting.  The first ``transient_discarded`` rows
    are excluded from readout fitting.
    """

    states: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    transient_discarded: int

    def __post_init__(self):
        t = self.states.shape[0]
        if self.inputs.shape[0] != t or self.targets.shape[0] != t:
            raise ValueError("states, inputs and targets must have equal row counts")
        if not np.all(np.isfinite(self.states.view(float))):
            raise ValueError("non-finite states")

    @property
    def fit_states(self) -> np.ndarray:
        return self.states[self.transient_discarded:]

    @property
    def fit_targets(self) -> np.ndarray:
        return self.targets[self.transient_discarded:]


@dataclass(frozen=True)
class LinearReadout:
    """Trained output map y = f_out(w_out @ features(x))."""

    w_out: np.ndarray
    gamma_used: float
    feature_kind: str = "linear"
    output_activation: str = "identity"

    def __post_init__(self):
        if self.feature_kind not in ("linear", "quadratic"):
            raise ValueError("feature_kind must be 'linear' or 'quadratic'")
        if not np.all(np.isfinite(self.w_out.view(float))):
            raise ValueError("non-finite readout weights")


@dataclass(frozen=True)
class FreeRunResult:
    """Autonomous-run output: predictions plus the states that produced them."""

    predictions: np.ndarray
    states: np.ndarray


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Two independent generators per reservoir: matrices and teacher noise."""
    matrix_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(matrix_ss), np.random.default_rng(noise_ss)


def member_seeds(seed: int, count: int) -> np.ndarray:
    """Derive ``count`` reproducible member seeds from one run seed."""
    return np.random.SeedSequence(seed).generate_state(count)


def spectral_radius(w, tol: float = 1e-6, max_iter: int = 10000) -> float:
    """Modulus of the dominant eigenvalue, by block power iteration.

    Random sign matrices routinely carry their dominant eigenvalue as a
    complex-conjugate pair, where single-vector power iteration never
    settles.  The iteration therefore runs on a small orthonormal block
    (orthogonal iteration) and reads the radius off the Ritz values of the
    projected block matrix; on stagnation it restarts with a larger block,
    which resolves modulus ties across the block boundary.

    Raises RuntimeError carrying the best estimate if the Ritz radius never
    stabilizes to ``tol`` relative within ``max_iter`` total iterations.
    """
    n = w.shape[0]
    if w.shape != (n, n):
        raise ValueError("matrix must be square")
    if not scipy.sparse.issparse(w):
        w = np.asarray(w)
        if not np.all(np.isfinite(w)):
            raise ValueError("matrix must be finite")
        if n == 1:
            return float(abs(w[0, 0]))
        scale = np.max(np.abs(w))
    else:
        scale = np.max(np.abs(w.data)) if w.nnz else 0.0
    if scale == 0.0:
        return 0.0

    rng = np.random.default_rng(0x5EED)
    budget = max_iter
    best = 0.0
    for block in (4, 8, 16):
        block = min(block, n)
        q, _ = np.linalg.qr(rng.standard_normal((n, block)))
        prev = np.inf
        stable = 0
        growth: list[float] = []
        iters = min(budget, max(max_iter // 3, 100))
        budget -= iters
        for _ in range(iters):
            z = w @ q
            h = q.T @ z
            ritz = np.linalg.eigvals(h)
            rho = float(np.max(np.abs(ritz)))
            if np.max(np.linalg.norm(z, axis=0)) < 1e-300:
                return 0.0  # nilpotent: the block collapsed
            q, r = np.linalg.qr(z)
            # leading QR growth factor; its running geometric mean tracks the
            # radius even when the Ritz section is stuck in a tied subspace
            growth.append(max(abs(r[0, 0]), 1e-300))
            if len(growth) > 10:
                growth.pop(0)
            gm = float(np.exp(np.mean(np.log(growth))))
            if rho > best:
                best = rho
            if abs(rho - prev) <= tol * max(rho, 1e-300):
                stable += 1
                if stable >= 3 and len(growth) >= 5 and rho >= 0.98 * gm:
                    return rho
            else:
                stable = 0
            prev = rho
        if budget <= 0:
            break
    raise RuntimeError(
        f"spectral radius iteration did not stabilize (best estimate {best:.6g})"
    )


def build_reservoir(config: EsnConfig, homogeneous: bool = False) -> ReservoirMatrices:
    """Generate the three fixed random weight matrices.

    W is drawn on a ``density``-sparse mask with values +-a (or +a
    everywhere when ``homogeneous``), with a rescaled so the achieved
    spectral radius equals ``config.spectral_radius``.  W_in takes values
    {0, +v, -v} with probabilities 0.5/0.25/0.25 and W_back is uniform on
    [-0.5, 0.5].  Everything is deterministic given ``config.seed``.
    """
    n, k, l = config.state_dim, config.input_dim, config.output_dim
    rng, _ = _rng_streams(config.seed)

    w = None
    for _attempt in range(10):
        mask = rng.random((n, n)) < config.density
        if homogeneous:
            values = np.ones((n, n))
        else:
            values = rng.choice([-1.0, 1.0], size=(n, n))
        w0 = values * mask
        if config.spectral_radius == 0.0:
            w = w0 * 0.0
            break
        if not mask.any():
            continue
        rho0 = spectral_radius(w0)
        if rho0 < 1e-12:
            continue  # nilpotent draw, resample the mask
        w = w0 * (config.spectral_radius / rho0)
        break
    if w is None:
        raise RuntimeError(
            "drawn reservoir mask has spectral radius 0 after 10 attempts; "
            "cannot rescale to a positive spectral radius"
        )

    v = config.input_scale
    w_in = rng.choice([0.0, v, -v], size=(n, k), p=[0.5, 0.25, 0.25])
    w_back = rng.uniform(-0.5, 0.5, size=(n, l))
    return ReservoirMatrices(
        w=scipy.sparse.csr_matrix(w), w_in=w_in, w_back=w_back
    )


def _activation(pre: np.ndarray, field: str) -> np.ndarray:
    if field == _COMPLEX:
        return np.tanh(pre.real) + 1j * np.tanh(pre.imag)
    return np.tanh(pre)


class _Stepper:
    """Pre-cast matrices for the hot update loop."""

    def __init__(self, m: ReservoirMatrices, leaking_rate: float, field: str):
        dtype = np.complex128 if field == _COMPLEX else np.float64
        self.w = m.w.astype(dtype)
        self.w_in = m.w_in.astype(dtype) if m.input_dim else None
        self.w_back = m.w_back.astype(dtype)
        self.alpha = leaking_rate
        self.field = field
        self.dtype = dtype

    def step(self, x_prev, u, y_prev):
        pre = self.w @ x_prev
        pre += self.w_back @ y_prev
        if self.w_in is not None:
            pre += self.w_in @ u
        xt = _activation(pre, self.field)
        if self.alpha == 1.0:
            return xt
        return (1.0 - self.alpha) * x_prev + self.alpha * xt


def step_state(
    m: ReservoirMatrices,
    x_prev,
    u,
    y_prev,
    leaking_rate: float = 1.0,
    field: str = _REAL,
) -> np.ndarray:
    """One leaky state update x = (1-a) x_prev + a f(W_in u + W x + W_back y).

    f is tanh componentwise for the real field and the split form
    tanh(Re) + i tanh(Im) for the complex field.
    """
    x_prev = np.asarray(x_prev)
    y_prev = np.asarray(y_prev)
    u = np.asarray(u) if u is not None else np.zeros(m.input_dim)
    if x_prev.shape != (m.state_dim,):
        raise ValueError(f"state must have shape ({m.state_dim},)")
    if y_prev.shape != (m.output_dim,):
        raise ValueError(f"feedback must have shape ({m.output_dim},)")
    if u.shape != (m.input_dim,):
        raise ValueError(f"input must have shape ({m.input_dim},)")
    stepper = _Stepper(m, leaking_rate, field)
    return stepper.step(
        x_prev.astype(stepper.dtype),
        u.astype(stepper.dtype),
        y_prev.astype(stepper.dtype),
    )


def _resolve_inputs(config: EsnConfig, inputs, length: int) -> np.ndarray:
    if inputs is None:
        if config.input_dim == 0:
            return np.zeros((length, 0))
        return np.full((length, config.input_dim), config.constant_input_value, dtype=float)
    inputs = np.asarray(inputs)
    if inputs.ndim == 1:
        inputs = inputs[:, None]
    if inputs.shape != (length, config.input_dim):
        raise ValueError(
            f"inputs must have shape ({length}, {config.input_dim}), got {inputs.shape}"
        )
    return inputs


def teacher_force(
    m: ReservoirMatrices,
    config: EsnConfig,
    inputs,
    targets,
    initial_state=None,
) -> StateTrajectory:
    """Harvest states by driving the feedback path with the true targets.

    The fed-back target optionally carries fresh uniform noise on
    [-teacher_noise, +teacher_noise] (independently on the real and
    imaginary parts for the complex field); the stored targets stay clean.
    """
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[:, None]
    t_total = targets.shape[0]
    if targets.shape[1] != config.output_dim:
        raise ValueError(f"targets must have {config.output_dim} columns")
    if t_total <= config.transient:
        raise ValueError(
            f"training length {t_total} must exceed transient {config.transient}"
        )
    inputs = _resolve_inputs(config, inputs, t_total)

    stepper = _Stepper(m, config.leaking_rate, config.scalar_field)
    dtype = stepper.dtype
    inputs_c = inputs.astype(dtype)
    targets_c = targets.astype(dtype)

    _, noise_rng = _rng_streams(config.seed)
    b = config.teacher_noise

    x = (
        np.zeros(config.state_dim, dtype=dtype)
        if initial_state is None
        else np.asarray(initial_state).astype(dtype)
    )
    if x.shape != (config.state_dim,):
        raise ValueError(f"initial state must have shape ({config.state_dim},)")

    states = np.empty((t_total, config.state_dim), dtype=dtype)
    y_prev = np.zeros(config.output_dim, dtype=dtype)
    for t in range(t_total):
        fb = y_prev
        if b > 0.0:
            noise = noise_rng.uniform(-b, b, size=config.output_dim)
            if config.scalar_field == _COMPLEX:
                noise = noise + 1j * noise_rng.uniform(-b, b, size=config.output_dim)
            fb = fb + noise
        x = stepper.step(x, inputs_c[t], fb)
        if not np.all(np.isfinite(x.view(float))):
            raise RuntimeError(f"state diverged (non-finite) at step {t}")
        states[t] = x
        y_prev = targets_c[t]

    return StateTrajectory(
        states=states,
        inputs=inputs,
        targets=targets,
        transient_discarded=config.transient,
    )


def _features(states: np.ndarray, feature_kind: str) -> np.ndarray:
    if feature_kind == "quadratic":
        return np.concatenate([states, states**2], axis=-1)
    return states


def _inverse_output(targets: np.ndarray, output_activation: str) -> np.ndarray:
    if output_activation == "tanh":
        clipped = np.clip(targets.real, -_ATANH_CLIP, _ATANH_CLIP)
        if np.iscomplexobj(targets):
            clipped = clipped + 1j * np.clip(targets.imag, -_ATANH_CLIP, _ATANH_CLIP)
            return np.arctanh(clipped.real) + 1j * np.arctanh(clipped.imag)
        return np.arctanh(clipped)
    return targets


def _ridge_solve(phi: np.ndarray, y: np.ndarray, gamma: float) -> np.ndarray:
    """theta = (Phi^* Phi + gamma I)^{-1} Phi^* y, conjugate transpose ^*."""
    gram = phi.conj().T @ phi
    if gamma > 0:
        gram = gram + gamma * np.eye(gram.shape[0], dtype=gram.dtype)
    rhs = phi.conj().T @ y
    try:
        cho = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(cho, rhs, check_finite=False)
    except scipy.linalg.LinAlgError:
        if gamma == 0:
            raise ValueError(
                "singular normal equations at gamma=0; use gamma > 0"
            ) from None
        # tiny gamma can leave the Gram matrix numerically indefinite; the
        # augmented least-squares form is equivalent and rank-robust
        aug = np.vstack([phi, np.sqrt(gamma) * np.eye(phi.shape[1], dtype=phi.dtype)])
        rhs_aug = np.vstack([y, np.zeros((phi.shape[1], y.shape[1]), dtype=y.dtype)])
        return np.linalg.lstsq(aug, rhs_aug, rcond=None)[0]


def fit_readout(
    traj: StateTrajectory,
    gamma: float,
    feature_kind: str = "linear",
    output_activation: str = "identity",
) -> LinearReadout:
    """Closed-form (complex) ridge regression of the readout weights.

    Solves (Phi^* Phi + gamma I) theta = Phi^* f_out^{-1}(targets) on the
    post-transient rows, with Phi the plain or quadratic state features and
    ^* the conjugate transpose.
    """
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    phi = _features(traj.fit_states, feature_kind)
    if phi.shape[0] == 0:
        raise ValueError("no post-transient rows to fit on")
    y = _inverse_output(traj.fit_targets, output_activation)
    theta = _ridge_solve(phi, y, gamma)
    return LinearReadout(
        w_out=theta.T,
        gamma_used=gamma,
        feature_kind=feature_kind,
        output_activation=output_activation,
    )


def apply_readout(readout: LinearReadout, x: np.ndarray) -> np.ndarray:
    """Map one state (or a batch of states) through the trained readout."""
    feat = _features(np.asarray(x), readout.feature_kind)
    out = feat @ readout.w_out.T
    if readout.output_activation == "tanh":
        out = _activation(out, _COMPLEX if np.iscomplexobj(out) else _REAL)
    return out


def ridge_objective(traj: StateTrajectory, readout: LinearReadout) -> float:
    """Regularized training objective the readout was fit to minimize."""
    phi = _features(traj.fit_states, readout.feature_kind)
    y = _inverse_output(traj.fit_targets, readout.output_activation)
    resid = y - phi @ readout.w_out.T
    n = phi.shape[0]
    return float(
        np.sum(np.abs(resid) ** 2) / n
        + readout.gamma_used * np.sum(np.abs(readout.w_out) ** 2)
    )


def free_run(
    m: ReservoirMatrices,
    readout: LinearReadout,
    x_start,
    y_start,
    inputs_future=None,
    horizon: int = 0,
    config: EsnConfig | None = None,
) -> FreeRunResult:
    """Evolve autonomously, feeding each prediction back through W_back.

    Inputs come from ``inputs_future`` when given, else from the config's
    constant input (or no input at all for input-free reservoirs).
    """
    if config is None:
        raise ValueError("config is required")
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    dtype = config.dtype
    if horizon == 0:
        return FreeRunResult(
            predictions=np.zeros((0, config.output_dim), dtype=dtype),
            states=np.zeros((0, config.state_dim), dtype=dtype),
        )
    inputs = _resolve_inputs(config, inputs_future, horizon).astype(dtype)
    stepper = _Stepper(m, config.leaking_rate, config.scalar_field)

    x = np.asarray(x_start).astype(dtype)
    y = np.asarray(y_start).astype(dtype)
    if x.shape != (config.state_dim,) or y.shape != (config.output_dim,):
        raise ValueError("x_start/y_start dimensions do not match the reservoir")

    states = np.empty((horizon, config.state_dim), dtype=dtype)
    preds = np.empty((horizon, config.output_dim), dtype=dtype)
    for t in range(horizon):
        x = stepper.step(x, inputs[t], y)
        y = apply_readout(readout, x)
        if not np.all(np.isfinite(y.view(float))):
            raise RuntimeError(f"free run diverged (non-finite) at step {t}")
        states[t] = x
        preds[t] = y
    return FreeRunResult(predictions=preds, states=states)
