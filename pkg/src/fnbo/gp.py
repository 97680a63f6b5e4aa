"""Single-output noiseless GP regression for one network node.

Inputs are mapped to the unit box with known bounds and targets are
standardized before fitting; hyperparameters and the cached factors live in
that normalized space, while every public function takes and returns raw
units. The diagonal jitter is relative to the outputscale.
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from tenacity import RetryError, Retrying, retry_if_exception_type, stop_after_attempt

from .errors import DimensionMismatch, DuplicateInputs, SingularCovariance
from .optim import BoxProblem, multistart_maximize

logger = logging.getLogger(__name__)

MATERN52 = "matern52"
RBF = "rbf"
FAMILIES = (MATERN52, RBF)

LENGTHSCALE_BOUNDS = (5e-2, 20.0)
OUTPUTSCALE_BOUNDS = (5e-2, 20.0)
MAX_JITTER = 1e-4
DEFAULT_FEATURES = 1024

_SQRT5 = np.sqrt(5.0)
_DUPLICATE_TOL = 1e-9


@dataclass(frozen=True)
class KernelConfig:
    lengthscales: tuple[float, ...]
    outputscale: float = 1.0
    family: str = MATERN52
    jitter: float = 1e-6

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"Unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if any(not ls > 0 for ls in self.lengthscales):
            raise ValueError(f"Lengthscales must be positive, got {self.lengthscales}")
        if not self.outputscale > 0:
            raise ValueError(f"Outputscale must be positive, got {self.outputscale}")
        if not self.jitter >= 1e-12:
            raise ValueError(f"Jitter must be >= 1e-12, got {self.jitter}")

    @property
    def dim(self) -> int:
        return len(self.lengthscales)

    def log_params(self) -> np.ndarray:
        return np.log(np.append(self.lengthscales, self.outputscale))

    def with_log_params(self, theta: np.ndarray) -> "KernelConfig":
        theta = np.exp(np.asarray(theta, dtype=float))
        return replace(self, lengthscales=tuple(float(t) for t in theta[:-1]), outputscale=float(theta[-1]))


def _scaled_diffs(config: KernelConfig, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[:, None, :] - B[None, :, :]) / np.asarray(config.lengthscales)


def kernel(config: KernelConfig, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """k(A, B) for normalized inputs (n, dim) x (m, dim)."""
    sq = np.sum(_scaled_diffs(config, A, B) ** 2, axis=-1)
    if config.family == RBF:
        return config.outputscale * np.exp(-0.5 * sq)
    r = np.sqrt(sq)
    return config.outputscale * (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * np.exp(-_SQRT5 * r)


def _kernel_and_grads(config: KernelConfig, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """K(X, X) and its derivatives w.r.t. log lengthscales and log outputscale (no jitter)."""
    D2 = _scaled_diffs(config, X, X) ** 2
    sq = D2.sum(axis=-1)
    if config.family == RBF:
        K = config.outputscale * np.exp(-0.5 * sq)
        grads = [K * D2[..., i] for i in range(config.dim)]
    else:
        r = np.sqrt(sq)
        e = np.exp(-_SQRT5 * r)
        K = config.outputscale * (1.0 + _SQRT5 * r + (5.0 / 3.0) * sq) * e
        common = config.outputscale * (5.0 / 3.0) * (1.0 + _SQRT5 * r) * e
        grads = [common * D2[..., i] for i in range(config.dim)]
    grads.append(K)
    return K, grads


def _gls_mean(L: np.ndarray, y: np.ndarray) -> float:
    ones = np.ones_like(y)
    a1 = cho_solve((L, True), ones)
    return float(a1 @ y / (a1 @ ones))


def log_marginal_likelihood(
    config: KernelConfig, X: np.ndarray, y: np.ndarray, with_grad: bool = False
) -> float | tuple[float, np.ndarray]:
    """Log marginal likelihood with the constant mean profiled out (GLS estimate).

    ``X`` is normalized, ``y`` standardized. The gradient is w.r.t.
    ``config.log_params()``; profiling does not change it because the
    derivative in the mean vanishes at the GLS optimum.
    """
    n = X.shape[0]
    K, grads = _kernel_and_grads(config, X)
    A = K + config.jitter * config.outputscale * np.eye(n)
    L = cholesky(A, lower=True)
    c = _gls_mean(L, y)
    r = y - c
    alpha = cho_solve((L, True), r)
    lml = -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2 * np.pi)
    if not with_grad:
        return float(lml)

    A_inv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - A_inv
    grad = np.array([0.5 * np.sum(W * G) for G in grads[:-1]])
    # relative jitter makes dA/dlog(s) = A
    grad = np.append(grad, 0.5 * (r @ alpha - n))
    return float(lml), grad


def _attempts_for(jitter: float) -> int:
    if jitter >= MAX_JITTER:
        return 1
    return int(np.floor(np.log10(MAX_JITTER / jitter) + 1e-9)) + 1


def _robust_cholesky(K: np.ndarray, config: KernelConfig) -> tuple[np.ndarray, float]:
    """Cholesky of K + jitter*s*I, escalating jitter tenfold per failure up to MAX_JITTER."""
    n = K.shape[0]
    used = config.jitter

    def _log_failure(retry_state):
        logger.warning(
            "Cholesky failed with jitter %.1e (attempt %d), escalating",
            config.jitter * 10 ** (retry_state.attempt_number - 1), retry_state.attempt_number,
        )

    try:
        for attempt in Retrying(
            stop=stop_after_attempt(_attempts_for(config.jitter)),
            retry=retry_if_exception_type(LinAlgError),
            after=_log_failure,
        ):
            with attempt:
                used = min(config.jitter * 10 ** (attempt.retry_state.attempt_number - 1), max(MAX_JITTER, config.jitter))
                L = cholesky(K + used * config.outputscale * np.eye(n), lower=True)
    except RetryError as e:
        raise SingularCovariance(
            f"Covariance of {n} points is singular even with jitter {used:.1e}"
        ) from e
    return L, used


@dataclass(frozen=True, eq=False)
class GPState:
    config: KernelConfig
    train_inputs: np.ndarray
    train_targets: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    y_shift: float
    y_scale: float
    prior_mean: float
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def dim(self) -> int:
        return self.config.dim

    @property
    def n(self) -> int:
        return self.train_inputs.shape[0]

    @property
    def prior_variance(self) -> float:
        return self.config.outputscale * self.y_scale**2

    @property
    def outputscale(self) -> float:
        """Outputscale in raw target units."""
        return self.prior_variance

    @cached_property
    def _Xn(self) -> np.ndarray:
        return self.normalize(self.train_inputs)

    @cached_property
    def _c(self) -> float:
        return (self.prior_mean - self.y_shift) / self.y_scale

    def normalize(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[-1] != self.dim:
            raise DimensionMismatch(f"GP expects inputs of dimension {self.dim}, got {points.shape[-1]}")
        return (points - self.lower) / (self.upper - self.lower)

    def _standardize(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, dtype=float) - self.y_shift) / self.y_scale


def _assemble(
    config: KernelConfig,
    inputs: np.ndarray,
    targets: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    y_shift: float,
    y_scale: float,
    prior_mean: float | None,
) -> GPState:
    """Build caches at fixed hyperparameters; ``prior_mean=None`` means the GLS estimate."""
    Xn = (inputs - lower) / (upper - lower)
    yn = (targets - y_shift) / y_scale
    n = Xn.shape[0]
    if n:
        L, used = _robust_cholesky(kernel(config, Xn, Xn), config)
        if used != config.jitter:
            config = replace(config, jitter=used)
        c = _gls_mean(L, yn) if prior_mean is None else (prior_mean - y_shift) / y_scale
        alpha = cho_solve((L, True), yn - c)
    else:
        L = np.zeros((0, 0))
        c = 0.0 if prior_mean is None else (prior_mean - y_shift) / y_scale
        alpha = np.zeros(0)
    return GPState(
        config=config,
        train_inputs=inputs,
        train_targets=targets,
        lower=lower,
        upper=upper,
        y_shift=y_shift,
        y_scale=y_scale,
        prior_mean=y_shift + y_scale * c,
        chol=L,
        alpha=alpha,
    )


def _prepare(inputs, targets, bounds) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(targets, dtype=float).reshape(-1)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if bounds is None:
        lower, upper = np.zeros(X.shape[1]), np.ones(X.shape[1])
    else:
        lower = np.asarray(bounds[0], dtype=float).reshape(-1)
        upper = np.asarray(bounds[1], dtype=float).reshape(-1)
        if lower.shape[0] != X.shape[1] or upper.shape[0] != X.shape[1]:
            raise DimensionMismatch(f"Bounds have dimension {lower.shape[0]}, inputs {X.shape[1]}")
    return X, y, lower, upper


def _check_distinct(Xn: np.ndarray) -> None:
    if Xn.shape[0] < 2:
        return
    d2 = np.sum((Xn[:, None, :] - Xn[None, :, :]) ** 2, axis=-1)
    d2[np.diag_indices_from(d2)] = np.inf
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    if d2[i, j] < _DUPLICATE_TOL**2:
        raise DuplicateInputs(f"Training inputs {i} and {j} coincide")


def from_hyperparameters(
    config: KernelConfig,
    inputs=None,
    targets=None,
    bounds=None,
    prior_mean: float = 0.0,
) -> GPState:
    """GP with given hyperparameters and no target standardization (may hold no data)."""
    if inputs is None:
        inputs = np.zeros((0, config.dim))
        targets = np.zeros(0)
    X, y, lower, upper = _prepare(inputs, targets, bounds)
    if X.shape[1] != config.dim:
        raise DimensionMismatch(f"Kernel has {config.dim} lengthscales, inputs have dimension {X.shape[1]}")
    _check_distinct((X - lower) / (upper - lower))
    return _assemble(config, X, y, lower, upper, 0.0, 1.0, prior_mean)


def fit(
    inputs,
    targets,
    family: str = MATERN52,
    bounds=None,
    restarts: int = 5,
    max_evals: int = 100,
    seed: int = 0,
    init: KernelConfig | None = None,
    jitter: float = 1e-6,
) -> GPState:
    """Fit hyperparameters by multi-start maximization of the log marginal likelihood."""
    X, y, lower, upper = _prepare(inputs, targets, bounds)
    if X.shape[0] < 1:
        raise ValueError("At least one observation is needed to fit a GP")
    Xn = (X - lower) / (upper - lower)
    _check_distinct(Xn)

    y_shift = float(np.mean(y))
    spread = float(np.std(y))
    y_scale = spread if spread > 1e-9 * max(1.0, abs(y_shift)) else 1.0
    yn = (y - y_shift) / y_scale

    dim = X.shape[1]
    base = init if init is not None and init.dim == dim else KernelConfig(
        lengthscales=(0.5,) * dim, outputscale=1.0, family=family, jitter=jitter
    )
    base = replace(base, family=family, jitter=jitter)
    cache: dict[bytes, tuple[float, np.ndarray]] = {}

    def _evaluate(theta: np.ndarray) -> tuple[float, np.ndarray]:
        key = theta.tobytes()
        if key not in cache:
            try:
                cache[key] = log_marginal_likelihood(base.with_log_params(theta), Xn, yn, with_grad=True)
            except LinAlgError:
                cache[key] = (-1e25, np.zeros_like(theta))
        return cache[key]

    lo = np.log([LENGTHSCALE_BOUNDS[0]] * dim + [OUTPUTSCALE_BOUNDS[0]])
    hi = np.log([LENGTHSCALE_BOUNDS[1]] * dim + [OUTPUTSCALE_BOUNDS[1]])
    problem = BoxProblem(
        lower=lo,
        upper=hi,
        objective=lambda t: _evaluate(t)[0],
        gradient=lambda t: _evaluate(t)[1],
        restarts=max(restarts, 5),
        max_evals=max_evals,
    )
    theta, lml = multistart_maximize(problem, seed=seed, initial_points=np.clip(base.log_params(), lo, hi)[None, :])
    config = base.with_log_params(theta)
    logger.debug(
        "fit n=%d dim=%d lml=%.4f lengthscales=%s outputscale=%.4g",
        X.shape[0], dim, lml, np.round(config.lengthscales, 4).tolist(), config.outputscale,
    )
    return _assemble(config, X, y, lower, upper, y_shift, y_scale, None)


def _cross(state: GPState, Qn: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    Kq = kernel(state.config, Qn, state._Xn)
    v = solve_triangular(state.chol, Kq.T, lower=True) if state.n else np.zeros((0, Qn.shape[0]))
    return Kq, v


def predict(state: GPState, points) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and marginal variance at (m, dim) points, raw units."""
    Qn = state.normalize(points)
    Kq, v = _cross(state, Qn)
    mean = state._c + (Kq @ state.alpha if state.n else 0.0)
    var = np.clip(state.config.outputscale - np.sum(v**2, axis=0), 0.0, None)
    return state.y_shift + state.y_scale * mean, state.y_scale**2 * var


def posterior(state: GPState, points) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean vector and full covariance matrix, raw units."""
    Qn = state.normalize(points)
    Kq, v = _cross(state, Qn)
    mean = state._c + (Kq @ state.alpha if state.n else 0.0)
    cov = kernel(state.config, Qn, Qn) - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return state.y_shift + state.y_scale * mean, state.y_scale**2 * cov


def mean_function(state: GPState) -> Callable[[np.ndarray], np.ndarray]:
    return lambda points: predict(state, points)[0]


def fantasize(state: GPState, z, y_sample: float) -> GPState:
    """Condition on one extra noiseless pair (z, y_sample) via a rank-1 Cholesky extension."""
    zn = state.normalize(np.asarray(z, dtype=float).reshape(1, -1))
    y_sample = float(y_sample)
    if state.n:
        nearest = float(np.min(np.sum((state._Xn - zn) ** 2, axis=-1)))
        if nearest < _DUPLICATE_TOL**2:
            mu, var = predict(state, zn * (state.upper - state.lower) + state.lower)
            tol = 8.0 * np.sqrt(var[0]) + 1e-8 * state.y_scale
            if abs(y_sample - mu[0]) <= tol:
                return state
            raise SingularCovariance(
                f"Fantasy at an existing training input disagrees with its data ({y_sample} vs {mu[0]})"
            )

    s = state.config.outputscale
    k = kernel(state.config, state._Xn, zn)[:, 0] if state.n else np.zeros(0)
    l = solve_triangular(state.chol, k, lower=True) if state.n else np.zeros(0)
    d2 = s * (1.0 + state.config.jitter) - l @ l
    if not d2 > 0:
        raise SingularCovariance("Fantasy input makes the covariance singular")
    n = state.n
    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = state.chol
    L[n, :n] = l
    L[n, n] = np.sqrt(d2)
    targets = np.append(state.train_targets, y_sample)
    alpha = cho_solve((L, True), state._standardize(targets) - state._c)
    return replace(
        state,
        train_inputs=np.vstack([state.train_inputs, np.asarray(z, dtype=float).reshape(1, -1)]),
        train_targets=targets,
        chol=L,
        alpha=alpha,
    )


def _spectral_frequencies(config: KernelConfig, count: int, rng: np.random.Generator) -> np.ndarray:
    normals = rng.standard_normal((count, config.dim))
    if config.family == MATERN52:
        # Matérn-5/2 spectral density is a Student-t with 5 degrees of freedom
        normals = normals * np.sqrt(5.0 / rng.chisquare(5.0, size=(count, 1)))
    return normals / np.asarray(config.lengthscales)


class PathSample:
    """One posterior function draw: RFF prior sample plus Matheron's data correction."""

    def __init__(self, state: GPState, seed: int | np.random.SeedSequence, num_features: int = DEFAULT_FEATURES):
        rng = np.random.default_rng(seed)
        self.state = state
        self.omega = _spectral_frequencies(state.config, num_features, rng)
        self.phase = rng.uniform(0.0, 2 * np.pi, size=num_features)
        self.weights = rng.standard_normal(num_features)
        self._amp = np.sqrt(2.0 * state.config.outputscale / num_features)
        if state.n:
            resid = state._standardize(state.train_targets) - state._c - self._prior(state._Xn)
            self.correction = cho_solve((state.chol, True), resid)
        else:
            self.correction = np.zeros(0)

    def _prior(self, Xn: np.ndarray) -> np.ndarray:
        return self._amp * np.cos(Xn @ self.omega.T + self.phase) @ self.weights

    def __call__(self, points) -> np.ndarray | float:
        points = np.asarray(points, dtype=float)
        single = points.ndim == 1 and self.state.dim > 1 or points.ndim == 0
        Qn = self.state.normalize(points.reshape(-1, self.state.dim))
        f = self.state._c + self._prior(Qn)
        if self.state.n:
            f = f + kernel(self.state.config, Qn, self.state._Xn) @ self.correction
        out = self.state.y_shift + self.state.y_scale * f
        return float(out[0]) if single else out


def sample_path(state: GPState, seed, num_features: int = DEFAULT_FEATURES) -> PathSample:
    return PathSample(state, seed, num_features)
