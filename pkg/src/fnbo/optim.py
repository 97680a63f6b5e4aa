"""Box-constrained multi-start maximization and Sobol start points."""

import logging
import warnings
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

logger = logging.getLogger(__name__)


@dataclass
class BoxProblem:
    """Maximize ``objective`` over the box ``[lower, upper]``.

    ``objective`` maps a (dim,) point to a float. With ``vectorized=True`` it
    maps an (n, dim) batch to (n,) instead, which is used to screen
    ``raw_samples`` Sobol points before the local searches start.
    ``gradient`` (same calling convention as the scalar objective) switches
    the local search from Powell to L-BFGS-B.
    """

    lower: np.ndarray
    upper: np.ndarray
    objective: Callable[[np.ndarray], float | np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray] | None = None
    restarts: int = 10
    max_evals: int = 200
    raw_samples: int = 0
    vectorized: bool = False

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper bounds must have the same shape")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("Box bounds must be finite")
        if np.any(self.lower >= self.upper):
            raise ValueError(f"Empty box: lower={self.lower.tolist()} upper={self.upper.tolist()}")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def value(self, x: np.ndarray) -> float:
        if self.vectorized:
            return float(np.asarray(self.objective(x[None, :])).reshape(-1)[0])
        return float(self.objective(x))

    def values(self, X: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.objective(X), dtype=float).reshape(-1)
        return np.array([float(self.objective(x)) for x in X])


def sobol_points(dim: int, count: int, seed=0) -> np.ndarray:
    """``count`` scrambled Sobol points in [0, 1]^dim, deterministic per seed.

    ``seed`` is anything ``np.random.default_rng`` accepts.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    sampler = qmc.Sobol(d=dim, scramble=True, seed=np.random.default_rng(seed))
    with warnings.catch_warnings():
        # balance warning for counts that are not powers of two
        warnings.simplefilter("ignore", UserWarning)
        return sampler.random(count)


def multistart_maximize(
    problem: BoxProblem,
    seed=0,
    initial_points: np.ndarray | None = None,
) -> tuple[np.ndarray, float]:
    """Run local searches from Sobol starts (plus ``initial_points``); return the best point seen."""
    span = problem.upper - problem.lower
    n_starts = max(problem.restarts, problem.raw_samples)
    starts = problem.lower + sobol_points(problem.dim, n_starts, seed) * span
    start_values = problem.values(starts)
    if n_starts > problem.restarts:
        order = np.argsort(-start_values, kind="stable")[: problem.restarts]
        starts, start_values = starts[order], start_values[order]

    if initial_points is not None and len(initial_points):
        extra = np.clip(np.atleast_2d(np.asarray(initial_points, dtype=float)), problem.lower, problem.upper)
        starts = np.vstack([extra, starts])
        start_values = np.concatenate([problem.values(extra), start_values])

    best_idx = int(np.argmax(start_values))
    best_x, best_f = starts[best_idx].copy(), float(start_values[best_idx])
    bounds = list(zip(problem.lower, problem.upper))

    for r, (x0, f0) in enumerate(zip(starts, start_values)):
        seen = {"x": x0.copy(), "f": float(f0)}

        def neg(x, _seen=seen):
            x = np.clip(x, problem.lower, problem.upper)
            f = problem.value(x)
            if f > _seen["f"]:
                _seen["x"], _seen["f"] = x.copy(), f
            return -f

        if problem.gradient is not None:
            minimize(
                neg, x0, jac=lambda x: -np.asarray(problem.gradient(np.clip(x, problem.lower, problem.upper))),
                method="L-BFGS-B", bounds=bounds, options={"maxfun": problem.max_evals},
            )
        else:
            minimize(
                neg, x0, method="Powell", bounds=bounds,
                options={"maxfev": problem.max_evals, "xtol": 1e-6, "ftol": 1e-10},
            )
        logger.debug("restart %d: start %.6g -> %.6g", r, f0, seen["f"])
        if seen["f"] > best_f:
            best_x, best_f = seen["x"], seen["f"]

    return best_x, best_f


def child_seeds(seed, count: int) -> list[np.random.SeedSequence]:
    """``count`` independent child seeds; the same ``seed`` always yields the same children."""
    if isinstance(seed, np.random.SeedSequence):
        # spawn() advances a counter on the parent, so spawn from a fresh copy
        seed = np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    else:
        seed = np.random.SeedSequence(seed)
    return seed.spawn(count)
