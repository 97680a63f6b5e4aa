"""Discrete inner-maximization set for the fast knowledge-gradient computation.

The set joins three sources: batch-Thompson points chosen greedily from a
shared pool, points sampled uniformly near the current recommendation, and
the recommendation itself.
"""

import logging
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import netposterior
from .errors import ConfigError, EmptySet
from .network import NetworkSpec
from .optim import BoxProblem, child_seeds, multistart_maximize, sobol_points

logger = logging.getLogger(__name__)

THOMPSON_MODES = ("batch", "independent")

ABLATION_PRESETS: dict[str, dict] = {
    "thompson+local+maximizer": {},
    "thompson+local": {"include_maximizer": False},
    "thompson+maximizer": {"include_local": False, "N_T": 20},
    "local+maximizer": {"include_thompson": False, "N_L": 20},
    "thompson": {"include_local": False, "include_maximizer": False, "N_T": 20},
    "local": {"include_thompson": False, "include_maximizer": False, "N_L": 20},
}

_DEDUP_TOL = 1e-9
_MAX_REJECTION_ROUNDS = 1000


@dataclass(frozen=True)
class DiscreteSetConfig:
    M: int = 10
    N_T: int = 10
    N_L: int = 10
    r: float = 0.1
    pool_size: int = 512
    include_maximizer: bool = True
    include_thompson: bool = True
    include_local: bool = True
    thompson_mode: str = "batch"
    preset: str | None = None

    def validate(self) -> None:
        problems = []
        if self.M < 1:
            problems.append(f"M={self.M} (must be >= 1)")
        if self.N_T < 0 or self.N_L < 0:
            problems.append(f"N_T={self.N_T}, N_L={self.N_L} (must be >= 0)")
        if self.pool_size < 1 or self.N_T > self.pool_size:
            problems.append(f"N_T={self.N_T} exceeds pool_size={self.pool_size}")
        if not self.r > 0:
            problems.append(f"r={self.r} (must be > 0)")
        if self.thompson_mode not in THOMPSON_MODES:
            problems.append(f"thompson_mode={self.thompson_mode!r} (expected one of {THOMPSON_MODES})")
        if self.preset is not None and self.preset not in ABLATION_PRESETS:
            problems.append(f"preset={self.preset!r} (expected one of {sorted(ABLATION_PRESETS)})")
        if problems:
            raise ConfigError(f"Invalid discrete set settings: {'; '.join(problems)}")

    def with_preset(self, name: str) -> "DiscreteSetConfig":
        if name not in ABLATION_PRESETS:
            raise ConfigError(f"Unknown discrete set preset {name!r}; expected one of {sorted(ABLATION_PRESETS)}")
        return replace(self, preset=name, **ABLATION_PRESETS[name])

    @classmethod
    def from_dict(cls, data: dict) -> "DiscreteSetConfig":
        data = dict(data)
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown discrete set keys: {', '.join(sorted(unknown))}")
        preset = data.pop("preset", None)
        cfg = cls(**data)
        if preset is not None:
            # explicit keys win over the preset
            cfg = cfg.with_preset(preset)
            cfg = replace(cfg, **data)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)


def subset_value(values: np.ndarray, chosen) -> float:
    """(1/M) Σ_j max_{p ∈ chosen} values[j, p]."""
    return float(values[:, list(chosen)].max(axis=1).mean())


def greedy_select(values: np.ndarray, count: int) -> list[int]:
    """Greedy maximization of ``subset_value`` over pool columns; ties go to the lowest index."""
    values = np.asarray(values, dtype=float)
    M, P = values.shape
    count = min(count, P)
    best = np.full(M, -np.inf)
    taken = np.zeros(P, dtype=bool)
    chosen: list[int] = []
    for _ in range(count):
        scores = np.maximum(best[:, None], values).mean(axis=0)
        scores[taken] = -np.inf
        p = int(np.argmax(scores))
        chosen.append(p)
        taken[p] = True
        best = np.maximum(best, values[:, p])
    return chosen


def thompson_pool(post: netposterior.NetworkPosterior, pool_size: int, seed, x_star=None) -> np.ndarray:
    """Sobol pool mapped to the domain, plus x_n* and past full-evaluation inputs."""
    spec = post.spec
    parts = [spec.from_unit(sobol_points(spec.d, pool_size, seed))]
    if x_star is not None:
        parts.append(np.asarray(x_star, dtype=float).reshape(1, spec.d))
    if len(post.evaluated_inputs):
        parts.append(post.evaluated_inputs)
    return np.vstack(parts)


def batch_thompson(post: netposterior.NetworkPosterior, cfg: DiscreteSetConfig, seed, x_star=None) -> np.ndarray:
    """N_T pool points that do well on average across M sampled network realizations."""
    pool_seed, *realization_seeds = child_seeds(seed, cfg.M + 1)
    pool = thompson_pool(post, cfg.pool_size, pool_seed, x_star)
    values = np.empty((cfg.M, pool.shape[0]))
    for j, s in enumerate(realization_seeds):
        funcs = netposterior.sample_realization(post, s)
        values[j] = netposterior.realization_outputs(post, funcs, pool)[:, -1]
    chosen = greedy_select(values, cfg.N_T)
    logger.debug("batch Thompson objective %.6g over %d pool points", subset_value(values, chosen), pool.shape[0])
    return pool[chosen]


def independent_thompson(
    post: netposterior.NetworkPosterior,
    cfg: DiscreteSetConfig,
    seed,
    restarts: int = 3,
    max_evals: int = 100,
) -> np.ndarray:
    """Maximize each of the M realizations separately; one point per realization."""
    spec = post.spec
    points = []
    for s in child_seeds(seed, cfg.M):
        funcs = netposterior.sample_realization(post, s)
        problem = BoxProblem(
            lower=spec.lower,
            upper=spec.upper,
            objective=lambda X, _f=funcs: netposterior.realization_outputs(post, _f, X)[:, -1],
            restarts=restarts,
            max_evals=max_evals,
            raw_samples=cfg.pool_size,
            vectorized=True,
        )
        x, _ = multistart_maximize(problem, seed=s)
        points.append(x)
    return np.array(points).reshape(-1, spec.d)


def local_points(x_star, spec: NetworkSpec, cfg: DiscreteSetConfig, seed) -> np.ndarray:
    """N_L points uniform on {x in the domain : ||x - x_n*|| <= r * max_i (b_i - a_i)}."""
    x_star = np.asarray(x_star, dtype=float).reshape(spec.d)
    if cfg.N_L == 0:
        return np.zeros((0, spec.d))
    rng = np.random.default_rng(seed)
    radius = cfg.r * float(np.max(spec.upper - spec.lower))
    batch = max(4 * cfg.N_L, 64)
    accepted: list[np.ndarray] = []
    n_accepted = 0
    for _ in range(_MAX_REJECTION_ROUNDS):
        directions = rng.standard_normal((batch, spec.d))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        radii = radius * rng.uniform(size=(batch, 1)) ** (1.0 / spec.d)
        candidates = x_star + directions * radii
        inside = np.all((candidates >= spec.lower) & (candidates <= spec.upper), axis=1)
        accepted.append(candidates[inside])
        n_accepted += int(inside.sum())
        if n_accepted >= cfg.N_L:
            return np.vstack(accepted)[: cfg.N_L]
    # projecting onto the box keeps points inside the ball since x_n* is feasible
    logger.warning("Local sampling accepted only %d/%d points, filling by projection", n_accepted, cfg.N_L)
    extra = x_star + rng.standard_normal((cfg.N_L - n_accepted, spec.d)) * radius / np.sqrt(spec.d)
    offsets = extra - x_star
    norms = np.maximum(np.linalg.norm(offsets, axis=1, keepdims=True) / radius, 1.0)
    extra = np.clip(x_star + offsets / norms, spec.lower, spec.upper)
    return np.vstack(accepted + [extra])


def deduplicate(points: np.ndarray, tol: float = _DEDUP_TOL) -> np.ndarray:
    kept: list[np.ndarray] = []
    for p in points:
        if not any(np.max(np.abs(p - q)) <= tol for q in kept):
            kept.append(p)
    return np.array(kept).reshape(-1, points.shape[1])


def build_set(
    post: netposterior.NetworkPosterior,
    cfg: DiscreteSetConfig,
    x_star,
    seed,
    restarts: int = 3,
    max_evals: int = 100,
) -> np.ndarray:
    """𝒜 = {x_n*} ∪ 𝒮_T ∪ 𝒮_L, deduplicated, x_n* first when included."""
    spec = post.spec
    x_star = np.asarray(x_star, dtype=float).reshape(spec.d)
    thompson_seed, local_seed = child_seeds(seed, 2)
    parts = []
    if cfg.include_maximizer:
        parts.append(x_star[None, :])
    if cfg.include_thompson and cfg.N_T > 0:
        if cfg.thompson_mode == "independent":
            parts.append(independent_thompson(post, cfg, thompson_seed, restarts, max_evals))
        else:
            parts.append(batch_thompson(post, cfg, thompson_seed, x_star))
    if cfg.include_local and cfg.N_L > 0:
        parts.append(local_points(x_star, spec, cfg, local_seed))
    if not parts:
        raise EmptySet("Every source of the discrete set is disabled")
    return deduplicate(np.vstack(parts))
