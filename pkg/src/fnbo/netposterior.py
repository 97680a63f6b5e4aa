"""Induced posterior over the network output from K independent node GPs.

Node outputs are propagated in index order with fixed quasi-random normal
base samples (one column per node), so ``nu`` is deterministic for a given
``NetworkPosterior`` and smooth in ``x``. Base samples are antithetic: row
``i + Q/2`` is the negation of row ``i``.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from . import gp
from .errors import DimensionMismatch, DomainViolation
from .network import NetworkSpec, evaluate_network, gather_node_inputs
from .optim import BoxProblem, child_seeds, multistart_maximize, sobol_points

logger = logging.getLogger(__name__)

DEFAULT_QMC_SAMPLES = 64


def normal_base_samples(count: int, dim: int, seed) -> np.ndarray:
    """(count, dim) antithetic standard-normal base samples from scrambled Sobol points."""
    half = (count + 1) // 2
    u = sobol_points(dim, half, seed)
    z = norm.ppf(np.clip(u, 1e-10, 1 - 1e-10))
    return np.vstack([z, -z])[:count]


@dataclass(frozen=True, eq=False)
class NetworkPosterior:
    spec: NetworkSpec
    nodes: tuple[gp.GPState, ...]
    base: np.ndarray
    evaluated_inputs: np.ndarray

    def __post_init__(self):
        if len(self.nodes) != self.spec.K:
            raise DimensionMismatch(f"Network has {self.spec.K} nodes but {len(self.nodes)} GPs were given")
        for k, state in enumerate(self.nodes):
            if state.dim != self.spec.node_dim(k):
                raise DimensionMismatch(
                    f"GP of node {k + 1} has input dimension {state.dim}, expected {self.spec.node_dim(k)}"
                )
        if self.base.ndim != 2 or self.base.shape[1] != self.spec.K:
            raise DimensionMismatch(f"Base samples must have shape (Q, {self.spec.K}), got {self.base.shape}")

    @classmethod
    def build(
        cls,
        spec: NetworkSpec,
        nodes: Sequence[gp.GPState],
        qmc_samples: int = DEFAULT_QMC_SAMPLES,
        seed=0,
        evaluated_inputs: np.ndarray | None = None,
    ) -> "NetworkPosterior":
        if evaluated_inputs is None:
            evaluated_inputs = np.zeros((0, spec.d))
        return cls(
            spec=spec,
            nodes=tuple(nodes),
            base=normal_base_samples(qmc_samples, spec.K, seed),
            evaluated_inputs=np.asarray(evaluated_inputs, dtype=float).reshape(-1, spec.d),
        )

    @property
    def qmc_samples(self) -> int:
        return self.base.shape[0]

    def with_node(self, k: int, state: gp.GPState) -> "NetworkPosterior":
        nodes = list(self.nodes)
        nodes[k] = state
        return replace(self, nodes=tuple(nodes))

    def with_base(self, seed, qmc_samples: int | None = None) -> "NetworkPosterior":
        return replace(self, base=normal_base_samples(qmc_samples or self.qmc_samples, self.spec.K, seed))


def fit_network(
    spec: NetworkSpec,
    datasets: Sequence[tuple[np.ndarray, np.ndarray]],
    family: str = gp.MATERN52,
    seed: int = 0,
    previous: Sequence[gp.GPState] | None = None,
    refit: Sequence[int] | None = None,
) -> list[gp.GPState]:
    """Fit one GP per node on its (Z_k, y_k) data, using node bounds for normalization.

    With ``previous`` only the nodes in ``refit`` are refitted (warm-started
    from their old hyperparameters); the others are kept as they are.
    """
    states = []
    for k, (Z, y) in enumerate(datasets):
        if previous is not None and refit is not None and k not in refit:
            states.append(previous[k])
            continue
        init = previous[k].config if previous is not None else None
        states.append(
            gp.fit(Z, y, family=family, bounds=spec.node_bounds(k), seed=seed + k, init=init)
        )
    return states


def sample_outputs(post: NetworkPosterior, X: np.ndarray) -> np.ndarray:
    """Propagated node-output samples, shape (Q, n, K), for an (n, d) batch."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Q, n = post.qmc_samples, X.shape[0]
    spec = post.spec
    outputs = np.full((Q, n, spec.K), np.nan)
    for k, state in enumerate(post.nodes):
        if spec.parents[k]:
            z = gather_node_inputs(spec, k, outputs, X[None, :, :]).reshape(Q * n, -1)
            mu, var = gp.predict(state, z)
            outputs[:, :, k] = (mu + np.sqrt(var) * np.repeat(post.base[:, k], n)).reshape(Q, n)
        else:
            # root nodes see the same input in every sample row
            mu, var = gp.predict(state, X[:, list(spec.ext_inputs[k])])
            outputs[:, :, k] = mu[None, :] + np.sqrt(var)[None, :] * post.base[:, k, None]
    return outputs


def _check_domain(post: NetworkPosterior, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != post.spec.d:
        raise DimensionMismatch(f"Network input must have {post.spec.d} entries, got {X.shape[-1]}")
    if not post.spec.contains(X):
        raise DomainViolation(f"Input outside the domain box: {X.tolist()}")
    return X


def final_samples(post: NetworkPosterior, X: np.ndarray) -> np.ndarray:
    """Samples of y_K at an (n, d) batch, shape (Q, n)."""
    X = _check_domain(post, np.atleast_2d(X))
    return sample_outputs(post, X)[:, :, -1]


def nu(post: NetworkPosterior, x) -> float | np.ndarray:
    """Quasi-MC posterior mean of y_K; scalar for a single point, (n,) for a batch."""
    x = np.asarray(x, dtype=float)
    values = final_samples(post, x).mean(axis=0)
    return float(values[0]) if x.ndim == 1 else values


def sample_realization(post: NetworkPosterior, seed, num_features: int = gp.DEFAULT_FEATURES) -> list[gp.PathSample]:
    """One pathwise draw per node; feed them to ``evaluate_network`` to compose ŷ(x)."""
    node_seeds = child_seeds(seed, post.spec.K)
    return [gp.sample_path(state, s, num_features) for state, s in zip(post.nodes, node_seeds)]


def realization_outputs(post: NetworkPosterior, funcs: Sequence, X: np.ndarray) -> np.ndarray:
    return evaluate_network(post.spec, funcs, X, check_domain=False)


def maximize_mean(
    post: NetworkPosterior,
    previous: np.ndarray | None = None,
    restarts: int = 10,
    max_evals: int = 200,
    raw_samples: int = 256,
    seed=0,
) -> tuple[np.ndarray, float]:
    """(x_n*, ν_n*): multi-start maximization of ``nu`` over the domain.

    Starts from Sobol screening, the previous recommendation and the best
    previously evaluated full-network input.
    """
    spec = post.spec
    starts = []
    if previous is not None:
        starts.append(np.clip(np.asarray(previous, dtype=float), spec.lower, spec.upper))
    if len(post.evaluated_inputs):
        observed = nu(post, post.evaluated_inputs)
        starts.append(post.evaluated_inputs[int(np.argmax(observed))])

    problem = BoxProblem(
        lower=spec.lower,
        upper=spec.upper,
        objective=lambda X: nu(post, np.clip(X, spec.lower, spec.upper)),
        restarts=restarts,
        max_evals=max_evals,
        raw_samples=raw_samples,
        vectorized=True,
    )
    x_star, nu_star = multistart_maximize(problem, seed=seed, initial_points=np.array(starts) if starts else None)
    logger.debug("posterior mean maximum %.6g at %s", nu_star, np.round(x_star, 4).tolist())
    return x_star, nu_star
