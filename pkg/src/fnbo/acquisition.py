"""Acquisition functions and the per-iteration decision of every policy.

Partial-evaluation policies (``fast-pkgfn``, ``pkgfn``) return a
``Candidate`` for one node; the full-evaluation baselines return a
``FullEvaluation`` of the whole network. All Monte Carlo quantities use
fixed base samples drawn from the iteration seed, so a decision is a pure
function of the posterior and that seed.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import norm

from . import gp, netposterior
from .config import MCSettings, OptimizerSettings
from .discrete import DiscreteSetConfig, build_set
from .errors import ConfigError, EmptyDiscreteSet
from .netposterior import NetworkPosterior
from .network import NodeInput, assemble_node_input, evaluate_network
from .optim import BoxProblem, child_seeds, multistart_maximize

logger = logging.getLogger(__name__)

_COST_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class Candidate:
    node: int
    input: NodeInput
    cost: float
    acq_value: float = float("nan")
    x_hat: np.ndarray | None = None

    @property
    def z(self) -> np.ndarray:
        return self.input.z


@dataclass(frozen=True, eq=False)
class FullEvaluation:
    x: np.ndarray
    cost: float
    acq_value: float = float("nan")


@dataclass(frozen=True, eq=False)
class FantasyBatch:
    """Common normal base for fantasy targets y = μ(z) + σ(z)·u."""

    base: np.ndarray

    @classmethod
    def draw(cls, count: int, seed) -> "FantasyBatch":
        return cls(base=netposterior.normal_base_samples(count, 1, seed)[:, 0])

    @property
    def count(self) -> int:
        return self.base.shape[0]

    def targets(self, state: gp.GPState, z) -> np.ndarray:
        mu, var = gp.predict(state, np.asarray(z, dtype=float).reshape(1, -1))
        return mu[0] + np.sqrt(var[0]) * self.base


@dataclass(frozen=True, eq=False)
class AcquisitionContext:
    """Everything a policy needs for one decision."""

    post: NetworkPosterior
    x_star: np.ndarray
    nu_star: float
    seed: object
    best_observed: float = -np.inf
    blackbox: gp.GPState | None = None
    budget_left: float = np.inf
    discrete: DiscreteSetConfig = DiscreteSetConfig()
    mc: MCSettings = MCSettings()
    optimizer: OptimizerSettings = OptimizerSettings()

    def affordable(self, cost: float) -> bool:
        return cost <= self.budget_left + _COST_SLACK


def eifn(post: NetworkPosterior, x, incumbent: float) -> float | np.ndarray:
    """Quasi-MC E[(y_K(x) - incumbent)^+] under the network posterior."""
    x = np.asarray(x, dtype=float)
    samples = netposterior.final_samples(post, x)
    values = np.maximum(samples - incumbent, 0.0).mean(axis=0)
    return float(values[0]) if x.ndim == 1 else values


def expected_improvement(mean, var, incumbent: float, var_floor: float = 0.0) -> np.ndarray:
    """Closed-form EI; variances at or below ``var_floor`` count as zero."""
    mean = np.asarray(mean, dtype=float)
    var = np.asarray(var, dtype=float)
    sigma = np.sqrt(np.where(var > var_floor, var, 0.0))
    improvement = mean - incumbent
    safe = np.where(sigma > 0, sigma, 1.0)
    gamma = improvement / safe
    ei = sigma * norm.pdf(gamma) + improvement * norm.cdf(gamma)
    return np.where(sigma > 0, np.maximum(ei, 0.0), np.maximum(improvement, 0.0))


def blackbox_ei(state: gp.GPState, X, incumbent: float) -> np.ndarray:
    mean, var = gp.predict(state, X)
    # jitter leaves a residual variance of about jitter * outputscale at data
    floor = 10.0 * state.config.jitter * state.prior_variance
    return expected_improvement(mean, var, incumbent, var_floor=floor)


def _maximize_over_domain(post: NetworkPosterior, objective, optimizer: OptimizerSettings, seed, starts=None):
    spec = post.spec
    problem = BoxProblem(
        lower=spec.lower,
        upper=spec.upper,
        objective=lambda X: objective(np.clip(X, spec.lower, spec.upper)),
        restarts=optimizer.restarts,
        max_evals=optimizer.max_evals,
        raw_samples=optimizer.raw_samples,
        vectorized=True,
    )
    return multistart_maximize(problem, seed=seed, initial_points=starts)


def propose_network_candidate(
    post: NetworkPosterior,
    incumbent: float,
    optimizer: OptimizerSettings = OptimizerSettings(),
    seed=0,
) -> tuple[np.ndarray, float]:
    """x̂_n = argmax of EIFN over the domain, on the SAA objective of ``post``'s base."""
    x_hat, value = _maximize_over_domain(post, lambda X: eifn(post, X, incumbent), optimizer, seed)
    logger.debug("EIFN candidate %s value %.6g", np.round(x_hat, 4).tolist(), value)
    return x_hat, value


def generate_node_candidates(
    post: NetworkPosterior,
    x_hat,
    seed,
    plug_in: bool = False,
) -> list[Candidate]:
    """One candidate per node from a single sampled realization propagated at x̂_n.

    ``plug_in=True`` replaces the realization by the posterior-mean functions.
    """
    spec = post.spec
    x_hat = np.asarray(x_hat, dtype=float).reshape(spec.d)
    if plug_in:
        funcs = [gp.mean_function(state) for state in post.nodes]
    else:
        funcs = netposterior.sample_realization(post, seed)
    y_hat = evaluate_network(spec, funcs, x_hat, check_domain=False)

    candidates = []
    for k in range(spec.K):
        parent_values = y_hat[list(spec.parents[k])]
        if spec.parents[k]:
            lo = np.array([a for a, _ in spec.parent_ranges[k]])
            hi = np.array([b for _, b in spec.parent_ranges[k]])
            clamped = np.clip(parent_values, lo, hi)
            if np.any(clamped != parent_values):
                logger.debug("Clamped parent outputs of node %d from %s", k + 1, parent_values.tolist())
            parent_values = clamped
        node_input = assemble_node_input(spec, k, parent_values, x_hat)
        candidates.append(Candidate(node=k, input=node_input, cost=spec.cost(k, node_input.z), x_hat=x_hat))
    return candidates


def fantasy_maxima(post: NetworkPosterior, k: int, z, A: np.ndarray, fantasy: FantasyBatch) -> np.ndarray:
    """max_{x ∈ A} ν_{n+1}(x; z_k) for each fantasy target, shape (F,)."""
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        raise EmptyDiscreteSet("The discrete set for the inner maximization is empty")
    z = np.asarray(z, dtype=float).reshape(-1)
    state = post.nodes[k]
    maxima = np.empty(fantasy.count)
    for i, y in enumerate(fantasy.targets(state, z)):
        fantasized = post.with_node(k, gp.fantasize(state, z, y))
        maxima[i] = np.max(netposterior.nu(fantasized, A.reshape(-1, post.spec.d)))
    return maxima


def pkgfn_value(
    post: NetworkPosterior,
    k: int,
    z,
    A: np.ndarray,
    fantasy: FantasyBatch,
    nu_star: float,
) -> float:
    """Expected gain in the best posterior mean over A per unit cost of evaluating node k at z."""
    maxima = fantasy_maxima(post, k, z, A, fantasy)
    return float((maxima.mean() - nu_star) / post.spec.cost(k, z))


def select_node(candidates: list[Candidate]) -> Candidate:
    """Highest value; ties go to the cheaper candidate, then the lower node index."""
    if not candidates:
        raise ValueError("select_node needs at least one candidate")
    return min(candidates, key=lambda c: (-c.acq_value, c.cost, c.node))


def fast_pkgfn_step(ctx: AcquisitionContext) -> Candidate | None:
    """One iteration of the fast knowledge-gradient policy; None if no node is affordable."""
    eifn_seed, realization_seed, set_seed, fantasy_seed = child_seeds(ctx.seed, 4)
    eifn_post = ctx.post.with_base(eifn_seed, ctx.mc.eifn_samples)
    x_hat, _ = propose_network_candidate(eifn_post, ctx.nu_star, ctx.optimizer, eifn_seed)

    candidates = []
    for s in child_seeds(realization_seed, ctx.mc.candidate_realizations):
        candidates.extend(generate_node_candidates(ctx.post, x_hat, s))
    candidates = [c for c in candidates if ctx.affordable(c.cost)]
    if not candidates:
        return None

    cfg = replace(ctx.discrete, thompson_mode="batch")
    A = build_set(ctx.post, cfg, ctx.x_star, set_seed)
    fantasy = FantasyBatch.draw(ctx.mc.fantasies, fantasy_seed)
    scored = [
        replace(c, acq_value=pkgfn_value(ctx.post, c.node, c.z, A, fantasy, ctx.nu_star)) for c in candidates
    ]
    for c in scored:
        logger.debug("node %d candidate %s value %.6g", c.node + 1, np.round(c.z, 4).tolist(), c.acq_value)
    return select_node(scored)


def pkgfn_step(ctx: AcquisitionContext) -> Candidate | None:
    """Original policy: maximize the knowledge gradient over each node's full input box."""
    spec = ctx.post.spec
    set_seed, fantasy_seed, *node_seeds = child_seeds(ctx.seed, 2 + spec.K)
    cfg = replace(ctx.discrete, thompson_mode="independent")
    A = build_set(ctx.post, cfg, ctx.x_star, set_seed, ctx.optimizer.restarts, ctx.optimizer.max_evals)
    fantasy = FantasyBatch.draw(ctx.mc.fantasies, fantasy_seed)

    candidates = []
    for k in range(spec.K):
        if not ctx.affordable(spec.cost(k)):
            continue
        lower, upper = spec.node_bounds(k)
        problem = BoxProblem(
            lower=lower,
            upper=upper,
            objective=lambda z, _k=k: pkgfn_value(ctx.post, _k, z, A, fantasy, ctx.nu_star),
            restarts=ctx.optimizer.restarts,
            max_evals=ctx.optimizer.max_evals,
        )
        z, value = multistart_maximize(problem, seed=node_seeds[k])
        n_parents = len(spec.parents[k])
        node_input = NodeInput(parent_values=z[:n_parents], ext_values=z[n_parents:])
        candidates.append(Candidate(node=k, input=node_input, cost=spec.cost(k, z), acq_value=value))
        logger.debug("node %d best input %s value %.6g", k + 1, np.round(z, 4).tolist(), value)
    return select_node(candidates) if candidates else None


def baseline_step(policy: str, ctx: AcquisitionContext) -> FullEvaluation | Candidate | None:
    """Decision of a baseline policy; ``pkgfn`` is the only partial one."""
    if policy == "pkgfn":
        return pkgfn_step(ctx)
    spec = ctx.post.spec
    if not ctx.affordable(spec.full_cost):
        return None

    if policy == "random":
        x = spec.from_unit(np.random.default_rng(ctx.seed).uniform(size=spec.d))
        return FullEvaluation(x=x, cost=spec.full_cost)
    if policy == "ei":
        if ctx.blackbox is None:
            raise ValueError("EI needs a black-box GP on full evaluations")
        x, value = _maximize_over_domain(
            ctx.post, lambda X: blackbox_ei(ctx.blackbox, X, ctx.best_observed), ctx.optimizer, ctx.seed
        )
    elif policy == "tsfn":
        funcs = netposterior.sample_realization(ctx.post, ctx.seed)
        x, value = _maximize_over_domain(
            ctx.post, lambda X: netposterior.realization_outputs(ctx.post, funcs, X)[:, -1], ctx.optimizer, ctx.seed
        )
    elif policy == "eifn":
        incumbent = ctx.best_observed if np.isfinite(ctx.best_observed) else ctx.nu_star
        eifn_seed, opt_seed = child_seeds(ctx.seed, 2)
        eifn_post = ctx.post.with_base(eifn_seed, ctx.mc.eifn_samples)
        x, value = propose_network_candidate(eifn_post, incumbent, ctx.optimizer, opt_seed)
    else:
        raise ConfigError(f"Unknown policy {policy!r}")
    return FullEvaluation(x=x, cost=spec.full_cost, acq_value=value)


def next_evaluation(algo: str, ctx: AcquisitionContext) -> FullEvaluation | Candidate | None:
    if algo == "fast-pkgfn":
        return fast_pkgfn_step(ctx)
    return baseline_step(algo, ctx)
