"""Function-network DAG description and exact recursive evaluation.

Node and external-input indices are 0-based inside the package. The JSON
format (and anything shown to a user: log lines, traces) is 1-based.
"""

import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import networkx as nx
import numpy as np

from .errors import (
    BadInterval,
    BadOrdering,
    CycleDetected,
    DanglingFinalNode,
    DimensionMismatch,
    DomainViolation,
    NonpositiveCost,
    ParseError,
)

logger = logging.getLogger(__name__)

NodeFunction = Callable[[np.ndarray], np.ndarray]

_SPEC_KEYS = ("K", "parents", "ext_inputs", "domain", "parent_ranges", "costs")
_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class NetworkSpec:
    parents: tuple[tuple[int, ...], ...]
    ext_inputs: tuple[tuple[int, ...], ...]
    domain: tuple[tuple[float, float], ...]
    parent_ranges: tuple[tuple[tuple[float, float], ...], ...]
    costs: tuple[float, ...]

    @property
    def K(self) -> int:
        return len(self.parents)

    @property
    def d(self) -> int:
        return len(self.domain)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.domain], dtype=float)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.domain], dtype=float)

    @cached_property
    def children(self) -> tuple[tuple[int, ...], ...]:
        kids: list[list[int]] = [[] for _ in range(self.K)]
        for k, ps in enumerate(self.parents):
            for j in ps:
                if 0 <= j < self.K:
                    kids[j].append(k)
        return tuple(tuple(c) for c in kids)

    def node_dim(self, k: int) -> int:
        return len(self.parents[k]) + len(self.ext_inputs[k])

    def node_bounds(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Box containing Z_k: parent-output ranges first, then the domain slices."""
        lo = [a for a, _ in self.parent_ranges[k]] + [self.domain[i][0] for i in self.ext_inputs[k]]
        hi = [b for _, b in self.parent_ranges[k]] + [self.domain[i][1] for i in self.ext_inputs[k]]
        return np.array(lo, dtype=float), np.array(hi, dtype=float)

    def cost(self, k: int, z: np.ndarray | None = None) -> float:
        """Evaluation cost c_k(z_k). Costs are constant per node; z is accepted for generality."""
        return float(self.costs[k])

    @property
    def full_cost(self) -> float:
        return float(sum(self.costs))

    def with_costs(self, costs: Sequence[float]) -> "NetworkSpec":
        spec = NetworkSpec(
            parents=self.parents,
            ext_inputs=self.ext_inputs,
            domain=self.domain,
            parent_ranges=self.parent_ranges,
            costs=tuple(float(c) for c in costs),
        )
        validate(spec)
        return spec

    def contains(self, x: np.ndarray) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - _DOMAIN_TOL) and np.all(x <= self.upper + _DOMAIN_TOL))

    def from_unit(self, u: np.ndarray) -> np.ndarray:
        return self.lower + np.asarray(u, dtype=float) * (self.upper - self.lower)

    @classmethod
    def from_dict(cls, data: dict) -> "NetworkSpec":
        """Build and validate a spec from the 1-based JSON layout."""
        missing = [key for key in _SPEC_KEYS if key not in data]
        if missing:
            raise ParseError(f"Missing network fields: {', '.join(missing)}")
        try:
            K = int(data["K"])
            parents = tuple(tuple(sorted(int(j) - 1 for j in ps)) for ps in data["parents"])
            ext_inputs = tuple(tuple(sorted(int(i) - 1 for i in es)) for es in data["ext_inputs"])
            domain = tuple((float(a), float(b)) for a, b in data["domain"])
            parent_ranges = tuple(
                tuple((float(a), float(b)) for a, b in ranges) for ranges in data["parent_ranges"]
            )
            costs = tuple(float(c) for c in data["costs"])
        except (TypeError, ValueError) as e:
            raise ParseError(f"Malformed network specification: {e}") from e

        if not (len(parents) == len(ext_inputs) == len(parent_ranges) == len(costs) == K):
            raise DimensionMismatch(
                f"K={K} but got {len(parents)} parent lists, {len(ext_inputs)} ext_inputs lists, "
                f"{len(parent_ranges)} parent_ranges lists and {len(costs)} costs"
            )
        spec = cls(parents, ext_inputs, domain, parent_ranges, costs)
        validate(spec)
        return spec

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "parents": [[j + 1 for j in ps] for ps in self.parents],
            "ext_inputs": [[i + 1 for i in es] for es in self.ext_inputs],
            "domain": [list(iv) for iv in self.domain],
            "parent_ranges": [[list(iv) for iv in ranges] for ranges in self.parent_ranges],
            "costs": list(self.costs),
        }


@dataclass(frozen=True)
class NodeInput:
    parent_values: np.ndarray
    ext_values: np.ndarray

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.parent_values, self.ext_values])


def load_spec(path: str | Path) -> NetworkSpec:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"Cannot read network specification {path}: {e}") from e
    return NetworkSpec.from_dict(data)


def validate(spec: NetworkSpec) -> None:
    """Raise the error for the first violated invariant; return None if the spec is sound."""
    K = spec.K
    if K < 1:
        raise DimensionMismatch("A network needs at least one node")
    if not (len(spec.ext_inputs) == len(spec.parent_ranges) == len(spec.costs) == K):
        raise DimensionMismatch("Per-node lists must all have K entries")

    graph = nx.DiGraph()
    graph.add_nodes_from(range(K))
    graph.add_edges_from((j, k) for k, ps in enumerate(spec.parents) for j in ps)
    try:
        cycle = nx.find_cycle(graph)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        path = " -> ".join(str(u + 1) for u, _ in cycle)
        raise CycleDetected(f"Parent graph contains a cycle: {path} -> {cycle[0][0] + 1}")

    for k, ps in enumerate(spec.parents):
        for j in ps:
            if not 0 <= j < k:
                raise BadOrdering(f"Node {k + 1} has parent {j + 1}; parents must precede their children")
        if len(set(ps)) != len(ps):
            raise BadOrdering(f"Node {k + 1} lists a parent more than once")
        if len(spec.parent_ranges[k]) != len(ps):
            raise DimensionMismatch(
                f"Node {k + 1} has {len(ps)} parents but {len(spec.parent_ranges[k])} parent ranges"
            )

    for k in range(K - 1):
        if not spec.children[k]:
            raise DanglingFinalNode(
                f"Node {k + 1} feeds no other node; node {K} must be the only final node"
            )

    for k, es in enumerate(spec.ext_inputs):
        for i in es:
            if not 0 <= i < spec.d:
                raise DimensionMismatch(f"Node {k + 1} uses external input {i + 1}, but d={spec.d}")
        if len(set(es)) != len(es):
            raise DimensionMismatch(f"Node {k + 1} lists an external input more than once")
        if spec.node_dim(k) == 0:
            raise DimensionMismatch(f"Node {k + 1} has neither parents nor external inputs")

    for i, (a, b) in enumerate(spec.domain):
        if not (np.isfinite(a) and np.isfinite(b) and a < b):
            raise BadInterval(f"Domain interval {i + 1} is [{a}, {b}]")
    for k, ranges in enumerate(spec.parent_ranges):
        for j, (a, b) in zip(spec.parents[k], ranges):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise BadInterval(f"Range of parent {j + 1} into node {k + 1} is [{a}, {b}]")

    for k, c in enumerate(spec.costs):
        if not c > 0:
            raise NonpositiveCost(f"Node {k + 1} has cost {c}")


def assemble_node_input(spec: NetworkSpec, k: int, parent_values, x) -> NodeInput:
    parent_values = np.atleast_1d(np.asarray(parent_values, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if parent_values.shape != (len(spec.parents[k]),):
        raise DimensionMismatch(
            f"Node {k + 1} takes {len(spec.parents[k])} parent values, got {parent_values.shape[0]}"
        )
    if x.shape != (spec.d,):
        raise DimensionMismatch(f"Network input must have {spec.d} entries, got {x.shape[0]}")
    return NodeInput(parent_values=parent_values, ext_values=x[list(spec.ext_inputs[k])])


def gather_node_inputs(spec: NetworkSpec, k: int, outputs: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Batched z_k: ``outputs`` is (..., K), ``x`` broadcasts against (..., d)."""
    parents = outputs[..., list(spec.parents[k])]
    ext = np.broadcast_to(x[..., list(spec.ext_inputs[k])], parents.shape[:-1] + (len(spec.ext_inputs[k]),))
    return np.concatenate([parents, ext], axis=-1)


def evaluate_network(spec: NetworkSpec, funcs: Sequence[NodeFunction], x, check_domain: bool = True) -> np.ndarray:
    """Evaluate y_k = f_k(y_J(k), x_I(k)) in index order.

    ``x`` is a single point (d,) or a batch (n, d); node functions take (n, d_k)
    arrays and return (n,). Returns (K,) or (n, K).
    """
    if len(funcs) != spec.K:
        raise DimensionMismatch(f"Expected {spec.K} node functions, got {len(funcs)}")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[-1] != spec.d:
        raise DimensionMismatch(f"Network input must have {spec.d} entries, got {X.shape[-1]}")
    if check_domain and not spec.contains(X):
        raise DomainViolation(f"Input outside the domain box: {X.tolist()}")

    # unwritten outputs stay NaN so a premature read is visible downstream
    outputs = np.full((X.shape[0], spec.K), np.nan)
    for k in range(spec.K):
        z = gather_node_inputs(spec, k, outputs, X)
        outputs[:, k] = np.asarray(funcs[k](z), dtype=float).reshape(X.shape[0])
    return outputs[0] if single else outputs
