"""Benchmark function networks and the loader for user-defined ones."""

import json
import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import gp
from .errors import ParseError, UnknownFunctionKind
from .network import NetworkSpec, NodeFunction, evaluate_network

logger = logging.getLogger(__name__)

MANU_SEED = 2024
MANU_FEATURES = 4096

# two-node cascade cost study: (costs, budget)
COST_SCENARIOS: dict[str, tuple[tuple[float, float], float]] = {
    "a": ((1.0, 1.0), 50.0),
    "b": ((1.0, 9.0), 150.0),
    "c": ((1.0, 49.0), 700.0),
}


@dataclass(frozen=True)
class ProblemSpec:
    spec: NetworkSpec
    truth: tuple[NodeFunction, ...]
    name: str
    default_costs: tuple[float, ...]
    default_budget: float

    def evaluate(self, x) -> np.ndarray:
        return evaluate_network(self.spec, self.truth, x)

    def ground_truth(self, x) -> float:
        return float(np.asarray(self.evaluate(x)).reshape(-1)[-1])

    def with_costs(self, costs: Sequence[float]) -> "ProblemSpec":
        return ProblemSpec(
            spec=self.spec.with_costs(costs),
            truth=self.truth,
            name=self.name,
            default_costs=tuple(float(c) for c in costs),
            default_budget=self.default_budget,
        )


def ackley(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    return (
        -20.0 * np.exp(-0.2 * np.sqrt(np.mean(z**2, axis=-1)))
        - np.exp(np.mean(np.cos(2 * np.pi * z), axis=-1))
        + 20.0
        + np.e
    )


def neg_matyas(z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(z)
    a, b = z[:, 0], z[:, 1]
    return -0.26 * (a**2 + b**2) + 0.48 * a * b


def identity(z: np.ndarray) -> np.ndarray:
    return np.atleast_2d(z)[:, 0]


def total(z: np.ndarray) -> np.ndarray:
    return np.atleast_2d(z).sum(axis=-1)


BUILTIN_FUNCTIONS: dict[str, NodeFunction] = {
    "ackley": ackley,
    "neg_matyas": neg_matyas,
    "identity": identity,
    "sum": total,
}


def ackmat(costs: Sequence[float] | None = None, budget: float | None = None, scenario: str | None = None) -> ProblemSpec:
    """Ackley (6-d) feeding a negated Matyas node with one extra input x′."""
    if scenario is not None:
        if scenario not in COST_SCENARIOS:
            raise ParseError(f"Unknown cost scenario {scenario!r}; expected one of {sorted(COST_SCENARIOS)}")
        scenario_costs, scenario_budget = COST_SCENARIOS[scenario]
        costs = costs if costs is not None else scenario_costs
        budget = budget if budget is not None else scenario_budget
    costs = tuple(float(c) for c in (costs if costs is not None else (1.0, 49.0)))
    spec = NetworkSpec.from_dict({
        "K": 2,
        "parents": [[], [1]],
        "ext_inputs": [[1, 2, 3, 4, 5, 6], [7]],
        "domain": [[-2.0, 2.0]] * 6 + [[-10.0, 10.0]],
        "parent_ranges": [[], [[0.0, 20.0]]],
        "costs": list(costs),
    })
    return ProblemSpec(
        spec=spec,
        truth=(ackley, neg_matyas),
        name="ackmat",
        default_costs=costs,
        default_budget=float(budget if budget is not None else 700.0),
    )


class _ClampedPath:
    def __init__(self, path: gp.PathSample, low: float = -np.inf, high: float = np.inf):
        self.path = path
        self.low = low
        self.high = high

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return np.clip(self.path(np.atleast_2d(z)), self.low, self.high)


def manu(seed: int = MANU_SEED, costs: Sequence[float] | None = None, budget: float | None = None) -> ProblemSpec:
    """Four-node process network whose node functions are fixed Matérn-5/2 prior draws."""
    costs = tuple(float(c) for c in (costs if costs is not None else (5.0, 10.0, 10.0, 45.0)))
    spec = NetworkSpec.from_dict({
        "K": 4,
        "parents": [[], [1], [], [2, 3]],
        "ext_inputs": [[1], [], [2], []],
        "domain": [[-1.0, 1.0], [-1.0, 1.0]],
        "parent_ranges": [[], [[-2.0, 2.0]], [], [[-1.0, 1.0], [-1.0, 1.0]]],
        "costs": list(costs),
    })
    lengthscales = (0.631, 1.0, 1.0, 3.0)
    outputscales = (0.631, 0.631, 0.631, 10.0)
    clamps = ((-2.0, 2.0), (-1.0, 1.0), (-1.0, 1.0), (-np.inf, np.inf))

    truth = []
    for k, s in enumerate(np.random.SeedSequence(seed).spawn(spec.K)):
        # lengthscales are in raw input units, so the prior uses identity normalization
        prior = gp.from_hyperparameters(
            gp.KernelConfig(lengthscales=(lengthscales[k],) * spec.node_dim(k), outputscale=outputscales[k])
        )
        truth.append(_ClampedPath(gp.sample_path(prior, s, MANU_FEATURES), *clamps[k]))
    return ProblemSpec(
        spec=spec,
        truth=tuple(truth),
        name="manu",
        default_costs=costs,
        default_budget=float(budget if budget is not None else 700.0),
    )


class _Polynomial:
    def __init__(self, coefficients: Sequence[float], exponents: Sequence[Sequence[float]]):
        self.coefficients = np.asarray(coefficients, dtype=float)
        self.exponents = np.asarray(exponents, dtype=float)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        return np.prod(z[:, None, :] ** self.exponents[None, :, :], axis=-1) @ self.coefficients


class _Tabulated:
    def __init__(self, grid: Sequence[Sequence[float]], values, method: str = "linear"):
        self.interpolator = RegularGridInterpolator(
            tuple(np.asarray(g, dtype=float) for g in grid),
            np.asarray(values, dtype=float),
            method=method,
            bounds_error=False,
            fill_value=None,
        )

    def __call__(self, z: np.ndarray) -> np.ndarray:
        return self.interpolator(np.atleast_2d(z))


def _node_function(descriptor: dict, k: int, node_dim: int) -> NodeFunction:
    if not isinstance(descriptor, dict) or "kind" not in descriptor:
        raise ParseError(f"Function of node {k + 1} must be an object with a 'kind'")
    kind = descriptor["kind"]
    try:
        if kind == "polynomial":
            exponents = descriptor["exponents"]
            coefficients = descriptor["coefficients"]
            if len(exponents) != len(coefficients) or any(len(e) != node_dim for e in exponents):
                raise ParseError(
                    f"Polynomial of node {k + 1} needs one exponent row of length {node_dim} per coefficient"
                )
            return _Polynomial(coefficients, exponents)
        if kind == "tabulated":
            grid = descriptor["grid"]
            if len(grid) != node_dim:
                raise ParseError(f"Tabulated node {k + 1} needs {node_dim} grid axes, got {len(grid)}")
            return _Tabulated(grid, descriptor["values"], descriptor.get("method", "linear"))
        if kind == "builtin":
            name = descriptor["name"]
            if name not in BUILTIN_FUNCTIONS:
                raise UnknownFunctionKind(
                    f"Node {k + 1} names unknown builtin {name!r}; expected one of {sorted(BUILTIN_FUNCTIONS)}"
                )
            return BUILTIN_FUNCTIONS[name]
    except KeyError as e:
        raise ParseError(f"Function of node {k + 1} is missing field {e}") from e
    except (TypeError, ValueError) as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(f"Malformed function of node {k + 1}: {e}") from e
    raise UnknownFunctionKind(f"Node {k + 1} has unknown function kind {kind!r}")


def load_custom(path: str | Path) -> ProblemSpec:
    """Network JSON plus a ``functions`` list with one descriptor per node."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"Cannot read problem file {path}: {e}") from e
    if not isinstance(data, dict):
        raise ParseError(f"Problem file {path} must hold a JSON object")
    spec = NetworkSpec.from_dict(data)
    functions = data.get("functions")
    if not isinstance(functions, list) or len(functions) != spec.K:
        raise ParseError(f"Problem file {path} needs a 'functions' list with {spec.K} entries")
    truth = tuple(_node_function(f, k, spec.node_dim(k)) for k, f in enumerate(functions))
    return ProblemSpec(
        spec=spec,
        truth=truth,
        name=str(data.get("name", Path(path).stem)),
        default_costs=spec.costs,
        default_budget=float(data.get("budget", 100.0)),
    )


PROBLEMS: dict[str, Callable[..., ProblemSpec]] = {
    "ackmat": ackmat,
    "manu": manu,
}


def get_problem(name_or_path: str, costs: Sequence[float] | None = None) -> ProblemSpec:
    """Builtin problem by name (``ackmat``, ``ackmat:c``, ``manu``, ``manu:7``) or a custom JSON file."""
    name, _, option = name_or_path.partition(":")
    if name == "ackmat":
        problem = ackmat(scenario=option or None)
    elif name == "manu":
        try:
            seed = int(option) if option else MANU_SEED
        except ValueError as e:
            raise ParseError(f"Bad seed in problem name {name_or_path!r}") from e
        problem = manu(seed=seed)
    elif Path(name_or_path).suffix == ".json" or Path(name_or_path).exists():
        problem = load_custom(name_or_path)
    else:
        raise ParseError(f"Unknown problem {name_or_path!r}; expected one of {sorted(PROBLEMS)} or a JSON file")
    if costs is not None:
        problem = problem.with_costs(costs)
    return problem
