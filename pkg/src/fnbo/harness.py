"""Experiment orchestration: initial design, the BO loop, traces and summaries.

Budgets count only spend after the initial design. Trace files are written
with shortest round-trip float formatting so identical runs produce
identical bytes (set ``record_timing`` to false to zero the wall times).
"""

import asyncio
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import gp, netposterior
from .acquisition import AcquisitionContext, Candidate, next_evaluation
from .config import PARTIAL_ALGORITHMS, ExperimentConfig, Settings
from .network import NetworkSpec, gather_node_inputs
from .problems import ProblemSpec, get_problem

logger = logging.getLogger(__name__)

TRACE_COLUMNS = [
    "trial", "iter", "cum_cost", "node", "input", "observed",
    "nu_star", "x_star", "ground_truth", "acq_seconds",
]
_DUPLICATE_TOL = 1e-8
_COST_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class TraceRecord:
    """One trace row. ``node`` is 1-based, or ``"full"``, ``"init"`` or ``"abort"``.

    The ``"init"`` row holds the recommendation after the initial design at cost 0.
    ``routed`` lists the 0-based nodes whose data grew; it is kept in memory only,
    the CSV columns are fixed.
    """

    trial: int
    iteration: int
    cum_cost: float
    node: int | str
    input: np.ndarray
    observed: float
    nu_star: float
    x_star: np.ndarray
    ground_truth: float
    acq_seconds: float
    routed: tuple[int, ...] = ()

    def to_row(self) -> dict[str, str]:
        return {
            "trial": str(self.trial),
            "iter": str(self.iteration),
            "cum_cost": _fmt(self.cum_cost),
            "node": str(self.node),
            "input": format_vector(self.input),
            "observed": _fmt(self.observed),
            "nu_star": _fmt(self.nu_star),
            "x_star": format_vector(self.x_star),
            "ground_truth": _fmt(self.ground_truth),
            "acq_seconds": _fmt(self.acq_seconds),
        }


def _fmt(value: float) -> str:
    return repr(float(value))


def format_vector(values) -> str:
    return ";".join(_fmt(v) for v in np.asarray(values, dtype=float).reshape(-1))


def parse_vector(text) -> np.ndarray:
    if not isinstance(text, str) or not text:
        return np.zeros(0)
    return np.array([float(v) for v in text.split(";")])


def _iteration_seed(trial_seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(trial_seed, spawn_key=keys)


def _int_seed(trial_seed: int, *keys: int) -> int:
    return int(_iteration_seed(trial_seed, *keys).generate_state(1)[0])


@dataclass
class Observations:
    """Per-node datasets plus the list of full-network evaluations."""

    spec: NetworkSpec
    inputs: list[list[np.ndarray]] = field(init=False)
    targets: list[list[float]] = field(init=False)
    full_inputs: list[np.ndarray] = field(default_factory=list)
    full_values: list[float] = field(default_factory=list)

    def __post_init__(self):
        self.inputs = [[] for _ in range(self.spec.K)]
        self.targets = [[] for _ in range(self.spec.K)]

    def _is_duplicate(self, k: int, z: np.ndarray) -> bool:
        if not self.inputs[k]:
            return False
        lower, upper = self.spec.node_bounds(k)
        Z = (np.array(self.inputs[k]) - lower) / (upper - lower)
        zn = (z - lower) / (upper - lower)
        return bool(np.min(np.linalg.norm(Z - zn, axis=1)) < _DUPLICATE_TOL)

    def add_partial(self, k: int, z, y: float) -> bool:
        """Route one node observation; returns False when z is already in node k's data."""
        z = np.asarray(z, dtype=float).reshape(-1)
        if self._is_duplicate(k, z):
            logger.warning("Skipping duplicate observation at node %d, input %s", k + 1, z.tolist())
            return False
        self.inputs[k].append(z)
        self.targets[k].append(float(y))
        return True

    def add_full(self, x, outputs) -> list[int]:
        """Route every node's (z_k, y_k) of one full evaluation; returns the nodes that changed."""
        x = np.asarray(x, dtype=float).reshape(self.spec.d)
        outputs = np.asarray(outputs, dtype=float).reshape(self.spec.K)
        self.full_inputs.append(x)
        self.full_values.append(float(outputs[-1]))
        changed = []
        for k in range(self.spec.K):
            z = gather_node_inputs(self.spec, k, outputs, x)
            if self.add_partial(k, z, outputs[k]):
                changed.append(k)
        return changed

    def datasets(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [
            (np.array(self.inputs[k]).reshape(-1, self.spec.node_dim(k)), np.array(self.targets[k]))
            for k in range(self.spec.K)
        ]

    def count(self, k: int) -> int:
        return len(self.inputs[k])

    @property
    def best_full_value(self) -> float:
        return max(self.full_values) if self.full_values else -np.inf


def initial_design(problem: ProblemSpec, seed) -> Observations:
    """2d+1 uniform points, fully evaluated through the truth network."""
    spec = problem.spec
    rng = np.random.default_rng(seed)
    X = spec.from_unit(rng.uniform(size=(2 * spec.d + 1, spec.d)))
    outputs = problem.evaluate(X)
    observations = Observations(spec)
    for x, y in zip(X, outputs):
        observations.add_full(x, y)
    return observations


class BOLoop:
    """One trial of one algorithm; ``run`` returns its trace."""

    def __init__(self, config: ExperimentConfig, problem: ProblemSpec, trial_seed: int, trial: int = 0):
        self.config = config
        self.problem = problem
        self.spec = problem.spec
        self.trial_seed = trial_seed
        self.trial = trial
        self.budget = float(config.budget if config.budget is not None else problem.default_budget)
        self.spent = 0.0
        self.iteration = 0
        self.records: list[TraceRecord] = []
        self.observations: Observations | None = None
        self.nodes: list[gp.GPState] = []
        self.blackbox: gp.GPState | None = None
        self.post: netposterior.NetworkPosterior | None = None
        self.x_star: np.ndarray | None = None
        self.nu_star = float("nan")

    def initialize(self) -> None:
        self.observations = initial_design(self.problem, _iteration_seed(self.trial_seed, 0, 0))
        self.nodes = netposterior.fit_network(
            self.spec, self.observations.datasets(), seed=_int_seed(self.trial_seed, 0, 1)
        )
        if self.config.algo == "ei":
            self._fit_blackbox(init=None)
        self._recommend()
        self.records.append(self._status_record("init", observed=self.observations.best_full_value))
        logger.info(
            "trial %d initial design: %d points, recommendation value %.6g",
            self.trial, len(self.observations.full_inputs), self.records[-1].ground_truth,
        )

    def _fit_blackbox(self, init) -> None:
        obs = self.observations
        self.blackbox = gp.fit(
            np.array(obs.full_inputs), np.array(obs.full_values),
            bounds=(self.spec.lower, self.spec.upper),
            seed=_int_seed(self.trial_seed, self.iteration, 3),
            init=init,
        )

    def _recommend(self) -> None:
        self.post = netposterior.NetworkPosterior.build(
            self.spec,
            self.nodes,
            qmc_samples=self.config.mc.nu_samples,
            seed=_iteration_seed(self.trial_seed, self.iteration, 4),
            evaluated_inputs=np.array(self.observations.full_inputs).reshape(-1, self.spec.d),
        )
        opt = self.config.optimizer
        self.x_star, self.nu_star = netposterior.maximize_mean(
            self.post,
            previous=self.x_star,
            restarts=opt.restarts,
            max_evals=opt.max_evals,
            raw_samples=opt.raw_samples,
            seed=_iteration_seed(self.trial_seed, self.iteration, 5),
        )

    def _cheapest_step(self) -> float:
        if self.config.algo in PARTIAL_ALGORITHMS:
            return min(self.spec.cost(k) for k in range(self.spec.K))
        return self.spec.full_cost

    def step(self) -> TraceRecord | None:
        """Choose, evaluate and record one evaluation; None when the budget is exhausted."""
        remaining = self.budget - self.spent
        if self._cheapest_step() > remaining + _COST_SLACK:
            return None
        ctx = AcquisitionContext(
            post=self.post,
            x_star=self.x_star,
            nu_star=self.nu_star,
            seed=_iteration_seed(self.trial_seed, self.iteration + 1, 6),
            best_observed=self.observations.best_full_value,
            blackbox=self.blackbox,
            budget_left=remaining,
            discrete=self.config.discrete,
            mc=self.config.mc,
            optimizer=self.config.optimizer,
        )
        started = time.perf_counter()
        decision = next_evaluation(self.config.algo, ctx)
        acq_seconds = time.perf_counter() - started if self.config.record_timing else 0.0
        if decision is None:
            return None

        self.iteration += 1
        if isinstance(decision, Candidate):
            k, z = decision.node, decision.z
            observed = float(np.asarray(self.problem.truth[k](z[None, :])).reshape(-1)[0])
            changed = [k] if self.observations.add_partial(k, z, observed) else []
            node_label: int | str = k + 1
            evaluated = z
        else:
            outputs = self.problem.evaluate(decision.x)
            changed = self.observations.add_full(decision.x, outputs)
            observed = float(outputs[-1])
            node_label = "full"
            evaluated = decision.x
            if self.config.algo == "ei":
                self._fit_blackbox(init=self.blackbox.config)

        self.spent += decision.cost
        if changed:
            self.nodes = netposterior.fit_network(
                self.spec,
                self.observations.datasets(),
                seed=_int_seed(self.trial_seed, self.iteration, 1),
                previous=self.nodes,
                refit=changed,
            )
        self._recommend()
        record = TraceRecord(
            trial=self.trial,
            iteration=self.iteration,
            cum_cost=self.spent,
            node=node_label,
            input=evaluated,
            observed=observed,
            nu_star=self.nu_star,
            x_star=self.x_star,
            ground_truth=self.problem.ground_truth(self.x_star),
            acq_seconds=acq_seconds,
            routed=tuple(changed),
        )
        logger.info(
            "trial %d iter %d: node %s cost %.4g/%.4g recommendation value %.6g%s",
            self.trial, record.iteration, record.node, self.spent, self.budget, record.ground_truth,
            "" if changed else " (duplicate input, data unchanged)",
        )
        return record

    def run(self) -> list[TraceRecord]:
        try:
            if self.post is None:
                self.initialize()
            while self.spent < self.budget:
                record = self.step()
                if record is None:
                    break
                self.records.append(record)
        except Exception:
            logger.exception("Trial %d aborted at iteration %d", self.trial, self.iteration)
            self.records.append(self._status_record("abort"))
        return self.records

    def _status_record(self, node: str, observed: float = float("nan")) -> TraceRecord:
        x_star = self.x_star if self.x_star is not None else np.zeros(0)
        truth = self.problem.ground_truth(self.x_star) if self.x_star is not None else float("nan")
        return TraceRecord(
            trial=self.trial,
            iteration=self.iteration,
            cum_cost=self.spent,
            node=node,
            input=np.zeros(0),
            observed=observed,
            nu_star=self.nu_star,
            x_star=x_star,
            ground_truth=truth,
            acq_seconds=0.0,
        )


def trial_seed(config: ExperimentConfig, trial: int) -> int:
    return config.seed + trial


def run_trial(config: ExperimentConfig, seed: int, trial: int = 0) -> list[TraceRecord]:
    problem = get_problem(config.problem, costs=config.costs)
    logger.info("Trial %d: %s on %s (seed %d)", trial, config.algo, problem.name, seed)
    records = BOLoop(config, problem, seed, trial).run()
    evaluations = sum(1 for r in records if r.node not in ("init", "abort"))
    logger.info("Trial %d finished after %d evaluations", trial, evaluations)
    return records


def trace_path(directory: str | Path, trial: int) -> Path:
    return Path(directory) / f"trial_{trial:03d}.csv"


def write_trace(records: list[TraceRecord], path: str | Path) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([r.to_row() for r in records], columns=TRACE_COLUMNS)
    frame.to_csv(target, index=False, lineterminator="\n")


def read_traces(directory: str | Path) -> dict[str, list[pd.DataFrame]]:
    """Trace frames per run label; a label is the directory holding the trial files."""
    traces: dict[str, list[pd.DataFrame]] = {}
    for path in sorted(Path(directory).rglob("trial_*.csv")):
        frame = pd.read_csv(path, dtype={"node": str, "input": str, "x_star": str}, keep_default_na=False)
        for column in ("cum_cost", "observed", "nu_star", "ground_truth", "acq_seconds"):
            frame[column] = pd.to_numeric(frame[column], errors="coerce")
        traces.setdefault(path.parent.name, []).append(frame)
    return traces


@dataclass
class Summary:
    curves: dict[str, pd.DataFrame]
    table: dict[str, dict]


def _progress_curve(frames: list[pd.DataFrame], grid: np.ndarray) -> pd.DataFrame:
    columns = []
    for frame in frames:
        if frame.empty:
            continue
        series = pd.Series(frame["ground_truth"].to_numpy(), index=frame["cum_cost"].to_numpy())
        columns.append(series.reindex(grid, method="ffill"))
    stacked = pd.concat(columns, axis=1)
    count = stacked.count(axis=1)
    curve = pd.DataFrame({
        "cost_grid": grid,
        "mean": stacked.mean(axis=1).to_numpy(),
        "stderr": (stacked.std(axis=1, ddof=1) / np.sqrt(count)).fillna(0.0).to_numpy(),
    })
    return curve[count.to_numpy() > 0].reset_index(drop=True)


def _pareto_flags(runtime: dict[str, float], final: dict[str, float]) -> dict[str, bool]:
    flags = {}
    for a in runtime:
        flags[a] = not any(
            runtime[b] <= runtime[a] and final[b] >= final[a] and (runtime[b] < runtime[a] or final[b] > final[a])
            for b in runtime if b != a
        )
    return flags


def summarize(traces: dict[str, list[pd.DataFrame]]) -> Summary:
    """Progress curves on a shared cost grid, runtime table and Pareto flags per label."""
    cleaned = {
        label: [f[f["node"] != "abort"].reset_index(drop=True) for f in frames]
        for label, frames in traces.items()
    }
    all_costs = [f["cum_cost"].to_numpy() for frames in cleaned.values() for f in frames if not f.empty]
    grid = np.unique(np.concatenate(all_costs)) if all_costs else np.zeros(0)

    curves: dict[str, pd.DataFrame] = {}
    table: dict[str, dict] = {}
    for label, frames in cleaned.items():
        nonempty = [f for f in frames if not f.empty]
        if not nonempty:
            continue
        curves[label] = _progress_curve(nonempty, grid)
        acq = np.concatenate([f.loc[f["node"] != "init", "acq_seconds"].to_numpy() for f in nonempty])
        finals = np.array([f["ground_truth"].iloc[-1] for f in nonempty])
        n = len(finals)
        table[label] = {
            "trials": n,
            "mean_acq_seconds": float(acq.mean()) if acq.size else 0.0,
            "stderr_acq_seconds": float(acq.std(ddof=1) / np.sqrt(acq.size)) if acq.size > 1 else 0.0,
            "final_mean": float(finals.mean()),
            "final_stderr": float(finals.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0,
            "final_median": float(np.median(finals)),
        }
    flags = _pareto_flags(
        {a: row["mean_acq_seconds"] for a, row in table.items()},
        {a: row["final_mean"] for a, row in table.items()},
    )
    for label, flag in flags.items():
        table[label]["pareto"] = flag
    return Summary(curves=curves, table=table)


def write_summary(summary: Summary, out_dir: str | Path) -> None:
    target = Path(out_dir)
    target.mkdir(parents=True, exist_ok=True)
    for label, curve in summary.curves.items():
        curve.to_csv(target / f"{label}.csv", index=False, lineterminator="\n")
    (target / "summary.json").write_text(json.dumps(summary.table, indent=2, sort_keys=True) + "\n")


async def run_experiment(config: ExperimentConfig, settings: Settings | None = None) -> dict[int, list[TraceRecord]]:
    """Run all trials, trial-parallel in worker processes, writing each trace as it completes."""
    settings = settings or Settings()
    out = Path(config.output_dir or settings.out_dir) / config.label
    config.save(out / "config.json")
    workers = max(1, min(config.trials, settings.threads))
    logger.info("Running %d trial(s) of %s with %d worker(s) into %s", config.trials, config.label, workers, out)

    results: dict[int, list[TraceRecord]] = {}

    async def _finish(trial: int, future) -> None:
        records = await future
        write_trace(records, trace_path(out, trial))
        results[trial] = records

    if workers == 1:
        for trial in range(config.trials):
            await _finish(trial, asyncio.to_thread(run_trial, config, trial_seed(config, trial), trial))
        return results

    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        await asyncio.gather(*(
            _finish(trial, loop.run_in_executor(pool, run_trial, config, trial_seed(config, trial), trial))
            for trial in range(config.trials)
        ))
    return dict(sorted(results.items()))
