import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .discrete import DiscreteSetConfig
from .errors import ConfigError

logger = logging.getLogger(__name__)

# Track which .env file was loaded
_loaded_env_path: Path | None = None

# Load .env file if it exists (for local runs and batch schedulers)
try:
    from dotenv import load_dotenv
    env_paths = [
        Path(".env"),
        Path(__file__).parent.parent.parent / ".env",
    ]
    for env_path in env_paths:
        if env_path.exists():
            load_dotenv(env_path)
            _loaded_env_path = env_path.resolve()
            break
except ImportError:
    pass

ALGORITHMS = ("fast-pkgfn", "pkgfn", "eifn", "ei", "tsfn", "random")
PARTIAL_ALGORITHMS = ("fast-pkgfn", "pkgfn")


@dataclass
class Settings:
    threads: int = int(os.getenv("FNBO_THREADS", str(os.cpu_count() or 1)))
    log_level: str = os.getenv("FNBO_LOG_LEVEL", "INFO")
    out_dir: str = os.getenv("FNBO_OUT_DIR", "results")

    env_path: Path | None = _loaded_env_path

    def validate(self):
        invalid = []
        if self.threads < 1:
            invalid.append(f"threads={self.threads}")
        if not isinstance(logging.getLevelName(self.log_level.upper()), int):
            invalid.append(f"log_level={self.log_level}")
        if not self.out_dir:
            invalid.append("out_dir")
        if invalid:
            raise ConfigError(f"Invalid settings: {', '.join(invalid)}")


def _section(cls, data, name):
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"'{name}' must be an object, got {type(data).__name__}")
    unknown = set(data) - {f.name for f in fields(cls)}
    if unknown:
        raise ConfigError(f"Unknown keys in '{name}': {', '.join(sorted(unknown))}")
    return cls(**data)


@dataclass(frozen=True)
class MCSettings:
    """Monte Carlo sample counts for the posterior mean, EIFN and fantasies."""

    nu_samples: int = 64
    eifn_samples: int = 128
    fantasies: int = 16
    candidate_realizations: int = 1


@dataclass(frozen=True)
class OptimizerSettings:
    restarts: int = 10
    max_evals: int = 200
    raw_samples: int = 256


@dataclass
class ExperimentConfig:
    problem: str = "ackmat"
    algo: str = "fast-pkgfn"
    budget: float | None = None
    trials: int = 1
    seed: int = 0
    costs: list[float] | None = None
    discrete: DiscreteSetConfig = field(default_factory=DiscreteSetConfig)
    mc: MCSettings = field(default_factory=MCSettings)
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    output_dir: str | None = None
    record_timing: bool = True

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"Unknown config keys: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "discrete" in data and not isinstance(data["discrete"], DiscreteSetConfig):
            if not isinstance(data["discrete"], dict):
                raise ConfigError("'discrete' must be an object")
            data["discrete"] = DiscreteSetConfig.from_dict(data["discrete"])
        if "mc" in data:
            data["mc"] = _section(MCSettings, data["mc"], "mc")
        if "optimizer" in data:
            data["optimizer"] = _section(OptimizerSettings, data["optimizer"], "optimizer")
        try:
            return cls(**data)
        except TypeError as e:
            raise ConfigError(f"Malformed experiment config: {e}") from e

    @classmethod
    def from_json(cls, path: str | Path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config {path} must hold a JSON object")
        return cls.from_dict(data)

    @property
    def label(self) -> str:
        """Directory name for this run's traces."""
        if self.algo == "fast-pkgfn" and self.discrete.preset is not None:
            return f"{self.algo}-{self.discrete.preset}"
        return self.algo

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path: str | Path) -> None:
        """Write the resolved config as JSON next to the traces."""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        """Apply CLI flags; ``None`` means the flag was not given."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def validate(self, problem_costs=None) -> None:
        invalid = []
        if self.algo not in ALGORITHMS:
            invalid.append(f"algo={self.algo!r} (expected one of {', '.join(ALGORITHMS)})")
        if self.trials < 1:
            invalid.append(f"trials={self.trials}")
        costs = self.costs if self.costs is not None else problem_costs
        if self.budget is not None and costs:
            if not self.budget > min(costs):
                invalid.append(f"budget={self.budget} (must exceed the cheapest node cost {min(costs)})")
        elif self.budget is not None and self.budget < 0:
            invalid.append(f"budget={self.budget}")
        for name, value in asdict(self.mc).items():
            if value < 1:
                invalid.append(f"mc.{name}={value}")
        for name, value in asdict(self.optimizer).items():
            if value < (0 if name == "raw_samples" else 1):
                invalid.append(f"optimizer.{name}={value}")
        if invalid:
            raise ConfigError(f"Invalid experiment config: {'; '.join(invalid)}")
        self.discrete.validate()
