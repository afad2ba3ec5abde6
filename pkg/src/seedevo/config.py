"""Run configuration: defaults, validation, file/env/flag layering.

Precedence when assembling a config is flags > environment > config
file > defaults.  The effective result is dumped into the output root
at run start so any run can be audited or resumed without the original
invocation.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .hedge import HedgeConfig
from .operators import Operator

DEFAULT_BASE_PROBS = {
    Operator.INITIAL: 0.1,
    Operator.CONTINUE: 0.2,
    Operator.ABLATION: 0.1,
    Operator.MERGE: 0.1,
    Operator.JUMPSTART: 0.0,
    Operator.EDA: 0.5,
}

DEFAULT_FLOORS = {
    Operator.INITIAL: 0.05,
    Operator.CONTINUE: 0.10,
    Operator.ABLATION: 0.05,
    Operator.MERGE: 0.05,
    Operator.JUMPSTART: 0.05,
    Operator.EDA: 0.05,
}

DEFAULT_CEILINGS = {Operator.MERGE: 0.30}

DEFAULT_MAX_FILE_BYTES = 64 * 1024 * 1024


@dataclass
class RunConfig:
    population_size: int = 5
    workers: int = 3
    base_probs: dict[Operator, float] = field(default_factory=lambda: dict(DEFAULT_BASE_PROBS))
    floors: dict[Operator, float] = field(default_factory=lambda: dict(DEFAULT_FLOORS))
    ceilings: dict[Operator, float] = field(default_factory=lambda: dict(DEFAULT_CEILINGS))
    learning_rate: float = 0.15
    clip_cap: float = 4.0
    max_bound_iterations: int = 10
    max_iterations: int = 30
    patience: int = 5
    improvement_threshold: float = 0.0
    continue_parents_min: int = 1
    continue_parents_max: int = 1
    num_training_runs: int = 5
    higher_is_better: bool = True
    master_seed: int = 0
    executor: str = "simulated"
    sim_params: dict | None = None
    external_command: list[str] | None = None
    external_timeout_seconds: float = 1800.0
    data_path: str | None = None
    data_provisioning: str = "link"
    max_file_bytes: int = DEFAULT_MAX_FILE_BYTES
    excluded_globs: list[str] = field(default_factory=list)

    def validate(self) -> None:
        if self.population_size < 1:
            raise ConfigurationError("population_size", f"must be >= 1, got {self.population_size}")
        if self.workers < 1:
            raise ConfigurationError("workers", f"must be >= 1, got {self.workers}")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations", f"must be >= 1, got {self.max_iterations}")
        if self.patience < 1:
            raise ConfigurationError("patience", f"must be >= 1, got {self.patience}")
        if not math.isfinite(self.improvement_threshold):
            raise ConfigurationError("improvement_threshold", "must be finite")
        if self.continue_parents_min < 1:
            raise ConfigurationError("continue_parents_min", "must be >= 1")
        if self.continue_parents_max < self.continue_parents_min:
            raise ConfigurationError(
                "continue_parents_max",
                f"must be >= continue_parents_min, got {self.continue_parents_max}"
                f" < {self.continue_parents_min}",
            )
        if self.num_training_runs < 1:
            raise ConfigurationError("num_training_runs", "must be >= 1")
        if self.executor not in ("simulated", "external"):
            raise ConfigurationError("executor", f"unknown executor {self.executor!r}")
        if self.executor == "external" and not self.external_command:
            raise ConfigurationError("external_command", "required when executor is external")
        if self.executor == "external" and not self.data_path:
            raise ConfigurationError("data_path", "required when executor is external")
        if self.data_provisioning not in ("copy", "link"):
            raise ConfigurationError(
                "data_provisioning", f"must be copy or link, got {self.data_provisioning!r}"
            )
        if self.max_file_bytes < 1:
            raise ConfigurationError("max_file_bytes", "must be >= 1")
        if (
            self.population_size < 2
            and self.base_probs.get(Operator.MERGE, 0.0) > 0.0
        ):
            raise ConfigurationError(
                "population_size", "merge is active but population of 1 has no second parent"
            )
        # surfaces bad probability maps early, with field-level messages
        self.hedge_config()

    def hedge_config(self) -> HedgeConfig:
        return HedgeConfig.build(
            base_probs=self.base_probs,
            floors=self.floors,
            ceilings=self.ceilings,
            learning_rate=self.learning_rate,
            clip_cap=self.clip_cap,
            max_bound_iterations=self.max_bound_iterations,
        )

    def to_dict(self) -> dict:
        return {
            "population_size": self.population_size,
            "workers": self.workers,
            "base_probs": {op.value: p for op, p in self.base_probs.items()},
            "floors": {op.value: p for op, p in self.floors.items()},
            "ceilings": {op.value: p for op, p in self.ceilings.items()},
            "learning_rate": self.learning_rate,
            "clip_cap": self.clip_cap,
            "max_bound_iterations": self.max_bound_iterations,
            "max_iterations": self.max_iterations,
            "patience": self.patience,
            "improvement_threshold": self.improvement_threshold,
            "continue_parents_min": self.continue_parents_min,
            "continue_parents_max": self.continue_parents_max,
            "num_training_runs": self.num_training_runs,
            "higher_is_better": self.higher_is_better,
            "master_seed": self.master_seed,
            "executor": self.executor,
            "sim_params": self.sim_params,
            "external_command": self.external_command,
            "external_timeout_seconds": self.external_timeout_seconds,
            "data_path": self.data_path,
            "data_provisioning": self.data_provisioning,
            "max_file_bytes": self.max_file_bytes,
            "excluded_globs": list(self.excluded_globs),
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = set(cls().to_dict())
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(sorted(unknown)[0], "unknown config key")
        merged = cls().to_dict()
        merged.update(raw)
        for key in ("base_probs", "floors", "ceilings"):
            try:
                merged[key] = {Operator(k): float(v) for k, v in merged[key].items()}
            except ValueError as exc:
                raise ConfigurationError(key, str(exc)) from exc
        return cls(**merged)


# environment variable -> (config key, parser); probability maps get
# dedicated per-operator variables in the style of the runtime they wrap
_ENV_SCALARS = {
    "GA_POPULATION": ("population_size", int),
    "GA_WORKERS": ("workers", int),
    "GA_ETA": ("learning_rate", float),
    "GA_KAPPA": ("clip_cap", float),
    "GA_MAX_ITERATIONS": ("max_iterations", int),
    "GA_PATIENCE": ("patience", int),
    "GA_THRESHOLD": ("improvement_threshold", float),
    "GA_CONTINUE_PARENTS_MIN": ("continue_parents_min", int),
    "GA_CONTINUE_PARENTS_MAX": ("continue_parents_max", int),
    "NUM_TRAINING_RUNS": ("num_training_runs", int),
    "GA_HIGHER_IS_BETTER": ("higher_is_better", lambda v: v.lower() in ("1", "true", "yes")),
    "GA_SEED": ("master_seed", int),
    "GA_EXECUTOR": ("executor", str),
    "GA_DATA": ("data_path", str),
    "GA_MOUNT_DATA": ("data_provisioning", str),
    "GA_TIMEOUT_SECONDS": ("external_timeout_seconds", float),
}


def _env_overrides(env: dict) -> dict:
    out: dict = {}
    for var, (key, parse) in _ENV_SCALARS.items():
        if var in env:
            try:
                out[key] = parse(env[var])
            except ValueError as exc:
                raise ConfigurationError(key, f"bad value in ${var}: {env[var]!r}") from exc
    for op in Operator:
        var = f"GA_PROB_{op.value.upper()}"
        if var in env:
            try:
                out.setdefault("base_probs", {})[op.value] = float(env[var])
            except ValueError as exc:
                raise ConfigurationError("base_probs", f"bad value in ${var}") from exc
    return out


def load_config(
    config_file: Path | None = None,
    env: dict | None = None,
    overrides: dict | None = None,
) -> RunConfig:
    """Assemble a RunConfig with flags > env > file > defaults."""
    merged = RunConfig().to_dict()
    if config_file is not None:
        try:
            raw = json.loads(Path(config_file).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError("config_file", f"cannot read {config_file}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigurationError("config_file", f"invalid JSON in {config_file}: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigurationError("config_file", "top level must be an object")
        _merge_layer(merged, raw)
    _merge_layer(merged, _env_overrides(env if env is not None else dict(os.environ)))
    _merge_layer(merged, overrides or {})
    config = RunConfig.from_dict(merged)
    config.validate()
    return config


def _merge_layer(base: dict, layer: dict) -> None:
    """Apply one precedence layer; probability maps merge per operator."""
    for key, value in layer.items():
        if key in ("base_probs", "floors", "ceilings") and isinstance(value, dict):
            current = dict(base.get(key) or {})
            current.update(value)
            base[key] = current
        else:
            base[key] = value
