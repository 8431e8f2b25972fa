"""Run configuration, manifests and the experiment registry."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import __version__
from .classify import DEFAULT_C3
from .covariance import check_gamma
from .io import sha256_file, write_json

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_FAILED_CHECKS = 1
EXIT_INVALID = 2
EXIT_POOR_FIT = 3
EXIT_UNDECIDED = 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything an experiment reads. Persisted as JSON with a schema version."""

    experiment: str
    k: int = 1
    gamma: float = 0.0
    grid: int = 256
    scales: tuple[int, ...] = (1, 2, 3)
    replicas: int = 100
    paths: int = 100
    seed: int = 0
    out: str = "out"
    threads: int = 1
    r: int = 2
    delta: float = 0.2
    mode: str = "fast"
    points: int = 8
    t: float = 0.01
    q: tuple[float, ...] = (0.5, 1.0, 1.5)
    level: str = "quick"
    c: float = 2.0
    C3: float = DEFAULT_C3
    tolerances: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def validate(self) -> "RunConfig":
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}; expected {SCHEMA_VERSION}")
        _load_registry()
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; registry: {', '.join(sorted(EXPERIMENTS))}")
        try:
            check_gamma(self.gamma)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.k < 1:
            raise ConfigError("k must be a positive integer")
        if self.grid < 8 or self.grid & (self.grid - 1):
            raise ConfigError("grid must be a power of two >= 8")
        if self.replicas < 1 or self.paths < 1 or self.threads < 1:
            raise ConfigError("replicas, paths and threads must be positive")
        if any(r < 1 for r in self.scales):
            raise ConfigError("scales must be positive integers")
        if self.r < 1:
            raise ConfigError("r must be a positive integer")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.mode not in ("fast", "slow", "very_fast"):
            raise ConfigError("mode must be fast, slow or very_fast")
        if self.points < 8:
            raise ConfigError("points must be >= 8 (m x m grid per box)")
        if self.t <= 0:
            raise ConfigError("t must be positive")
        if self.level not in ("quick", "full"):
            raise ConfigError("level must be quick or full")
        if self.c < 2 or self.C3 <= 0:
            raise ConfigError("c must be >= 2 and C3 positive")
        if self.experiment == "classify":
            # window of side 7.5 s must put 4 cells across the radius of scale r + 1
            need = 7.5 * 4 * 2.0**self.k
            if self.grid < need:
                raise ConfigError(f"classify needs grid >= {need:g} at k={self.k} to resolve scale r+1")
        if self.experiment == "fit-moments":
            from .field import GridSpec
            from .gmc import check_radii, default_radii

            grid = GridSpec(self.grid)
            try:
                check_radii(default_radii(grid), grid)
            except ValueError as exc:
                raise ConfigError(f"grid {self.grid} cannot resolve the moment radii: {exc}") from None
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["scales"] = list(self.scales)
        d["q"] = list(self.q)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "experiment" not in d:
            raise ConfigError("config needs an 'experiment' key")
        d = dict(d)
        for key in ("scales", "q"):
            if key in d:
                d[key] = tuple(d[key])
        if "tolerances" in d:
            d["tolerances"] = dict(d["tolerances"])
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))

    def digest(self) -> str:
        """Hash of the fields that affect results; ``out`` and ``threads`` do not."""
        d = {k: v for k, v in self.to_dict().items() if k not in ("out", "threads")}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class ExperimentOutput:
    files: list
    seeds: dict
    status: str = "ok"  # ok | poor_fit | undecided | failed_checks
    summary: list = field(default_factory=list)


@dataclass(frozen=True)
class RunManifest:
    config_hash: str
    version: str
    experiment: str
    status: str
    wall_time: float
    seeds: dict
    digests: dict

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def exit_code(self) -> int:
        return {"ok": EXIT_OK, "poor_fit": EXIT_POOR_FIT, "undecided": EXIT_UNDECIDED,
                "failed_checks": EXIT_FAILED_CHECKS}[self.status]


EXPERIMENTS: dict[str, Callable[[RunConfig], ExperimentOutput]] = {}


def register(name: str):
    def deco(fn):
        EXPERIMENTS[name] = fn
        return fn

    return deco


def _load_registry():
    from . import experiments  # noqa: F401  (registers on import)


def run_experiment(config: RunConfig) -> RunManifest:
    """Validate, dispatch, and write ``manifest.json`` next to the outputs."""
    config.validate()
    t0 = time.perf_counter()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    result = EXPERIMENTS[config.experiment](config)
    wall = time.perf_counter() - t0
    digests = {str(Path(p).relative_to(out)): sha256_file(p) for p in sorted(map(str, result.files))}
    manifest = RunManifest(config.digest(), __version__, config.experiment, result.status, round(wall, 3),
                           result.seeds, digests)
    write_json(out / "manifest.json", manifest.to_dict())
    return manifest
