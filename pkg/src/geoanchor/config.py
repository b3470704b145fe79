"""Run configuration: key-value file, environment seed override, provenance header."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import __version__
from .camera import RESCALE_FACTORS

SEED_ENV = "GEO_ANCHOR_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    root: str | None = None
    task: str = "detection"
    n_points: int = 5
    min_depth: float = 0.1
    seed: int = 0
    estimator: str = "gt_oracle"
    priors: str | None = None
    category_set: str | None = None
    factors: tuple[float, ...] = RESCALE_FACTORS
    tau: float = 0.25
    out: str | None = None

    def validate(self) -> RunConfig:
        if self.task not in ("detection", "grounding"):
            raise ConfigError(f"task must be detection or grounding, got {self.task!r}")
        if self.estimator not in ("gt_oracle", "category_prior"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.estimator == "category_prior" and self.priors is None and self.root is None:
            raise ConfigError("category_prior needs a priors file or a scene root to build one from")
        for name in ("root", "priors", "category_set"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigError(f"{name} path does not exist: {p}")
        if self.n_points < 1 or self.min_depth < 0 or not 0 < self.tau < 1:
            raise ConfigError("n_points >= 1, min_depth >= 0 and 0 < tau < 1 are required")
        if not self.factors or any(f <= 0 for f in self.factors):
            raise ConfigError("rescale factors must be positive")
        return self

    def digest(self) -> str:
        d = asdict(self)
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, default=list).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def provenance(self) -> dict:
        return {"tool": "geoanchor", "version": __version__, "seed": self.seed, "config_digest": self.digest()}


_TASK_ALIASES = {"detect": "detection", "detection": "detection", "ground": "grounding", "grounding": "grounding"}


def _coerce(name: str, raw: str):
    if name == "factors":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if name == "task":
        if raw not in _TASK_ALIASES:
            raise ConfigError(f"unknown task {raw!r}")
        return _TASK_ALIASES[raw]
    if name in ("n_points", "seed"):
        return int(raw)
    if name in ("min_depth", "tau"):
        return float(raw)
    return raw


def read_config_file(path: Path) -> dict:
    """``key = value`` per line; ``#`` starts a comment; keys may use ``-`` or ``_``."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{n}: bad value for {key}: {exc}") from exc
    return out


def resolve_config(config_path: str | None, overrides: dict, env: dict | None = None) -> RunConfig:
    """Defaults < config file < GEO_ANCHOR_SEED < explicit command-line flags."""
    env = os.environ if env is None else env
    values: dict = {}
    if config_path:
        if not Path(config_path).is_file():
            raise ConfigError(f"config file not found: {config_path}")
        values.update(read_config_file(Path(config_path)))
    if env.get(SEED_ENV):
        try:
            values["seed"] = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    for k, v in overrides.items():
        if v is not None:
            values[k] = _coerce(k, v) if isinstance(v, str) and k in ("task", "factors") else v
    return RunConfig(**values)
