"""Run configuration: a sectioned ``key = value`` file overridden by flags."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

MODELS = ("lg", "levy", "finite")
ALGORITHMS = ("kalman-ibis", "smc2", "smc2fw")

_INT = {"n_theta", "n_x", "window", "pmmh_sweeps", "seed", "replicates", "steps", "predict_samples", "chunk_size"}
_FLOAT = {"bandwidth", "ess_threshold"}
_BOOL = {"bandwidth_rule_a3"}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs; counts are validated on construction.

    ``params`` are the true parameters used when simulating data (natural
    scale, keyed by name, plus ``tau0`` for the Gaussian model).
    """

    model: str = "lg"
    algo: str = "smc2fw"
    n_theta: int = 500
    n_x: int = 100
    window: int = 125
    bandwidth: float = 0.01
    bandwidth_rule_a3: bool = False
    ess_threshold: float = 0.5
    pmmh_sweeps: int = 1
    seed: int = 0
    replicates: int = 1
    steps: int = 1000
    data: str | None = None
    reference: str | None = None
    out: str = "out"
    predict_samples: int = 0
    chunk_size: int = 256
    bridge_mode: str = "single"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.algo not in ALGORITHMS:
            raise ValueError(f"algo must be one of {ALGORITHMS}, got {self.algo!r}")
        for name in ("n_theta", "n_x", "pmmh_sweeps", "replicates", "steps", "chunk_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if not 0.0 <= self.ess_threshold <= 1.0:
            raise ValueError("ess_threshold must lie in [0, 1]")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.algo == "kalman-ibis" and self.model != "lg":
            raise ValueError("kalman-ibis needs the lg model")
        for name in ("data", "reference"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ValueError(f"{name} file not found: {path}")


def _convert(key: str, value):
    if value is None:
        return None
    if key in _INT:
        return int(value)
    if key in _FLOAT:
        return float(value)
    if key in _BOOL:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in ("1", "true", "yes", "on")
    return value


def parse_params(text: str) -> dict:
    """``"tau=1, lam=2"`` -> ``{"tau": 1.0, "lam": 2.0}``."""
    out = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, _, value = part.partition("=")
        if not _:
            raise ValueError(f"expected key=value in params, got {part!r}")
        out[key.strip()] = float(value)
    return out


def read_config_file(path) -> dict:
    """Flatten every section of an INI-style file into one mapping."""
    parser = configparser.ConfigParser()
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    values = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            key = key.replace("-", "_")
            if section == "params":
                values.setdefault("params", {})[key] = float(value)
            elif key == "params":
                values.setdefault("params", {}).update(parse_params(value))
            else:
                values[key] = value
    return values


def build_config(file_values: dict | None = None, flags: dict | None = None) -> RunConfig:
    """Defaults, then the file, then the flags that were actually given."""
    known = {f.name for f in fields(RunConfig)}
    merged: dict = {}
    for source in (file_values or {}, flags or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in known:
                raise ValueError(f"unknown setting {key!r}")
            if key == "params":
                merged["params"] = {**merged.get("params", {}), **value}
            else:
                merged[key] = _convert(key, value)
    return replace(RunConfig(), **merged) if merged else RunConfig()
