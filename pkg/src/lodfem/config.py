"""Experiment configuration: a JSON document with per-problem defaults."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

PROBLEMS = ("poisson", "bvp", "evp", "kronig_penney", "gpe")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    problem: str = "poisson"
    domain: list[float] = field(default_factory=lambda: [0.0, 0.0, 1.0, 1.0])
    H: list[float] = field(default_factory=lambda: [2.0**-2, 2.0**-3, 2.0**-4, 2.0**-5])
    h: float = 2.0**-6
    k: list[int] = field(default_factory=lambda: [2])
    # when set, k = ceil(m |ln H|) replaces the k list
    m: float | None = None
    full_patches: bool = False
    bc: dict[str, str] = field(default_factory=dict)
    coefficient: dict[str, Any] = field(default_factory=lambda: {"type": "constant", "value": 1.0})
    potential: dict[str, Any] = field(default_factory=lambda: {"type": "none"})
    f: Any = 1.0
    g: Any = None
    q: Any = None
    fs_mode: str = "boundary"
    n_ev: int = 1
    beta: float = 0.0
    delta_tol: float = 1e-9
    max_iter: int = 200
    rhs: str = "corrected"
    eig_method: str = "auto"
    threads: int = 1
    out: str | None = None
    cache_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.problem not in PROBLEMS:
            raise ConfigError(f"unknown problem {self.problem!r}")
        if len(self.domain) != 4:
            raise ConfigError("domain must be [x0, y0, x1, y1]")
        x0, y0, x1, y1 = self.domain
        if not (x1 > x0 and y1 > y0):
            raise ConfigError("domain is degenerate")
        if self.h <= 0 or not self.H:
            raise ConfigError("mesh sizes must be positive")
        for H in self.H:
            for length in (x1 - x0, y1 - y0):
                if not _divides(H, length):
                    raise ConfigError(f"H={H} does not tile a side of length {length}")
            if not _divides(self.h, H):
                raise ConfigError(f"h={self.h} does not divide H={H}")
        if any(int(k) < 0 for k in self.k):
            raise ConfigError("layer counts must be nonnegative")
        if self.rhs not in ("plain", "corrected"):
            raise ConfigError(f"unknown rhs mode {self.rhs!r}")
        if self.fs_mode not in ("boundary", "total", "none"):
            raise ConfigError(f"unknown source corrector mode {self.fs_mode!r}")
        if self.n_ev < 1:
            raise ConfigError("n_ev must be positive")
        if self.beta < 0:
            raise ConfigError("beta must be nonnegative")
        if self.threads < 1:
            raise ConfigError("threads must be positive")
        return self

    def layers(self, H: float, full: int) -> list[int]:
        if self.full_patches:
            return [full]
        if self.m is not None:
            return [int(math.ceil(self.m * abs(math.log(H))))]
        return [int(k) for k in self.k]

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


def _divides(small: float, big: float) -> bool:
    n = round(big / small)
    return n >= 1 and math.isclose(n * small, big, rel_tol=1e-12, abs_tol=1e-14)


DEFAULTS: dict[str, dict[str, Any]] = {
    "poisson": {
        "coefficient": {"type": "checkerboard", "seed": 0, "contrast": 100.0},
    },
    "bvp": {
        "H": [2.0**-2, 2.0**-3, 2.0**-4],
        "k": [2],
        "g": "sin(8*pi*x)*cos(6*pi*y)",
        "f": 1.0,
    },
    "evp": {
        "H": [2.0**-2, 2.0**-3, 2.0**-4],
        "full_patches": True,
        "n_ev": 1,
    },
    "kronig_penney": {
        "domain": [0.0, 0.0, 2.0, 3.0],
        "H": [2.0**-3],
        "k": [1],
        "n_ev": 20,
        "potential": {"type": "kronig_penney", "gamma": 2e4, "wave_k": 8},
    },
    "gpe": {
        "H": [2.0**-2, 2.0**-3],
        "h": 2.0**-5,
        "full_patches": True,
        "beta": 1.0,
        "potential": {"type": "expr", "expr": "50*((x-0.5)**2 + (y-0.5)**2)"},
    },
}


def load_config(problem: str, path: str | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    """Defaults for ``problem``, then the JSON file, then explicit overrides."""
    data: dict[str, Any] = {"problem": problem}
    data.update(DEFAULTS.get(problem, {}))
    if path is not None:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        data.update(doc)
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    try:
        cfg = ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if cfg.problem != problem:
        raise ConfigError(f"config is for {cfg.problem!r}, command is {problem!r}")
    return cfg.validate()
