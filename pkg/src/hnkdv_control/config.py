"""Experiment configuration: nested dataclasses read from and written to TOML."""
from __future__ import annotations

import dataclasses
import hashlib
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import scipy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .trig import TrigPoly

MAX_J = 3
MAX_MODES = 256


class ConfigError(ValueError):
    """Schema or range violation; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


@dataclass
class GridConfig:
    N: int = 64
    M: int = 192


@dataclass
class TimeConfig:
    T: float = 1.0
    n_steps: int = 2000


@dataclass
class TrajectoryConfig:
    depth: int = 3
    amplitude: float = 1.0


@dataclass
class ControlConfig:
    n_time_cells: int = 32
    gamma_ladder: list[float] = field(default_factory=lambda: [1e-2, 1e-4, 1e-6, 1e-8])
    rank_cutoff: int | None = None
    target_cutoff: int = 8


@dataclass
class ModeEntry:
    mode: int
    sin: float = 0.0
    cos: float = 0.0


@dataclass
class StatesConfig:
    u0: list[ModeEntry] = field(default_factory=lambda: [ModeEntry(1, sin=0.5)])
    u1: list[ModeEntry] = field(default_factory=lambda: [ModeEntry(1, cos=0.5), ModeEntry(2, sin=0.2)])


@dataclass
class FixedTimeConfig:
    T_total: float = 0.15
    max_segments: int = 5


@dataclass
class ExperimentConfig:
    j: int = 1
    s: int = 0
    grid: GridConfig = field(default_factory=GridConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    modes: list[int] = field(default_factory=lambda: [1])
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    tau_ladder: list[float] = field(default_factory=lambda: [0.4, 0.2, 0.1, 0.05])
    states: StatesConfig = field(default_factory=StatesConfig)
    fixed_time: FixedTimeConfig = field(default_factory=FixedTimeConfig)
    seed: int = 0
    output_dir: str = "results"

    def __post_init__(self):
        validate(self)

    # --- serialization ---

    def to_dict(self) -> dict:
        return _strip_none(dataclasses.asdict(self))

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def save(self, path: Path) -> None:
        Path(path).write_text(self.to_toml())

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        return _build(cls, data, "")

    @classmethod
    def from_toml(cls, text: str) -> ExperimentConfig:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("", f"invalid TOML: {exc}") from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path: Path) -> ExperimentConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("", f"cannot read config {path}: {exc}") from exc
        return cls.from_toml(text)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()

    # --- derived objects ---

    def state_poly(self, name: str) -> TrigPoly:
        entries = getattr(self.states, name)
        return TrigPoly(
            0.0,
            {e.mode: e.sin for e in entries if e.sin},
            {e.mode: e.cos for e in entries if e.cos},
        )


def _strip_none(obj):
    if isinstance(obj, dict):
        return {k: _strip_none(v) for k, v in obj.items() if v is not None}
    if isinstance(obj, list):
        return [_strip_none(v) for v in obj]
    return obj


def _check_scalar(value, tp, path):
    if tp is bool or isinstance(value, bool):
        raise ConfigError(path, f"expected {tp.__name__}, got {value!r}")
    if tp is int:
        if not isinstance(value, int):
            raise ConfigError(path, f"expected integer, got {value!r}")
        return value
    if tp is float:
        if not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected string, got {value!r}")
        return value
    raise TypeError(tp)


_TYPES = {"int": int, "float": float, "str": str}


def _parse_type(annotation: str):
    """Resolve the string annotations used in this module."""
    a = annotation.replace(" ", "")
    optional = a.endswith("|None")
    if optional:
        a = a[: -len("|None")]
    if a.startswith("list[") and a.endswith("]"):
        return ("list", _parse_type(a[5:-1])[1], optional)
    if a in _TYPES:
        return ("scalar", _TYPES[a], optional)
    return ("dataclass", globals()[a], optional)


def _build(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a table, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, "unknown key")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        kind, tp, _ = _parse_type(fields[name].type)
        if kind == "dataclass":
            kwargs[name] = _build(tp, value, sub)
        elif kind == "list":
            if not isinstance(value, list):
                raise ConfigError(sub, "expected a list")
            if dataclasses.is_dataclass(tp):
                kwargs[name] = [_build(tp, v, f"{sub}[{i}]") for i, v in enumerate(value)]
            else:
                kwargs[name] = [_check_scalar(v, tp, f"{sub}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = _check_scalar(value, tp, sub)
    if cls is ExperimentConfig:
        return _construct(cls, kwargs)
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(path, str(exc)) from exc


def _construct(cls, kwargs):
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError("", str(exc)) from exc


def validate(cfg: ExperimentConfig) -> None:
    def need(cond, path, msg):
        if not cond:
            raise ConfigError(path, msg)

    need(1 <= cfg.j <= MAX_J, "j", f"must lie in 1..{MAX_J}")
    need(cfg.s >= 0, "s", "must be >= 0")
    need(2 <= cfg.grid.N <= MAX_MODES, "grid.N", f"must lie in 2..{MAX_MODES}")
    need(cfg.grid.M >= 2 * cfg.grid.N + 2, "grid.M", "must be >= 2N + 2")
    need(cfg.time.T > 0, "time.T", "must be positive")
    need(cfg.time.n_steps >= 1, "time.n_steps", "must be >= 1")
    need(len(cfg.modes) > 0, "modes", "must be non-empty")
    for i, m in enumerate(cfg.modes):
        need(1 <= m <= cfg.grid.N, f"modes[{i}]", "levels must lie in 1..N (mode 0 is excluded)")
    need(len(set(cfg.modes)) == len(cfg.modes), "modes", "duplicate level")
    need(cfg.trajectory.depth >= 1, "trajectory.depth", "must be >= 1")
    need(cfg.trajectory.amplitude > 0, "trajectory.amplitude", "must be positive")
    c = cfg.control
    need(c.n_time_cells >= 1, "control.n_time_cells", "must be >= 1")
    need(len(c.gamma_ladder) > 0, "control.gamma_ladder", "must be non-empty")
    for i, g in enumerate(c.gamma_ladder):
        need(g > 0, f"control.gamma_ladder[{i}]", "must be positive")
    need(c.rank_cutoff is None or c.rank_cutoff >= 1, "control.rank_cutoff", "must be >= 1")
    need(1 <= c.target_cutoff <= cfg.grid.N, "control.target_cutoff", "must lie in 1..N")
    need(len(cfg.tau_ladder) > 0, "tau_ladder", "must be non-empty")
    for i, t in enumerate(cfg.tau_ladder):
        need(0 < t <= 1, f"tau_ladder[{i}]", "must lie in (0, 1]")
        if i:
            need(t < cfg.tau_ladder[i - 1], f"tau_ladder[{i}]", "ladder must be strictly decreasing")
    for name in ("u0", "u1"):
        for i, e in enumerate(getattr(cfg.states, name)):
            need(e.mode >= 1, f"states.{name}[{i}].mode", "must be >= 1 (states are mean-zero)")
            need(e.mode <= c.target_cutoff, f"states.{name}[{i}].mode", "must not exceed control.target_cutoff")
    need(cfg.fixed_time.T_total > 0, "fixed_time.T_total", "must be positive")
    need(cfg.fixed_time.max_segments >= 1, "fixed_time.max_segments", "must be >= 1")
    need(cfg.seed >= 0, "seed", "must be >= 0")


def versions() -> dict:
    from . import __version__

    out = {
        "hnkdv_control": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }
    try:
        import numba

        out["numba"] = numba.__version__
    except ImportError:
        pass
    return out


def manifest(cfg: ExperimentConfig, command: str, backend: str) -> dict:
    return {
        "command": command,
        "config_sha256": cfg.sha256(),
        "seed": cfg.seed,
        "backend": backend,
        "versions": versions(),
    }
