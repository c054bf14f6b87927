"""Simulation configuration and its ``key = value`` file format.

A config file is line oriented::

    # falling sphere, smoothed contact
    scenario = falling-sphere-1d
    model = smoothed
    kappa = 100
    param.h0 = 0.8

Blank lines and ``#`` comments are ignored. ``param.<name>`` entries override
scenario parameters. Every field has a default, so an empty file is valid.
The same lines, prefixed with ``# ``, form the metadata header of every CSV the
CLI writes; ``parse_config_lines(..., header=True)`` reads them back into an
identical config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

MODELS = ("soft", "hard", "smoothed")
RELAXATIONS = ("determinant", "spectral", "diagonal")
SCHEDULES = ("constant", "geometric")
TARGETS = ("final_h", "final_v")

# hard/smoothed models get armature on joint-like coordinates; soft gets none
DEFAULT_ARMATURE = 0.01


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is the 1-based source line if known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class SimConfig:
    scenario: str = "falling-sphere-1d"
    dt: float = 0.01
    gravity: float = 9.81
    model: str = "smoothed"
    kp: float = 12e3
    kd: float = 3.0
    kf: float = 9e2
    mu: float = 0.8
    kappa: float = 100.0
    solver_iters: int = 8
    relaxation: str = "diagonal"
    warm_start: bool = False
    toi: bool = False
    armature: float | None = None
    seed: int = 0
    # episode length override in seconds; None keeps the scenario default
    horizon: float | None = None
    # smoothing-lab sweeps
    sigma: float = 0.02
    samples: int = 100
    antithetic: bool = False
    grid_min: float = 0.1
    grid_max: float = 2.0
    grid_points: int = 200
    sweep_target: str = "final_v"
    # trajectory optimisation
    task: str = "hopper-hop"
    epochs: int = 200
    lr: float = 1e-3
    schedule: str = "constant"
    kappa_end: float = 1000.0
    trunc: int | None = None
    eval_model: str = "hard"
    adaptive: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        validate(self)

    @property
    def effective_armature(self) -> float:
        if self.armature is not None:
            return self.armature
        return 0.0 if self.model == "soft" else DEFAULT_ARMATURE

    @property
    def smoothing(self) -> float | None:
        """Sigmoid stiffness for the solver, or ``None`` for the unit step."""
        return self.kappa if self.model == "smoothed" else None

    def with_(self, **changes) -> SimConfig:
        return replace(self, **changes)

    def to_lines(self) -> list[str]:
        lines = []
        for f in fields(self):
            if f.name == "params":
                continue
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        for k in sorted(self.params):
            lines.append(f"param.{k} = {_format(self.params[k])}")
        return lines


def validate(cfg: SimConfig, line: int | None = None) -> None:
    def need(ok: bool, msg: str):
        if not ok:
            raise ConfigError(msg, line)

    need(cfg.dt > 0 and math.isfinite(cfg.dt), "dt must satisfy dt > 0")
    need(math.isfinite(cfg.gravity), "gravity must be finite")
    need(cfg.model in MODELS, f"model must be one of {', '.join(MODELS)}")
    need(cfg.eval_model in MODELS, f"eval_model must be one of {', '.join(MODELS)}")
    need(cfg.kp > 0, "kp must satisfy k_p > 0")
    need(cfg.kd >= 0, "kd must satisfy k_d >= 0")
    need(cfg.kf >= 0, "kf must satisfy k_f >= 0")
    need(cfg.mu >= 0, "mu must satisfy mu >= 0")
    need(cfg.kappa > 0, "kappa must satisfy kappa > 0")
    need(
        cfg.schedule != "geometric" or cfg.kappa_end >= cfg.kappa,
        "kappa_end must satisfy kappa <= kappa_end for a geometric schedule",
    )
    need(cfg.solver_iters >= 1, "solver_iters must be >= 1")
    need(cfg.relaxation in RELAXATIONS, f"relaxation must be one of {', '.join(RELAXATIONS)}")
    need(cfg.armature is None or cfg.armature >= 0, "armature must be >= 0")
    need(cfg.seed >= 0, "seed must be a non-negative integer")
    need(cfg.horizon is None or cfg.horizon >= 0, "horizon must be >= 0")
    need(cfg.sigma > 0, "sigma must be > 0")
    need(cfg.samples >= 1, "samples must be >= 1")
    need(cfg.grid_points >= 1, "grid_points must be >= 1")
    need(cfg.grid_max > cfg.grid_min or cfg.grid_points == 1, "grid_max must exceed grid_min")
    need(cfg.sweep_target in TARGETS, f"sweep_target must be one of {', '.join(TARGETS)}")
    need(cfg.epochs >= 0, "epochs must be >= 0")
    need(cfg.lr > 0, "lr must be > 0")
    need(cfg.schedule in SCHEDULES, f"schedule must be one of {', '.join(SCHEDULES)}")
    need(cfg.trunc is None or cfg.trunc >= 1, "trunc must be >= 1")


def _format(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "on" if v else "off"
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(SimConfig)}


def _convert(key: str, raw: str, lineno: int):
    kind = _TYPES[key]
    optional = "None" in kind
    if optional and raw == "auto":
        return None
    try:
        if kind.startswith("float"):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError
            return v
        if kind.startswith("int"):
            return int(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("on", "true", "yes", "1"):
                return True
            if low in ("off", "false", "no", "0"):
                return False
            raise ValueError
    except ValueError:
        expected = kind.split(" ")[0]
        raise ConfigError(f"{key}: cannot parse {raw!r} as {expected}", lineno) from None
    return raw


def _param_value(raw: str):
    try:
        return float(raw)
    except ValueError:
        return raw


def parse_config_lines(lines, base: SimConfig | None = None, header: bool = False) -> SimConfig:
    """Build a config from ``key = value`` lines.

    With ``header=True`` the lines come from an echoed CSV header
    (``# key = value``): a leading ``#`` followed by a known key is unwrapped
    instead of being skipped as a comment.
    """
    values: dict = {}
    params: dict = dict(base.params) if base is not None else {}
    last_line = None
    for lineno, line in enumerate(lines, start=1):
        text = line.strip()
        if text.startswith("#"):
            if not header:
                continue
            inner = text.lstrip("#").strip()
            key = inner.split("=", 1)[0].strip()
            if "=" in inner and (key in _TYPES or key.startswith("param.")):
                text = inner
            else:
                continue
        text = text.split(" #", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"expected 'key = value', got {text!r}", lineno)
        key, raw = (s.strip() for s in text.split("=", 1))
        if key.startswith("param."):
            params[key[len("param."):]] = _param_value(raw)
            continue
        if key not in _TYPES or key == "params":
            raise ConfigError(f"unknown key {key!r}", lineno)
        values[key] = (_convert(key, raw, lineno), lineno)
        last_line = lineno
    kwargs = {k: v for k, (v, _) in values.items()}
    try:
        if base is None:
            return SimConfig(**kwargs, params=params)
        return replace(base, **kwargs, params=params)
    except ConfigError as exc:
        # validation messages start with the offending field name
        msg = str(exc)
        bad = msg.split(" ", 1)[0]
        lineno = values[bad][1] if bad in values else last_line
        raise ConfigError(msg, lineno) from None


def parse_config(path) -> SimConfig:
    text = Path(path).read_text()
    return parse_config_lines(text.splitlines())
