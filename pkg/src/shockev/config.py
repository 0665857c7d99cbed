"""Run configuration: every tunable parameter of the measurement chain.

Stored as INI. Unknown sections or keys are rejected so that a typo can
never silently fall back to a default.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields

from .blast import BlastConstants, UncertaintyBudget
from .errors import ConfigError
from .frontx import FrontConfig, parse_angles


@dataclass(frozen=True)
class MeasureConfig:
    degree: int = 3
    distances: tuple[float, ...] = (4.0, 6.0, 8.0)

    def __post_init__(self):
        if not 1 <= self.degree <= 6:
            raise ConfigError("polynomial degree must be in 1..6")
        if not self.distances or any(d <= 0 for d in self.distances):
            raise ConfigError("distances must be positive")


@dataclass(frozen=True)
class CalibConfig:
    q: int = 5
    refine: bool = True
    normalize: bool = True

    def __post_init__(self):
        if self.q < 1:
            raise ConfigError("calibration window q must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    front: FrontConfig = field(default_factory=FrontConfig)
    angles: str = "0:360:5"
    workers: int = 1
    measure: MeasureConfig = field(default_factory=MeasureConfig)
    physics: BlastConstants = field(default_factory=BlastConstants)
    budget: UncertaintyBudget = field(default_factory=UncertaintyBudget)
    calib: CalibConfig = field(default_factory=CalibConfig)
    seed: int = 0

    def __post_init__(self):
        parse_angles(self.angles)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    @property
    def angle_range(self):
        return parse_angles(self.angles)

    def ledger(self) -> dict:
        """Flat, fully resolved parameter listing."""
        out = {}
        for section, values in _sections(self).items():
            for key, value in values.items():
                out[f"{section}.{key}"] = value
        return out


def _sections(cfg: RunConfig) -> dict:
    front = asdict(cfg.front)
    front["window_fracs"] = list(cfg.front.window_fracs)
    return {
        "extract": {**front, "angles": cfg.angles, "workers": cfg.workers},
        "measure": {"degree": cfg.measure.degree, "distances": list(cfg.measure.distances)},
        "physics": asdict(cfg.physics),
        "uncertainty": asdict(cfg.budget),
        "calibrate": asdict(cfg.calib),
        "run": {"seed": cfg.seed},
    }


def _fmt(value) -> str:
    if isinstance(value, (list, tuple)):
        return " ".join(_fmt(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def dump_config(cfg: RunConfig) -> str:
    buf = io.StringIO()
    for section, values in _sections(cfg).items():
        buf.write(f"[{section}]\n")
        for key, value in values.items():
            buf.write(f"{key} = {_fmt(value)}\n")
        buf.write("\n")
    return buf.getvalue()


def _coerce(kind, text, key):
    try:
        if kind is bool:
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind == "floats":
            return tuple(float(v) for v in text.replace(",", " ").split())
        return text.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {text!r}") from None


def _kind(dc_field):
    t = dc_field.type if isinstance(dc_field.type, str) else getattr(dc_field.type, "__name__", "")
    if "tuple" in t:
        return "floats"
    return {"float": float, "int": int, "bool": bool}.get(t, str)


def _build(cls, section, name, extra=()):
    known = {f.name: f for f in fields(cls)}
    kw = {}
    for key, text in section.items():
        if key in extra:
            continue
        if key not in known:
            raise ConfigError(f"[{name}] unknown key {key!r}")
        kw[key] = _coerce(_kind(known[key]), text, f"{name}.{key}")
    return cls(**kw)


def load_config(path=None, text: str | None = None) -> RunConfig:
    """Read a run config; missing keys take their defaults."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        if text is not None:
            cp.read_string(text)
        elif path is not None:
            with open(path, encoding="utf-8") as fh:
                cp.read_file(fh)
    except (configparser.Error, OSError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None
    allowed = {"extract", "measure", "physics", "uncertainty", "calibrate", "run"}
    for name in cp.sections():
        if name not in allowed:
            raise ConfigError(f"unknown section [{name}]")
    kw = {}
    if "extract" in cp:
        sec = cp["extract"]
        front = _build(FrontConfig, sec, "extract", extra=("angles", "workers"))
        kw["front"] = front
        if "angles" in sec:
            kw["angles"] = sec["angles"].strip()
        if "workers" in sec:
            kw["workers"] = _coerce(int, sec["workers"], "extract.workers")
    if "measure" in cp:
        kw["measure"] = _build(MeasureConfig, cp["measure"], "measure")
    if "physics" in cp:
        kw["physics"] = _build(BlastConstants, cp["physics"], "physics")
    if "uncertainty" in cp:
        kw["budget"] = _build(UncertaintyBudget, cp["uncertainty"], "uncertainty")
    if "calibrate" in cp:
        kw["calib"] = _build(CalibConfig, cp["calibrate"], "calibrate")
    if "run" in cp:
        sec = cp["run"]
        for key in sec:
            if key != "seed":
                raise ConfigError(f"[run] unknown key {key!r}")
        kw["seed"] = _coerce(int, sec.get("seed", "0"), "run.seed")
    return RunConfig(**kw)
