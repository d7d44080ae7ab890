"""Loading the ``key = value`` experiment configuration file.

Three sections are recognised::

    [corridor]
    n_intersections = 2
    arrival_rate = 0.1

    [train]
    episodes = 400
    hidden_sizes = 64, 64

    [plan]
    target_rates = 0, 0.1, 0.3, 0.5
    algorithms = dpus, in_dqn
    seeds = 0, 1, 2, 3, 4

Keys are the field names of :class:`CorridorConfig`, :class:`TrainConfig`
and :class:`ExperimentPlan`.  Anything missing takes its default; unknown
keys are rejected.
"""

from __future__ import annotations

import configparser
import difflib
from dataclasses import MISSING, dataclass, field, fields
from pathlib import Path

from .learners import LEARNERS, TrainConfig
from .sim import CorridorConfig


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentPlan:
    target_rates: tuple = (0.0, 0.1, 0.3, 0.5)
    demand_multipliers: tuple = ()
    algorithms: tuple = ("dpus", "in_dqn", "cen_dqn", "co_dqn")
    seeds: tuple = (0,)
    output_dir: str = "runs"
    calibration_seeds: int = 20
    calibration_tolerance: float = 0.05
    overwrite: bool = False
    record_wall_time: bool = False
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig, metadata={"section": False})
    corridor: CorridorConfig = field(default_factory=CorridorConfig, metadata={"section": False})

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.algorithms:
            raise ConfigError("algorithms: at least one algorithm is required")
        for a in self.algorithms:
            if a not in LEARNERS:
                raise ConfigError(f"algorithms: unknown algorithm {a!r} "
                                  f"(choose from {', '.join(LEARNERS)})")
        if not self.seeds:
            raise ConfigError("seeds: at least one seed is required")
        if any(s < 0 for s in self.seeds):
            raise ConfigError("seeds: seeds must be non-negative")
        if not self.target_rates:
            raise ConfigError("target_rates: at least one scenario is required")
        if any(not 0.0 <= r <= 1.0 for r in self.target_rates):
            raise ConfigError("target_rates: rates must lie in [0, 1]")
        if self.demand_multipliers and len(self.demand_multipliers) != len(self.target_rates):
            raise ConfigError("demand_multipliers: must match target_rates in length")
        if self.calibration_seeds < 1 or self.workers < 1:
            raise ConfigError("calibration_seeds and workers must be >= 1")

    @property
    def scenarios(self) -> list[tuple]:
        """``(target_rate, demand_multiplier or None)`` pairs."""
        mults = self.demand_multipliers or (None,) * len(self.target_rates)
        return list(zip(self.target_rates, mults))


_SECTIONS = {"corridor": CorridorConfig, "train": TrainConfig, "plan": ExperimentPlan}


def _default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def _parse_scalar(text: str, kind: type):
    if kind is bool:
        low = text.lower()
        if low not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return low == "true"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _parse_value(text: str, default, name: str):
    text = text.strip()
    if isinstance(default, tuple):
        items = [t.strip() for t in text.split(",") if t.strip()]
        kinds = {type(d) for d in default} or {str}
        kind = kinds.pop() if len(kinds) == 1 else str
        if name in ("target_rates", "demand_multipliers"):
            kind = float
        elif name in ("seeds", "hidden_sizes"):
            kind = int
        return tuple(_parse_scalar(t, kind) for t in items)
    if default is None:  # optional float fields
        return None if text.lower() in ("", "none") else float(text)
    return _parse_scalar(text, type(default))


def _section_values(parser, section: str, cls) -> dict:
    known = {f.name: f for f in fields(cls) if f.metadata.get("section", True)}
    out = {}
    for key, raw in parser.items(section):
        if key not in known:
            hint = difflib.get_close_matches(key, known, n=1)
            msg = f"[{section}] unknown key {key!r}"
            if hint:
                msg += f"; did you mean {hint[0]!r}?"
            raise ConfigError(msg)
        try:
            out[key] = _parse_value(raw, _default(known[key]), key)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {key}: {exc}") from None
    return out


def parse_config(text: str, source: str = "<config>"):
    """Parse configuration text; see :func:`load_config`."""
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{source}: parse error at line {exc.lineno}: "
                          f"expected a [section] header, got {exc.line.strip()!r}") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{source}: parse error at line {lineno}: "
                          f"{line.strip()!r} is not a 'key = value' pair") from None
    except configparser.Error as exc:
        raise ConfigError(f"{source}: parse error: {exc}") from None
    for section in parser.sections():
        if section not in _SECTIONS:
            hint = difflib.get_close_matches(section, _SECTIONS, n=1)
            raise ConfigError(f"unknown section [{section}]"
                              + (f"; did you mean [{hint[0]}]?" if hint else ""))
    values = {
        name: _section_values(parser, name, cls) if parser.has_section(name) else {}
        for name, cls in _SECTIONS.items()
    }
    try:
        corridor = CorridorConfig(**values["corridor"])
    except ValueError as exc:
        raise ConfigError(f"[corridor] {exc}") from None
    try:
        train = TrainConfig(**values["train"])
    except ValueError as exc:
        raise ConfigError(f"[train] {exc}") from None
    try:
        plan = ExperimentPlan(**values["plan"], train=train, corridor=corridor)
    except ValueError as exc:
        raise ConfigError(f"[plan] {exc}") from None
    return corridor, train, plan


def load_config(path):
    """Read and validate a configuration file.

    Returns ``(CorridorConfig, TrainConfig, ExperimentPlan)`` with every
    default filled in.  Raises :class:`ConfigError` on a missing file, a
    parse error (with line number), an unknown key or an invalid value.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
