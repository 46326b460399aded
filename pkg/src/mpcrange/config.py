"""Scenario configuration: INI-style sections, SI values with unit suffixes.

Example::

    [room]
    length = 7m
    height = 3m

    [channel]
    bandwidth = 1GHz
    sinr_threshold = 0dB

Bare numbers are read in SI base units.  A suffix whose dimension does not
match the key (``height = 3ns``) is a parse error.
"""

from __future__ import annotations

import configparser
import os
import re
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .channel import ChannelParams
from .geom import Room
from .mle import SolverSettings

OUTPUT_DIR_ENV = "MPCRANGE_OUTPUT_DIR"


class ConfigError(ValueError):
    pass


_UNITS = {
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12},
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "level": {"dB": 1.0},
    "number": {},
}
_QUANTITY = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]*)\s*$")


def parse_quantity(text: str, dimension: str) -> float:
    """Parse ``"1.2m"``, ``"1GHz"``, ``"0dB"`` or a bare number into SI units."""
    m = _QUANTITY.match(text)
    if not m:
        raise ConfigError(f"cannot parse quantity {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    if not unit:
        return value
    table = _UNITS[dimension]
    if unit not in table:
        allowed = ", ".join(table) or "none"
        raise ConfigError(f"unit {unit!r} in {text!r} does not fit a {dimension} (allowed: {allowed})")
    return value * table[unit]


def _parse_list(text: str, dimension: str, sep: str = ",") -> tuple:
    return tuple(parse_quantity(t, dimension) for t in text.split(sep) if t.strip())


def _parse_point(text: str) -> tuple:
    p = _parse_list(text, "length")
    if len(p) != 3:
        raise ConfigError(f"a position needs three coordinates, got {text!r}")
    return p


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ScenarioConfig:
    # room
    length: float = 7.0
    width: float = 6.0
    height: float = 3.0
    max_bounces: int = 3
    # nodes
    node_a: tuple = (4.5, 2.0, 1.2)
    observers: tuple = ((1.0, 2.5, 1.2), (1.5, 5.0, 1.2), (5.5, 5.0, 1.2))
    # channel / solver
    channel: ChannelParams = field(default_factory=ChannelParams)
    solver: SolverSettings = field(default_factory=SolverSettings)
    # experiments
    grid_pitch: float = 0.1
    trials: int = 1000
    sweep_trials: int = 100_000
    seed: int = 1
    sync: bool = True
    noise: bool = False
    epsilon: float = 0.0
    radii: tuple = tuple(np.round(np.arange(0.25, 3.01, 0.25), 2))
    angles: int = 360
    sweep_k: tuple = (2, 3, 4, 6, 8, 12, 16, 18, 24, 32)
    sweep_sigma_ratio: tuple = (0.0, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0)
    k_sweep_sigma_ratio: float = 0.5
    sigma_sweep_k: int = 18
    threads: int = 1
    output_dir: str = ""

    def __post_init__(self):
        if self.channel.bandwidth <= 0:
            raise ConfigError("bandwidth must be positive")
        if self.trials < 1 or self.sweep_trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.observers:
            raise ConfigError("at least one observer is required")
        room = self.room
        for label, p in [("node_a", self.node_a)] + [(f"observer {i}", o) for i, o in enumerate(self.observers)]:
            if not room.contains(np.asarray(p, dtype=float)):
                raise ConfigError(f"{label} {tuple(p)} is not inside the room")

    @property
    def room(self) -> Room:
        return Room.box(self.length, self.width, self.height)

    def with_observers(self, n: int) -> "ScenarioConfig":
        if not 1 <= n <= len(self.observers):
            raise ConfigError(f"requested {n} observers, config defines {len(self.observers)}")
        return replace(self, observers=self.observers[:n])

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_DIR_ENV, "") or ".")


# key -> (section, dimension or parser)
_SCENARIO_KEYS = {
    "length": ("room", "length"),
    "width": ("room", "length"),
    "height": ("room", "length"),
    "max_bounces": ("room", int),
    "node_a": ("nodes", _parse_point),
    "observers": ("nodes", lambda t: tuple(_parse_point(p) for p in t.split(";") if p.strip())),
    "grid_pitch": ("experiment", "length"),
    "trials": ("experiment", int),
    "sweep_trials": ("experiment", int),
    "seed": ("experiment", int),
    "sync": ("experiment", _parse_bool),
    "noise": ("experiment", _parse_bool),
    "epsilon": ("experiment", "time"),
    "radii": ("experiment", lambda t: _parse_list(t, "length")),
    "angles": ("experiment", int),
    "sweep_k": ("experiment", lambda t: tuple(int(v) for v in _parse_list(t, "number"))),
    "sweep_sigma_ratio": ("experiment", lambda t: _parse_list(t, "number")),
    "k_sweep_sigma_ratio": ("experiment", "number"),
    "sigma_sweep_k": ("experiment", int),
    "threads": ("experiment", int),
    "output_dir": ("experiment", str),
}
_CHANNEL_KEYS = {
    "bandwidth": "frequency",
    "pdp_rise": "time",
    "pdp_decay": "time",
    "pdp_power": "number",
    "sinr_threshold": "level",
    "reflection_loss": "level",
    "reference_snr": "level",
    "carrier_frequency": "frequency",
    "noise_density": "number",
    "pulse_duration": "time",
}
_SOLVER_KEYS = {
    "max_iterations": int,
    "gtol": "number",
    "xtol": "number",
    "multistart": int,
    "d_min": "length",
    "max_step": "number",
    "max_halvings": int,
    "agree_tol": "number",
}


def _convert(raw: str, kind):
    if isinstance(kind, str):
        return parse_quantity(raw, kind)
    if kind is int:
        v = parse_quantity(raw, "number")
        if v != int(v):
            raise ConfigError(f"expected an integer, got {raw!r}")
        return int(v)
    return kind(raw)


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";;"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    known = {"room", "nodes", "channel", "solver", "experiment"}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigError(f"{source}: unknown section [{sec}]")
    scenario, channel, solver = {}, {}, {}
    for sec in cp.sections():
        for key, raw in cp.items(sec):
            try:
                if sec == "channel" and key in _CHANNEL_KEYS:
                    channel[key] = _convert(raw, _CHANNEL_KEYS[key])
                elif sec == "solver" and key in _SOLVER_KEYS:
                    solver[key] = _convert(raw, _SOLVER_KEYS[key])
                elif key in _SCENARIO_KEYS and _SCENARIO_KEYS[key][0] == sec:
                    scenario[key] = _convert(raw, _SCENARIO_KEYS[key][1])
                else:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
            except ConfigError as exc:
                raise ConfigError(f"{source} [{sec}] {key}: {exc}") from None
            except ValueError as exc:
                raise ConfigError(f"{source} [{sec}] {key}: {exc}") from None
    try:
        return ScenarioConfig(channel=ChannelParams(**channel), solver=SolverSettings(**solver), **scenario)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    """Render ``cfg`` in the config file format (round-trips through :func:`parse_config`)."""

    def fmt(v):
        if isinstance(v, bool):
            return "true" if v else "false"
        return repr(float(v)) if isinstance(v, float) else str(v)

    def pt(p):
        return ", ".join(f"{fmt(float(c))}m" for c in p)

    ch, so = cfg.channel, cfg.solver
    lines = [
        "[room]",
        f"length = {fmt(cfg.length)}m",
        f"width = {fmt(cfg.width)}m",
        f"height = {fmt(cfg.height)}m",
        f"max_bounces = {cfg.max_bounces}",
        "",
        "[nodes]",
        f"node_a = {pt(cfg.node_a)}",
        "observers = " + "; ".join(pt(o) for o in cfg.observers),
        "",
        "[channel]",
    ]
    for f in fields(ChannelParams):
        v = getattr(ch, f.name)
        if v is None:
            continue
        unit = {"frequency": "Hz", "time": "s", "level": "dB"}.get(_CHANNEL_KEYS[f.name], "")
        lines.append(f"{f.name} = {fmt(v)}{unit}")
    lines += ["", "[solver]"]
    for f in fields(SolverSettings):
        unit = "m" if f.name == "d_min" else ""
        lines.append(f"{f.name} = {fmt(getattr(so, f.name))}{unit}")
    lines += [
        "",
        "[experiment]",
        f"grid_pitch = {fmt(cfg.grid_pitch)}m",
        f"trials = {cfg.trials}",
        f"sweep_trials = {cfg.sweep_trials}",
        f"seed = {cfg.seed}",
        f"sync = {fmt(cfg.sync)}",
        f"noise = {fmt(cfg.noise)}",
        f"epsilon = {fmt(cfg.epsilon)}s",
        "radii = " + ", ".join(f"{fmt(float(r))}m" for r in cfg.radii),
        f"angles = {cfg.angles}",
        "sweep_k = " + ", ".join(str(k) for k in cfg.sweep_k),
        "sweep_sigma_ratio = " + ", ".join(fmt(float(s)) for s in cfg.sweep_sigma_ratio),
        f"k_sweep_sigma_ratio = {fmt(cfg.k_sweep_sigma_ratio)}",
        f"sigma_sweep_k = {cfg.sigma_sweep_k}",
        f"threads = {cfg.threads}",
    ]
    if cfg.output_dir:
        lines.append(f"output_dir = {cfg.output_dir}")
    return "\n".join(lines) + "\n"
