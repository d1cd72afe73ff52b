"""Scenario configuration: a closed INI schema.

Sections and keys are fixed; unknown sections or keys are rejected. Every key
can be overridden from the command line by a flag of the same name
(``--steps 50``, ``--n_primary 720``). Relative paths are resolved against
the directory of the config file.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

from . import nlos, scenes
from .explore import MODES, ExploreSettings
from .gridmap import GridFormatError, OccupancyGrid, load_grid
from .predict import DEFAULT_TIMEOUT, predict_external
from .spad_sim import SensorConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    parse: Callable
    default: object
    help: str


def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _ints(s):
    return tuple(int(v) for v in str(s).replace(",", " ").split())


def _poses(s):
    out = []
    for part in str(s).split(";"):
        if part.strip():
            xy = _ints(part)
            if len(xy) != 2:
                raise ValueError(f"pose {part.strip()!r} is not 'x,y'")
            out.append(xy)
    if not out:
        raise ValueError("need at least one pose")
    return tuple(out)


def _params(s):
    """``name=value`` pairs separated by spaces or commas; values are ints."""
    out = {}
    for tok in str(s).replace(",", " ").split():
        name, sep, value = tok.partition("=")
        if not sep:
            raise ValueError(f"generator parameter {tok!r} is not name=value")
        out[name] = int(value)
    return out


def _mode(s):
    if s not in MODES:
        raise ValueError(f"must be one of {', '.join(MODES)}")
    return s


def _method(s):
    if s not in ("builtin", "external"):
        raise ValueError("must be 'builtin' or 'external'")
    return s


_SENSOR = SensorConfig()

SCHEMA = (
    Key("scenario", "map", str, "", "ground-truth PGM (exclusive with generator)"),
    Key("scenario", "generator", str, "", f"scene kind: {', '.join(scenes.KINDS)}"),
    Key("scenario", "generator_params", _params, {}, "generator parameters, e.g. 'n_x=3 n_y=2'"),
    Key("scenario", "resolution", float, 0.1, "meters per cell"),
    Key("scenario", "start", _poses, None, "start cells 'x,y; x,y; ...'"),
    Key("scenario", "mode", _mode, "NLOS", f"exploration mode: {', '.join(MODES)}"),
    Key("scenario", "steps", int, 1000, "step budget"),
    Key("scenario", "seed", int, 0, "seed (generators; recorded in outputs)"),
    Key("scenario", "output", str, "out", "output directory"),
    Key("scenario", "snapshot_interval", int, 0, "write a PNG every N steps (0 = never)"),
    Key("sensor", "n_primary", int, _SENSOR.n_primary, "primary rays per scan"),
    Key("sensor", "m_secondary", int, _SENSOR.m_secondary, "secondary rays per primary hit"),
    Key("sensor", "max_range", float, _SENSOR.max_range, "range in meters"),
    Key("sensor", "pulse_energy", float, _SENSOR.pulse_energy, "pulse energy per primary ray, J"),
    Key("sensor", "wavelength", float, _SENSOR.wavelength, "laser wavelength, m"),
    Key("sensor", "efficiency", float, _SENSOR.efficiency, "detector efficiency in (0, 1]"),
    Key("sensor", "bin_width", float, _SENSOR.bin_width, "time bin width, s"),
    Key("sensor", "n_bins", int, 0, "histogram bins (0 = cover four ranges)"),
    Key("sensor", "reflectance", float, _SENSOR.reflectance, "uniform albedo in (0, 1]"),
    Key("explore", "lam", float, 1.0, "distance penalty per cell"),
    Key("explore", "percentile", float, nlos.DEFAULT_PERCENTILE, "evidence threshold percentile"),
    Key("explore", "gap", int, nlos.DEFAULT_GAP, "bins between the direct return and NLOS onset"),
    Key("explore", "min_frontier_size", int, 5, "smallest frontier cluster"),
    Key("explore", "replan_interval", int, 20, "replan at least every N steps (0 = never)"),
    Key("explore", "accumulate_evidence", _bool, True, "keep evidence from earlier scans"),
    Key("predictor", "method", _method, "builtin", "builtin or external"),
    Key("predictor", "radii", _ints, (1, 2, 3), "closing radii of the builtin ensemble"),
    Key("predictor", "command", str, "", "external predictor command"),
    Key("predictor", "k", int, 3, "external ensemble size"),
    Key("predictor", "timeout", float, DEFAULT_TIMEOUT, "external predictor timeout, s"),
)

KEYS = {k.name: k for k in SCHEMA}
SECTIONS = tuple(dict.fromkeys(k.section for k in SCHEMA))


@dataclass
class ScenarioConfig:
    values: dict
    base_dir: Path = field(default_factory=Path.cwd)

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def path(self, name) -> Path:
        p = Path(self.values[name]).expanduser()
        return p if p.is_absolute() else self.base_dir / p

    def sensor(self) -> SensorConfig:
        kw = {k.name: self.values[k.name] for k in SCHEMA if k.section == "sensor"}
        if kw["n_bins"] == 0:
            kw["n_bins"] = None
        try:
            return SensorConfig(**kw)
        except ValueError as exc:
            raise ConfigError(f"[sensor] {exc}") from exc

    def settings(self) -> ExploreSettings:
        v = self.values
        predictor = None
        if v["method"] == "external":
            cmd, k, timeout = v["command"], v["k"], v["timeout"]
            predictor = lambda inp: predict_external(inp, cmd, k, timeout)  # noqa: E731
        return ExploreSettings(
            lam=v["lam"],
            min_frontier_size=v["min_frontier_size"],
            replan_interval=v["replan_interval"],
            percentile=v["percentile"],
            gap=v["gap"],
            radii=v["radii"],
            accumulate_evidence=v["accumulate_evidence"],
            predictor=predictor,
        )

    def ground_truth(self) -> OccupancyGrid:
        v = self.values
        if v["map"]:
            path = self.path("map")
            try:
                return load_grid(path, kind="ground_truth", resolution=v["resolution"])
            except FileNotFoundError as exc:
                raise ConfigError(f"[scenario] map: file not found: {path}") from exc
            except (GridFormatError, ValueError) as exc:
                raise ConfigError(f"[scenario] map: {exc}") from exc
        try:
            return scenes.generate(v["generator"], seed=v["seed"], resolution=v["resolution"],
                                   **v["generator_params"])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[scenario] generator: {exc}") from exc


def _convert(key: Key, raw):
    try:
        return key.parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{key.section}] {key.name}: {exc}") from exc


def load_config(path=None, overrides: Optional[dict] = None) -> ScenarioConfig:
    """Read ``path`` (optional), apply ``overrides`` (raw strings keyed by
    field name) and validate."""
    values = {k.name: k.default for k in SCHEMA}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config: file not found: {path}")
        cp = configparser.ConfigParser(interpolation=None, default_section="\x00")
        cp.optionxform = str
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"config: {exc}") from exc
        for section in cp.sections():
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]; expected one of {', '.join(SECTIONS)}")
            for name, raw in cp.items(section):
                key = KEYS.get(name)
                if key is None or key.section != section:
                    raise ConfigError(f"[{section}] {name}: unknown key")
                values[name] = _convert(key, raw)
        base = path.resolve().parent
    for name, raw in (overrides or {}).items():
        if raw is None:
            continue
        key = KEYS.get(name)
        if key is None:
            raise ConfigError(f"{name}: unknown key")
        values[name] = _convert(key, raw)
    cfg = ScenarioConfig(values, base)
    validate(cfg)
    return cfg


def validate(cfg: ScenarioConfig) -> None:
    v = cfg.values
    if bool(v["map"]) == bool(v["generator"]):
        raise ConfigError("[scenario] map: exactly one of map and generator must be set")
    if v["start"] is None:
        raise ConfigError("[scenario] start: at least one start pose is required")
    if v["generator"] and v["generator"] not in scenes.KINDS:
        raise ConfigError(f"[scenario] generator: unknown kind {v['generator']!r}")
    if v["map"] and not cfg.path("map").is_file():
        raise ConfigError(f"[scenario] map: file not found: {cfg.path('map')}")
    for name in ("steps", "snapshot_interval", "replan_interval", "gap", "n_bins"):
        if v[name] < 0:
            raise ConfigError(f"[{KEYS[name].section}] {name}: must be >= 0")
    for name in ("min_frontier_size", "k"):
        if v[name] < 1:
            raise ConfigError(f"[{KEYS[name].section}] {name}: must be >= 1")
    if not v["resolution"] > 0:
        raise ConfigError("[scenario] resolution: must be positive")
    if not 0 < v["percentile"] < 100:
        raise ConfigError("[explore] percentile: must be in (0, 100)")
    if v["lam"] < 0:
        raise ConfigError("[explore] lam: must be >= 0")
    if not v["radii"] or min(v["radii"]) < 0:
        raise ConfigError("[predictor] radii: need one or more radii >= 0")
    if v["method"] == "external" and not v["command"].strip():
        raise ConfigError("[predictor] command: required when method = external")
    if not v["timeout"] > 0:
        raise ConfigError("[predictor] timeout: must be positive")
    cfg.sensor()


def add_flags(parser) -> None:
    """One ``--<key>`` option per schema key, grouped by section."""
    for section in SECTIONS:
        group = parser.add_argument_group(f"[{section}]")
        for k in SCHEMA:
            if k.section == section:
                default = k.default if not isinstance(k.default, (tuple, dict)) or k.default else "-"
                group.add_argument(f"--{k.name}", dest=k.name, default=None, metavar="V",
                                   help=f"{k.help} (default: {default})")


def overrides_from(args) -> dict:
    return {k.name: getattr(args, k.name, None) for k in SCHEMA}
