"""Run configuration: an INI file (``key = value`` under sections) or a run manifest.

Sections and keys, with defaults::

    [run]
    mode = nonstationary          # or stationary
    seed = 0
    particles = 1000
    nugget = 1e-7
    aggregation = sd-plus-var     # or total-variance
    predictive = exact            # or plugin
    threads = 1
    timing = true                 # false writes seconds = 0 so traces are byte-reproducible
    fit_moves = 10                # rejuvenation sweeps for fit and diagnose
    moves = 1                     # sweeps after every sequential update
    init_moves = 10               # sweeps right after initialization in sequential runs

    [truth]
    function = peak               # a name from list-functions, or
    file = lift.csv               # an axis1,axis2,value grid (relative to the config file)

    [design]
    initial = grid                # grid | lhd | subset | file
    t0 = 4                        # size of an lhd or subset start
    grid_n = 15                   # points per axis of the grid (initial = grid, or the subset list)
    points_file =                 # x1..xp CSV (initial = file, or the subset list)
    budget =                      # total design size T for sequential runs
    threshold =                   # optional max-sd stopping threshold
    pool = lhd                    # remaining | grid | lhd | file
    pool_size = 1000              # lhd size or points per grid axis
    pool_file =

    [prior]
    a = 4
    b = 2
    mu_phi = 0.5
    nu_phi = 0.25
    m_phit = 0.5
    v_phit = 0.25

    [eval]
    kind = grid                   # grid | lhd
    size = 200                    # points per axis (grid) or LHD size
    rmse_every = 1                # trace RMSE cadence; 0 = only the final value
"""

from __future__ import annotations

import configparser
import json
from io import StringIO
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .kernels import DEFAULT_NUGGET
from .particles import AGGREGATIONS, MODES
from .predict import PREDICTIVE_FORMS, PriorConfig


class ConfigError(ValueError):
    pass


SECTIONS = {
    "run": ["mode", "seed", "particles", "nugget", "aggregation", "predictive", "threads", "timing",
            "fit_moves", "moves", "init_moves"],
    "truth": ["function", "file"],
    "design": ["initial", "t0", "grid_n", "points_file", "budget", "threshold", "pool", "pool_size", "pool_file"],
    "prior": ["a", "b", "mu_phi", "nu_phi", "m_phit", "v_phit"],
    "eval": ["kind", "size", "rmse_every"],
}
# key names used in RunConfig where they differ from the file keys
ALIASES = {
    ("truth", "function"): "truth_function",
    ("truth", "file"): "truth_file",
    ("eval", "kind"): "eval_kind",
    ("eval", "size"): "eval_size",
}


@dataclass
class RunConfig:
    mode: str = "nonstationary"
    seed: int = 0
    particles: int = 1000
    nugget: float = DEFAULT_NUGGET
    aggregation: str = "sd-plus-var"
    predictive: str = "exact"
    threads: int = 1
    timing: bool = True
    fit_moves: int = 10
    moves: int = 1
    init_moves: int = 10
    truth_function: str | None = None
    truth_file: str | None = None
    initial: str = "grid"
    t0: int | None = None
    grid_n: int | None = None
    points_file: str | None = None
    budget: int | None = None
    threshold: float | None = None
    pool: str = "lhd"
    pool_size: int = 1000
    pool_file: str | None = None
    a: float = 4.0
    b: float = 2.0
    mu_phi: float = 0.5
    nu_phi: float = 0.25
    m_phit: float = 0.5
    v_phit: float = 0.25
    eval_kind: str = "grid"
    eval_size: int = 200
    rmse_every: int = 1

    @property
    def prior(self) -> PriorConfig:
        return PriorConfig(self.a, self.b, self.mu_phi, self.nu_phi, self.m_phit, self.v_phit)

    def validate(self) -> "RunConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.predictive not in PREDICTIVE_FORMS:
            raise ConfigError(f"predictive must be one of {PREDICTIVE_FORMS}, got {self.predictive!r}")
        if (self.truth_function is None) == (self.truth_file is None):
            raise ConfigError("give exactly one of [truth] function or [truth] file")
        if self.initial not in ("grid", "lhd", "subset", "file"):
            raise ConfigError(f"[design] initial must be grid, lhd, subset or file, got {self.initial!r}")
        if self.pool not in ("remaining", "grid", "lhd", "file"):
            raise ConfigError(f"[design] pool must be remaining, grid, lhd or file, got {self.pool!r}")
        if self.eval_kind not in ("grid", "lhd"):
            raise ConfigError(f"[eval] kind must be grid or lhd, got {self.eval_kind!r}")
        for name in ("particles", "threads", "eval_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("fit_moves", "moves", "init_moves", "rmse_every", "seed"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.nugget < 0:
            raise ConfigError("nugget must be non-negative")
        if self.threshold is not None and self.threshold <= 0:
            raise ConfigError("threshold must be positive")
        try:
            self.prior
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def to_sections(self) -> dict:
        """Nested {section: {key: value}} echo with every resolved value."""
        out = {}
        for section, keys in SECTIONS.items():
            out[section] = {key: getattr(self, ALIASES.get((section, key), key)) for key in keys}
        return out


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, raw):
    if raw is None:
        return None
    if isinstance(raw, str):
        raw = raw.strip()
        if raw == "" or raw.lower() == "none":
            return None
    kind = _TYPES[name]
    try:
        if "bool" in kind:
            if isinstance(raw, bool):
                return raw
            val = str(raw).lower()
            if val in ("1", "true", "yes", "on"):
                return True
            if val in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if "int" in kind:
            f = float(raw)
            if f != int(f):
                raise ValueError(raw)
            return int(f)
        if "float" in kind:
            return float(raw)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {raw!r} for {name}") from None


def from_sections(sections: dict, base_dir: Path | None = None) -> RunConfig:
    values = {}
    for section, items in sections.items():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in items.items():
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            name = ALIASES.get((section, key), key)
            val = _coerce(name, raw)
            if val is None:
                continue
            if name in ("truth_file", "points_file", "pool_file") and base_dir is not None:
                path = Path(val)
                val = str(path if path.is_absolute() else (base_dir / path).resolve())
            values[name] = val
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    """Read an INI config, or the ``config`` block of a JSON run manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            manifest = json.loads(text)
            sections = manifest["config"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"{path}: not a run manifest ({exc})") from None
        return from_sections(sections, path.parent.resolve())
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    return from_sections(sections, path.parent.resolve())


def dump_ini(cfg: RunConfig) -> str:
    """INI text that loads back to ``cfg``."""
    parser = configparser.ConfigParser(interpolation=None)
    for section, items in cfg.to_sections().items():
        parser[section] = {k: ("" if v is None else str(v)) for k, v in items.items()}
    buf = StringIO()
    parser.write(buf)
    return buf.getvalue()


def as_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
