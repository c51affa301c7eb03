"""Run configuration files and versioned CSV/JSON output.

Config files are INI text. A ``[run]`` section holds the run settings and
optional ``[hardware]`` and ``[timing]`` sections override the preset values.
``include = other.ini`` (relative to the including file) pulls in presets;
keys in the including file win.

Every CSV starts with a ``# emitqec <kind> v<version>`` line and loaders
reject kinds or versions they do not know.
"""
from __future__ import annotations

import configparser
import csv
import json
import subprocess
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import __version__
from .noise import HardwareParams, TimingParams, hardware_set, hardware_set_names
from .protocols import PROTOCOLS

SCHEMA_VERSIONS = {"protocols": 1, "qec": 1, "oracle": 1}


class ConfigError(ValueError):
    pass


class SchemaError(ValueError):
    pass


def _floats(text: str) -> list:
    """'0.1, 0.2' or 'linspace(a, b, n)' or 'logspace(a, b, n)' (exponents)."""
    import numpy as np

    text = text.strip()
    for fn in ("linspace", "logspace"):
        if text.startswith(fn + "(") and text.endswith(")"):
            a, b, n = (s.strip() for s in text[len(fn) + 1 : -1].split(","))
            return [float(v) for v in getattr(np, fn)(float(a), float(b), int(n))]
    return [float(v) for v in text.replace(",", " ").split()]


def _ints(text: str) -> list:
    return [int(v) for v in text.replace(",", " ").split()]


@dataclass
class RunConfig:
    protocol: str = "dc_ghz"
    hardware: HardwareParams = field(default_factory=HardwareParams)
    timing: TimingParams = field(default_factory=TimingParams)
    p: list = field(default_factory=lambda: [0.0])
    alpha: list = field(default_factory=lambda: [0.5])
    alpha_base: list | None = None
    alpha_distil: list | None = None
    es_sets: list | None = None
    T: list | None = None
    pnr: bool = True
    same_detector: bool = False
    d: list = field(default_factory=lambda: [4, 6, 8])
    n_shots: int = 20_000
    cutoff: float = 0.99
    cutoff_scan: list | None = None
    seed: int = 2024
    out: str = "out"

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise ConfigError(f"unregistered protocol {self.protocol!r}")
        for name in self.es_sets or ():
            if name not in hardware_set_names():
                raise ConfigError(f"unknown hardware set {name!r}")
        if self.n_shots < 1:
            raise ConfigError("n_shots must be positive")
        if not 0 < self.cutoff <= 1:
            raise ConfigError("cutoff must lie in (0, 1]")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if not self.alpha:
            raise ConfigError("alpha list is empty")
        # the hardware record carries the first alpha and the detector type of the run
        self.hardware = self.hardware.with_(alpha=self.alpha[0], pnr=self.pnr)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.__dict__.copy() if f.name in ("hardware", "timing") else v
        return out


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys such as T_link are case sensitive
    return cp


def _read_ini(path: Path, seen=()) -> configparser.ConfigParser:
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"include cycle at {path}")
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    own = _parser()
    own.read(path)
    merged = _parser()
    inc = own.get("run", "include", fallback=None)
    if inc:
        merged.read_dict(_read_ini(path.parent / inc, seen + (path,)))
    merged.read_dict(own)
    merged.remove_option("run", "include") if merged.has_section("run") else None
    return merged


_HW_FLOATS = ("alpha", "eta_ph", "mu_i", "f_prep", "p_de", "p_g", "p_m")
_RUN_PARSERS = {
    "protocol": str,
    "p": _floats,
    "alpha": _floats,
    "alpha_base": _floats,
    "alpha_distil": _floats,
    "es_sets": lambda s: s.replace(",", " ").split(),
    "T": _floats,
    "pnr": lambda s: configparser.ConfigParser.BOOLEAN_STATES[s.lower()],
    "same_detector": lambda s: configparser.ConfigParser.BOOLEAN_STATES[s.lower()],
    "d": _ints,
    "n_shots": lambda s: int(float(s)),
    "cutoff": float,
    "cutoff_scan": _floats,
    "seed": int,
    "out": str,
}


def load_config(path, **overrides) -> RunConfig:
    ini = _read_ini(Path(path))
    kw: dict = {}
    if ini.has_section("run"):
        for key, val in ini.items("run"):
            if key not in _RUN_PARSERS and key != "es":
                raise ConfigError(f"unknown run key {key!r}")
            if key != "es":
                try:
                    kw[key] = _RUN_PARSERS[key](val)
                except (KeyError, ValueError) as exc:
                    raise ConfigError(f"bad value for {key}: {val!r}") from exc
    es = ini.get("run", "es", fallback=None)
    try:
        hw = hardware_set(es) if es else HardwareParams()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    timing = TimingParams()
    try:
        if ini.has_section("hardware"):
            hw = hw.with_(**{k: float(v) for k, v in ini.items("hardware") if k in _HW_FLOATS})
        if ini.has_section("timing"):
            timing = timing.with_(**{k: float(v) for k, v in ini.items("timing")})
    except TypeError as exc:
        raise ConfigError(f"unknown hardware or timing key: {exc}") from exc
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(hardware=hw, timing=timing, **kw)


def provenance() -> dict:
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, cwd=Path(__file__).parent, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return {"version": __version__, "git": rev or "unknown"}


# CSV


def write_csv(path, kind: str, rows: list) -> Path:
    if kind not in SCHEMA_VERSIONS:
        raise SchemaError(f"unknown schema {kind!r}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols: list = []
    for r in rows:
        cols += [k for k in r if k not in cols]
    with path.open("w", newline="") as fh:
        fh.write(f"# emitqec {kind} v{SCHEMA_VERSIONS[kind]}\n")
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)
    return path


def read_csv(path, kind: str) -> list:
    with Path(path).open() as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[:2] != ["#", "emitqec"]:
            raise SchemaError(f"{path}: missing schema header")
        if head[2] != kind:
            raise SchemaError(f"{path}: expected {kind} rows, found {head[2]}")
        if head[3] != f"v{SCHEMA_VERSIONS[kind]}":
            raise SchemaError(f"{path}: unsupported {kind} schema version {head[3]}")
        return list(csv.DictReader(fh))


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))
    return path

