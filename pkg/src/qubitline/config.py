"""Flat ``key = value unit`` configuration files.

Values may be a single number, a comma-separated list, or an inclusive range
``start:stop:step``, followed by one unit token. Keys prefixed with an
experiment name (``fig2c.powers``) configure that experiment only.
Environment variables ``QUBITLINE_<KEY>`` (dots written as ``__``) override
the file; explicit overrides passed by the caller win over both.
"""
from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from qubitline.chain.records import ChainConfig
from qubitline.errors import ConfigError, ModelError
from qubitline.params import TWO_PI, AtomParams, DriveSpec, thermal_occupancy, watts_to_dbm

ENV_PREFIX = "QUBITLINE_"
EXPERIMENTS = ("fig1c", "fig2a", "fig2b", "fig2c", "fig2d", "fig3b", "spectrum", "custom")
PORTS = ("reflected", "transmitted")

_SCALE = {
    "frequency": {"Hz": 1.0, "kHz": 1e3, "MHz": 1e6, "GHz": 1e9},
    "temperature": {"K": 1.0, "mK": 1e-3},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9},
    "rate": {"S/s": 1.0, "kS/s": 1e3, "MS/s": 1e6, "GS/s": 1e9},
    "gain": {"dB": 1.0},
    "number": {"": 1.0},
}
_WATTS = {"W": 1.0, "mW": 1e-3, "uW": 1e-6, "nW": 1e-9, "pW": 1e-12, "fW": 1e-15, "aW": 1e-18}
_NUMBER = r"[-+]?(?:inf|(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
_VALUE_RE = re.compile(rf"^(?P<nums>{_NUMBER}(?:\s*[,:]\s*{_NUMBER})*)"
                       r"\s*(?P<unit>(?:[A-Za-z/][A-Za-z0-9/]*)?)$")


@dataclass(frozen=True)
class Key:
    kind: str  # frequency, temperature, time, rate, gain, number, power, choice, bool, rabi
    default: object = None
    many: bool = False
    required: bool = False
    lo: float = -math.inf
    hi: float = math.inf
    choices: tuple = ()
    integer: bool = False


GLOBAL_KEYS = {
    "f01": Key("frequency", required=True, lo=1e8, hi=1e11),
    "gamma10": Key("frequency", required=True, lo=1e3, hi=1e10),
    "gamma_phi": Key("frequency", 0.0, lo=0.0, hi=1e10),
    "temperature": Key("temperature", 0.0, lo=0.0, hi=10.0),
    "photon_anchor": Key("power", None, lo=-250.0, hi=30.0),
    "seed": Key("number", 0, lo=0, integer=True),
    "samples": Key("number", 10_000_000, lo=10_000, integer=True),
    "trajectories": Key("number", 2000, lo=1, integer=True),
    "threads": Key("number", 1, lo=1, hi=1024, integer=True),
    "sample_rate": Key("rate", 1e8, lo=1e3, hi=1e12),
    "gain": Key("gain", 79.0, lo=-200.0, hi=200.0),
    "noise_temp": Key("temperature", (7.0, 7.0), many=True, lo=0.0, hi=1e4),
    "terminator_temp": Key("temperature", 0.05, lo=0.0, hi=10.0),
    "jitter_samples": Key("number", 1, lo=0, hi=1, integer=True),
    "jitter_block": Key("number", 10_000, lo=1, integer=True),
    "jitter_mode": Key("choice", "block", choices=("block", "sample")),
    "reference_power": Key("power", -110.0, lo=-250.0, hi=30.0),
}

SWEEP_KEYS = {
    "powers": Key("power", (), many=True, lo=-250.0, hi=30.0),
    "photon_numbers": Key("number", (), many=True, lo=0.0, hi=1e6),
    "inset_powers": Key("power", (), many=True, lo=-250.0, hi=30.0),
    "port": Key("choice", "reflected", choices=PORTS),
    "bw": Key("frequency", (55e6,), many=True, lo=1.0, hi=math.inf),
    "jitter": Key("bool", True),
    "detuning": Key("frequency", 0.0, lo=-1e11, hi=1e11),
    "tau_span": Key("time", 400e-9, lo=0.0, hi=1e-3),
    "tau_step": Key("time", 10e-9, lo=1e-12, hi=1e-3),
    "window": Key("choice", "brickwall", choices=("brickwall", "lorentzian")),
    "rabi": Key("rabi", (), many=True, lo=0.0, hi=1e12),
    "span": Key("frequency", 400e6, lo=1.0, hi=1e11),
    "points": Key("number", 801, lo=16, hi=1_000_000, integer=True),
    "chain": Key("bool", False),
}


@dataclass
class ExperimentConfig:
    """Normalized configuration: SI units, powers in dBm at the atom plane
    before the anchor correction, frequencies in Hz (``atom`` holds rad/s)."""

    atom: AtomParams
    temperature_k: float
    power_offset_db: float
    chain: ChainConfig
    seed: int
    samples: int
    trajectories: int
    threads: int
    reference_power_dbm: float
    sweeps: dict
    values: dict = field(default_factory=dict)
    source: str = ""

    def drive(self, power_dbm: float, detuning_hz: float = 0.0) -> DriveSpec:
        """Drive for a configured (nominal) power, with the anchor correction applied."""
        return DriveSpec.from_power(self.atom, power_dbm + self.power_offset_db,
                                    TWO_PI * detuning_hz)

    def nominal_power(self, drive: DriveSpec) -> float:
        return drive.power_dbm - self.power_offset_db

    def drives(self, experiment: str) -> list[DriveSpec]:
        sw = self.sweeps[experiment]
        det = sw["detuning"]
        out = [self.drive(p, det) for p in sw["powers"]]
        out += [DriveSpec.from_photon_number(self.atom, n, TWO_PI * det)
                for n in sw["photon_numbers"]]
        return out

    def echo(self, experiment: str | None = None) -> dict:
        """Derived N and Rabi frequency for every sweep point."""
        out = {}
        for name in ([experiment] if experiment else EXPERIMENTS):
            pts = []
            for d in self.drives(name):
                pts.append({"power_dbm": self.nominal_power(d), "power_atom_dbm": d.power_dbm,
                            "power_w": d.power_watts, "N": d.n_photons,
                            "omega_rabi": d.omega_rabi,
                            "rabi_mhz": d.omega_rabi / TWO_PI / 1e6})
            out[name] = pts
        return out


def default_config_path() -> Path:
    return Path(str(resources.files("qubitline") / "data" / "default.conf"))


def _split(line: str):
    body = line.split("#", 1)[0].strip()
    if not body:
        return None
    if "=" not in body:
        raise ValueError("expected 'key = value [unit]'")
    key, _, value = body.partition("=")
    key, value = key.strip(), value.strip()
    if not key:
        raise ValueError("empty key")
    return key, value


def read_entries(text: str, origin: str):
    """Parse raw ``key -> (value, location)`` entries, collecting syntax errors."""
    entries, errors = {}, []
    for no, line in enumerate(text.splitlines(), start=1):
        try:
            kv = _split(line)
        except ValueError as exc:
            errors.append(f"{origin}:{no}: {exc}")
            continue
        if kv is None:
            continue
        key, value = kv
        if key in entries:
            errors.append(f"{origin}:{no}: duplicate key '{key}' (first set at "
                          f"{entries[key][1]})")
            continue
        entries[key] = (value, f"{origin}:{no}")
    return entries, errors


def _expand(nums: str) -> list[float]:
    out = []
    for item in nums.split(","):
        item = item.strip()
        if ":" in item:
            parts = [float(p) for p in item.split(":")]
            if len(parts) != 3 or parts[2] == 0:
                raise ValueError(f"range '{item}' must be start:stop:step with step != 0")
            start, stop, step = parts
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            if n < 1 or n > 100_000:
                raise ValueError(f"range '{item}' is empty or too long")
            out.extend(float(x) for x in start + step * np.arange(n))
        else:
            out.append(float(item))
    return out


def parse_value(key: str, spec: Key, raw: str):
    """Normalize one raw value; raises ValueError with a readable message."""
    if spec.kind == "choice":
        if raw not in spec.choices:
            raise ValueError(f"'{key}' must be one of {', '.join(spec.choices)}; got '{raw}'")
        return raw
    if spec.kind == "bool":
        low = raw.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"'{key}' must be true or false; got '{raw}'")
    if not raw:
        if not spec.many:
            raise ValueError(f"'{key}' needs a value")
        values, unit = [], ""
    else:
        m = _VALUE_RE.match(raw)
        if not m:
            raise ValueError(f"cannot parse value '{raw}' for '{key}'")
        values, unit = _expand(m.group("nums")), m.group("unit")
    if spec.kind == "power":
        if unit in ("dBm", ""):
            if unit == "" and values:
                raise ValueError(f"'{key}' needs a power unit (dBm, dBW or W-based)")
        elif unit == "dBW":
            values = [v + 30.0 for v in values]
        elif unit in _WATTS:
            if any(v < 0 for v in values):
                raise ValueError(f"'{key}' powers in {unit} must be non-negative")
            values = [watts_to_dbm(v * _WATTS[unit]) for v in values]
        else:
            raise ValueError(f"unknown power unit '{unit}' for '{key}'")
    elif spec.kind == "rabi":
        if unit == "gamma10":
            values = [("gamma10", v) for v in values]
        elif unit in _SCALE["frequency"]:
            values = [("hz", v * _SCALE["frequency"][unit]) for v in values]
        else:
            raise ValueError(f"'{key}' takes units of gamma10 or a frequency; got '{unit}'")
    else:
        scale = _SCALE[spec.kind]
        if unit not in scale:
            if unit == "" and spec.kind != "number":
                raise ValueError(f"'{key}' needs a unit ({', '.join(k for k in scale if k)})")
            raise ValueError(f"unknown unit '{unit}' for '{key}' "
                             f"(expected {', '.join(k or 'none' for k in scale)})")
        values = [v * scale[unit] for v in values]

    for v in values:
        x = v[1] if isinstance(v, tuple) else v
        if math.isnan(x) or not (spec.lo <= x <= spec.hi):
            raise ValueError(f"'{key}' value {x:g} outside [{spec.lo:g}, {spec.hi:g}]")
        if spec.integer and x != int(x):
            raise ValueError(f"'{key}' must be an integer; got {x:g}")
    if spec.integer:
        values = [int(v) for v in values]
    if spec.many:
        return tuple(values)
    if len(values) != 1:
        raise ValueError(f"'{key}' takes a single value; got {len(values)}")
    return values[0]


def _lookup(name: str):
    if name in GLOBAL_KEYS:
        return GLOBAL_KEYS[name]
    exp, dot, sub = name.partition(".")
    if dot and exp in EXPERIMENTS and sub in SWEEP_KEYS:
        return SWEEP_KEYS[sub]
    return None


def env_overrides(environ=None) -> dict:
    """``QUBITLINE_FIG2C__POWERS=-132 dBm`` -> ``{'fig2c.powers': '-132 dBm'}``."""
    environ = os.environ if environ is None else environ
    out = {}
    for k, v in environ.items():
        if k.startswith(ENV_PREFIX):
            out[k[len(ENV_PREFIX):].lower().replace("__", ".")] = v
    return out


def validate_config(path=None, overrides: dict | None = None, environ=None,
                    text: str | None = None) -> ExperimentConfig:
    """Parse, merge and validate a configuration; raises ``ConfigError``
    carrying every problem found, each anchored to its file line."""
    if text is None:
        path = default_config_path() if path is None else Path(path)
        if not path.is_file():
            raise ConfigError(f"{path}: configuration file not found")
        text = path.read_text()
    origin = str(path) if path is not None else "<config>"
    entries, errors = read_entries(text, origin)
    for k, v in env_overrides(environ).items():
        entries[k] = (v, f"environment {ENV_PREFIX}{k.upper().replace('.', '__')}")
    for k, v in (overrides or {}).items():
        entries[k] = (str(v), f"override '{k}'")

    values = {}
    for key, (raw, where) in entries.items():
        spec = _lookup(key)
        if spec is None:
            errors.append(f"{where}: unknown key '{key}'")
            continue
        try:
            values[key] = parse_value(key, spec, raw)
        except ValueError as exc:
            errors.append(f"{where}: {exc}")
    for key, spec in GLOBAL_KEYS.items():
        if spec.required and key not in entries:
            errors.append(f"{origin}: missing required key '{key}'")
    if errors:
        raise ConfigError(errors)

    def get(key):
        return values.get(key, GLOBAL_KEYS[key].default)

    noise = get("noise_temp")
    if len(noise) == 1:
        noise = (noise[0], noise[0])
    temperature = get("temperature")
    try:
        atom = AtomParams(TWO_PI * get("f01"), TWO_PI * get("gamma10"), TWO_PI * get("gamma_phi"),
                          thermal_occupancy(temperature, TWO_PI * get("f01")))
        chain = ChainConfig(sample_rate=get("sample_rate"), gain_db=get("gain"),
                            noise_temp_k=tuple(noise),
                            terminator_temp_mk=1e3 * get("terminator_temp"),
                            jitter_samples=get("jitter_samples"), jitter_block=get("jitter_block"),
                            jitter_mode=get("jitter_mode"), carrier_frequency=get("f01"),
                            rng_seed=get("seed"))
    except ModelError as exc:
        raise ConfigError(f"{origin}: {exc}") from exc

    offset = 0.0
    anchor = values.get("photon_anchor")
    if anchor is not None:
        n_anchor = DriveSpec.from_power(atom, anchor).n_photons
        offset = -10.0 * math.log10(n_anchor)

    sweeps = {}
    for exp in EXPERIMENTS:
        sw = {}
        for sub, spec in SWEEP_KEYS.items():
            sw[sub] = values.get(f"{exp}.{sub}", spec.default)
        sweeps[exp] = sw
    custom = sweeps["custom"]
    if not custom["powers"] and not custom["photon_numbers"] and "custom.powers" in entries:
        errors.append(f"{entries['custom.powers'][1]}: 'custom.powers' is empty; give at "
                      f"least one sweep point")
    if errors:
        raise ConfigError(errors)

    return ExperimentConfig(atom, temperature, offset, chain, get("seed"), get("samples"),
                            get("trajectories"), get("threads"), get("reference_power"), sweeps,
                            values, origin)
