"""Run configuration: INI sections, typed keys, presets and overrides."""
from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list:
    return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]


def _rows(text: str) -> list:
    """``"a,b; c,d"`` -> ``[[a, b], [c, d]]``."""
    return [[float(v) for v in row.split(",")] for row in text.split(";") if row.strip()]


def _float(text: str) -> float:
    return float(text)


def _int(text: str) -> int:
    return int(text)


def _str(text: str) -> str:
    return text.strip()


# section -> key -> (parser, default); a default of None means "not set"
SCHEMA = {
    "run": {
        "seed": (_int, None),
        "workers": (_int, "1"),
        "out_dir": (_str, "out"),
        "dynamics": (_str, "walk"),
    },
    "domain": {"A": (_float, "1.0"), "L": (_float, "24")},
    "lattice": {
        "preset": (_str, "ssrw"),
        "basis": (_rows, None),
        "jumps": (_rows, None),
        "weights": (_floats, None),
    },
    "injection": {
        "A_table": (_str, "specA"),
        "B": (_floats, "1"),
        "f_W": (_str, "0"),
        "f_S": (_str, "0"),
        "f_E": (_str, "0"),
        "f_N": (_str, "0"),
        "t": (_float, "inf"),
    },
    # the walk is fully described by [lattice]; the section only marks the dynamics
    "walk": {},
    "billiard": {
        "preset": (_str, "default-billiard"),
        "disks": (_rows, None),
        "sigma2": (_float, None),
        "T": (_float, "500"),
        "n": (_int, "20000"),
    },
    "solve": {"grid": (_int, "128"), "points": (_rows, "")},
    "simulate": {"trials": (_int, "1")},
    "h2": {
        "T": (_float, "2500"),
        "T2": (_float, "10000"),
        "params": (_floats, "0.5,1.5,0.5,0.5,1.5"),
        "k": (_int, "1"),
        "tolerance": (_float, "0.1"),
        "n": (_int, "5000000"),
        "T_billiard": (_float, "150"),
        "params_billiard": (_floats, "1,2,1,1,2"),
        "targets": (_rows, "1,0.5; 1,1"),
    },
    "h3": {"deltas": (_floats, "0.1,0.05,0.025"), "z": (_floats, "0.5,0.5"), "fraction": (_float, "0.1")},
    "theorem1": {"points": (_rows, "0.5,0.5; 0.3,0.6"), "tolerance": (_float, "0.05")},
    "duality": {"tolerance": (_float, "1e-10"), "n_inject": (_int, "10000000"), "z_max": (_float, "3")},
    "le": {
        "probes": (_rows, "0.5,0.5; 0.3,0.6; 0.7,0.3"),
        "offsets": (_rows, "0,0; 3,0; 0,3"),
        "trials": (_int, "4000"),
        "band": (_floats, "0.9,1.1"),
        "z_max": (_float, "3"),
    },
    "invariants": {
        "involution_s": (_float, "0.5"),
        "kac_samples": (_int, "1000000"),
        "horizon_flights": (_int, "10000000"),
        "sigma_T": (_float, "500"),
        "sigma_n": (_int, "20000"),
    },
}

DYNAMICS = ("walk", "billiard")
# keys that must not change any artifact byte
_NOT_HASHED = {("run", "workers"), ("run", "out_dir")}

PRESETS = {
    "ssrw": {"run": {"dynamics": "walk"}, "lattice": {"preset": "ssrw"}},
    "default-billiard": {
        "run": {"dynamics": "billiard"},
        "domain": {"L": "20"},
        "billiard": {"preset": "default-billiard"},
    },
}


@dataclass
class RunConfig:
    raw: dict  # section -> key -> text, only keys that were set
    values: dict  # section -> key -> parsed value (defaults filled in)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def seed(self) -> int:
        return self.values["run"]["seed"]

    @property
    def dynamics(self) -> str:
        return self.values["run"]["dynamics"]

    def resolved(self) -> dict:
        """Text form of every key that affects results, defaults included."""
        out = {}
        for sec, keys in SCHEMA.items():
            for key, (_, default) in keys.items():
                if (sec, key) in _NOT_HASHED:
                    continue
                text = self.raw.get(sec, {}).get(key, default)
                if text is not None:
                    out[f"{sec}.{key}"] = text
        return out


def _merge(dst: dict, src: dict):
    for sec, keys in src.items():
        dst.setdefault(sec, {}).update(keys)


def load(path=None, preset: str | None = None, overrides=(), seed: int | None = None,
         workers: int | None = None, out_dir=None) -> RunConfig:
    raw: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        _merge(raw, PRESETS[preset])
    if path is not None:
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            read = cp.read(Path(path))
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if not read:
            raise ConfigError(f"config file {path} not found")
        _merge(raw, {s: dict(cp[s]) for s in cp.sections()})
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        k, v = item.split("=", 1)
        sec, key = k.split(".", 1)
        _merge(raw, {sec.strip(): {key.strip(): v.strip()}})
    for sec, val in (("seed", seed), ("workers", workers), ("out_dir", out_dir)):
        if val is not None:
            _merge(raw, {"run": {sec: str(val)}})
    return _resolve(raw)


def _resolve(raw: dict) -> RunConfig:
    for sec, keys in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        for key in keys:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
    values = {}
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (parse, default) in keys.items():
            text = raw.get(sec, {}).get(key, default)
            if text is None:
                values[sec][key] = None
                continue
            try:
                values[sec][key] = parse(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {text!r}") from exc
    if values["run"]["seed"] is None:
        raise ConfigError("a seed is required (run.seed or --seed)")
    if values["run"]["seed"] < 0:
        raise ConfigError("seed must be non-negative")
    if values["run"]["workers"] < 1:
        raise ConfigError("workers must be at least 1")
    dyn = values["run"]["dynamics"]
    if dyn not in DYNAMICS:
        raise ConfigError(f"run.dynamics must be one of {DYNAMICS}")
    other = "billiard" if dyn == "walk" else "walk"
    if raw.get(other):
        raise ConfigError(f"section [{other}] is set but run.dynamics = {dyn}; only one dynamics per run")
    return RunConfig(raw, values)


def profile_spec(text: str):
    """``sin`` or a comma list of samples (linear interpolation); ``None`` for the zero profile."""
    t = text.strip().lower()
    if t == "sin":
        return "sin"
    vals = _floats(text)
    if not vals:
        raise ConfigError(f"empty profile {text!r}")
    if all(v == 0 for v in vals):
        return None
    if any(v < 0 for v in vals):
        raise ConfigError("boundary profiles must be non-negative")
    return np.array(vals)
