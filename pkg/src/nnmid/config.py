"""Pipeline configuration: YAML loading, defaults and validation."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .io import config_hash

DEFAULT_CONFIG = {
    "model": {
        "geometry": {},
        "material": {},
        "mesh": {},
        "update": "benchmark",
        "damping": {"alpha": 3e-7, "beta": 5.0},
        "forcing_node": 4,
        "nonlinearity": {"node": 14, "cubic": 8e9, "quadratic": -1.05e7},
    },
    "excitation": {
        "f_min": 5.0,
        "f_max": 500.0,
        "rms": 15.0,
        "periods": 20,
        "samples_per_period": 655360,
        "fs": 60000.0,
        "seed": 1,
    },
    "simulation": {
        "decimation": 20,
        "noise_level": 0.01,
        "noise_reference": "node14",
        "noise_seed": 0,
        "output_nodes": list(range(1, 15)),
    },
    "identification": {
        "band": [5.0, 500.0],
        "order": 6,
        "max_order": 20,
        "block_rows": None,
        "discard_periods": 5,
        "weighting": True,
        "thresholds": {"freq": 0.01, "damp": 0.05, "mac": 0.98},
        "basis": {"kind": "polynomial", "degrees": [3, 2], "node": 14},
        "negligible_log_ratio": 1.0,
    },
    "continuation": {
        "modes": [0],
        "node": 14,
        "max_amplitude": 1e-3,
        "max_energy": None,
        "seed_amplitude": 1e-5,
        "tolerance": 1e-9,
        "rtol": 1e-10,
        "orbit_amplitudes": [2e-4, 1e-3],
        "orbit_pair": [7, 14],
    },
    "phase_resonance": {
        "mode": 0,
        "f_start": 30.0,
        "f_end": 37.6,
        "df": 0.1,
        "amplitude": 3.0,
        "fs": 10000.0,
        "settle_periods": 60,
        "measure_periods": 10,
        "threshold": 0.9,
        "wavelet_band": [20.0, 50.0],
        "omega_c": 8.0,
        "voices": 64,
        "floor": 0.01,
        "node": 14,
    },
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigurationError(f"unknown configuration field '{where}'")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict):
            out[key] = _merge(base[key], value, where)
        elif isinstance(base[key], dict) and base[key] and value is not None:
            raise ConfigurationError(f"'{where}' must be a mapping")
        else:
            out[key] = value
    return out


def _require(cond, field, message):
    if not cond:
        raise ConfigurationError(f"{field}: {message}")


def _number(cfg, section, key, positive=True, allow_none=False):
    v = cfg[section][key]
    field = f"{section}.{key}"
    if v is None and allow_none:
        return
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), field,
             "must be a number")
    if positive:
        _require(v > 0, field, "must be positive")


def validate(cfg, base_dir=None):
    """Check a merged configuration; raise ConfigurationError naming the field."""
    for key in ("f_min", "f_max", "rms", "fs"):
        _number(cfg, "excitation", key)
    exc = cfg["excitation"]
    _require(exc["f_min"] < exc["f_max"] < exc["fs"] / 2, "excitation.f_max",
             "must exceed f_min and lie below fs/2")
    for key in ("periods", "samples_per_period", "seed"):
        _require(isinstance(exc[key], int) and exc[key] >= (0 if key == "seed" else 1),
                 f"excitation.{key}", "must be a non-negative integer")
    sim = cfg["simulation"]
    _require(isinstance(sim["decimation"], int) and sim["decimation"] >= 1,
             "simulation.decimation", "must be a positive integer")
    _require(exc["samples_per_period"] % sim["decimation"] == 0, "simulation.decimation",
             "must divide excitation.samples_per_period")
    _number(cfg, "simulation", "noise_level", positive=False)
    _require(sim["noise_level"] >= 0, "simulation.noise_level", "must be non-negative")
    _require(isinstance(sim["noise_seed"], int), "simulation.noise_seed", "must be an integer")
    fs_dec = exc["fs"] / sim["decimation"]
    ident = cfg["identification"]
    band = ident["band"]
    _require(isinstance(band, (list, tuple)) and len(band) == 2, "identification.band",
             "must be a pair [f_min, f_max]")
    _require(0 < band[0] < band[1] < fs_dec / 2, "identification.band",
             f"must lie inside (0, {fs_dec / 2:g}) Hz")
    _require(ident["order"] == "auto" or (isinstance(ident["order"], int)
                                          and ident["order"] >= 2 and ident["order"] % 2 == 0),
             "identification.order", "must be an even integer >= 2 or 'auto'")
    _require(isinstance(ident["max_order"], int) and ident["max_order"] >= 4,
             "identification.max_order", "must be an integer >= 4")
    _require(isinstance(ident["discard_periods"], int)
             and 0 <= ident["discard_periods"] < exc["periods"],
             "identification.discard_periods", "must be smaller than the number of periods")
    kind = ident["basis"].get("kind")
    _require(kind in ("polynomial", "spline", "none"), "identification.basis.kind",
             "must be 'polynomial', 'spline' or 'none'")
    cont = cfg["continuation"]
    _require(cont["max_amplitude"] is not None or cont["max_energy"] is not None,
             "continuation.max_amplitude", "a stop rule is required")
    for key in ("seed_amplitude", "tolerance", "rtol"):
        _number(cfg, "continuation", key)
    _number(cfg, "continuation", "max_amplitude", allow_none=True)
    _number(cfg, "continuation", "max_energy", allow_none=True)
    pr = cfg["phase_resonance"]
    for key in ("f_start", "f_end", "df", "amplitude", "fs"):
        _number(cfg, "phase_resonance", key)
    _require(pr["f_end"] < pr["fs"] / 2, "phase_resonance.f_end", "must lie below fs/2")
    wb = pr["wavelet_band"]
    _require(0 < wb[0] < wb[1] < pr["fs"] / 2, "phase_resonance.wavelet_band",
             "must lie inside (0, fs/2)")
    mfile = cfg["model"].get("file")
    if mfile is not None:
        p = Path(mfile)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        _require(p.exists(), "model.file", f"path '{mfile}' does not exist")
    return cfg


def load_config(path=None, overrides=None, seed=None):
    """Load a YAML configuration on top of the defaults.

    Parameters
    ----------
    path : str or Path, optional
    overrides : dict, optional
        Applied after the file.
    seed : int, optional
        Overrides both the excitation and the noise seed.

    Returns
    -------
    dict
        Merged configuration with a ``hash`` of its content.
    """
    raw = {}
    base_dir = None
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config: file '{path}' does not exist")
        try:
            raw = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config: invalid YAML ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigurationError("config: top level must be a mapping")
        base_dir = path.parent
    defaults = copy.deepcopy(DEFAULT_CONFIG)
    defaults["model"]["file"] = None
    cfg = _merge(defaults, raw)
    if cfg["model"].get("file"):
        mpath = Path(cfg["model"]["file"])
        if base_dir is not None and not mpath.is_absolute():
            mpath = base_dir / mpath
        if not mpath.exists():
            raise ConfigurationError(f"model.file: path '{cfg['model']['file']}' does not exist")
        spec = yaml.safe_load(mpath.read_text()) or {}
        cfg["model"] = _merge(cfg["model"], spec, "model")
    cfg = _merge(cfg, overrides or {})
    if seed is not None:
        cfg["excitation"]["seed"] = int(seed)
        cfg["simulation"]["noise_seed"] = int(seed)
    validate(cfg, base_dir)
    return cfg


def seeds(cfg):
    return {"excitation_seed": cfg["excitation"]["seed"],
            "noise_seed": cfg["simulation"]["noise_seed"]}


def provenance(cfg):
    """Metadata embedded in every output file."""
    return {"config_hash": config_hash(cfg), **seeds(cfg)}
