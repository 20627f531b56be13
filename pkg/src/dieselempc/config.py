"""Versioned stack configuration (plant, lookup tables, inner loop, OCP,
scenarios, data generation and training) stored as YAML."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .errors import StructuralError
from .ident import Excitation, LookupTable2D
from .inner_loop import InnerLoopGains
from .plant import ActuatorCommand, Airpath, OperatingPoint, PlantConfig

CONFIG_VERSION = 1
TABLE_NAMES = ("egr_pos", "vgt_pos", "p_im_trg", "chi_egr_trg")
TABLE_N_E = (700.0, 1000.0, 1300.0, 1600.0, 1900.0, 2200.0, 2400.0)
TABLE_W_INJ = (0.0, 10.0, 25.0, 45.0, 65.0, 85.0, 105.0, 125.0, 160.0)


def feedforward_egr(n_e: float, w_inj: float) -> float:
    """Calibrated steady EGR valve opening (% open)."""
    return float(np.clip(42.0 - 0.22 * w_inj + 0.004 * (n_e - 800.0), 5.0, 70.0))


def feedforward_vgt(n_e: float, w_inj: float) -> float:
    """Calibrated steady VGT closing (% closed)."""
    return float(np.clip(72.0 - 0.014 * (n_e - 800.0) + 0.08 * w_inj, 15.0, 90.0))


def build_tables(plant: PlantConfig) -> dict[str, LookupTable2D]:
    """Actuator feedforward maps plus the airpath targets they produce at equilibrium."""
    ap = Airpath(plant)
    egr = LookupTable2D.from_function(TABLE_N_E, TABLE_W_INJ, lambda n, w: round(feedforward_egr(n, w), 6))
    vgt = LookupTable2D.from_function(TABLE_N_E, TABLE_W_INJ, lambda n, w: round(feedforward_vgt(n, w), 6))
    p = np.empty((len(TABLE_N_E), len(TABLE_W_INJ)))
    chi = np.empty_like(p)
    for i, n in enumerate(TABLE_N_E):
        for j, w in enumerate(TABLE_W_INJ):
            s = ap.steady_state(ActuatorCommand(egr.values[i, j], vgt.values[i, j]), OperatingPoint(n, w))
            p[i, j] = round(float(s[0]), 6)
            chi[i, j] = round(ap.chi_egr(s), 8)
    return {"egr_pos": egr, "vgt_pos": vgt,
            "p_im_trg": LookupTable2D(np.array(TABLE_N_E), np.array(TABLE_W_INJ), p),
            "chi_egr_trg": LookupTable2D(np.array(TABLE_N_E), np.array(TABLE_W_INJ), chi)}


DEFAULT_SECTIONS = {
    "inner_loop": {"kp_chi": 40.0, "ki_chi": 100.0, "kp_p": 0.8, "ki_p": 1.0, "dt": 0.2,
                   "integ_limit": 100.0, "bandwidth": 1.0},
    "ocp": {},
    "scenarios": {"eta_low": 0.1, "eta_high": 1.0, "soot_lim": None, "soot_lim_percentile": 85.0,
                  "cycles": ["case_study", "urban", "highway"]},
    "data": {"steady_points": 306, "steady_seed": 3, "transient_seed": 5, "transient_duration": 2400.0,
             "noise_seed": 17, "soot_cutoff": 20.0,
             "excitation": {"egr_amp": 15.0, "vgt_amp": 15.0, "hold_min": 1.0, "hold_max": 4.0, "seed": 9},
             "ident_cycles": ["urban", "highway", "ident"], "ident_duration": 1200.0, "ident_seed": 7},
    "training": {
        "seed": 0,
        "fnn": {"learning_rate": 1e-2, "momentum": 0.9, "decay_factor": 0.5, "decay_period": 100,
                "epochs": 1000, "batch_size": 40, "hidden": [32, 32, 16]},
        "grid": {"momentum": [0.5, 0.7, 0.9, 0.95, 0.99], "learning_rate": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
                 "epochs_per_cell": 1, "use_best": False},
        "rnn": {"learning_rate": 1e-2, "momentum": 0.9, "decay_factor": 0.5, "decay_period": 100,
                "epochs": 300, "batch_size": 40, "hidden": [15, 5]},
        "split": [0.7, 0.15, 0.15],
    },
}


@dataclass
class StackConfig:
    version: int
    plant: PlantConfig
    tables: dict[str, LookupTable2D]
    raw: dict  # every section as plain data (the hash and the YAML are built from it)

    @property
    def inner_gains(self) -> InnerLoopGains:
        return InnerLoopGains.from_dict(self.raw["inner_loop"])

    @property
    def excitation(self) -> Excitation:
        return Excitation(**self.raw["data"]["excitation"])

    def section(self, name: str) -> dict:
        return self.raw[name]

    def digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_overrides(self, overrides: dict) -> "StackConfig":
        return config_from_dict(_deep_merge(self.raw, overrides))


def _deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def config_from_dict(d: dict) -> StackConfig:
    version = d.get("version")
    if version != CONFIG_VERSION:
        raise StructuralError(f"unsupported config version {version!r} (expected {CONFIG_VERSION})")
    missing = {"plant", "tables", *DEFAULT_SECTIONS} - set(d)
    if missing:
        raise StructuralError(f"config is missing sections {sorted(missing)}")
    raw = copy.deepcopy(d)
    plant = PlantConfig.from_dict(raw["plant"])
    if set(raw["tables"]) != set(TABLE_NAMES):
        raise StructuralError(f"config tables must be exactly {TABLE_NAMES}")
    tables = {k: LookupTable2D.from_dict(v) for k, v in raw["tables"].items()}
    return StackConfig(version, plant, tables, raw)


def build_default_config() -> dict:
    plant = PlantConfig()
    tables = build_tables(plant)
    d = {"version": CONFIG_VERSION, "plant": plant.to_dict(),
         "tables": {k: tables[k].to_dict() for k in TABLE_NAMES}}
    d.update(copy.deepcopy(DEFAULT_SECTIONS))
    return d


def default_config_path() -> Path:
    return Path(str(resources.files("dieselempc").joinpath("data/default_config.yaml")))


def load_config(path=None) -> StackConfig:
    path = Path(path) if path else default_config_path()
    with path.open() as fh:
        return config_from_dict(yaml.safe_load(fh))


def save_config(d: dict | StackConfig, path) -> Path:
    raw = d.raw if isinstance(d, StackConfig) else d
    path = Path(path)
    with path.open("w") as fh:
        yaml.safe_dump(raw, fh, sort_keys=False, default_flow_style=None, width=120)
    return path


__all__ = ["StackConfig", "load_config", "save_config", "build_default_config", "config_from_dict",
           "default_config_path", "build_tables", "feedforward_egr", "feedforward_vgt", "TABLE_NAMES",
           "CONFIG_VERSION"]
