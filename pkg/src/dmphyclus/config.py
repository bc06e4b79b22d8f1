"""YAML run configuration: documented key set, defaults, and flag overrides.

A config file is a mapping of sections. Every key has a default here, so a
file only needs the values it changes; unknown sections or keys are rejected
so typos fail loudly. Rate matrices and limiting probabilities are in
A, C, G, T order unless the section sets ``state_order: ATCG``.

Sections and keys::

    simulation: n, poisson_mean, conc_mean, conc_sd, within_mean, between_mean,
                between_cv, n_categories, gamma_shape, gamma_scale, replicates,
                root_fasta, rate_matrix, limiting_probabilities, state_order
    model:      rate_matrix, limiting_probabilities, gamma_categories,
                gamma_shape, gamma_scale, state_order
    grid:       size, radius, mc_samples, seed, between_cv,
                within_center, between_center
    prior:      poisson_rate, alpha_shape, alpha_scale, alpha_start
    tree:       outgroup, resolve_polytomies
    start:      method (search | singletons | single), support_min,
                distance_grid, linkage
    chain:      iterations, burn_in, thinning, seed, alpha_radius, wipe_every,
                check_every, log_every
    search:     nni_budget, burst
"""
from __future__ import annotations

import copy
from pathlib import Path

import numpy as np
import yaml

from .errors import ValidationError
from .substmodel import (CHAIN_PI_ATCG, CHAIN_Q_ATCG, SIM_PI_ATCG, SIM_Q_ATCG, from_atcg)

_SIM_Q, _SIM_PI = from_atcg(SIM_Q_ATCG, SIM_PI_ATCG)
_CHAIN_Q, _CHAIN_PI = from_atcg(CHAIN_Q_ATCG, CHAIN_PI_ATCG)

DEFAULTS: dict = {
    "simulation": {
        "n": 200, "poisson_mean": 50.0, "conc_mean": 10.0, "conc_sd": 2.0,
        "within_mean": 0.003, "between_mean": 0.008, "between_cv": 1.0,
        "n_categories": 5, "gamma_shape": 0.7589, "gamma_scale": None,
        "replicates": 1, "root_fasta": None,
        "rate_matrix": np.asarray(_SIM_Q).tolist(),
        "limiting_probabilities": np.asarray(_SIM_PI).tolist(),
        "state_order": "ACGT",
    },
    "model": {
        "rate_matrix": np.asarray(_CHAIN_Q).tolist(),
        "limiting_probabilities": np.asarray(_CHAIN_PI).tolist(),
        "gamma_categories": 5, "gamma_shape": 0.7589, "gamma_scale": None,
        "state_order": "ACGT",
    },
    "grid": {
        "size": 20, "radius": 0.08, "mc_samples": 100_000, "seed": 1, "between_cv": 1.0,
        "within_center": None, "between_center": None,
    },
    "prior": {"poisson_rate": 50.0, "alpha_shape": 100.0, "alpha_scale": 0.1,
              "alpha_start": None},
    "tree": {"outgroup": None, "resolve_polytomies": False},
    "start": {
        "method": "search", "support_min": 0.70,
        "distance_grid": [round(0.03 + 0.01 * i, 2) for i in range(10)],
        "linkage": "single",
    },
    "chain": {
        "iterations": 55_000, "burn_in": 5_000, "thinning": 50, "seed": 1,
        "alpha_radius": 0.5, "wipe_every": None, "check_every": 1000, "log_every": None,
    },
    "search": {"nni_budget": 0, "burst": 50},
}

START_METHODS = ("search", "singletons", "single")


def _merge(base: dict, update: dict, where: str = "") -> dict:
    for key, value in update.items():
        if key not in base:
            raise ValidationError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValidationError(f"config section {where}{key!r} must be a mapping")
            _merge(base[key], value, f"{where}{key}.")
        else:
            base[key] = value
    return base


def default_config() -> dict:
    return copy.deepcopy(DEFAULTS)


def merge_config(update: dict | None) -> dict:
    """Defaults overlaid with ``update`` (a partial config mapping)."""
    cfg = default_config()
    if update:
        if not isinstance(update, dict):
            raise ValidationError("config must be a mapping of sections")
        _merge(cfg, update)
    _normalize(cfg)
    return cfg


def load_config(path) -> dict:
    """Read a YAML config file and overlay it on the defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ValidationError(f"{path}: invalid YAML: {exc}") from exc
    return merge_config(data or {})


def set_value(cfg: dict, dotted: str, value) -> None:
    """Override one key, e.g. ``set_value(cfg, "chain.iterations", 1000)``."""
    section, _, key = dotted.partition(".")
    if section not in cfg or key not in cfg[section]:
        raise ValidationError(f"unknown config key {dotted!r}")
    cfg[section][key] = value


def _normalize(cfg: dict) -> None:
    """Reorder ATCG-tabulated matrices to ACGT and sanity-check enumerations."""
    for section in ("simulation", "model"):
        sec = cfg[section]
        order = str(sec.get("state_order", "ACGT")).upper()
        if order == "ATCG":
            q, pi = from_atcg(sec["rate_matrix"], sec["limiting_probabilities"])
            sec["rate_matrix"] = np.asarray(q).tolist()
            sec["limiting_probabilities"] = np.asarray(pi).tolist()
            sec["state_order"] = "ACGT"
        elif order != "ACGT":
            raise ValidationError(f"{section}.state_order must be ACGT or ATCG, got {order!r}")
    if cfg["start"]["method"] not in START_METHODS:
        raise ValidationError(f"start.method must be one of {START_METHODS}")


def dump_config(cfg: dict, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg, sort_keys=False, default_flow_style=None))
