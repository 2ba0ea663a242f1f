"""Experiment configuration: flat dotted-key JSON, validated as a whole.

A config file is a single JSON object whose keys are flat dotted paths
(for example ``"step.rho"``).  Unknown keys are rejected, every domain
invariant is enforced at load time, and the canonical serialized form
(sorted keys, no whitespace) is hashed into the run manifest so outputs
can be reproduced bit for bit.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .exploration import DEFAULT_VARSIGMA, BaseNoise
from .objectives import Objective, builtin_objective
from .schedules import (
    CenterActiveGain,
    ConstantGain,
    DecayingGain,
    ExplorationGain,
    ObjectiveActiveGain,
    StepSizeSchedule,
)

__all__ = [
    "ConfigError",
    "load_config",
    "validate_config",
    "config_hash",
    "canonical_json",
    "build_objective",
    "build_schedule",
    "build_base_noise",
    "build_gain",
    "get_varsigma",
    "REQUIRED_KEYS",
]


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_vector(v) -> bool:
    return isinstance(v, list) and len(v) > 0 and all(_is_number(x) for x in v)


def _is_matrix(v) -> bool:
    return (
        isinstance(v, list)
        and len(v) > 0
        and all(_is_vector(row) and len(row) == len(v[0]) for row in v)
    )


# key -> (checker, human-readable expectation)
KNOWN_KEYS: dict[str, tuple] = {
    "step.alpha0": (lambda v: _is_number(v) and v > 0, "a positive number"),
    "step.rho": (lambda v: _is_number(v) and 0.5 < v < 1.0, "a number strictly inside (0.5, 1.0)"),
    "gain.kind": (
        lambda v: v in ("constant", "decaying", "center_active", "objective_active"),
        "one of constant|decaying|center_active|objective_active",
    ),
    "gain.eps_bullet": (lambda v: _is_number(v) and v > 0, "a positive number"),
    "gain.kappa": (lambda v: _is_number(v) and v >= 0, "a nonnegative number"),
    "gain.theta_ctr": (_is_vector, "a vector of numbers"),
    "gain.sigma_p": (lambda v: _is_number(v) and v > 0, "a positive number"),
    "gain.obj_floor": (_is_number, "a number"),
    "probe.base": (lambda v: v in ("rademacher", "uniform"), "rademacher or uniform"),
    "probe.support": (lambda v: _is_number(v) and v > 0, "a positive number"),
    "probe.mode": (lambda v: v in ("iid", "zigzag"), "iid or zigzag"),
    "probe.varsigma": (lambda v: _is_number(v) and v > 0, "a positive number"),
    "objective.kind": (
        lambda v: v in ("quadratic1d", "trig_quadratic1d", "quadratic_nd"),
        "one of quadratic1d|trig_quadratic1d|quadratic_nd",
    ),
    "objective.Q": (_is_matrix, "a square matrix as nested lists"),
    "seed.master": (lambda v: _is_int(v) and v >= 0, "a nonnegative integer"),
    "run.N": (lambda v: _is_int(v) and v >= 0, "a nonnegative integer"),
    "run.theta0": (_is_vector, "a vector of numbers"),
    "run.theta0_box": (
        lambda v: (_is_vector(v) and len(v) == 2) or _is_matrix(v),
        "[lo, hi] or a per-dimension list of [lo, hi]",
    ),
    "run.stride": (lambda v: _is_int(v) and v >= 1, "a positive integer"),
    "run.algorithm": (lambda v: v in ("1spsa", "2spsa"), "1spsa or 2spsa"),
    "run.guard_threshold": (lambda v: _is_number(v) and v >= 1e3, "a number >= 1e3"),
    "ensemble.M": (lambda v: _is_int(v) and v >= 2, "an integer >= 2"),
    "ensemble.N": (lambda v: _is_int(v) and v >= 1, "a positive integer"),
    "ensemble.N0": (lambda v: _is_int(v) and v >= 0, "a nonnegative integer"),
    "ensemble.eps_grid": (
        lambda v: _is_vector(v) and all(x > 0 for x in v) and list(v) == sorted(v),
        "a sorted list of positive numbers",
    ),
    "ensemble.statistic": (lambda v: v in ("grad", "fbar"), "grad or fbar"),
    "ensemble.theta0_box": (
        lambda v: (_is_vector(v) and len(v) == 2) or _is_matrix(v),
        "[lo, hi] or a per-dimension list of [lo, hi]",
    ),
    "meanflow.method": (
        lambda v: v in ("two_point", "quadrature", "monte_carlo"),
        "one of two_point|quadrature|monte_carlo",
    ),
    "meanflow.mc_samples": (lambda v: _is_int(v) and v >= 100, "an integer >= 100"),
    "meanflow.grid": (
        lambda v: _is_vector(v) and len(v) == 3 and v[0] < v[1] and _is_int(v[2]) and v[2] >= 2,
        "[lo, hi, npoints] with lo < hi and integer npoints >= 2",
    ),
    "meanflow.theta_init": (_is_vector, "a vector of numbers"),
    "meanflow.tol": (lambda v: _is_number(v) and 1e-12 <= v <= 1e-6, "a number in [1e-12, 1e-6]"),
    "meanflow.eps_sweep": (
        lambda v: _is_vector(v) and all(x > 0 for x in v) and len(v) >= 3,
        "a list of >= 3 positive numbers",
    ),
    "meanflow.flow_theta0": (_is_vector, "a vector of numbers"),
    "meanflow.flow_t_end": (lambda v: _is_number(v) and v >= 0, "a nonnegative number"),
    "meanflow.flow_dt": (lambda v: _is_number(v) and v > 0, "a positive number"),
    "probe_check.samples": (lambda v: _is_int(v) and v >= 1000, "an integer >= 1000"),
    "probe_check.regen_samples": (lambda v: _is_int(v) and v >= 100, "an integer >= 100"),
    "output.dir": (lambda v: isinstance(v, str) and len(v) > 0, "a nonempty string"),
    "workers": (lambda v: _is_int(v) and v >= 1, "a positive integer"),
}

REQUIRED_KEYS: dict[str, list[str]] = {
    "run": ["objective.kind", "step.alpha0", "step.rho", "gain.kind", "probe.base", "probe.mode", "seed.master", "run.N"],
    "experiment": [
        "objective.kind", "step.alpha0", "step.rho", "gain.kind", "probe.base", "seed.master",
        "ensemble.M", "ensemble.N", "ensemble.N0", "ensemble.eps_grid", "ensemble.statistic",
        "ensemble.theta0_box",
    ],
    "meanflow": ["objective.kind", "gain.kind", "gain.eps_bullet", "probe.base", "meanflow.method", "meanflow.grid"],
    "equilibrium": ["objective.kind", "gain.kind", "gain.eps_bullet", "probe.base", "meanflow.method", "meanflow.theta_init"],
    "probe-check": ["probe.base", "probe.mode", "seed.master"],
}

_GAIN_KEY_DEPS = {
    "decaying": ["gain.kappa"],
    "center_active": ["gain.theta_ctr", "gain.sigma_p"],
    "objective_active": ["gain.obj_floor"],
}


def load_config(path) -> dict:
    """Read a flat dotted-key JSON config file (no validation)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object of dotted keys")
    return cfg


def validate_config(cfg: dict, command: str) -> None:
    """Check key names, value shapes, and cross-key invariants.

    Raises ConfigError naming the offending key; nothing is partially
    accepted.
    """
    if command not in REQUIRED_KEYS:
        raise ConfigError(f"unknown command {command!r}")
    for key in cfg:
        if key not in KNOWN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    for key, value in cfg.items():
        checker, expected = KNOWN_KEYS[key]
        if not checker(value):
            raise ConfigError(f"config key {key!r} must be {expected}, got {value!r}")
    missing = [k for k in REQUIRED_KEYS[command] if k not in cfg]
    if missing:
        raise ConfigError(f"missing config key {missing[0]!r} (required for {command!r})")

    kind = cfg.get("gain.kind")
    for dep in _GAIN_KEY_DEPS.get(kind, []):
        if dep not in cfg:
            raise ConfigError(f"missing config key {dep!r} (required for gain.kind={kind!r})")
    if kind in ("constant", "decaying", "center_active", "objective_active"):
        if command != "experiment" and "gain.eps_bullet" not in cfg:
            raise ConfigError("missing config key 'gain.eps_bullet'")

    if cfg.get("objective.kind") == "quadratic_nd" and "objective.Q" not in cfg:
        raise ConfigError("missing config key 'objective.Q' (required for quadratic_nd)")

    if command == "run" and "run.theta0" not in cfg and "run.theta0_box" not in cfg:
        raise ConfigError("missing config key 'run.theta0' (or 'run.theta0_box')")
    if command == "experiment":
        if cfg["ensemble.N0"] >= cfg["ensemble.N"]:
            raise ConfigError("config key 'ensemble.N0' must be below 'ensemble.N'")
        if len(cfg["ensemble.eps_grid"]) < 3:
            raise ConfigError("config key 'ensemble.eps_grid' needs at least 3 points for the scaling fit")
    if command in ("meanflow", "equilibrium") and cfg.get("meanflow.method") == "monte_carlo":
        raise ConfigError("config key 'meanflow.method' must be deterministic (two_point or quadrature) here")


def canonical_json(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode("utf-8")).hexdigest()


def build_objective(cfg: dict) -> Objective:
    return builtin_objective(cfg["objective.kind"], cfg.get("objective.Q"))


def build_schedule(cfg: dict) -> StepSizeSchedule:
    return StepSizeSchedule(alpha0=cfg["step.alpha0"], rho=cfg["step.rho"])


def build_base_noise(cfg: dict, dim: int) -> BaseNoise:
    return BaseNoise(
        kind=cfg["probe.base"],
        dim=dim,
        support=cfg.get("probe.support", 1.0),
    )


def build_gain(cfg: dict, objective: Objective, eps_bullet: float | None = None) -> ExplorationGain:
    """Construct the configured gain, optionally overriding the scale."""
    kind = cfg["gain.kind"]
    eps = cfg.get("gain.eps_bullet") if eps_bullet is None else eps_bullet
    if eps is None:
        raise ConfigError("missing config key 'gain.eps_bullet'")
    if kind == "constant":
        return ConstantGain(eps_bullet=eps)
    if kind == "decaying":
        return DecayingGain(eps_bullet=eps, kappa=cfg["gain.kappa"])
    if kind == "center_active":
        center = np.asarray(cfg["gain.theta_ctr"], dtype=float)
        if center.size != objective.dim:
            raise ConfigError(
                f"config key 'gain.theta_ctr' has dimension {center.size}, objective has {objective.dim}"
            )
        return CenterActiveGain(eps_bullet=eps, center=center, sigma_p=cfg["gain.sigma_p"])
    if kind == "objective_active":
        return ObjectiveActiveGain(eps_bullet=eps, objective=objective, floor=cfg["gain.obj_floor"])
    raise ConfigError(f"unknown gain kind {kind!r}")


def get_varsigma(cfg: dict) -> float:
    return float(cfg.get("probe.varsigma", DEFAULT_VARSIGMA))
