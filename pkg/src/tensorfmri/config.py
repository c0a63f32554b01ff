"""Flat YAML configuration shared by the CLI commands.

Every key is optional and falls back to the default listed in ``SCHEMA``.
Unknown keys are errors. Simulation keys configure ``simulate``; run keys
configure ``fit``; ``b_tune`` configures ``postprocess``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .engine import INIT_MODES, RunConfig
from .simulate import SimSpec


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Key:
    kind: type
    default: object
    doc: str
    positive: bool = False
    nullable: bool = False


SCHEMA: dict[str, Key] = {
    # simulation
    "n_subjects": Key(int, 20, "number of subjects n", positive=True),
    "n_time": Key(int, 100, "time points per subject T", positive=True),
    "n_regions": Key(int, 10, "number of regions G", positive=True),
    "ndim": Key(int, 3, "tensor order D", positive=True),
    "period": Key(int, 30, "block period P", positive=True),
    "dim_rate": Key(float, 10.0, "Poisson rate of the margin lengths", positive=True),
    "dim_floor": Key(int, 5, "margin lengths below this are redrawn", positive=True),
    "activation_cap": Key(float, 0.05, "max active fraction per region", positive=True),
    "cnr": Key(float, 1.0, "contrast-to-noise ratio", positive=True),
    "snr": Key(float, 5.0, "signal-to-noise ratio of the region effects", positive=True),
    "sigma2": Key(float, 1.0, "noise variance", positive=True),
    "pairs": Key(list, [[0, 1, 0.9], [2, 3, 0.9]], "connected pairs [g, h, rho]"),
    "center": Key(bool, False, "center each voxel series over time"),
    # run
    "seed": Key(int, 0, "base seed"),
    "ranks": Key(list, [1, 2, 3, 4, 5], "PARAFAC ranks to fit"),
    "iterations": Key(int, 1100, "sweeps per chain", positive=True),
    "burnin": Key(int, 100, "leading sweeps excluded from inference"),
    "thin_dic": Key(int, 4, "DIC thinning stride", positive=True),
    "workers": Key(int, 1, "threads for the region updates", positive=True),
    "baseline": Key(bool, False, "also fit the vectorized competitor"),
    "n_inner": Key(int, 50, "griddy-Gibbs inner prior draws M", positive=True),
    "proposal_sd": Key(float, 0.01, "stick-fraction random-walk sd", positive=True),
    "checkpoint_every": Key(int, 100, "sweeps between checkpoints (0 disables)"),
    "init": Key(str, "least_squares", "margin start: least_squares (CP fit of voxelwise LS) or small"),
    "a_lambda": Key(float, None, "margin rate shape (default 3)", positive=True, nullable=True),
    "b_lambda": Key(float, None, "margin rate rate (default a_lambda^(1/(2D)))", positive=True, nullable=True),
    "a_tau": Key(float, None, "global scale shape (default D-1)", positive=True, nullable=True),
    "b_tau": Key(float, None, "global scale rate (default R^(1/D-1))", positive=True, nullable=True),
    "a_sigma": Key(float, 1.0, "noise variance shape", positive=True),
    "b_sigma": Key(float, 0.0512932943875505, "noise variance scale (-log 0.95)", positive=True),
    "a_zeta": Key(float, 1.0, "graphical-lasso rate shape", positive=True),
    "b_zeta": Key(float, 0.01, "graphical-lasso rate rate", positive=True),
    # postprocess
    "b_tune": Key(float, None, "sequential 2-means separation (default data-driven)", positive=True, nullable=True),
}

HYPER = ("a_lambda", "b_lambda", "a_tau", "b_tau", "a_sigma", "b_sigma", "a_zeta", "b_zeta")


def _coerce(name: str, key: Key, value):
    if value is None:
        if key.nullable:
            return None
        raise ConfigError(name, "may not be null")
    if key.kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected true/false, got {value!r}")
        return value
    if key.kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
    elif key.kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        value = float(value)
    elif key.kind is str and not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    elif key.kind is list and not isinstance(value, list):
        raise ConfigError(name, f"expected a list, got {value!r}")
    if key.positive and not value > 0:
        raise ConfigError(name, f"must be positive, got {value!r}")
    return value


def validate(raw: dict | None) -> dict:
    """Defaults merged with ``raw``, type-checked; raises ConfigError naming the field."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping")
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    cfg = {name: key.default for name, key in SCHEMA.items()}
    for name, value in raw.items():
        cfg[name] = _coerce(name, SCHEMA[name], value)
    for i, pair in enumerate(cfg["pairs"]):
        if not (isinstance(pair, list) and len(pair) == 3):
            raise ConfigError("pairs", f"entry {i} must be [g, h, rho]")
    if any(isinstance(r, bool) or not isinstance(r, int) or r < 1 for r in cfg["ranks"]):
        raise ConfigError("ranks", "ranks must be positive integers")
    if cfg["burnin"] < 0 or cfg["burnin"] >= cfg["iterations"]:
        raise ConfigError("burnin", "must satisfy 0 <= burnin < iterations")
    if cfg["init"] not in INIT_MODES:
        raise ConfigError("init", f"must be one of {list(INIT_MODES)}")
    if cfg["checkpoint_every"] < 0:
        raise ConfigError("checkpoint_every", "must be >= 0")
    try:
        sim_spec(cfg).validate()
    except ValueError as exc:
        raise ConfigError(_field_of(str(exc)), str(exc)) from exc
    return cfg


def _field_of(message: str) -> str:
    head = message.split()[0] if message else "<config>"
    return head if head in SCHEMA else "<config>"


def load(path) -> dict:
    if path is None:
        return validate({})
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"invalid YAML: {exc}") from exc
    return validate(raw)


def sim_spec(cfg: dict) -> SimSpec:
    return SimSpec(
        n_subjects=cfg["n_subjects"],
        n_time=cfg["n_time"],
        n_regions=cfg["n_regions"],
        ndim=cfg["ndim"],
        period=cfg["period"],
        dim_rate=cfg["dim_rate"],
        dim_floor=cfg["dim_floor"],
        activation_cap=cfg["activation_cap"],
        cnr=cfg["cnr"],
        snr=cfg["snr"],
        sigma2=cfg["sigma2"],
        pairs=[(int(g), int(h), float(rho)) for g, h, rho in cfg["pairs"]],
        center=cfg["center"],
    )


def run_config(cfg: dict) -> RunConfig:
    hyper = {k: cfg[k] for k in HYPER if cfg[k] is not None}
    return RunConfig(
        ranks=list(cfg["ranks"]),
        iterations=cfg["iterations"],
        burnin=cfg["burnin"],
        thin_dic=cfg["thin_dic"],
        seed=cfg["seed"],
        workers=cfg["workers"],
        baseline=cfg["baseline"],
        hyper=hyper,
        n_inner=cfg["n_inner"],
        proposal_sd=cfg["proposal_sd"],
        checkpoint_every=cfg["checkpoint_every"],
        b_tune=cfg["b_tune"],
        init=cfg["init"],
    )


def describe() -> str:
    """Human-readable schema listing."""
    width = max(map(len, SCHEMA))
    return "\n".join(f"{name:<{width}}  {key.default!r:<24} {key.doc}" for name, key in SCHEMA.items())
