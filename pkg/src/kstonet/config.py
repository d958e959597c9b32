"""Run configuration documents (JSON or TOML), presets and validation."""

from __future__ import annotations

import copy
import json
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError
from .glm import LassoConfig
from .imputation import HmcConfig
from .kernel import KernelSpec
from .model import NetConfig
from .svr import SvrConfig
from .trainer import TrainConfig

PAPER_DEFAULT: dict[str, Any] = {
    "seed": 0,
    "threads": 1,
    "out": "kstonet-run",
    "net": {"hidden_widths": [5], "activation": "tanh", "task": "regression",
            "c_noise": 10.0, "eps_noise": 0.01, "sigma_sq": [0.01], "tempered_output": True},
    "hmc": {"steps": 25, "lr": 5e-4, "alpha": 0.1},
    "svr": {"cost": 10.0, "epsilon": 0.01, "kkt_tol": 1e-3, "max_iter": 10_000_000,
            "cost_scaling": "total"},
    "kernel": {"gamma": None, "per_unit_gamma": None},
    "glm": {"solver": "lasso", "lam": 1e-4, "tol": 1e-8, "max_sweeps": 10_000},
    "train": {"epochs": 40, "average_last_k": 1, "init_scale": 0.1, "save_snapshots": None},
    "data": {"generator": None, "params": {}, "n_test": 0, "train_csv": None, "test_csv": None,
             "label": "y", "features": None, "task": None, "standardize": False},
}

PRESETS = {"paper-default": PAPER_DEFAULT}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown configuration key {where!r}")
        if isinstance(base[key], dict) and key != "params":
            if not isinstance(val, dict):
                raise ConfigError(f"{where!r} must be a table")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def read_document(path) -> dict:
    """Parse a JSON or TOML file (by extension; JSON is tried first otherwise)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() == ".toml":
        return _toml(text, path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        if path.suffix.lower() == ".json":
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return _toml(text, path)


def _toml(text: str, path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from None


def resolve(doc: Optional[dict] = None, overrides: Optional[dict] = None) -> dict:
    """Effective configuration: preset, then document, then overrides (CLI flags)."""
    doc = dict(doc or {})
    preset = doc.pop("preset", "paper-default")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    eff = _merge(PRESETS[preset], doc)
    if overrides:
        eff = _merge(eff, {k: v for k, v in overrides.items() if v is not None})
    eff["preset"] = preset
    validate(eff)
    return eff


def net_config(eff: dict) -> NetConfig:
    net = dict(eff["net"])
    widths = tuple(net.pop("hidden_widths"))
    s2 = net.pop("sigma_sq")
    s2 = tuple(s2) if isinstance(s2, (list, tuple)) else (float(s2),) * len(widths)
    return NetConfig(hidden_widths=widths, sigma_sq=s2, **net)


def train_config(eff: dict) -> TrainConfig:
    glm = dict(eff["glm"])
    solver = glm.pop("solver")
    if solver not in ("lasso", "ols"):
        raise ConfigError(f"glm.solver must be 'lasso' or 'ols', got {solver!r}")
    k = eff["kernel"]
    kernel = None
    if k["gamma"] is not None or k["per_unit_gamma"] is not None:
        pug = k["per_unit_gamma"]
        kernel = KernelSpec(k["gamma"] if k["gamma"] is not None else pug[0],
                            None if pug is None else tuple(pug))
    hmc = dict(eff["hmc"])
    lr = hmc.pop("lr")
    tr = eff["train"]
    return TrainConfig(
        epochs=int(tr["epochs"]),
        hmc=HmcConfig(lr=tuple(lr) if isinstance(lr, list) else lr, seed=int(eff["seed"]), **hmc),
        svr=SvrConfig(**eff["svr"]),
        kernel=kernel,
        lasso=LassoConfig(**glm),
        ols=solver == "ols",
        average_last_k=int(tr["average_last_k"]),
        seed=int(eff["seed"]),
        threads=int(eff["threads"]),
        init_scale=float(tr["init_scale"]),
    )


def validate(eff: dict) -> None:
    """Build every typed config once so errors surface before any compute."""
    try:
        net_config(eff)
        train_config(eff)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    data = eff["data"]
    if data["generator"] is not None and data["train_csv"] is not None:
        raise ConfigError("data: give either a generator or train_csv, not both")


def write_effective(eff: dict, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "effective_config.json"
    path.write_text(json.dumps(eff, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
