"""Experiment configuration: a single JSON tree describing one pipeline run."""

from __future__ import annotations

import importlib.util
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import model as md
from .ising import build_ising
from .meanfield import OptimizerOptions
from .sir import build_sir


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field name."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"config field '{field_name}': {message}")
        self.field = field_name


_MODEL_PARAMS = {
    "ising": {"beta_inv_cost", "field", "coupling", "obs_rate"},
    "sir": {"base_rate", "recovery", "test_rate", "infection_cost", "control_cost"},
}
_REQUIRED_PARAMS = {
    "ising": {"beta_inv_cost"},
    "sir": {"base_rate", "recovery", "test_rate", "infection_cost", "control_cost"},
}


@dataclass
class ExperimentConfig:
    model_name: str
    model_params: dict
    dt: float
    n_steps: int
    s0: list
    pi0_mode: str = "zero"            # "zero" (deterministic rounding) or "multinomial"
    optimizer: dict = field(default_factory=dict)
    n_agents: int = 10000
    n_list: list = field(default_factory=lambda: [100, 400, 1600, 6400])
    replicas: int = 200
    base_seed: int = 0
    output_dir: str = "out"

    def to_tree(self) -> dict:
        return {
            "model": {"name": self.model_name, "params": dict(self.model_params)},
            "dt": self.dt,
            "n_steps": self.n_steps,
            "s0": list(self.s0),
            "pi0_mode": self.pi0_mode,
            "optimizer": dict(self.optimizer),
            "n_agents": self.n_agents,
            "n_list": list(self.n_list),
            "replicas": self.replicas,
            "base_seed": self.base_seed,
            "output_dir": self.output_dir,
        }

    def optimizer_options(self) -> OptimizerOptions:
        opts = OptimizerOptions()
        known = {"max_iters", "tol", "step_rule", "restarts", "seed"}
        for key, val in self.optimizer.items():
            if key not in known:
                raise ConfigError(f"optimizer.{key}", "unknown optimizer option")
            setattr(opts, key, val)
        return opts

    def build_model(self) -> md.ModelSpec:
        name = self.model_name
        if name == "ising":
            return build_ising(**self.model_params)
        if name == "sir":
            return build_sir(**self.model_params)
        if name == "custom-file":
            path = self.model_params.get("path")
            if not path:
                raise ConfigError("model.params.path", "custom-file model needs a 'path'")
            spec = importlib.util.spec_from_file_location("mfcontrol_custom_model", path)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            if not hasattr(module, "build"):
                raise ConfigError("model.params.path", f"{path} does not define build(**params)")
            extra = {k: v for k, v in self.model_params.items() if k != "path"}
            return module.build(**extra)
        raise ConfigError("model.name", f"unknown model {name!r}")

    def validate(self) -> "ExperimentConfig":
        name = self.model_name
        if name in _MODEL_PARAMS:
            unknown = set(self.model_params) - _MODEL_PARAMS[name]
            if unknown:
                raise ConfigError(f"model.params.{sorted(unknown)[0]}",
                                  f"unknown parameter for model {name!r}")
            missing = _REQUIRED_PARAMS[name] - set(self.model_params)
            if missing:
                raise ConfigError(f"model.params.{sorted(missing)[0]}",
                                  f"required parameter missing for model {name!r}")
        if self.dt <= 0:
            raise ConfigError("dt", "must be positive")
        if self.n_steps < 1:
            raise ConfigError("n_steps", "must be a positive integer")
        if self.pi0_mode not in ("zero", "multinomial"):
            raise ConfigError("pi0_mode", "must be 'zero' or 'multinomial'")
        if self.replicas < 2:
            raise ConfigError("replicas", "need at least 2 replicas")
        if self.n_agents < 1:
            raise ConfigError("n_agents", "must be a positive integer")
        mdl = self.build_model()
        try:
            s0 = md.validate_simplex(np.asarray(self.s0, dtype=float), mdl.n_states)
        except md.SimplexError as exc:
            raise ConfigError("s0", str(exc)) from exc
        self._check_rate_bound(mdl, s0)
        return self

    def _check_rate_bound(self, mdl: md.ModelSpec, s0: np.ndarray) -> None:
        """Reject configurations that would violate max exit rate * dt < 1."""
        rng = np.random.default_rng(0)
        if mdl.n_controls > 0:
            _, alpha = md.hamiltonian(mdl, s0, np.zeros(mdl.n_states))
        else:
            alpha = np.zeros(0)
        points = [s0] + [md.random_simplex(rng, mdl.n_states) for _ in range(16)]
        worst = 0.0
        for sigma in points:
            beta = md.rate_matrix(mdl, sigma, alpha)
            worst = max(worst, float(beta.sum(axis=1).max()))
        if worst * self.dt >= 1.0:
            raise ConfigError(
                "dt", f"dt * max exit rate = {worst * self.dt:.4g} >= 1 at the baseline control"
            )


def parse_tree(tree: dict) -> ExperimentConfig:
    try:
        model = tree["model"]
        name = model["name"]
        params = dict(model.get("params", {}))
    except (KeyError, TypeError) as exc:
        raise ConfigError("model", "missing or malformed model block") from exc
    for req in ("dt", "n_steps", "s0"):
        if req not in tree:
            raise ConfigError(req, "required field missing")
    cfg = ExperimentConfig(
        model_name=name,
        model_params=params,
        dt=float(tree["dt"]),
        n_steps=int(tree["n_steps"]),
        s0=[float(x) for x in tree["s0"]],
        pi0_mode=tree.get("pi0_mode", "zero"),
        optimizer=dict(tree.get("optimizer", {})),
        n_agents=int(tree.get("n_agents", 10000)),
        n_list=[int(x) for x in tree.get("n_list", [100, 400, 1600, 6400])],
        replicas=int(tree.get("replicas", 200)),
        base_seed=int(tree.get("base_seed", 0)),
        output_dir=str(tree.get("output_dir", "out")),
    )
    return cfg.validate()


def load(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            tree = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError("(file)", f"not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError("(file)", str(exc)) from exc
    return parse_tree(tree)


def save(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        json.dump(cfg.to_tree(), fh, indent=2)
        fh.write("\n")


def default_output_dir() -> str:
    return os.environ.get("MFCONTROL_OUT", "out")
