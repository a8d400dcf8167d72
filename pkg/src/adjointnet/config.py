"""Experiment configuration: strict JSON parsing with defaults filled in.

Every block is a flat JSON object. Keys not listed in the schema are rejected,
and the error names the key and the line it appears on.
"""

import copy
import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ConfigError

MODES = ("simulate", "invert", "assimilate", "gradcheck")
PRESETS = ("homog", "assim", "hetero", "cavity")

# None marks an optional key that has no static default.
DARCY_KEYS = {
    "type": "darcy",
    "n_cells": 100,
    "length": 100.0,
    "permeability": [1e-14],
    "zone_sizes": None,
    "porosity": 0.25,
    "viscosity": 1.0e-3,
    "rho0": 1000.0,
    "compressibility": 1.0e-9,
    "p_ref": 1.5e5,
    "p_left": 1.0e6,
    "p_right": 1.5e5,
    "p_init": 1.5e5,
    "dt": None,
    "t_obs": "front",
    "newton_tol": 1e-11,
    "newton_max_iters": 25,
}
CAVITY_KEYS = {
    "type": "cavity",
    "nx": 41,
    "ny": 41,
    "lx": 4.0,
    "ly": 4.0,
    "rho": 1.0,
    "nu": 0.1,
    "dt": None,
    "nt": 300,
    "n_poisson_iters": 50,
    "lid_speed": 1.0,
}
OBS_KEYS = {
    "count": 10,
    "noise_magnitude": 0.0,
    "phases": None,
    "pressure_scale": 1.0,
}
MODEL_KEYS = {
    "layer_sizes": [1, 256, 256, 1],
    "transform": "exp10_scaled",
    "transform_scale": 0.1,
    "transform_shift": -14.0,
    "input": [1.0],
}
TRAINING_KEYS = {
    "lr": 1e-3,
    "epochs": 100,
    "method": "adjoint",
    "loss_threshold": None,
    "perturbation_rel_step": 1e-4,
    "reset_optimizer_between_phases": False,
}
GRADCHECK_KEYS = {
    "perturbation_rel_step": 1e-6,
    "n_weights": 5,
    "weight_fd_step": 1e-6,
}
TOP_KEYS = ("name", "mode", "seed", "output_dir", "solver", "observations", "model",
            "training", "gradcheck")
REQUIRED_BLOCKS = {
    "simulate": ("solver",),
    "invert": ("solver", "observations", "model", "training"),
    "assimilate": ("solver", "observations", "model", "training"),
    "gradcheck": ("solver", "observations", "model"),
}


@dataclass
class ExperimentConfig:
    name: str
    mode: str
    solver: dict
    observations: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    training: dict = field(default_factory=dict)
    gradcheck: dict = field(default_factory=dict)
    output_dir: str = "out"
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mode": self.mode,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "solver": copy.deepcopy(self.solver),
            "observations": copy.deepcopy(self.observations),
            "model": copy.deepcopy(self.model),
            "training": copy.deepcopy(self.training),
            "gradcheck": copy.deepcopy(self.gradcheck),
        }


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _fail(msg, key, text):
    line = _line_of(text, key)
    where = f" (line {line})" if line else ""
    raise ConfigError(f"{msg}{where}", key=key, line=line)


def _fill(block, schema, block_name, text):
    if not isinstance(block, dict):
        _fail(f"block '{block_name}' must be an object", block_name, text)
    for key in block:
        if key not in schema:
            _fail(f"unknown key '{key}' in '{block_name}'", key, text)
    out = {}
    for key, default in schema.items():
        out[key] = copy.deepcopy(block[key]) if key in block else copy.deepcopy(default)
    return out


def _positive(block, keys, block_name, text):
    for key in keys:
        val = block.get(key)
        if val is not None and not (isinstance(val, (int, float)) and val > 0):
            _fail(f"'{block_name}.{key}' must be positive, got {val!r}", key, text)


def _derive_dt(solver):
    """Stability/accuracy-derived time step when the config leaves dt out."""
    if solver["type"] == "cavity":
        from .cavity import default_dt
        from .meshfield import make_grid2d
        grid = make_grid2d(solver["nx"], solver["ny"], solver["lx"], solver["ly"])
        return default_dt(grid, solver["nu"], solver["lid_speed"])
    # backward Euler: keep the diffusion number k*dt/(phi*mu*c_f*dx^2) at 10
    dx = solver["length"] / solver["n_cells"]
    if solver["compressibility"] == 0:
        return 1.0
    kappa = max(solver["permeability"]) / (
        solver["porosity"] * solver["viscosity"] * solver["compressibility"])
    return 10.0 * dx * dx / kappa


def validate(raw: dict, text=None) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in TOP_KEYS:
            _fail(f"unknown top-level key '{key}'", key, text)
    mode = raw.get("mode")
    if mode not in MODES:
        _fail(f"'mode' must be one of {MODES}, got {mode!r}", "mode", text)
    for block in REQUIRED_BLOCKS[mode]:
        if block not in raw:
            raise ConfigError(f"mode '{mode}' requires a '{block}' block", key=block)

    solver_raw = raw["solver"]
    if not isinstance(solver_raw, dict):
        _fail("'solver' must be an object", "solver", text)
    kind = solver_raw.get("type", "darcy")
    if kind == "darcy":
        solver = _fill(solver_raw, DARCY_KEYS, "solver", text)
        if not isinstance(solver["permeability"], list):
            solver["permeability"] = [solver["permeability"]]
        _positive(solver, ("n_cells", "length", "porosity", "viscosity", "rho0", "dt",
                           "newton_tol", "newton_max_iters"), "solver", text)
        if any(not (isinstance(k, (int, float)) and k > 0) for k in solver["permeability"]):
            _fail("'solver.permeability' entries must be positive", "permeability", text)
        zs = solver["zone_sizes"]
        if zs is not None:
            if sum(zs) != solver["n_cells"] or len(zs) != len(solver["permeability"]):
                _fail("'zone_sizes' must sum to n_cells and match permeability length",
                      "zone_sizes", text)
        elif len(solver["permeability"]) != 1:
            _fail("several permeabilities need 'zone_sizes'", "permeability", text)
        t_obs = solver["t_obs"]
        if not (t_obs == "front" or (isinstance(t_obs, (int, float)) and t_obs > 0)):
            _fail("'solver.t_obs' must be \"front\" or a positive time", "t_obs", text)
    elif kind == "cavity":
        solver = _fill(solver_raw, CAVITY_KEYS, "solver", text)
        _positive(solver, ("nx", "ny", "lx", "ly", "rho", "nu", "dt", "nt", "n_poisson_iters"),
                  "solver", text)
    else:
        _fail(f"unknown solver type {kind!r}", "type", text)
    if solver["dt"] is None:
        solver["dt"] = _derive_dt(solver)

    obs = _fill(raw.get("observations", {}), OBS_KEYS, "observations", text)
    count = obs["count"]
    if not (count == "all" or (isinstance(count, int) and count >= 1)):
        _fail("'observations.count' must be a positive integer or \"all\"", "count", text)
    if obs["noise_magnitude"] < 0:
        _fail("'observations.noise_magnitude' must be >= 0", "noise_magnitude", text)
    if mode == "assimilate":
        phases = obs["phases"]
        if not phases or len(phases) < 2 or any(b <= a for a, b in zip(phases[:-1], phases[1:])):
            _fail("'observations.phases' needs >= 2 strictly growing counts", "phases", text)

    model = _fill(raw.get("model", {}), MODEL_KEYS, "model", text)
    if model["transform"] not in ("exp10_scaled", "affine"):
        _fail(f"unknown transform {model['transform']!r}", "transform", text)
    training = _fill(raw.get("training", {}), TRAINING_KEYS, "training", text)
    if kind != "darcy" and "method" not in raw.get("training", {}):
        training["method"] = "perturbation"
    _positive(training, ("lr", "epochs", "perturbation_rel_step"), "training", text)
    if training["method"] not in ("adjoint", "perturbation"):
        _fail(f"unknown method {training['method']!r}", "method", text)
    if training["method"] == "adjoint" and kind != "darcy":
        _fail("the adjoint method is only available for the darcy solver", "method", text)
    gradcheck = _fill(raw.get("gradcheck", {}), GRADCHECK_KEYS, "gradcheck", text)

    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        _fail("'seed' must be a non-negative integer", "seed", text)
    return ExperimentConfig(
        name=str(raw.get("name", mode)), mode=mode, solver=solver, observations=obs,
        model=model, training=training, gradcheck=gradcheck,
        output_dir=str(raw.get("output_dir", "out")), seed=seed)


def loads(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg} (line {exc.lineno})", line=exc.lineno) from exc
    return validate(raw, text)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return loads(text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}", key=exc.key, line=exc.line) from exc


def dumps(config: ExperimentConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, sort_keys=False) + "\n"


def echo_config(config: ExperimentConfig, out_dir) -> Path:
    """Write the fully-defaulted config next to the results."""
    out = Path(out_dir) / "config.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(dumps(config))
    return out


def preset_text(name: str) -> str:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}", key=name)
    return resources.files("adjointnet").joinpath("presets").joinpath(f"{name}.json").read_text()


def load_preset(name: str) -> ExperimentConfig:
    return loads(preset_text(name))
