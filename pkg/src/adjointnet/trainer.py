"""Training loop: forward solve, loss, sensitivity, chained gradient, Adam step.

Every loss value in a trace comes from a converged forward solve. The solve's
final residual is stored next to the loss so that can be checked afterwards.
"""

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from .errors import AdjointNetError, InvalidArgumentError, TrainingDivergedError
from .mlp import AdamState, ParamModel, apply_adam_step, forward
from .sensitivity import (SensitivityRequest, chain_loss_gradient, compute_sensitivity,
                          mse_loss)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    solver_id: str
    solver_config: Any
    models: list
    observations: Any  # ObservationSet, or a list of them (one per assimilation phase)
    lr: float = 1e-3
    epochs: int = 100
    method: str = "adjoint"
    loss_threshold: Optional[float] = None
    perturbation_rel_step: float = 1e-4
    model_input: tuple = (1.0,)
    reset_optimizer_between_phases: bool = False
    seed: int = 0
    threads: Optional[int] = None

    def __post_init__(self):
        if isinstance(self.models, ParamModel):
            self.models = [self.models]
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if not self.lr > 0:
            raise InvalidArgumentError("lr must be positive")
        n_out = sum(m.layer_sizes[-1] for m in self.models)
        if n_out != self.solver_config.n_params:
            raise InvalidArgumentError(
                f"models produce {n_out} parameters, solver expects {self.solver_config.n_params}")

    @property
    def phases(self) -> list:
        obs = self.observations
        return list(obs) if isinstance(obs, (list, tuple)) else [obs]


@dataclass
class EpochRecord:
    epoch: int
    phase: int
    loss: float
    params: np.ndarray
    grad_norm: float
    cum_forward_solves: int
    solve_residual: float


@dataclass
class TrainTrace:
    records: list = field(default_factory=list)
    phase_boundaries: list = field(default_factory=list)
    solver_tolerance: float = 0.0

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def params(self) -> np.ndarray:
        return np.array([r.params for r in self.records])

    @property
    def epochs(self) -> np.ndarray:
        return np.array([r.epoch for r in self.records])

    def phase_records(self, phase):
        return [r for r in self.records if r.phase == phase]

    def to_csv(self, path):
        """``epoch,phase,loss,param_0..param_{Np-1},grad_norm,cum_forward_solves``."""
        n_p = self.records[0].params.size if self.records else 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "phase", "loss"] + [f"param_{j}" for j in range(n_p)]
                       + ["grad_norm", "cum_forward_solves"])
            for r in self.records:
                w.writerow([r.epoch, r.phase, repr(r.loss)] + [repr(float(q)) for q in r.params]
                           + [repr(r.grad_norm), r.cum_forward_solves])


@dataclass
class TrainState:
    models: list
    adam: list
    epoch: int = 0
    forward_solves: int = 0


def current_params(models, x) -> np.ndarray:
    return np.concatenate([forward(m, x) for m in models])


def evaluate(config: TrainConfig, models, obs, method=None, with_jacobians=False):
    """One forward solve + sensitivity + chained gradient at the models' current output."""
    x = np.asarray(config.model_input, dtype=float)
    p = current_params(models, x)
    request = SensitivityRequest(config.solver_id, config.solver_config, p, obs.indices,
                                 method or config.method, config.perturbation_rel_step,
                                 config.threads)
    sens = compute_sensitivity(request)
    bundle = chain_loss_gradient(sens, obs, models, x, with_jacobians)
    return p, sens, bundle


def _run_phase(config, state, trace, obs, phase, epochs):
    x = np.asarray(config.model_input, dtype=float)
    for _ in range(epochs):
        try:
            p, sens, bundle = evaluate(config, state.models, obs)
        except AdjointNetError as exc:
            exc.trace = trace
            raise
        if not np.isfinite(bundle.loss_value):
            err = TrainingDivergedError(f"non-finite loss at epoch {state.epoch + 1}")
            err.trace = trace
            raise err
        state.epoch += 1
        state.forward_solves += sens.n_forward_solves
        residual = sens.base.max_residual if sens.base is not None else 0.0
        trace.records.append(EpochRecord(state.epoch, phase, bundle.loss_value, p,
                                         bundle.norm(), state.forward_solves, residual))
        log.debug("epoch %d phase %d loss %.6e p %s", state.epoch, phase, bundle.loss_value, p)
        if config.loss_threshold is not None and bundle.loss_value <= config.loss_threshold:
            return True
        new_models = []
        for k, m in enumerate(state.models):
            try:
                new_models.append(apply_adam_step(m, bundle.d_loss_d_W[k], bundle.d_loss_d_b[k],
                                                  state.adam[k], config.lr))
            except TrainingDivergedError as exc:
                exc.trace = trace
                raise
        state.models = new_models
    return False


def _solver_tolerance(config):
    return getattr(config.solver_config, "newton_tol", 0.0)


def train(config: TrainConfig, state: Optional[TrainState] = None):
    """Train on a single observation set. Returns ``(models, trace)``."""
    if len(config.phases) != 1:
        raise InvalidArgumentError("train takes one observation set; use assimilate for phases")
    return assimilate(config, state)


def assimilate(config: TrainConfig, state: Optional[TrainState] = None):
    """Sequential phases, each ``config.epochs`` long, warm-started from the previous one."""
    phases = config.phases
    for a, b in zip(phases[:-1], phases[1:]):
        if len(b) <= len(a):
            raise InvalidArgumentError("each assimilation phase must add observations")
    if state is None:
        state = TrainState([m.copy() for m in config.models],
                           [AdamState() for _ in config.models])
    trace = TrainTrace(solver_tolerance=_solver_tolerance(config))
    for phase, obs in enumerate(phases, start=1):
        if phase > 1 and config.reset_optimizer_between_phases:
            state.adam = [AdamState() for _ in state.models]
        trace.phase_boundaries.append(state.epoch)
        if _run_phase(config, state, trace, obs, phase, config.epochs):
            break
    return state.models, trace


@dataclass
class ViscosityResult:
    model: ParamModel
    trace: TrainTrace
    nu_estimate: float
    nu_true: Optional[float]

    @property
    def relative_error(self) -> Optional[float]:
        if self.nu_true is None:
            return None
        return abs(self.nu_estimate - self.nu_true) / abs(self.nu_true)


def invert_viscosity(config: TrainConfig, nu_true=None) -> ViscosityResult:
    """Cavity-flow inversion of the kinematic viscosity from a pressure snapshot."""
    if config.solver_id != "cavity":
        raise InvalidArgumentError("invert_viscosity needs the cavity solver")
    if config.method != "perturbation":
        config = replace(config, method="perturbation")
    models, trace = train(config)
    nu = float(current_params(models, np.asarray(config.model_input, dtype=float))[0])
    return ViscosityResult(models[0], trace, nu, nu_true)


def loss_at(config: TrainConfig, models, obs) -> float:
    """Loss of a plain forward solve at the models' current output (no sensitivities)."""
    x = np.asarray(config.model_input, dtype=float)
    p = current_params(models, x)
    fn = SensitivityRequest(config.solver_id, config.solver_config, p, obs.indices,
                            "perturbation").forward_fn()
    pred = fn(config.solver_config, p, obs.indices).observed
    return mse_loss(pred, obs.values, obs.scale)


@dataclass
class WeightCheck:
    model: int
    layer: int
    row: int
    col: int
    assembled: float
    finite_difference: float

    @property
    def rel_diff(self) -> float:
        den = max(abs(self.assembled), abs(self.finite_difference))
        return abs(self.assembled - self.finite_difference) / den if den > 0 else 0.0


def weight_gradient_check(config: TrainConfig, n_weights=5, step=1e-6, seed=0, obs=None):
    """Compare assembled dL/dW against central differences of the full loss.

    Weights are drawn uniformly (seeded) over every weight matrix of every model.
    """
    obs = config.phases[0] if obs is None else obs
    models = [m.copy() for m in config.models]
    _, _, bundle = evaluate(config, models, obs)
    slots = [(k, layer, r, c) for k, m in enumerate(models)
             for layer, W in enumerate(m.weights)
             for r in range(W.shape[0]) for c in range(W.shape[1])]
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(slots), size=min(n_weights, len(slots)), replace=False)
    out = []
    for s in picks:
        k, layer, r, c = slots[s]
        vals = []
        for sign in (1.0, -1.0):
            trial = [m.copy() for m in models]
            trial[k].weights[layer][r, c] += sign * step
            vals.append(loss_at(config, trial, obs))
        fd = (vals[0] - vals[1]) / (2.0 * step)
        out.append(WeightCheck(k, layer, r, c, float(bundle.d_loss_d_W[k][layer][r, c]), fd))
    return out
