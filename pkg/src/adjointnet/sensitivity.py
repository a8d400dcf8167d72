"""Sensitivities du/dp at the observation points, and the chained loss gradient.

Two engines:

* ``perturbation_sensitivity`` re-solves once per parameter (forward differences),
  N_p + 1 solves in total, and works for any solver.
* ``adjoint_sensitivity`` runs the Darcy forward problem once, then sweeps
  backward through every backward-Euler step with transposed tridiagonal solves.
  It returns the exact derivative of the discrete forward map.
"""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np

from . import cavity, darcy, kernels
from .errors import (AdjointFailureError, AdjointNetError, InvalidArgumentError,
                     SensitivityError)
from .mlp import backprop, param_weight_jacobian


@dataclass
class ForwardSolve:
    """Observed values of one forward solve plus what produced them."""

    observed: np.ndarray
    solution: Any = None
    max_residual: float = 0.0


def _darcy_forward(config, params, indices) -> ForwardSolve:
    cfg = config.with_params(params)
    traj = darcy.solve_forward(cfg)
    return ForwardSolve(traj.final.values[indices].copy(), traj, traj.max_relative_residual())


def _cavity_forward(config, params, indices) -> ForwardSolve:
    cfg = config.with_params(params)
    state = cavity.run(cfg)
    return ForwardSolve(state.p.values[indices].copy(), state, 0.0)


SOLVERS = {"darcy": _darcy_forward, "cavity": _cavity_forward}


@dataclass
class SensitivityRequest:
    """What to differentiate.

    ``solver_id`` is ``"darcy"``, ``"cavity"``, or a callable
    ``(config, params, indices) -> ForwardSolve`` (used for mock solvers).
    Observations are taken from the final state of the solve.
    """

    solver_id: Union[str, Callable]
    config: Any
    params: np.ndarray
    indices: np.ndarray
    method: str = "perturbation"
    perturbation_rel_step: float = 1e-4
    threads: Optional[int] = None

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=float).ravel()
        self.indices = np.asarray(self.indices, dtype=np.int64).ravel()
        if self.method not in ("adjoint", "perturbation"):
            raise InvalidArgumentError(f"unknown sensitivity method {self.method!r}")
        if self.method == "adjoint" and self.solver_id != "darcy":
            raise InvalidArgumentError("the adjoint engine is only available for the darcy solver")
        if not (0.0 < self.perturbation_rel_step < 0.1):
            raise InvalidArgumentError("perturbation_rel_step must lie in (0, 0.1)")
        if not callable(self.solver_id) and self.solver_id not in SOLVERS:
            raise InvalidArgumentError(f"unknown solver {self.solver_id!r}")

    def forward_fn(self):
        return self.solver_id if callable(self.solver_id) else SOLVERS[self.solver_id]


@dataclass
class SensitivityResult:
    du_dp: np.ndarray
    forward_solution_at_obs: np.ndarray
    n_forward_solves: int
    base: Optional[ForwardSolve] = field(default=None, repr=False)
    n_backward_sweeps: int = 0


def thread_count(requested=None) -> int:
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("ADJOINTNET_THREADS", "")
    return max(1, int(env)) if env.strip() else 1


def perturbation_sensitivity(request: SensitivityRequest) -> SensitivityResult:
    fn = request.forward_fn()
    p = request.params
    base = fn(request.config, p, request.indices)
    steps = request.perturbation_rel_step * np.abs(p)
    steps[steps == 0] = request.perturbation_rel_step

    def perturbed(j):
        q = p.copy()
        q[j] += steps[j]
        try:
            return fn(request.config, q, request.indices).observed
        except AdjointNetError as exc:
            raise SensitivityError(f"perturbed solve for parameter {j} failed: {exc}", j) from exc

    n_threads = min(thread_count(request.threads), p.size)
    if n_threads > 1:
        with ThreadPoolExecutor(n_threads) as pool:
            columns = list(pool.map(perturbed, range(p.size)))
    else:
        columns = [perturbed(j) for j in range(p.size)]

    du_dp = np.empty((request.indices.size, p.size))
    for j, col in enumerate(columns):
        du_dp[:, j] = (col - base.observed) / steps[j]
    return SensitivityResult(du_dp, base.observed, p.size + 1, base)


def _transpose_tridiag(lower, diag, upper):
    lt = np.zeros_like(lower)
    ut = np.zeros_like(upper)
    lt[1:] = upper[:-1]
    ut[:-1] = lower[1:]
    return lt, diag, ut


def adjoint_sensitivity(request: SensitivityRequest, trajectory=None) -> SensitivityResult:
    """Discrete adjoint of the backward-Euler Darcy map, all observations at once.

    With A_n = dF_n/du_n, B_n = dF_n/du_{n-1} and C_n = dF_n/dp::

        A_N^T lam_N = E
        A_n^T lam_n = -B_{n+1}^T lam_{n+1}
        du_obs/dp   = -sum_n C_n^T lam_n
    """
    if request.solver_id != "darcy":
        raise InvalidArgumentError("the adjoint engine is only available for the darcy solver")
    cfg = request.config.with_params(request.params)
    if trajectory is None:
        trajectory = darcy.solve_forward(cfg)
    snaps = [s.values for s in trajectory.snapshots]
    n_cells = cfg.grid.n_cells
    idx = request.indices
    n_obs = idx.size

    rhs = np.zeros((n_cells, n_obs))
    rhs[idx, np.arange(n_obs)] = 1.0
    b_diag = darcy.old_state_jacobian(cfg)
    trans = darcy.transmissibility(cfg)
    sens = np.zeros((cfg.n_params, n_obs))
    for n in range(len(snaps) - 1, 0, -1):
        _, lower, diag, upper = kernels.darcy_assemble(
            snaps[n], snaps[n - 1], trans, cfg.p_left, cfg.p_right, cfg.grid.dx,
            cfg.porosity, cfg.viscosity, cfg.rho0, cfg.compressibility, cfg.p_ref, cfg.dt)
        lt, dt_, ut = _transpose_tridiag(lower, diag, upper)
        lam = kernels.thomas(lt, dt_, ut, rhs)
        if not np.all(np.isfinite(lam)):
            raise AdjointFailureError(f"singular transposed Jacobian at step {n}")
        c = darcy.param_jacobian(cfg, snaps[n], snaps[n - 1])
        sens -= c.T @ lam
        rhs = -b_diag[:, None] * lam

    observed = trajectory.final.values[idx].copy()
    base = ForwardSolve(observed, trajectory, trajectory.max_relative_residual())
    return SensitivityResult(sens.T.copy(), observed, 1, base, n_backward_sweeps=1)


def compute_sensitivity(request: SensitivityRequest) -> SensitivityResult:
    if request.method == "adjoint":
        return adjoint_sensitivity(request)
    return perturbation_sensitivity(request)


# --------------------------------------------------------------------------
# loss and chain rule

def mse_loss(predicted, observed, scale=1.0) -> float:
    r = (np.asarray(predicted) - np.asarray(observed)) * scale
    return float(np.mean(r * r))


def loss_gradient_wrt_u(predicted, observed, scale=1.0) -> np.ndarray:
    r = np.asarray(predicted) - np.asarray(observed)
    return 2.0 * scale * scale * r / r.size


@dataclass
class GradientBundle:
    """Per-model gradients of the loss; ``d_p_d_W`` is filled only on request."""

    d_loss_d_W: list
    d_loss_d_b: list
    d_loss_d_p: np.ndarray
    loss_value: float
    d_p_d_W: Optional[list] = None
    d_p_d_b: Optional[list] = None

    def norm(self) -> float:
        total = 0.0
        for gw, gb in zip(self.d_loss_d_W, self.d_loss_d_b):
            total += sum(float(np.sum(g * g)) for g in gw)
            total += sum(float(np.sum(g * g)) for g in gb)
        return float(np.sqrt(total))


def chain_loss_gradient(sens: SensitivityResult, obs, models, x, with_jacobians=False) -> GradientBundle:
    """dL/dW = dL/du . du/dp . dp/dW, per model; model outputs concatenate into p."""
    if not isinstance(models, (list, tuple)):
        models = [models]
    obs_values = np.asarray(obs.values)
    pred = np.asarray(sens.forward_solution_at_obs)
    if pred.shape != obs_values.shape:
        raise InvalidArgumentError(
            f"{pred.size} predictions but {obs_values.size} observations")
    n_p = sum(m.layer_sizes[-1] for m in models)
    if sens.du_dp.shape != (obs_values.size, n_p):
        raise InvalidArgumentError(
            f"du_dp has shape {sens.du_dp.shape}, expected {(obs_values.size, n_p)}")
    dl_du = loss_gradient_wrt_u(pred, obs_values, obs.scale)
    dl_dp = dl_du @ sens.du_dp
    grads_w, grads_b, jac_w, jac_b = [], [], [], []
    offset = 0
    for m in models:
        n_out = m.layer_sizes[-1]
        gw, gb = backprop(m, x, dl_dp[offset:offset + n_out])
        grads_w.append(gw)
        grads_b.append(gb)
        if with_jacobians:
            jw, jb = param_weight_jacobian(m, x)
            jac_w.append(jw)
            jac_b.append(jb)
        offset += n_out
    return GradientBundle(grads_w, grads_b, dl_dp, mse_loss(pred, obs_values, obs.scale),
                          jac_w if with_jacobians else None, jac_b if with_jacobians else None)
