"""Build problems from an ExperimentConfig, run them, and write the artifacts.

Artifacts per run (in the output directory):

* ``config.json``  fully-defaulted echo of the config
* ``trace.csv``    one row per epoch (invert / assimilate)
* ``fields.csv``   final field of the truth (simulate) or of the estimate
* ``observations.csv``
* ``model_<k>.csv`` network checkpoints
* ``gradcheck.csv`` and ``weight_check.csv`` (gradcheck)
* ``summary.json``
* SVG plots
"""

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import cavity, darcy, plotting
from .config import ExperimentConfig, echo_config
from .errors import InvalidArgumentError
from .meshfield import (ObservationSet, choose_indices, make_grid1d, make_grid2d,
                        sample_observations, write_observations_csv)
from .mlp import OutputTransform, init_model, save_model
from .sensitivity import (SensitivityRequest, adjoint_sensitivity, loss_gradient_wrt_u,
                          perturbation_sensitivity)
from .trainer import TrainConfig, assimilate, current_params, weight_gradient_check

log = logging.getLogger(__name__)

# Values the four presets are meant to reproduce, copied into summary.json.
PAPER_EXPECTATIONS = {
    "homog": {"k_true": [1e-14], "relative_tolerance": 0.10, "epochs_to_converge": 30,
              "plateau_loss": 0.0015},
    "assim": {"k_true": [1e-14], "epochs_per_phase": 200, "phase_observations": [2, 3, 4],
              "phase3_closer_than_phase1": True},
    "hetero": {"k_true": [1e-13, 1e-15], "relative_tolerance": 0.15, "epochs_to_converge": 100,
               "final_loss": 1e-8, "profile_relative_l2": 0.01},
    "cavity": {"nu_true": [0.1], "nu_estimate": 0.1021, "relative_error": 0.021,
               "relative_tolerance": 0.05, "final_loss": 1e-8},
}


@dataclass
class Problem:
    solver_id: str
    truth: Any              # DarcyConfig or CavityConfig at the true parameters
    truth_solution: Any     # Trajectory or FlowState
    observations: Optional[ObservationSet]
    t_obs: Optional[float] = None


@dataclass
class RunResult:
    summary: dict
    problem: Problem
    trace: Any = None
    models: Optional[list] = None
    out_dir: Optional[Path] = None


def darcy_config(solver: dict) -> darcy.DarcyConfig:
    """Truth config with ``t_end`` set to the observation time."""
    grid = make_grid1d(solver["n_cells"], solver["length"])
    zones = None
    if solver["zone_sizes"] is not None:
        zones = np.repeat(np.arange(len(solver["zone_sizes"])), solver["zone_sizes"])
    cfg = darcy.DarcyConfig(
        grid, np.array(solver["permeability"], dtype=float), solver["porosity"],
        solver["viscosity"], solver["rho0"], solver["compressibility"], solver["p_ref"],
        solver["p_left"], solver["p_right"], solver["p_init"], solver["dt"], solver["dt"],
        solver["newton_tol"], int(solver["newton_max_iters"]), zones)
    t_obs = solver["t_obs"]
    if t_obs == "front":
        t_obs = darcy.front_arrival_time(cfg)
    n = max(1, int(round(t_obs / cfg.dt)))
    return replace(cfg, t_end=n * cfg.dt)


def cavity_config(solver: dict) -> cavity.CavityConfig:
    grid = make_grid2d(solver["nx"], solver["ny"], solver["lx"], solver["ly"])
    return cavity.CavityConfig(grid, solver["rho"], solver["nu"], solver["dt"], int(solver["nt"]),
                               int(solver["n_poisson_iters"]), solver["lid_speed"])


def build_problem(cfg: ExperimentConfig, observe=True) -> Problem:
    solver = cfg.solver
    if solver["type"] == "darcy":
        truth = darcy_config(solver)
        sol = darcy.solve_forward(truth)
        final = sol.final
        t_obs = truth.t_end
    else:
        truth = cavity_config(solver)
        sol = cavity.run(truth)
        final = sol.p
        t_obs = truth.nt * truth.dt
    obs = None
    if observe:
        o = cfg.observations
        n = final.values.size
        idx = np.arange(n) if o["count"] == "all" else choose_indices(n, o["count"], cfg.seed)
        obs = sample_observations(final, idx, o["noise_magnitude"], cfg.seed, o["pressure_scale"])
    return Problem(solver["type"], truth, sol, obs, t_obs)


def build_models(cfg: ExperimentConfig, n_params: int) -> list:
    """One network per inverted parameter; network k is seeded with ``seed + k``."""
    m = cfg.model
    if m["layer_sizes"][-1] != 1:
        raise InvalidArgumentError("each network outputs one parameter; set the last layer to 1")
    transform = OutputTransform(m["transform"], m["transform_scale"], m["transform_shift"])
    return [init_model(m["layer_sizes"], transform, cfg.seed + k) for k in range(n_params)]


def train_config(cfg: ExperimentConfig, problem: Problem, method=None, phases=None) -> TrainConfig:
    t = cfg.training
    models = build_models(cfg, problem.truth.n_params)
    return TrainConfig(
        problem.solver_id, problem.truth, models,
        problem.observations if phases is None else phases,
        lr=t["lr"], epochs=int(t["epochs"]), method=method or t["method"],
        loss_threshold=t["loss_threshold"], perturbation_rel_step=t["perturbation_rel_step"],
        model_input=tuple(cfg.model["input"]),
        reset_optimizer_between_phases=t["reset_optimizer_between_phases"], seed=cfg.seed)


def plateau_epoch(params, tol=0.01) -> int:
    """First epoch after which every estimate stays within ``tol`` (relative) of its final value."""
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if params.shape[0] == 1 and params.shape[1] > 1:
        params = params.T
    final = params[-1]
    off = np.any(np.abs(params - final) > tol * np.abs(final), axis=1)
    bad = np.nonzero(off)[0]
    return int(bad[-1] + 2) if bad.size else 1


def window_change(params, window=20) -> float:
    """Largest (max - min)/|mean| over the last ``window`` epochs, across parameters."""
    tail = np.atleast_2d(np.asarray(params, dtype=float)[-window:])
    return float(np.max((tail.max(axis=0) - tail.min(axis=0)) / np.abs(tail.mean(axis=0))))


def _rel(est, truth):
    est, truth = np.asarray(est, dtype=float), np.asarray(truth, dtype=float)
    return np.abs(est - truth) / np.abs(truth)


def _floats(a):
    return [float(v) for v in np.atleast_1d(a)]


def _darcy_fields(problem, predicted=None):
    grid = problem.truth.grid
    obs = problem.observations
    return {"kind": "darcy", "x": grid.cell_centers, "true": problem.truth_solution.final.values,
            "predicted": predicted,
            "obs_x": None if obs is None else grid.cell_centers[obs.indices],
            "obs_p": None if obs is None else obs.values}


def _cavity_fields(state):
    u, v, p = state.arrays()
    return {"kind": "cavity", "x": state.grid.x, "y": state.grid.y, "p": p, "u": u, "v": v}


def run_simulate(cfg, out):
    problem = build_problem(cfg, observe=False)
    run = RunResult({}, problem)
    summary = {"truth": _floats(problem.truth.params()), "t_obs": problem.t_obs}
    if problem.solver_id == "darcy":
        traj = problem.truth_solution
        darcy.write_trajectory_csv(out / "fields.csv", traj)
        mb = darcy.mass_balance_report(traj, problem.truth)
        summary.update(mass_balance_relative_imbalance=mb.relative_imbalance,
                       max_newton_residual=traj.max_relative_residual(),
                       n_steps=problem.truth.n_steps)
        plotting.emit_plots(None, _darcy_fields(problem), out)
    else:
        state = problem.truth_solution
        cavity.write_state_csv(out / "fields.csv", state)
        summary.update(max_abs_divergence=float(np.abs(cavity.divergence(state)).max()),
                       n_steps=problem.truth.nt)
        plotting.emit_plots(None, _cavity_fields(state), out)
    run.summary = summary
    return run


def run_training(cfg, out, method=None):
    problem = build_problem(cfg)
    obs = problem.observations
    phases = None
    if cfg.mode == "assimilate":
        phases = [obs.subset(c) for c in cfg.observations["phases"][:-1]]
        phases.append(obs.subset(cfg.observations["phases"][-1]))
    tc = train_config(cfg, problem, method, phases)
    t0 = time.perf_counter()
    models, trace = assimilate(tc)
    runtime = time.perf_counter() - t0

    x = np.asarray(tc.model_input, dtype=float)
    truth = problem.truth.params()
    estimate = current_params(models, x)
    trace.to_csv(out / "trace.csv")
    write_observations_csv(out / "observations.csv", obs, problem.truth.grid)
    for k, m in enumerate(models):
        save_model(out / f"model_{k}.csv", m)

    summary = {
        "truth": _floats(truth),
        "estimate": _floats(estimate),
        "relative_error": _floats(_rel(estimate, truth)),
        "epochs": len(trace),
        "epochs_to_plateau": plateau_epoch(trace.params),
        "last20_relative_change": window_change(trace.params),
        "final_loss": float(trace.losses[-1]),
        "min_loss": float(trace.losses.min()),
        "method": tc.method,
        "n_observations": len(obs),
        "t_obs": problem.t_obs,
        "cum_forward_solves": trace.records[-1].cum_forward_solves,
        "max_solve_residual": float(max(r.solve_residual for r in trace.records)),
        "runtime_s": runtime,
    }
    if phases is not None:
        ends = [trace.phase_records(ph)[-1].params for ph in range(1, len(phases) + 1)]
        summary["phase_estimates"] = [_floats(e) for e in ends]
        summary["phase_abs_error"] = [_floats(np.abs(e - truth)) for e in ends]
    if problem.solver_id == "darcy":
        est_cfg = problem.truth.with_params(estimate)
        est_traj = darcy.solve_forward(est_cfg)
        true_u = problem.truth_solution.final.values
        summary["profile_relative_l2"] = float(
            np.linalg.norm(est_traj.final.values - true_u) / np.linalg.norm(true_u))
        summary["mass_balance_relative_imbalance"] = max(
            darcy.mass_balance_report(problem.truth_solution, problem.truth).relative_imbalance,
            darcy.mass_balance_report(est_traj, est_cfg).relative_imbalance)
        darcy.write_trajectory_csv(out / "fields.csv", est_traj)
        fields = _darcy_fields(problem, est_traj.final.values)
        label = "permeability [m^2]"
    else:
        state = cavity.run(problem.truth.with_params(estimate))
        cavity.write_state_csv(out / "fields.csv", state)
        fields = _cavity_fields(state)
        label = "viscosity [m^2/s]"
    plotting.emit_plots(trace, fields, out, truth, label)
    return RunResult(summary, problem, trace, models)


def run_gradcheck(cfg, out):
    """Adjoint vs. perturbation dL/dp at the initial networks, plus a dL/dW spot check."""
    problem = build_problem(cfg)
    if problem.solver_id != "darcy":
        raise InvalidArgumentError("gradcheck compares against the adjoint engine, "
                                   "which only exists for the darcy solver")
    tc = train_config(cfg, problem, "adjoint")
    g = cfg.gradcheck
    obs = problem.observations
    p = current_params(tc.models, np.asarray(tc.model_input, dtype=float))
    adj = adjoint_sensitivity(SensitivityRequest("darcy", problem.truth, p, obs.indices, "adjoint"))
    per = perturbation_sensitivity(SensitivityRequest(
        "darcy", problem.truth, p, obs.indices, "perturbation", g["perturbation_rel_step"]))
    r = loss_gradient_wrt_u(adj.forward_solution_at_obs, obs.values, obs.scale)
    dl_adj, dl_per = r @ adj.du_dp, r @ per.du_dp
    rows = []
    for j in range(p.size):
        den = float(max(abs(dl_adj[j]), abs(dl_per[j])))
        a, b = float(dl_adj[j]), float(dl_per[j])
        rows.append((j, a, b, abs(a - b) / den if den else 0.0))
    with open(out / "gradcheck.csv", "w") as fh:
        fh.write("param_index,adjoint,perturbation,rel_diff\n")
        for j, a, b, d in rows:
            fh.write(f"{j},{a!r},{b!r},{d!r}\n")
    entry_err = np.abs(adj.du_dp - per.du_dp) / np.maximum(
        np.maximum(np.abs(adj.du_dp), np.abs(per.du_dp)), 1e-300)
    entry_ok = np.abs(adj.du_dp - per.du_dp) <= np.maximum(
        1e-5 * np.abs(adj.du_dp), 1e-12)
    checks = weight_gradient_check(tc, g["n_weights"], g["weight_fd_step"], cfg.seed, obs)
    with open(out / "weight_check.csv", "w") as fh:
        fh.write("model,layer,row,col,assembled,finite_difference,rel_diff\n")
        for c in checks:
            fh.write(f"{c.model},{c.layer},{c.row},{c.col},{float(c.assembled)!r},"
                     f"{float(c.finite_difference)!r},{float(c.rel_diff)!r}\n")
    return RunResult({
        "params": _floats(p),
        "max_rel_diff_dloss_dp": float(max(d for *_, d in rows)),
        "max_rel_diff_du_dp": float(entry_err.max()),
        "du_dp_entries_within_tolerance": bool(entry_ok.all()),
        "max_rel_diff_weights": float(max(c.rel_diff for c in checks)),
        "n_forward_solves": adj.n_forward_solves + per.n_forward_solves,
    }, problem)


def run_experiment(cfg: ExperimentConfig, out_dir=None, preset=None) -> RunResult:
    """Run ``cfg`` and write every artifact, ``summary.json`` last."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    if cfg.mode == "simulate":
        run = run_simulate(cfg, out)
    elif cfg.mode == "gradcheck":
        run = run_gradcheck(cfg, out)
    else:
        run = run_training(cfg, out)
    key = preset if preset is not None else cfg.name
    run.summary = {"name": cfg.name, "mode": cfg.mode, "seed": cfg.seed,
                   "solver": cfg.solver["type"], **run.summary,
                   "paper_expectation": PAPER_EXPECTATIONS.get(key)}
    run.out_dir = out
    with open(out / "summary.json", "w") as fh:
        json.dump(run.summary, fh, indent=2)
        fh.write("\n")
    return run
