"""1D slightly-compressible Darcy flow, two-point-flux finite volumes.

Mass balance per cell, per unit cross-section::

    phi*dx*(rho(u) - rho(u_old))/dt - sum_faces rho_f*T_f*(u_nb - u)/mu = 0
    rho(u) = rho0*(1 + c_f*(u - p_ref))

Backward Euler in time, Newton in each step with an exact tridiagonal
Jacobian. Dirichlet pressures act through a half-cell transmissibility on the
two boundary faces. Interior face permeability is the harmonic mean.
"""

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .errors import InvalidArgumentError, SolverDivergedError
from .meshfield import Field, Grid1D


@dataclass(frozen=True, eq=False)
class DarcyConfig:
    grid: Grid1D
    permeability: np.ndarray
    porosity: float = 0.25
    viscosity: float = 1.0e-3
    rho0: float = 1000.0
    compressibility: float = 1.0e-9
    p_ref: float = 1.5e5
    p_left: float = 1.0e6
    p_right: float = 1.5e5
    p_init: float = 1.5e5
    dt: float = 250.0
    t_end: float = 250.0
    newton_tol: float = 1e-11
    newton_max_iters: int = 25
    # zone id per cell; the inversion parameters are one permeability per zone
    zones: Optional[np.ndarray] = None
    area: float = 1.0

    def __post_init__(self):
        k = np.array(self.permeability, dtype=float).ravel()
        if self.zones is not None and k.size != self.grid.n_cells:
            # one value per zone
            zones = np.asarray(self.zones, dtype=np.int64).ravel()
            if zones.size == self.grid.n_cells and k.size == zones.max() + 1:
                k = k[zones]
        if k.size == 1:
            k = np.full(self.grid.n_cells, k[0])
        if k.size != self.grid.n_cells:
            raise InvalidArgumentError(
                f"permeability has {k.size} entries, grid has {self.grid.n_cells} cells")
        if not np.all(np.isfinite(k)) or np.any(k <= 0):
            raise InvalidArgumentError("permeability must be finite and positive")
        for name in ("porosity", "viscosity", "rho0", "dt", "area"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise InvalidArgumentError(f"{name} must be positive, got {val!r}")
        if not (self.compressibility >= 0):
            raise InvalidArgumentError("compressibility must be >= 0")
        if self.t_end < self.dt * (1 - 1e-12):
            raise InvalidArgumentError("t_end must be >= dt")
        if self.newton_tol <= 0 or self.newton_max_iters < 1:
            raise InvalidArgumentError("newton_tol must be > 0 and newton_max_iters >= 1")
        zones = np.zeros(self.grid.n_cells, dtype=np.int64) if self.zones is None \
            else np.array(self.zones, dtype=np.int64).ravel()
        if zones.size != self.grid.n_cells or zones.min() < 0:
            raise InvalidArgumentError("zones must hold one non-negative id per cell")
        if np.unique(zones).size != zones.max() + 1:
            raise InvalidArgumentError("zone ids must be contiguous from 0")
        k.setflags(write=False)
        zones.setflags(write=False)
        object.__setattr__(self, "permeability", k)
        object.__setattr__(self, "zones", zones)

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def n_params(self) -> int:
        return int(self.zones.max()) + 1

    @property
    def diffusivity(self) -> np.ndarray:
        """Linearised hydraulic diffusivity k/(phi*mu*c_f) per cell (inf when c_f = 0)."""
        with np.errstate(divide="ignore"):
            return self.permeability / (self.porosity * self.viscosity * self.compressibility)

    def params(self) -> np.ndarray:
        """Current per-zone permeabilities (first cell of each zone)."""
        out = np.empty(self.n_params)
        for z in range(self.n_params):
            out[z] = self.permeability[np.argmax(self.zones == z)]
        return out

    def with_params(self, p) -> "DarcyConfig":
        p = np.asarray(p, dtype=float).ravel()
        if p.size != self.n_params:
            raise InvalidArgumentError(f"expected {self.n_params} parameters, got {p.size}")
        return replace(self, permeability=p[self.zones])

    def flux_scale(self) -> float:
        """Characteristic face mass flux, used to make the Newton tolerance relative."""
        dp = max(abs(self.p_left - self.p_right), abs(self.p_left - self.p_init),
                 abs(self.p_right - self.p_init), 1.0)
        return self.rho0 * float(self.permeability.max()) / self.viscosity * dp / self.grid.dx


@dataclass(eq=False)
class Trajectory:
    snapshots: list
    checkpointed: bool = True
    residual_norms: list = field(default_factory=list)
    newton_iters: list = field(default_factory=list)

    @property
    def final(self) -> Field:
        return self.snapshots[-1]

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def max_relative_residual(self) -> float:
        return max(self.residual_norms, default=0.0)


def transmissibility(config: DarcyConfig) -> np.ndarray:
    """Face transmissibilities k_face/distance, faces 0..n (boundary faces included)."""
    k = config.permeability
    dx = config.grid.dx
    t = np.empty(k.size + 1)
    t[0] = 2.0 * k[0] / dx
    t[-1] = 2.0 * k[-1] / dx
    t[1:-1] = 2.0 * k[:-1] * k[1:] / ((k[:-1] + k[1:]) * dx)
    return t


def _assemble(config, u_new, u_old, trans=None):
    if trans is None:
        trans = transmissibility(config)
    return kernels.darcy_assemble(
        u_new, u_old, trans, config.p_left, config.p_right, config.grid.dx,
        config.porosity, config.viscosity, config.rho0, config.compressibility,
        config.p_ref, config.dt)


def _values(u):
    return u.values if isinstance(u, Field) else np.asarray(u, dtype=float)


def residual_and_jacobian(config: DarcyConfig, u_new, u_old):
    """Residual vector and tridiagonal d(residual)/d(u_new) as ``(lower, diag, upper)``."""
    res, lower, diag, upper = _assemble(config, _values(u_new), _values(u_old))
    return res, (lower, diag, upper)


def old_state_jacobian(config: DarcyConfig) -> np.ndarray:
    """Diagonal of d(residual)/d(u_old); it does not depend on the state."""
    c = -config.porosity * config.grid.dx / config.dt * config.rho0 * config.compressibility
    return np.full(config.grid.n_cells, c)


def tridiag_to_dense(lower, diag, upper) -> np.ndarray:
    n = diag.size
    a = np.diag(diag)
    a[np.arange(1, n), np.arange(n - 1)] = lower[1:]
    a[np.arange(n - 1), np.arange(1, n)] = upper[:-1]
    return a


def cell_permeability_bands(config: DarcyConfig, u_new):
    """d(residual_i)/d(k_c) for c = i-1, i, i+1, as three length-n bands."""
    u = _values(u_new)
    k = config.permeability
    n = k.size
    dx = config.grid.dx
    u_ext = np.concatenate([[config.p_left], u, [config.p_right]])
    rho_ext = config.rho0 * (1.0 + config.compressibility * (u_ext - config.p_ref))
    rho_f = 0.5 * (rho_ext[:-1] + rho_ext[1:])
    # d g_f / d T_f, faces 0..n
    dg_dt = rho_f * (u_ext[1:] - u_ext[:-1]) / config.viscosity

    # d T_f / d k of the face's left and right cells
    dt_dleft = np.zeros(n + 1)
    dt_dright = np.zeros(n + 1)
    dt_dright[0] = 2.0 / dx
    dt_dleft[-1] = 2.0 / dx
    ka, kb = k[:-1], k[1:]
    denom = (ka + kb) ** 2 * dx
    dt_dleft[1:-1] = 2.0 * kb * kb / denom
    dt_dright[1:-1] = 2.0 * ka * ka / denom

    # residual_i = ... - g_{i+1} + g_i; face i+1 has cells (i, i+1), face i has (i-1, i)
    diag = -dg_dt[1:] * dt_dleft[1:] + dg_dt[:-1] * dt_dright[:-1]
    upper = np.zeros(n)
    lower = np.zeros(n)
    upper[:-1] = -dg_dt[1:-1] * dt_dright[1:-1]
    lower[1:] = dg_dt[1:-1] * dt_dleft[1:-1]
    return lower, diag, upper


def cell_permeability_jacobian(config: DarcyConfig, u_new) -> np.ndarray:
    """d(residual)/d(k_cell) as a dense (n, n) matrix."""
    return tridiag_to_dense(*cell_permeability_bands(config, u_new))


def param_jacobian(config: DarcyConfig, u_new, u_old=None) -> np.ndarray:
    """d(residual)/d(p) for the per-zone permeabilities, shape (n_cells, n_params).

    The residual depends on k only through the fluxes, so ``u_old`` is accepted
    for symmetry with ``residual_and_jacobian`` but not used.
    """
    lower, diag, upper = cell_permeability_bands(config, u_new)
    n = config.grid.n_cells
    zones = config.zones
    out = np.zeros((n, config.n_params))
    rows = np.arange(n)
    np.add.at(out, (rows, zones), diag)
    np.add.at(out, (rows[:-1], zones[1:]), upper[:-1])
    np.add.at(out, (rows[1:], zones[:-1]), lower[1:])
    return out


def newton_step_solve(config: DarcyConfig, u_old, trans=None, step=None, history=None):
    """Solve one backward-Euler step. Returns ``(u_new, relative residual norm, iterations)``.

    If ``history`` is a list, the relative residual of every iterate is appended to it.
    """
    u_old = np.asarray(u_old, dtype=float)
    if trans is None:
        trans = transmissibility(config)
    scale = config.flux_scale()
    u = u_old.copy()
    history = [] if history is None else history
    for it in range(config.newton_max_iters + 1):
        res, lower, diag, upper = _assemble(config, u, u_old, trans)
        rnorm = float(np.max(np.abs(res))) / scale
        history.append(rnorm)
        if not math.isfinite(rnorm):
            break
        if rnorm < config.newton_tol:
            return u, rnorm, it
        if it == config.newton_max_iters:
            break
        u = u - kernels.thomas(lower, diag, upper, res)
    raise SolverDivergedError(
        f"Newton did not converge in {config.newton_max_iters} iterations "
        f"(step {step}, last relative residual {history[-1]:.3e})", history, step)


def solve_forward(config: DarcyConfig, u0=None) -> Trajectory:
    """Integrate from ``p_init`` (or ``u0``) to ``t_end``, keeping every step."""
    n = config.grid.n_cells
    u = np.full(n, float(config.p_init)) if u0 is None else np.asarray(u0, dtype=float).copy()
    trans = transmissibility(config)
    snaps = [Field(u, config.grid, 0.0)]
    norms, iters = [], []
    for step in range(1, config.n_steps + 1):
        u, rnorm, it = newton_step_solve(config, u, trans, step)
        snaps.append(Field(u, config.grid, step * config.dt))
        norms.append(rnorm)
        iters.append(it)
    return Trajectory(snaps, True, norms, iters)


def solve_steady(config: DarcyConfig) -> Field:
    """Incompressible steady state: one step with c_f = 0."""
    cfg = replace(config, compressibility=0.0, t_end=config.dt)
    return solve_forward(cfg).final


def face_fluxes(config: DarcyConfig, u) -> np.ndarray:
    """Mass flux through faces 0..n in +x direction, kg/(m^2 s)."""
    u = _values(u)
    u_ext = np.concatenate([[config.p_left], u, [config.p_right]])
    rho_ext = config.rho0 * (1.0 + config.compressibility * (u_ext - config.p_ref))
    rho_f = 0.5 * (rho_ext[:-1] + rho_ext[1:])
    return -rho_f * transmissibility(config) * (u_ext[1:] - u_ext[:-1]) / config.viscosity


def interface_pressure(config: DarcyConfig, u, face) -> float:
    """Pressure on interior face ``face`` reconstructed from the two half-cells."""
    u = _values(u)
    k = config.permeability
    ka, kb = k[face - 1], k[face]
    return float((ka * u[face - 1] + kb * u[face]) / (ka + kb))


@dataclass(frozen=True)
class MassBalance:
    accumulation: float
    net_influx: float

    @property
    def imbalance(self) -> float:
        return self.accumulation - self.net_influx

    @property
    def relative_imbalance(self) -> float:
        scale = max(abs(self.accumulation), abs(self.net_influx))
        return abs(self.imbalance) / scale if scale > 0 else 0.0


def mass_balance_report(trajectory: Trajectory, config: DarcyConfig) -> MassBalance:
    """Compare stored-mass change with time-integrated boundary inflow (kg)."""
    volume = config.grid.dx * config.area
    first = trajectory.snapshots[0].values
    last = trajectory.snapshots[-1].values

    def density(u):
        return config.rho0 * (1.0 + config.compressibility * (u - config.p_ref))

    accumulation = config.porosity * volume * float(np.sum(density(last) - density(first)))
    influx = 0.0
    for snap in trajectory.snapshots[1:]:
        q = face_fluxes(config, snap)
        influx += (q[0] - q[-1]) * config.area * config.dt
    return MassBalance(accumulation, influx)


def zone_midpoints(config: DarcyConfig) -> np.ndarray:
    """Middle cell of each permeability zone (the domain middle for one zone)."""
    out = []
    for z in range(config.n_params):
        cells = np.flatnonzero(config.zones == z)
        out.append(cells[cells.size // 2])
    return np.array(out)


def front_arrival_time(config: DarcyConfig, fraction=0.5, cells=None, max_steps=100000) -> float:
    """First step time at which every cell in ``cells`` has risen by ``fraction`` of its steady rise.

    ``cells`` defaults to the midpoint of each zone, so with a single zone this is
    the time the pressure front reaches mid-domain.
    """
    cells = zone_midpoints(config) if cells is None else np.atleast_1d(cells)
    steady = solve_steady(config).values[cells]
    rise = steady - config.p_init
    target = config.p_init + fraction * rise
    sign = np.where(rise >= 0, 1.0, -1.0)
    trans = transmissibility(config)
    u = np.full(config.grid.n_cells, float(config.p_init))
    for step in range(1, max_steps + 1):
        u, _, _ = newton_step_solve(config, u, trans, step)
        if np.all(sign * (u[cells] - target) >= 0):
            return step * config.dt
    raise SolverDivergedError("pressure front never reached the zone midpoints", (), max_steps)


def write_trajectory_csv(path, trajectory: Trajectory, snapshot=-1):
    """CSV of one snapshot: ``cell,x,pressure_pa``."""
    snap = trajectory.snapshots[snapshot]
    x = snap.grid.cell_centers
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell", "x", "pressure_pa"])
        for i, (xi, p) in enumerate(zip(x, snap.values)):
            w.writerow([i, repr(float(xi)), repr(float(p))])
