"""2D lid-driven cavity, explicit finite differences with a pressure-Poisson projection.

Collocated nodes, forward Euler, central differences for advection and
diffusion, a fixed number of Jacobi sweeps for pressure each step.
"""

import csv
import math
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .errors import InstabilityError, InvalidArgumentError
from .meshfield import Field, Grid2D, ObservationSet, make_grid2d


@dataclass(frozen=True)
class CavityConfig:
    grid: Grid2D
    rho: float = 1.0
    nu: float = 0.1
    dt: float = 0.001
    nt: int = 300
    n_poisson_iters: int = 50
    lid_speed: float = 1.0

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise InvalidArgumentError(f"rho must be positive, got {self.rho!r}")
        if not (self.nu >= 0 and math.isfinite(self.nu)):
            raise InvalidArgumentError(f"nu must be >= 0, got {self.nu!r}")
        if not self.dt > 0:
            raise InvalidArgumentError("dt must be positive")
        if self.nt < 1 or self.n_poisson_iters < 1:
            raise InvalidArgumentError("nt and n_poisson_iters must be >= 1")
        h = min(self.grid.dx, self.grid.dy)
        if self.nu > 0 and self.dt > 0.25 * h * h / self.nu * (1 + 1e-12):
            raise InvalidArgumentError(
                f"dt={self.dt} violates the diffusive bound 0.25*h^2/nu={0.25 * h * h / self.nu}")
        if self.dt > h / max(1.0, abs(self.lid_speed)) * (1 + 1e-12):
            raise InvalidArgumentError(f"dt={self.dt} violates the advective bound")

    @property
    def shape(self):
        return (self.grid.ny, self.grid.nx)

    def with_params(self, p) -> "CavityConfig":
        p = np.asarray(p, dtype=float).ravel()
        if p.size != 1:
            raise InvalidArgumentError(f"cavity takes one parameter (nu), got {p.size}")
        return replace(self, nu=float(p[0]))

    def params(self) -> np.ndarray:
        return np.array([self.nu])

    @property
    def n_params(self) -> int:
        return 1


def default_dt(grid: Grid2D, nu, lid_speed=1.0, target=0.001) -> float:
    """``target`` unless a stability bound is tighter, in which case half that bound."""
    h = min(grid.dx, grid.dy)
    bound = h / max(1.0, abs(lid_speed))
    if nu > 0:
        bound = min(bound, 0.25 * h * h / nu)
    return target if target <= bound else 0.5 * bound


@dataclass(frozen=True, eq=False)
class FlowState:
    u: Field
    v: Field
    p: Field

    @classmethod
    def zeros(cls, grid: Grid2D, time=0.0):
        z = np.zeros(grid.size)
        return cls(Field(z, grid, time), Field(z, grid, time), Field(z, grid, time))

    @classmethod
    def from_arrays(cls, grid, u, v, p, time):
        return cls(Field(u.ravel(), grid, time), Field(v.ravel(), grid, time),
                   Field(p.ravel(), grid, time))

    @property
    def grid(self) -> Grid2D:
        return self.u.grid

    @property
    def time(self) -> float:
        return self.u.time

    def arrays(self):
        shape = (self.grid.ny, self.grid.nx)
        return (self.u.values.reshape(shape), self.v.values.reshape(shape),
                self.p.values.reshape(shape))


def step(state: FlowState, config: CavityConfig, step_index=None) -> FlowState:
    u, v, p = state.arrays()
    g = config.grid
    un, vn, pn = kernels.cavity_step(u, v, p, config.rho, config.nu, config.dt, g.dx, g.dy,
                                     config.n_poisson_iters, config.lid_speed)
    if not (np.all(np.isfinite(un)) and np.all(np.isfinite(vn)) and np.all(np.isfinite(pn))):
        raise InstabilityError(f"non-finite cavity field at step {step_index}", step_index)
    return FlowState.from_arrays(g, un, vn, pn, state.time + config.dt)


def run(config: CavityConfig, state=None) -> FlowState:
    """``nt`` steps from rest (or from ``state``)."""
    if state is None:
        state = FlowState.zeros(config.grid)
    for n in range(1, config.nt + 1):
        state = step(state, config, n)
    return state


def divergence(state: FlowState) -> np.ndarray:
    """Central-difference divergence on interior nodes, shape (ny-2, nx-2)."""
    u, v, _ = state.arrays()
    g = state.grid
    return ((u[1:-1, 2:] - u[1:-1, :-2]) / (2 * g.dx)
            + (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * g.dy))


def pressure_snapshot(state: FlowState, scale=1.0) -> ObservationSet:
    """Every node's pressure as a noise-free observation set."""
    grid = state.grid
    idx = np.arange(grid.size)
    return ObservationSet(idx, state.p.values, 0.0, None, state.time, scale, grid.coordinates())


def write_state_csv(path, state: FlowState):
    """CSV ``i,j,x,y,u,v,p`` with one row per node."""
    g = state.grid
    u, v, p = state.arrays()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "x", "y", "u", "v", "p"])
        for j in range(g.ny):
            for i in range(g.nx):
                w.writerow([i, j, repr(i * g.dx), repr(j * g.dy), repr(float(u[j, i])),
                            repr(float(v[j, i])), repr(float(p[j, i]))])


def read_state_csv(path) -> FlowState:
    rows = []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["i", "j", "x", "y", "u", "v", "p"]:
            raise InvalidArgumentError(f"{path}: unexpected header {header}")
        rows = [row for row in r]
    i = np.array([int(row[0]) for row in rows])
    j = np.array([int(row[1]) for row in rows])
    x = np.array([float(row[2]) for row in rows])
    y = np.array([float(row[3]) for row in rows])
    nx, ny = i.max() + 1, j.max() + 1
    grid = make_grid2d(nx, ny, x.max(), y.max())
    shape = (ny, nx)
    arrs = []
    for col in (4, 5, 6):
        a = np.empty(shape)
        a[j, i] = [float(row[col]) for row in rows]
        arrs.append(a)
    return FlowState.from_arrays(grid, *arrs, 0.0)
