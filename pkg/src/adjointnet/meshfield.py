"""Structured grids, discrete fields and sparse observation sets."""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class Grid1D:
    n_cells: int
    length: float

    @property
    def dx(self) -> float:
        return self.length / self.n_cells

    @property
    def cell_centers(self) -> np.ndarray:
        return (np.arange(self.n_cells) + 0.5) * self.dx

    @property
    def size(self) -> int:
        return self.n_cells

    def coordinates(self) -> np.ndarray:
        return self.cell_centers

    def locate(self, x) -> np.ndarray:
        """Cell index containing coordinate ``x``."""
        return np.rint(np.asarray(x) / self.dx - 0.5).astype(int)


@dataclass(frozen=True)
class Grid2D:
    nx: int
    ny: int
    lx: float
    ly: float

    @property
    def dx(self) -> float:
        return self.lx / (self.nx - 1)

    @property
    def dy(self) -> float:
        return self.ly / (self.ny - 1)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * self.dx

    @property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * self.dy

    def node_index(self, i, j):
        """Flat index of node (i, j); fields are stored row-major with j along y."""
        return np.asarray(j) * self.nx + np.asarray(i)

    def coordinates(self) -> np.ndarray:
        """(nx*ny, 2) array of node coordinates in flat-index order."""
        xx, yy = np.meshgrid(self.x, self.y)
        return np.column_stack([xx.ravel(), yy.ravel()])


def make_grid1d(n_cells, length) -> Grid1D:
    if int(n_cells) != n_cells or n_cells < 1:
        raise InvalidArgumentError(f"n_cells must be a positive integer, got {n_cells!r}")
    if not np.isfinite(length) or length <= 0:
        raise InvalidArgumentError(f"length must be positive, got {length!r}")
    return Grid1D(int(n_cells), float(length))


def make_grid2d(nx, ny, lx, ly) -> Grid2D:
    for name, n in (("nx", nx), ("ny", ny)):
        if int(n) != n or n < 2:
            raise InvalidArgumentError(f"{name} must be an integer >= 2, got {n!r}")
    for name, ell in (("lx", lx), ("ly", ly)):
        if not np.isfinite(ell) or ell <= 0:
            raise InvalidArgumentError(f"{name} must be positive, got {ell!r}")
    return Grid2D(int(nx), int(ny), float(lx), float(ly))


@dataclass(frozen=True, eq=False)
class Field:
    values: np.ndarray
    grid: object
    time: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1:
            vals = vals.ravel()
        if vals.shape[0] != self.grid.size:
            raise InvalidArgumentError(
                f"field has {vals.shape[0]} values but grid has {self.grid.size} points")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Sparse (index, value) pairs.

    ``scale`` converts the stored values into the units the loss is taken in
    (1e-6 turns Pa into MPa).
    """

    indices: np.ndarray
    values: np.ndarray
    noise_magnitude: float = 0.0
    rng_seed: Optional[int] = None
    obs_time: float = 0.0
    scale: float = 1.0
    coords: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        idx = np.array(self.indices, dtype=np.int64).ravel()
        vals = np.array(self.values, dtype=float).ravel()
        if idx.size == 0:
            raise InvalidArgumentError("observation set must not be empty")
        if idx.shape != vals.shape:
            raise InvalidArgumentError("indices and values must have the same length")
        if np.unique(idx).size != idx.size:
            raise InvalidArgumentError("observation indices must be unique")
        idx.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return int(self.indices.size)

    @property
    def entries(self):
        return list(zip(self.indices.tolist(), self.values.tolist()))

    def subset(self, count):
        """First ``count`` entries, keeping metadata."""
        return ObservationSet(self.indices[:count], self.values[:count], self.noise_magnitude,
                              self.rng_seed, self.obs_time, self.scale,
                              None if self.coords is None else self.coords[:count])


def sample_observations(fld: Field, indices, noise_magnitude=0.0, seed=0, scale=1.0) -> ObservationSet:
    """Restrict ``fld`` to ``indices`` and add uniform noise on [-m, +m]."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    n = fld.values.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"observation index out of range [0, {n})")
    if noise_magnitude < 0:
        raise InvalidArgumentError("noise_magnitude must be >= 0")
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-noise_magnitude, noise_magnitude, size=idx.size)
    values = fld.values[idx] + noise
    coords = fld.grid.coordinates()[idx]
    return ObservationSet(idx, values, float(noise_magnitude), seed, fld.time, scale, coords)


def choose_indices(n_points, count, seed) -> np.ndarray:
    """Seeded uniform draw of ``count`` distinct indices, in draw order."""
    if count > n_points:
        raise InvalidArgumentError(f"cannot draw {count} of {n_points} indices")
    rng = np.random.default_rng(seed)
    return rng.choice(n_points, size=count, replace=False)


def _x_column(grid, indices):
    coords = grid.coordinates()[indices]
    return coords if coords.ndim == 1 else coords[:, 0]


def write_field_csv(path, fld: Field):
    """CSV with header ``index,x,value`` and one row per grid point."""
    idx = np.arange(fld.values.shape[0])
    _write_rows(path, idx, _x_column(fld.grid, idx), fld.values)


def write_observations_csv(path, obs: ObservationSet, grid=None):
    if grid is not None:
        x = _x_column(grid, obs.indices)
    elif obs.coords is not None:
        x = obs.coords if obs.coords.ndim == 1 else obs.coords[:, 0]
    else:
        x = np.full(len(obs), np.nan)
    _write_rows(path, obs.indices, x, obs.values)


def _write_rows(path, idx, x, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "value"])
        for i, xi, v in zip(idx, x, values):
            w.writerow([int(i), repr(float(xi)), repr(float(v))])


def read_observations_csv(path, **meta) -> ObservationSet:
    idx, vals = [], []
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if header != ["index", "x", "value"]:
            raise InvalidArgumentError(f"{path}: unexpected header {header}")
        for row in r:
            idx.append(int(row[0]))
            vals.append(float(row[2]))
    return ObservationSet(idx, vals, **meta)
