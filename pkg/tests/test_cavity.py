import numpy as np
import pytest

from adjointnet import cavity
from adjointnet.errors import InstabilityError, InvalidArgumentError
from adjointnet.meshfield import make_grid2d, read_observations_csv, write_observations_csv
from adjointnet.sensitivity import mse_loss

G41 = make_grid2d(41, 41, 4.0, 4.0)


@pytest.fixture(scope="module")
def truth_state():
    return cavity.run(cavity.CavityConfig(G41))


def test_zero_lid_fixed_point():
    cfg = cavity.CavityConfig(G41, lid_speed=0.0, nt=50)
    u, v, p = cavity.run(cfg).arrays()
    assert not u.any() and not v.any() and not p.any()


def test_velocity_bounded_by_lid(truth_state):
    u, v, _ = truth_state.arrays()
    speed = np.hypot(u[1:-1, 1:-1], v[1:-1, 1:-1])
    assert speed.max() <= 1.05


def test_first_step_reach():
    cfg = cavity.CavityConfig(G41)
    # fluid at rest, lid already moving
    u0 = np.zeros((41, 41))
    u0[-1, :] = 1.0
    rest = cavity.FlowState.from_arrays(G41, u0, np.zeros_like(u0), np.zeros_like(u0), 0.0)
    u, v, p = cavity.step(rest, cfg, 1).arrays()
    rows = np.flatnonzero(np.any(u != 0, axis=1))
    assert set(rows.tolist()) == {G41.ny - 2, G41.ny - 1}
    assert not v.any()


def test_lid_and_walls_every_step():
    cfg = cavity.CavityConfig(G41, lid_speed=1.0)
    state = cavity.FlowState.zeros(G41)
    for n in range(1, 40):
        state = cavity.step(state, cfg, n)
        u, v, p = state.arrays()
        assert np.all(u[-1, :] == 1.0)  # corners included
        assert not u[0, :].any() and not u[:-1, 0].any() and not u[:-1, -1].any()
        assert not v[0, :].any() and not v[-1, :].any() and not v[:, 0].any() and not v[:, -1].any()
        assert not p[-1, :].any()


def test_snapshot_has_1681_points(truth_state):
    obs = cavity.pressure_snapshot(truth_state)
    assert len(obs) == 1681
    top = np.array([G41.node_index(i, G41.ny - 1) for i in range(G41.nx)])
    assert np.all(obs.values[top] == 0.0)


def test_snapshot_csv_roundtrip(truth_state, tmp_path):
    obs = cavity.pressure_snapshot(truth_state)
    path = tmp_path / "p.csv"
    write_observations_csv(path, obs)
    back = read_observations_csv(path)
    np.testing.assert_array_equal(back.indices, obs.indices)
    np.testing.assert_array_equal(back.values, obs.values)


def test_state_csv_roundtrip(truth_state, tmp_path):
    path = tmp_path / "state.csv"
    cavity.write_state_csv(path, truth_state)
    assert path.read_text().splitlines()[0] == "i,j,x,y,u,v,p"
    back = cavity.read_state_csv(path)
    for a, b in zip(back.arrays(), truth_state.arrays()):
        assert np.array_equal(a, b)


def test_runs_bit_identical(truth_state):
    again = cavity.run(cavity.CavityConfig(G41))
    for a, b in zip(again.arrays(), truth_state.arrays()):
        assert np.array_equal(a, b)


def test_steady_state_insensitive_to_longer_run():
    # coarse grid with a large stable dt reaches steady state in a few seconds
    g = make_grid2d(21, 21, 4.0, 4.0)
    p1 = cavity.run(cavity.CavityConfig(g, dt=0.05, nt=2000)).p.values
    p2 = cavity.run(cavity.CavityConfig(g, dt=0.05, nt=4000)).p.values
    assert np.linalg.norm(p2 - p1) / np.linalg.norm(p2) < 1e-6


def test_more_sweeps_reduce_divergence():
    divs = []
    for nit in (25, 50, 100):
        state = cavity.run(cavity.CavityConfig(G41, n_poisson_iters=nit))
        divs.append(np.abs(cavity.divergence(state)).max())
    assert divs[1] < divs[0] and divs[2] < divs[1]


def test_loss_convex_around_truth(truth_state):
    obs = cavity.pressure_snapshot(truth_state)
    nus = np.linspace(0.09, 0.11, 5)
    losses = np.array([mse_loss(cavity.run(cavity.CavityConfig(G41, nu=nu)).p.values, obs.values)
                       for nu in nus])
    assert np.argmin(losses) == 2 and losses[2] == 0.0
    assert np.all(np.diff(losses, 2) > 0)


def test_instability_names_step():
    cfg = cavity.CavityConfig(G41)
    u = np.zeros((41, 41))
    u[20, 20] = np.nan
    state = cavity.FlowState.from_arrays(G41, u, np.zeros_like(u), np.zeros_like(u), 0.0)
    with pytest.raises(InstabilityError) as info:
        cavity.step(state, cfg, 7)
    assert info.value.step == 7 and "7" in str(info.value)


@pytest.mark.parametrize("kw", [{"dt": 0.2}, {"nu": 5.0}, {"nu": -0.1}, {"rho": 0.0},
                                {"nt": 0}])
def test_config_bounds(kw):
    with pytest.raises(InvalidArgumentError):
        cavity.CavityConfig(G41, **kw)


def test_default_dt():
    assert cavity.default_dt(G41, 0.1) == 0.001
    coarse = make_grid2d(5, 5, 4.0, 4.0)
    dt = cavity.default_dt(make_grid2d(201, 201, 4.0, 4.0), 1.0)
    assert dt < 0.25 * 0.02 ** 2 / 1.0
    assert cavity.default_dt(coarse, 0.1) == 0.001
