import os

import numpy as np
import pytest
from hypothesis import settings

from adjointnet import darcy
from adjointnet.meshfield import make_grid1d

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def homog_truth():
    """Homogeneous truth config (k = 1e-14) ending at the front-arrival time."""
    grid = make_grid1d(100, 100.0)
    cfg = darcy.DarcyConfig(grid, 1e-14, dt=250.0)
    t_obs = darcy.front_arrival_time(cfg)
    return darcy.DarcyConfig(grid, 1e-14, dt=250.0, t_end=t_obs)


@pytest.fixture(scope="session")
def hetero_truth():
    grid = make_grid1d(100, 100.0)
    zones = np.repeat([0, 1], 50)
    cfg = darcy.DarcyConfig(grid, [1e-13, 1e-15], p_right=5e5, dt=125.0, zones=zones)
    t_obs = darcy.front_arrival_time(cfg)
    return darcy.DarcyConfig(grid, [1e-13, 1e-15], p_right=5e5, dt=125.0, t_end=t_obs,
                             zones=zones)


_RUNS = {}


@pytest.fixture(scope="session")
def preset_run(tmp_path_factory):
    """Run a built-in preset once per session through the experiment runner."""
    from adjointnet.config import load_preset
    from adjointnet.experiments import run_experiment

    def get(name):
        if name not in _RUNS:
            out = tmp_path_factory.mktemp(f"preset_{name}")
            _RUNS[name] = run_experiment(load_preset(name), out, preset=name)
        return _RUNS[name]

    return get
