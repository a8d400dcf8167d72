"""Config parsing, the command line and the files a run leaves behind."""

import csv
import json

import numpy as np
import pytest

from adjointnet import config as cfgmod
from adjointnet import plotting
from adjointnet.cli import main
from adjointnet.errors import ConfigError
from adjointnet.experiments import plateau_epoch
from adjointnet.trainer import EpochRecord, TrainTrace

SMALL_INVERT = {
    "name": "small",
    "mode": "invert",
    "seed": 3,
    "solver": {"type": "darcy", "n_cells": 20, "length": 20.0, "permeability": 1e-14,
               "dt": 250.0},
    "observations": {"count": 5, "pressure_scale": 1e-6},
    "model": {"layer_sizes": [1, 8, 1], "transform_scale": 0.1},
    "training": {"epochs": 4},
}


def _write(tmp_path, raw, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(raw, indent=2))
    return path


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("name", cfgmod.PRESETS)
def test_preset_round_trip(name):
    cfg = cfgmod.load_preset(name)
    again = cfgmod.loads(cfgmod.dumps(cfg))
    assert again == cfg


def test_unknown_key_names_key_and_line():
    text = '{\n  "mode": "simulate",\n  "solver": {\n    "permiability": 1e-14\n  }\n}\n'
    with pytest.raises(ConfigError) as info:
        cfgmod.loads(text)
    assert info.value.key == "permiability"
    assert info.value.line == 4
    assert "permiability" in str(info.value) and "line 4" in str(info.value)


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError) as info:
        cfgmod.loads('{\n  "mode": "simulate",\n  "solver": {,}\n}')
    assert info.value.line == 3


def test_missing_dt_is_derived_and_echoed(tmp_path):
    raw = {"mode": "simulate", "solver": {"type": "darcy", "n_cells": 20, "length": 20.0}}
    out = tmp_path / "run"
    assert main(["simulate", "--config", str(_write(tmp_path, raw)), "--out", str(out)]) == 0
    echoed = json.loads((out / "config.json").read_text())
    # diffusion number 10 on dx = 1 m: 10 * phi*mu*c_f / k
    assert echoed["solver"]["dt"] == pytest.approx(10 * 0.25 * 1e-3 * 1e-9 / 1e-14)
    assert echoed["training"]["lr"] == 1e-3


def test_cavity_missing_dt_is_positive():
    cfg = cfgmod.validate({"mode": "simulate", "solver": {"type": "cavity", "nt": 5}})
    assert 0 < cfg.solver["dt"] < 0.01


@pytest.mark.parametrize("patch, key", [
    ({"solver": {"type": "darcy", "permeability": -1.0}}, "permeability"),
    ({"solver": {"type": "darcy", "n_cells": 0}}, "n_cells"),
    ({"solver": {"type": "plasma"}}, "type"),
    ({"mode": "fly"}, "mode"),
    ({"training": {"method": "guess"}}, "method"),
    ({"seed": -2}, "seed"),
])
def test_invalid_values_rejected(patch, key):
    raw = {**SMALL_INVERT, **patch}
    with pytest.raises(ConfigError) as info:
        cfgmod.validate(raw)
    assert info.value.key == key


def test_adjoint_rejected_for_cavity():
    with pytest.raises(ConfigError):
        cfgmod.validate({"mode": "invert", "solver": {"type": "cavity"},
                         "observations": {}, "model": {}, "training": {"method": "adjoint"}})


def test_simulate_darcy_outputs(tmp_path):
    raw = {"mode": "simulate", "solver": SMALL_INVERT["solver"]}
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(_write(tmp_path, raw)), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mass_balance_relative_imbalance"] < 1e-8
    rows = _read_csv(out / "fields.csv")
    assert len(rows[0]) >= 2 and len(rows) > 2
    assert (out / "profile.svg").read_text().startswith("<?xml")


def test_simulate_cavity_outputs(tmp_path):
    raw = {"mode": "simulate", "solver": {"type": "cavity", "nx": 11, "ny": 11, "nt": 20}}
    out = tmp_path / "cav"
    assert main(["simulate", "--config", str(_write(tmp_path, raw)), "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert np.isfinite(summary["max_abs_divergence"])
    assert len(_read_csv(out / "fields.csv")) == 1 + 11 * 11
    assert (out / "pressure.svg").exists()


def test_invert_cli_artifacts(tmp_path, capsys):
    out = tmp_path / "inv"
    assert main(["invert", "--config", str(_write(tmp_path, SMALL_INVERT)), "--out", str(out)]) == 0
    brief = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert brief["output_dir"] == str(out)
    for f in ("trace.csv", "fields.csv", "observations.csv", "model_0.csv", "config.json",
              "summary.json", "loss.svg", "params.svg", "profile.svg"):
        assert (out / f).exists(), f
    rows = _read_csv(out / "trace.csv")
    assert rows[0] == ["epoch", "phase", "loss", "param_0", "grad_norm", "cum_forward_solves"]
    assert len(rows) == 1 + 4
    assert len(_read_csv(out / "observations.csv")) == 1 + 5


def test_seed_and_method_overrides(tmp_path):
    path = _write(tmp_path, SMALL_INVERT)
    out = tmp_path / "ov"
    assert main(["invert", "--config", str(path), "--out", str(out), "--seed", "11",
                 "--method", "perturbation"]) == 0
    summary = json.loads((out / "summary.json").read_text())
    echoed = json.loads((out / "config.json").read_text())
    assert summary["seed"] == 11 and echoed["seed"] == 11
    assert summary["method"] == "perturbation"


def test_seed_changes_noise_draw(tmp_path):
    raw = {**SMALL_INVERT, "observations": {"count": 5, "noise_magnitude": 1e5}}
    path = _write(tmp_path, raw)
    for s in (1, 2):
        assert main(["invert", "--config", str(path), "--out", str(tmp_path / f"s{s}"),
                     "--seed", str(s)]) == 0
    a = (tmp_path / "s1" / "observations.csv").read_text()
    b = (tmp_path / "s2" / "observations.csv").read_text()
    assert a != b


def test_mode_mismatch_exits_nonzero(tmp_path, capsys):
    assert main(["simulate", "--config", str(_write(tmp_path, SMALL_INVERT))]) == 1
    assert "mode" in capsys.readouterr().err


def test_bad_config_exits_nonzero(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"mode": "simulate", "solver": {"permiability": 1}}')
    assert main(["simulate", "--config", str(path)]) == 1
    assert "permiability" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1


def test_bad_seed_rejected_by_parser():
    with pytest.raises(SystemExit):
        main(["preset", "homog", "--seed", "-1"])


def test_gradcheck_csv(tmp_path):
    raw = {**SMALL_INVERT, "mode": "gradcheck"}
    out = tmp_path / "gc"
    assert main(["gradcheck", "--config", str(_write(tmp_path, raw)), "--out", str(out)]) == 0
    rows = _read_csv(out / "gradcheck.csv")
    assert rows[0] == ["param_index", "adjoint", "perturbation", "rel_diff"]
    assert float(rows[1][3]) < 1e-4
    weights = _read_csv(out / "weight_check.csv")
    assert len(weights) == 1 + 5
    assert max(float(r[-1]) for r in weights[1:]) < 1e-4
    summary = json.loads((out / "summary.json").read_text())
    assert summary["du_dp_entries_within_tolerance"]


def test_gradcheck_on_cavity_fails(tmp_path, capsys):
    raw = {"mode": "gradcheck", "solver": {"type": "cavity", "nx": 11, "ny": 11, "nt": 5},
           "observations": {}, "model": {"transform": "affine"}, "training": {"method": "perturbation"}}
    assert main(["gradcheck", "--config", str(_write(tmp_path, raw)),
                 "--out", str(tmp_path / "gc")]) == 1
    assert "darcy" in capsys.readouterr().err


def _trace(n, n_p=1):
    recs = [EpochRecord(e, 1, 1.0 / (e + 1), np.full(n_p, 1e-14 * (1 + 0.5 / (e + 1))),
                        0.1, e + 1, 1e-13) for e in range(n)]
    return TrainTrace(recs, [0])


def test_single_epoch_plots(tmp_path):
    tr = _trace(1)
    for p in (plotting.plot_loss(tr, tmp_path / "l.svg"),
              plotting.plot_params(tr, tmp_path / "p.svg", [1e-14])):
        assert p.stat().st_size > 0


def test_empty_trace_plot_rejected(tmp_path):
    with pytest.raises(ValueError):
        plotting.plot_loss(TrainTrace(), tmp_path / "l.svg")


def test_svg_byte_identical(tmp_path):
    tr = _trace(30, 2)
    a = plotting.plot_params(tr, tmp_path / "a.svg", [1e-14, 1e-14])
    b = plotting.plot_params(tr, tmp_path / "b.svg", [1e-14, 1e-14])
    assert a.read_bytes() == b.read_bytes()


def test_unwritable_plot_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        plotting.plot_loss(_trace(3), blocker / "loss.svg")


def test_homog_preset_cli(tmp_path):
    out = tmp_path / "homog"
    assert main(["preset", "homog", "--out", str(out)]) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["paper_expectation"] is not None
    assert summary["truth"] == [1e-14]
    assert summary["relative_error"][0] <= 0.10
    for f in ("trace.csv", "fields.csv", "model_0.csv", "config.json", "loss.svg",
              "params.svg", "profile.svg"):
        assert (out / f).exists(), f
    # loss curve flattens: estimates settle within 1% by ~epoch 30
    params = np.array([[float(v) for v in r[3:4]] for r in _read_csv(out / "trace.csv")[1:]])
    assert plateau_epoch(params) <= 35


def test_hetero_preset_summary(preset_run):
    s = preset_run("hetero").summary
    assert len(s["estimate"]) == 2
    assert max(s["relative_error"]) <= 0.15
    assert s["final_loss"] <= 1e-6


def test_cavity_preset_summary(preset_run):
    run = preset_run("cavity")
    s = run.summary
    assert s["method"] == "perturbation"
    assert s["relative_error"][0] <= 0.05
    assert (run.out_dir / "pressure.svg").exists()
