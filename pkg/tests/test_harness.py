import json
import os

import numpy as np
import pytest

from satrack.errors import ConfigError
from satrack.harness.cli import main
from satrack.harness.config import apply_overrides, build_experiment, load_document, with_axis
from satrack.harness.report import emit_report, write_csv
from satrack.harness.sweep import SweepSpec, fit_scaling, run_cell, run_sweep, spans_decade
from satrack.simulate import run_ensemble

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def small_doc(**sim):
    return {"model": {"name": "linear_drift", "params": {"dim": 1}},
            "noise": {"family": "gaussian", "scale": 1.0, "calibration_samples": 10000},
            "sim": {"a": 0.1, "T_end": 10.0, "seed": 3, "replicas": 50, **sim},
            "concentration": {"replicas": 100}}


def write_json(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


# ---------------------------------------------------------------------------
# config


def test_unknown_keys_rejected(tmp_path):
    doc = small_doc()
    doc["sim"]["stepsize"] = 0.1
    with pytest.raises(ConfigError, match="stepsize"):
        load_document(write_json(tmp_path, doc))
    doc = small_doc()
    doc["extras"] = {}
    with pytest.raises(ConfigError, match="extras"):
        load_document(write_json(tmp_path, doc))
    (tmp_path / "nan.json").write_text('{"model": {"name": "linear_drift"}, "sim": {"a": NaN}}')
    with pytest.raises(ConfigError, match="NaN"):
        load_document(str(tmp_path / "nan.json"))
    with pytest.raises(ConfigError, match="required"):
        build_experiment({"model": {"name": "linear_drift"}})


def test_config_horizon_and_broadcast():
    exp = build_experiment(small_doc(x0=0.5, y0=0.0))
    assert exp.sim.horizon_N == 100
    assert np.array_equal(exp.sim.x0, [0.5])
    assert apply_overrides(small_doc(), seed=9, replicas=7)["sim"]["seed"] == 9
    assert build_experiment(with_axis(small_doc(), "d", 3)).model.dim == 3


def test_shipped_configs_load():
    for name in sorted(os.listdir(CONFIGS)):
        build_experiment(load_document(os.path.join(CONFIGS, name)))


# ---------------------------------------------------------------------------
# sweep


def test_fit_scaling_exact_power_law():
    x = np.array([0.001, 0.01, 0.1])
    slope, se = fit_scaling(x, x ** 0.5)
    assert slope == pytest.approx(0.5, abs=1e-12) and se == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigError):
        fit_scaling([1.0], [1.0])
    with pytest.raises(ConfigError):
        fit_scaling([1.0, 2.0], [0.0, 1.0])


def test_sweep_spec_invariants():
    base = small_doc()
    for axes in ({}, {"a": [0.1, 0.01]}, {"a": [-0.1, 0.1]}, {"gain": [1.0, 2.0]}):
        with pytest.raises(ConfigError):
            SweepSpec(axes, 10, base)
    assert spans_decade([0.01, 0.1]) and not spans_decade([0.01, 0.05])


def test_single_cell_equals_ensemble():
    spec = SweepSpec({"a": [0.1]}, 50, small_doc(), T_end=10.0, with_bounds=False)
    cell = run_cell(spec, {"a": 0.1})
    exp = build_experiment(spec.cell_document({"a": 0.1}))
    s = run_ensemble(exp.model, exp.noise, exp.perturbation, exp.sim, 50)
    assert cell.rms == s.stationary_rms()
    assert np.array_equal(cell.rms_path, s.rms)


def test_divergent_cell_recorded_and_sweep_continues():
    doc = small_doc()
    # 1 - 30 a leaves the unit disc at a = 0.1
    doc["model"] = {"name": "linear_drift", "params": {"dim": 1, "gain": 30.0}}
    spec = SweepSpec({"a": [0.01, 0.1]}, 5, doc, with_bounds=False)
    res = run_sweep(spec)
    assert [c.failed for c in res.cells] == [False, True]
    assert "divergence" in res.cells[1].error
    header, rows = res.table()
    assert rows[1][-1].startswith("failed")


def test_fits_only_for_decade_grids():
    spec = SweepSpec({"a": [0.01, 0.1], "eps_star": [0.1, 0.2]}, 20, small_doc(), T_end=10.0,
                     with_bounds=False)
    res = run_sweep(spec)
    assert set(res.fits) == {"a"} and res.fits["a"].n_points == 2


def test_eps_star_axis_noiseless_slope_one():
    doc = small_doc()
    doc["noise"] = {"family": "none"}
    spec = SweepSpec({"eps_star": [0.01, 0.03, 0.1]}, 1, doc, T_end=20.0, with_bounds=False)
    fit = run_sweep(spec).fits["eps_star"]
    assert fit.slope == pytest.approx(1.0, abs=0.05)


# ---------------------------------------------------------------------------
# report


def test_empty_report(tmp_path):
    files = emit_report(None, str(tmp_path))
    assert [os.path.basename(f) for f in files] == ["sweep_cells.csv", "scaling_fits.csv",
                                                     "manifest.json"]
    assert (tmp_path / "sweep_cells.csv").read_text().count("\n") == 1
    assert not list(tmp_path.glob("*.svg"))


def _small_sweep():
    spec = SweepSpec({"a": [0.01, 0.1]}, 30, small_doc(), T_end=10.0)
    return run_sweep(spec)


def test_report_plot_naming_manifest_and_overlay(tmp_path):
    res = _small_sweep()
    files = emit_report(res, str(tmp_path))
    names = {os.path.basename(f) for f in files}
    assert names == {"sweep_cells.csv", "scaling_fits.csv", "plot_a.svg", "manifest.json"}
    manifest = json.loads((tmp_path / "manifest.json").read_text())["files"]
    assert set(manifest) == names - {"manifest.json"}
    for c in res.cells:
        if c.all_time_ok:
            assert c.bound >= c.rms


def test_report_idempotent(tmp_path):
    res = _small_sweep()
    emit_report(res, str(tmp_path / "r1"))
    emit_report(res, str(tmp_path / "r2"))
    for name in ("sweep_cells.csv", "scaling_fits.csv", "plot_a.svg", "manifest.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ConfigError):
        emit_report(None, str(blocker / "sub"))


def test_csv_decimal_and_header(tmp_path):
    p = tmp_path / "t.csv"
    write_csv(str(p), ["x", "y"], [[0.1, 2]])
    assert p.read_text(encoding="utf-8") == "x,y\n0.1,2\n"


# ---------------------------------------------------------------------------
# CLI


def test_cli_simulate_deterministic(tmp_path):
    cfg = write_json(tmp_path, small_doc())
    for out in ("o1", "o2"):
        assert main(["simulate", "--config", cfg, "--seed", "5", "--out", str(tmp_path / out)]) == 0
    for name in ("summary.csv", "trajectory.csv"):
        assert (tmp_path / "o1" / name).read_bytes() == (tmp_path / "o2" / name).read_bytes()
    main(["simulate", "--config", cfg, "--seed", "6", "--out", str(tmp_path / "o3")])
    assert (tmp_path / "o1" / "summary.csv").read_bytes() != (tmp_path / "o3" / "summary.csv").read_bytes()


def test_cli_decompose_and_bounds(tmp_path):
    cfg = write_json(tmp_path, small_doc())
    out = str(tmp_path / "o")
    assert main(["decompose", "--config", cfg, "--out", out, "--n", "50", "--n", "100"]) == 0
    assert (tmp_path / "o" / "decomposition.csv").exists()
    assert main(["bounds", "--config", cfg, "--out", out]) == 0
    ledger = json.loads((tmp_path / "o" / "ledger.json").read_text())
    assert ledger["provenance"]["delta"] == "calibrated"


def test_cli_concentration_records_hash(tmp_path):
    cfg = write_json(tmp_path, small_doc())
    assert main(["concentration", "--config", cfg, "--out", str(tmp_path)]) == 0
    rec = json.loads((tmp_path / "calibration.json").read_text())
    assert len(rec["config_hash"]) == 16 and rec["c"] > 0


def test_cli_stability_exit_codes(tmp_path):
    assert main(["stability", "--config", os.path.join(CONFIGS, "stability_rotating.json"),
                 "--out", str(tmp_path)]) == 0
    t = np.arange(801) * 0.05
    c, s = np.cos(t), np.sin(t)
    A = np.stack([-1 + 1.5 * c * c, 1 - 1.5 * s * c, -1 - 1.5 * s * c, -1 + 1.5 * s * s], axis=1)
    path = tmp_path / "my.csv"
    write_csv(str(path), ["t", "a00", "a01", "a10", "a11"], np.column_stack([t, A]).tolist())
    doc = {"model": {"name": "linear_drift", "params": {"dim": 2}}, "sim": {"a": 0.1},
           "stability": {"matrix_csv": str(path)}}
    assert main(["stability", "--config", write_json(tmp_path, doc), "--out", str(tmp_path)]) == 3


def test_cli_error_exit_codes(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1
    doc = small_doc()
    doc["sim"]["bogus"] = 1
    assert main(["simulate", "--config", write_json(tmp_path, doc)]) == 1
    assert main(["simulate", "--config", "x", "--seed", "-1"]) == 1
    assert main(["nope"]) == 1
    doc = small_doc(horizon_N=200)
    doc["sim"].pop("T_end")
    doc["model"] = {"name": "linear_drift", "params": {"dim": 1, "gain": -5.0}}
    doc["sim"]["a"] = 0.5
    assert main(["simulate", "--config", write_json(tmp_path, doc), "--out", str(tmp_path)]) == 2
    assert main(["sweep", "--config", write_json(tmp_path, small_doc()), "--out", str(tmp_path)]) == 1
