from __future__ import annotations

import json
import math
from dataclasses import replace

import numpy as np
import pytest

from mmfqkd import experiments as ex
from mmfqkd.analysis import LinkObservables, write_observables_csv
from mmfqkd.domain import ProtocolParams
from mmfqkd.errors import CalibrationError, ConfigError, InsufficientDataError
from mmfqkd.keyrate import oracle_gain, oracle_inputs, oracle_qber, optimize_protocol

SMALL = dict(distances_km=[1.0, 10.0], trials=2)


def small(tmp_path, **kw):
    return ex.RunConfig.from_mapping({**SMALL, "out_dir": str(tmp_path), **kw})


def test_mapping_round_trip():
    cfg = ex.RunConfig.from_mapping({"seed": 7, "mu_decoy": 0.05, "coupling_per_km": 0.1, "drift_amplitude": 0.2,
                                     "dark_rate_hz": 5.0, "distances_km": [2, 3]})
    assert cfg.protocol.mu_decoy == 0.05
    assert cfg.channel.coupling_per_km == 0.1
    assert cfg.drift.amplitude == 0.2
    assert cfg.detector.dark_rate_hz == 5.0
    assert cfg.distances_km == (2.0, 3.0)
    assert ex.RunConfig.from_mapping(cfg.to_mapping()) == cfg
    assert "out_dir" not in cfg.echo()


@pytest.mark.parametrize("flat", [{"bogus": 1}, {"trials": 0}, {"distances_km": []}, {"launches": ["lens"]},
                                  {"mu_signal": 0.05}, {"mode": "dance"}])
def test_mapping_rejects_bad_input(flat):
    with pytest.raises(ConfigError):
        ex.RunConfig.from_mapping(flat)


def test_load_config_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"seed": 3, "trials": 4}))
    cfg = ex.load_config(path, {"seed": 9, "trials": None})
    assert cfg.seed == 9 and cfg.trials == 4
    assert ex.load_config().seed == 42


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ex.load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        ex.load_config(bad)


def test_launch_kinds_share_spool_and_connector_draws():
    cfg = ex.RunConfig()
    a = ex.trial_draws(cfg, 10.0, "adapter", 1)
    b = ex.trial_draws(cfg, 10.0, "underfill", 1)
    assert np.array_equal(a.connectors_db, b.connectors_db)


def test_sweep_shapes_and_analyze_round_trip(tmp_path):
    cfg = small(tmp_path)
    result = ex.run_sweep(cfg, plots=False)
    # distances x launches x trials x bases x intensity classes
    assert len(result.observables) == 2 * 2 * 2 * 2 * 3
    assert len(result.skr) == 4
    again = ex.run_analyze(tmp_path / "observables.csv", replace(cfg, out_dir=str(tmp_path / "a")))
    assert again == result.skr
    assert (tmp_path / "a" / "skr.csv").read_bytes() == (tmp_path / "skr.csv").read_bytes()
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert set(summary["adapter_gain_ratio"]) == {"1km", "10km"}


def oracle_rows(eta, y0, ed, distance=5.0, trials=2):
    rows = []
    for trial in range(trials):
        for basis in ("X", "Z"):
            for cls, mu in (("signal", 0.4), ("decoy", 0.1)):
                rows.append(LinkObservables(distance, basis, "adapter", trial, cls, oracle_qber(mu, eta, y0, ed),
                                            oracle_gain(mu, eta, y0) / mu, 10.0))
            rows.append(LinkObservables(distance, basis, "adapter", trial, "vacuum", 0.5, y0, 10.0))
    return rows


def test_analyze_oracle_rows_match_direct_key_rate(tmp_path):
    path = tmp_path / "o.csv"
    write_observables_csv(path, oracle_rows(1e-2, 1e-6, 0.02))
    (row,) = ex.run_analyze(path, write=False)
    direct = optimize_protocol(oracle_inputs(1e-2, 1e-6, 0.02))
    assert row.skr_bps == pytest.approx(direct.skr, rel=1e-9)
    assert row.p_z == direct.p_z and not row.model_derived


def test_analyze_random_and_perfect_rows(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("distance_km,basis,launch,qber,gain\n5,Z,adapter,0.5,0.01\n5,X,adapter,0.5,0.01\n"
                    "6,Z,adapter,0.0,0.01\n6,X,adapter,0.0,0.01\n")
    noisy, clean = ex.run_analyze(path, write=False)
    assert noisy.skr_bps == 0.0
    assert clean.skr_bps > 0.0
    assert clean.model_derived and math.isnan(clean.measured_loss_db)


def test_key_rate_inputs_need_z_signal():
    with pytest.raises(InsufficientDataError):
        ex.key_rate_inputs({("X", "signal"): (0.02, 0.01)}, ProtocolParams())


def test_stability_zero_drift_is_flat():
    cfg = ex.RunConfig(duration_s=100.0, step_s=10.0,
                       drift=replace(ex.DEFAULT_DRIFT, amplitude=0.0, noise_amplitude=0.0))
    stats = ex.ExpectedModel(cfg).stability(10.0, "underfill")
    for basis in ("X", "Z"):
        assert stats[basis]["qber_std"] == pytest.approx(0.0, abs=1e-15)
        assert stats[basis]["gain_rel_std"] == pytest.approx(0.0, abs=1e-12)


def test_stability_run_writes_series(tmp_path):
    cfg = ex.RunConfig(out_dir=str(tmp_path), duration_s=60.0, step_s=10.0)
    rows = ex.run_stability(cfg, plots=False)
    assert len(rows) == 12
    assert (tmp_path / "stability.csv").read_text().count("\n") == 13


def test_drift_series_timing():
    series = ex.drift_series(ex.RunConfig(duration_s=50.0, step_s=10.0))
    assert [s.time_s for s in series] == [0.0, 10.0, 20.0, 30.0, 40.0]


def cheap(**kw):
    return ex.RunConfig(trials=2, **kw)


def test_calibrate_leaves_consistent_model_unchanged():
    cfg = cheap()
    model = ex.ExpectedModel(cfg)
    q, g = model.cells(10.0, "underfill")[("X", "signal")]
    anchors = (ex.Anchor("qber", q), ex.Anchor("gain", g))
    result = ex.calibrate(cfg, anchors, params=("excess_loss_db", "phase_coeff"))
    assert result.config == cfg
    assert result.residuals == (0.0, 0.0)


def test_calibrate_single_gain_anchor():
    cfg = cheap()
    g = ex.ExpectedModel(cfg).cells(10.0, "underfill")[("Z", "signal")][1]
    result = ex.calibrate(cfg, (ex.Anchor("gain", 0.7 * g, basis="Z"),), params=("excess_loss_db",))
    assert abs(result.residuals[0]) < 0.05
    assert result.config.channel.excess_loss_db > cfg.channel.excess_loss_db


def test_calibration_error_carries_best_effort():
    cfg = cheap()
    g = ex.ExpectedModel(cfg).cells(10.0, "underfill")[("Z", "signal")][1]
    with pytest.raises(CalibrationError) as info:
        ex.calibrate(cfg, (ex.Anchor("gain", 0.5 * g, basis="Z"),), params=("excess_loss_db",), max_iter=1)
    assert abs(info.value.residuals[0]) < 0.05


def test_calibrate_rejects_unknown_parameter():
    with pytest.raises(ConfigError):
        ex.calibrate(cheap(), (ex.Anchor("qber", 0.03),), params=("mu_signal",))


def test_anchor_validation_and_loading(tmp_path):
    with pytest.raises(ConfigError):
        ex.Anchor("speed", 1.0)
    with pytest.raises(ConfigError):
        ex.Anchor("qber", 0.0)
    path = tmp_path / "a.json"
    path.write_text(json.dumps([{"kind": "qber", "target": 0.03, "basis": "z"}]))
    assert ex.load_anchors(path) == (ex.Anchor("qber", 0.03, basis="Z"),)
    path.write_text(json.dumps([{"kind": "qber"}]))
    with pytest.raises(ConfigError):
        ex.load_anchors(path)


def test_with_parameter_keeps_drift_noise_ratio():
    cfg = ex.RunConfig()
    moved = ex.with_parameter(cfg, "drift_amplitude", 0.1)
    ratio = cfg.drift.noise_amplitude / cfg.drift.amplitude
    assert moved.drift.noise_amplitude / moved.drift.amplitude == pytest.approx(ratio)
    assert ex.get_parameter(moved, "drift_amplitude") == 0.1
