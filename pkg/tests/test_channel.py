from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmfqkd import channel as ch
from mmfqkd.domain import ProtocolParams, SeededRng
from mmfqkd.errors import ConfigError

LOSSLESS = dict(attenuation_db_per_km=0.0, group_excess_db_per_km=0.0, connector_loss_mean_db=0.0,
                connector_loss_std_db=0.0, adapter_insertion_db=0.0)


def single_group(n=8):
    p = np.zeros(n)
    p[0] = 1.0
    return ch.ModePowerState.from_power(p)


@pytest.mark.parametrize("distance,spools", [
    (1, (1.0,)), (3, (2.0, 1.0)), (7, (5.0, 2.0)), (8, (5.0, 2.0, 1.0)),
    (12, (10.0, 2.0)), (15, (10.0, 5.0)), (17, (10.0, 5.0, 2.0)), (0, ()),
])
def test_spool_decomposition(distance, spools):
    assert ch.spools_for(distance) == spools


def test_connectors_count_both_ends():
    cfg = ch.ChannelConfig().for_link(17, "underfill")
    assert cfg.n_connectors == 4
    assert cfg.length_km == 17


def test_config_validation():
    with pytest.raises(ConfigError):
        ch.ChannelConfig(segments_km=(-1.0,))
    with pytest.raises(ConfigError):
        ch.ChannelConfig(adapter_suppression=1.5)
    with pytest.raises(ConfigError):
        ch.ChannelConfig(launch="lens")


def test_two_group_coupling_closed_form():
    kl = 0.37
    m = ch.coupling_matrix(2, kl)
    e = math.exp(-2 * kl)
    assert np.allclose(m, 0.5 * np.array([[1 + e, 1 - e], [1 - e, 1 + e]]), atol=1e-14)


@given(st.floats(0.0, 20.0))
def test_coupling_matrix_is_doubly_stochastic(kl):
    m = ch.coupling_matrix(8, kl)
    assert np.all(m >= -1e-12)
    assert np.allclose(m.sum(axis=0), 1.0, atol=1e-12)
    assert np.allclose(m, m.T, atol=1e-12)


def test_uniform_distribution_is_fixed_point():
    cfg = ch.ChannelConfig(segments_km=(10.0, 5.0), coupling_per_km=0.2, **LOSSLESS)
    uniform = ch.ModePowerState.from_power(np.full(8, 1 / 8))
    out = ch.propagate(uniform, cfg)
    assert np.allclose(out.power, 1 / 8, atol=1e-12)


def test_adapter_launch_perfect_suppression():
    state = ch.launch(ch.ChannelConfig(launch="adapter", adapter_suppression=1.0), SeededRng(0))
    assert np.array_equal(state.power, [1, 0, 0, 0, 0, 0, 0, 0])


def test_adapter_launch_leak_split():
    cfg = ch.ChannelConfig(launch="adapter", adapter_suppression=0.5, adapter_leak=0.3)
    p = ch.launch(cfg, SeededRng(0)).power
    assert p[0] == pytest.approx(0.85)
    assert p[1:3] == pytest.approx([0.1, 0.05])


def test_underfill_launch_deterministic_and_in_band():
    cfg = ch.ChannelConfig()
    a = ch.launch(cfg, SeededRng(5).child("t"))
    b = ch.launch(cfg, SeededRng(5).child("t"))
    assert np.array_equal(a.power, b.power)
    lo, hi = cfg.underfill_band
    f1 = np.array([ch.launch(cfg, SeededRng(9).child(i)).power[0] for i in range(1000)])
    assert np.all((f1 >= lo) & (f1 <= hi))
    assert lo <= f1.mean() <= hi
    assert f1.mean() == pytest.approx(0.5 * (lo + hi), abs=0.005)


def test_no_coupling_single_group_attenuation():
    cfg = ch.ChannelConfig(segments_km=(10.0,), coupling_per_km=0.0, connector_loss_mean_db=0.0,
                           connector_loss_std_db=0.0)
    out = ch.propagate(single_group(), cfg)
    assert out.power[0] == pytest.approx(10 ** (-0.3 * 10 / 10), rel=1e-12)
    assert np.all(out.power[1:] == 0)


def test_zero_length_is_identity():
    s = ch.launch(ch.ChannelConfig(), SeededRng(3))
    assert ch.propagate(s, ch.ChannelConfig(segments_km=())) is s


@settings(deadline=None)
@given(st.floats(0.0, 2.0), st.lists(st.sampled_from([1.0, 2.0, 5.0, 10.0]), min_size=1, max_size=4),
       st.integers(0, 1000))
def test_lossless_propagation_conserves_power(kappa, segs, seed):
    cfg = ch.ChannelConfig(segments_km=tuple(segs), coupling_per_km=kappa, **LOSSLESS)
    s = ch.launch(cfg, SeededRng(seed))
    out = ch.propagate(s, cfg)
    assert out.total == pytest.approx(s.total, abs=1e-12)


@settings(deadline=None)
@given(st.integers(0, 10_000))
def test_collected_power_non_increasing_in_length(seed):
    base = ch.ChannelConfig()
    s = ch.launch(base, SeededRng(seed))
    collected = [ch.collected_power(ch.propagate(s, replace(base, segments_km=(float(d),))), base.recapture)
                 for d in range(1, 18)]
    assert np.all(np.diff(collected) <= 1e-15)


@settings(deadline=None)
@given(st.sampled_from([1.0, 2.0, 3.0, 5.0, 7.0, 8.0, 10.0, 12.0, 15.0, 17.0]), st.integers(0, 10_000))
def test_adapter_phase_error_never_exceeds_underfill(distance, seed):
    proto = ProtocolParams()
    rng = SeededRng(seed)
    errs = {}
    for kind in ch.LAUNCH_KINDS:
        cfg = ch.ChannelConfig().for_link(distance, kind)
        conns = ch.draw_connector_losses(cfg, rng.child("conn"))
        out = ch.propagate(ch.launch(cfg, rng.child("launch")), cfg, connectors_db=conns)
        errs[kind] = ch.error_contributions(out, cfg, proto)[0]
    assert errs["adapter"] <= errs["underfill"]


def test_delays_zero_for_group_one_and_non_decreasing():
    cfg = ch.ChannelConfig().for_link(12, "underfill")
    out = ch.propagate(ch.launch(cfg, SeededRng(1)), cfg)
    assert out.delay_s[0] == 0.0
    assert np.all(np.diff(out.delay_s) >= 0)
    assert out.delay_s[1] == pytest.approx(12 * cfg.dmd_s_per_km)


def test_link_transmittance_examples():
    assert ch.link_transmittance(single_group(), 0.0, 1.0) == 1.0
    p = np.zeros(8)
    p[0] = 10 ** (-0.3)  # 10 km at 0.3 dB/km
    eta = ch.link_transmittance(ch.ModePowerState.from_power(p), 3.0, 0.5)
    assert eta == pytest.approx(0.501 * 0.501 * 0.5, rel=1e-3)
    assert eta == pytest.approx(0.1255, abs=5e-4)
    half = ch.ModePowerState.from_power(np.r_[0.5, 0.5, np.zeros(6)])
    assert ch.link_transmittance(half, 3.0, 0.5) == pytest.approx(0.5 * ch.link_transmittance(single_group(), 3.0, 0.5))


def test_error_contributions_pure_fundamental_mode():
    cfg = ch.ChannelConfig()
    state = ch.ModePowerState(np.r_[1.0, np.zeros(7)], np.arange(8) * 1e-9, np.arange(8) * 5.0)
    assert ch.error_contributions(state, cfg, ProtocolParams()) == (cfg.e_opt_x, 0.0)


def test_timing_term_zero_inside_half_gate():
    cfg = ch.ChannelConfig()
    p = np.r_[0.7, 0.3, np.zeros(6)]
    state = ch.ModePowerState(p, np.r_[0.0, 100e-12, np.zeros(6)], np.zeros(8))
    assert ch.error_contributions(state, cfg, ProtocolParams())[1] == 0.0


def test_errors_clamped():
    cfg = ch.ChannelConfig(phase_coeff=1e3, timing_coeff=1e3)
    state = ch.ModePowerState(np.r_[0.5, 0.5, np.zeros(6)], np.r_[0.0, 1e-9, np.zeros(6)], np.r_[0, 10.0, np.zeros(6)])
    phase, timing = ch.error_contributions(state, cfg, ProtocolParams())
    assert phase == 0.5 and timing == 0.5


def test_zero_drift_amplitude_is_time_invariant():
    cfg = ch.ChannelConfig().for_link(10, "underfill")
    s = ch.launch(cfg, SeededRng(1))
    conns = ch.draw_connector_losses(cfg, SeededRng(2))
    drift = ch.DriftState(amplitude=0.0, noise_amplitude=0.0)
    ref = ch.propagate(s, cfg, drift, connectors_db=conns).power
    for i in range(5):
        drift = ch.advance_drift(drift, 137.0, SeededRng(3).child(i))
        assert np.array_equal(ch.propagate(s, cfg, drift, connectors_db=conns).power, ref)


def test_drift_periodicity():
    d = ch.DriftState(time_s=42.0, amplitude=0.3, noise_amplitude=0.0)
    later = ch.advance_drift(d, d.period_s, SeededRng(0))
    assert later.deterministic == pytest.approx(d.deterministic, abs=1e-12)


def test_ou_noise_is_stationary():
    d = ch.DriftState(noise_amplitude=0.2, noise_tau_s=30.0)
    gen = np.random.default_rng(0)
    values = []
    for _ in range(20_000):
        d = ch.advance_drift(d, 10.0, gen)
        values.append(d.noise_value)
    assert np.std(values[1000:]) == pytest.approx(0.2, rel=0.05)
    assert np.mean(values) == pytest.approx(0.0, abs=0.02)


def test_drift_factors_never_negative():
    d = ch.DriftState(time_s=450.0, amplitude=0.9, noise_value=-0.5)
    assert d.kappa_factor == 0.0 and d.loss_factor == 0.0


def test_connector_losses_floored():
    cfg = ch.ChannelConfig(connector_loss_mean_db=0.0, connector_loss_std_db=1.0).for_link(17, "underfill")
    draws = ch.draw_connector_losses(cfg, SeededRng(0))
    assert len(draws) == 4 and np.all(draws >= 0)


def test_propagate_rejects_wrong_connector_count():
    cfg = ch.ChannelConfig().for_link(8, "underfill")
    with pytest.raises(ConfigError):
        ch.propagate(single_group(), cfg, connectors_db=[0.1])
