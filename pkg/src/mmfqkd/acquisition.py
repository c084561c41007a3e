"""One acquisition: a fixed pattern sent repeatedly over a frozen link state.

Two simulation routes produce the same kind of histogram:

* analytic mode computes the expected click count of every gate over the
  whole acquisition, spreads it over bins with the jitter profile, and draws
  one Poisson sample per bin;
* event mode follows individual photons symbol by symbol, emits timetags,
  applies dead time and folds them with ``build_histogram``. It is meant for
  cross-checks at up to ~1e7 symbols.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from . import channel as ch
from .analysis import (DEFAULT_BIN_WIDTH_S, HistogramGrid, LinkObservables, align_pattern,
                       build_histogram, compute_observables, expected_gate_energy, gate_and_score)
from .domain import Basis, IntensityClass, ProtocolParams, SeededRng, SymbolPattern
from .errors import ConfigError, NoSignalError
from .receiver import (N_CHANNELS, SLOT_CENTERS, DetectionRecords, DetectorParams, amzi_outcome,
                       apply_dead_time, quantize_ps, timing_misplacement)
from .transmitter import encode, photon_number

C_KM_PER_S = 299_792.458


@dataclass(frozen=True)
class LinkPoint:
    """Frozen link physics seen by one receiver configuration."""

    receiver_basis: Basis
    eta: float  # launched photon -> detector input, detector efficiency excluded
    error_prob: float  # phase error (X) or slot misplacement (Z)
    loss_db: float
    offset_symbols: int


def link_point(config: ch.ChannelConfig, state_out: ch.ModePowerState, receiver_basis: Basis,
               detector: DetectorParams, protocol: ProtocolParams) -> LinkPoint:
    receiver_basis = Basis(receiver_basis)
    eta = ch.link_transmittance(state_out, detector.attenuation_db(receiver_basis), 1.0,
                                config.effective_recapture, config.excess_loss_db)
    phase, timing = ch.error_contributions(state_out, config, protocol)
    err = phase if receiver_basis == Basis.X else min(0.5, config.e_opt_z + timing)
    delay_s = config.length_km * config.group_index / C_KM_PER_S
    offset = int(round(delay_s / protocol.symbol_period_s)) % protocol.pattern_length
    return LinkPoint(receiver_basis, eta, err, ch.channel_loss_db(state_out, config), offset)


def simulate_link(config: ch.ChannelConfig, receiver_basis: Basis, detector: DetectorParams,
                  protocol: ProtocolParams, launch_rng, connectors_db, drift: ch.DriftState | None = None
                  ) -> LinkPoint:
    state = ch.launch(config, launch_rng)
    out = ch.propagate(state, config, drift, connectors_db=connectors_db)
    return link_point(config, out, receiver_basis, detector, protocol)


def measurement_pattern(protocol: ProtocolParams, receiver_basis: Basis, rng: SeededRng) -> SymbolPattern:
    """The fixed random train sent while the receiver sits in one basis configuration."""
    from .domain import random_pattern
    bias = 1.0 if Basis(receiver_basis) == Basis.Z else 0.0
    return random_pattern(protocol.pattern_length, bias, protocol.intensity_probs,
                          rng.child("pattern", Basis(receiver_basis).name), tuple(protocol.intensity_means))


def _jitter_kernel(bins_per_symbol: int, protocol: ProtocolParams, jitter_s: float, center: float):
    """Bin offsets and weights of a Gaussian-jittered click centred at ``center`` (symbol fraction)."""
    bin_s = protocol.symbol_period_s / bins_per_symbol
    c_pos = center * bins_per_symbol
    base = int(math.floor(c_pos))
    if jitter_s <= 0:
        return np.array([base]), np.array([1.0])
    reach = int(math.ceil(6 * jitter_s / bin_s)) + 1
    offs = np.arange(base - reach, base + reach + 1)
    edges = (np.append(offs, offs[-1] + 1) - c_pos) * bin_s / jitter_s
    w = np.diff(ndtr(edges))
    return offs, w / w.sum()


@dataclass(frozen=True, eq=False)
class Acquisition:
    hist: HistogramGrid
    pattern: SymbolPattern
    link: LinkPoint
    pulses: np.ndarray  # pulses sent per intensity class
    records: DetectionRecords | None = None


def _class_pulses(pattern: SymbolPattern, repetitions: int) -> np.ndarray:
    return np.bincount(pattern.intensities, minlength=3) * repetitions


def acquire_analytic(pattern: SymbolPattern, link: LinkPoint, detector: DetectorParams,
                     protocol: ProtocolParams, rng: SeededRng | None = None,
                     bin_width_s: float = DEFAULT_BIN_WIDTH_S) -> Acquisition:
    """Expected-count histogram, Poisson-sampled once per bin (or left as expectations if ``rng`` is None)."""
    bps = int(round(protocol.symbol_period_s / bin_width_s))
    reps = protocol.repetitions
    if reps < 1:
        raise ConfigError("acquisition shorter than one pattern period")
    energy = expected_gate_energy(pattern, link.receiver_basis, link.error_prob) * link.eta
    clicks = reps * -np.expm1(-detector.efficiency * energy)  # (channel, symbol, slot)
    used = [0] if link.receiver_basis == Basis.Z else list(range(N_CHANNELS))
    t_acq = reps * protocol.pattern_period_s
    n_bins = bps * len(pattern)
    # jitter profile of each slot over the previous, own and next symbol
    profile = np.zeros((len(SLOT_CENTERS), 3 * bps))
    for s, center in enumerate(SLOT_CENTERS):
        offs, w = _jitter_kernel(bps, protocol, detector.jitter_s, center)
        if offs.min() < -bps or offs.max() >= 2 * bps:
            raise ConfigError("timing jitter wider than a symbol period")
        profile[s, offs + bps] = w
    expected = np.zeros((N_CHANNELS, n_bins))
    for j in (-1, 0, 1):
        part = np.einsum("cks,sb->ckb", clicks, profile[:, (j + 1) * bps:(j + 2) * bps])
        expected += np.roll(part, j, axis=1).reshape(N_CHANNELS, n_bins)
    for c in used:
        rate = expected[c].sum() / t_acq + detector.dark_rate_hz
        expected[c] += detector.dark_rate_hz * t_acq / n_bins
        # non-paralysable dead time
        expected[c] /= 1.0 + rate * detector.dead_time_s
    expected = np.roll(expected, link.offset_symbols * bps, axis=1)
    counts = expected if rng is None else rng.generator().poisson(expected)
    hist = HistogramGrid(bin_width_s, counts, t_acq, bps)
    return Acquisition(hist, pattern, link, _class_pulses(pattern, reps))


def acquire_events(pattern: SymbolPattern, link: LinkPoint, detector: DetectorParams,
                   protocol: ProtocolParams, n_symbols: int, rng: SeededRng,
                   bin_width_s: float = DEFAULT_BIN_WIDTH_S, chunk: int = 1_000_000) -> Acquisition:
    """Photon-by-photon simulation of ``n_symbols`` consecutive symbols."""
    L = len(pattern)
    if n_symbols % L:
        raise ConfigError("event-mode symbol count must be a whole number of pattern periods")
    chunk = max(L, chunk - chunk % L)
    rb = link.receiver_basis
    t_sym = protocol.symbol_period_s
    p_detect = min(1.0, link.eta * detector.efficiency)
    parts = []
    for start in range(0, n_symbols, chunk):
        count = min(chunk, n_symbols - start)
        sym = encode(pattern, protocol, rng.child("encode"), start, count)
        n = photon_number(sym.mean_photons, rng.child("photons", start))
        gen = rng.child("route", start).generator()
        survivors = gen.binomial(n, p_detect)
        idx = np.repeat(np.arange(count), survivors)
        if len(idx) == 0:
            continue
        bases, bits = sym.basis[idx], sym.bit[idx].astype(np.int8)
        is_match = bases == rb
        pos = np.empty(len(idx))
        chan = np.zeros(len(idx), dtype=np.int8)
        truth = np.full(len(idx), -1, dtype=np.int8)
        if rb == Basis.Z:
            slot = np.empty(len(idx), dtype=np.int8)
            if is_match.any():
                slot[is_match] = timing_misplacement(sym.slot[idx][is_match], link.error_prob, gen)
                truth[is_match] = (slot[is_match] == bits[is_match]).astype(np.int8)
            slot[~is_match] = gen.integers(0, 2, size=(~is_match).sum())
            pos[:] = np.asarray(SLOT_CENTERS)[slot]
        else:
            if is_match.any():
                port, s3 = amzi_outcome(bases[is_match], bits[is_match], link.error_prob, gen)
                pos[is_match] = np.array([0.25, 0.75, 1.25])[s3]
                chan[is_match] = port
                central = s3 == 1
                t = np.full(len(port), -1, dtype=np.int8)
                t[central] = (port[central] == bits[is_match][central]).astype(np.int8)
                truth[is_match] = t
            other = ~is_match
            if other.any():
                arm = gen.integers(0, 2, size=other.sum())
                pos[other] = np.asarray(SLOT_CENTERS)[sym.slot[idx][other]] + 0.5 * arm
                chan[other] = gen.integers(0, 2, size=other.sum())
        # a click per occupied (symbol, channel, position) cell
        cell_key = (idx.astype(np.int64) * 8 + np.rint(pos * 4).astype(np.int64)) * N_CHANNELS + chan
        _, first = np.unique(cell_key, return_index=True)
        gsym = start + idx[first]
        t_s = (gsym + link.offset_symbols + pos[first]) * t_sym
        if detector.jitter_s > 0:
            t_s = t_s + gen.normal(0.0, detector.jitter_s, size=len(first))
        parts.append(DetectionRecords(quantize_ps(t_s, detector.resolution_s), chan[first],
                                      gsym.astype(np.int64), truth[first]))

    t_total = n_symbols * t_sym
    used = [0] if rb == Basis.Z else list(range(N_CHANNELS))
    dgen = rng.child("dark").generator()
    for c in used:
        k = dgen.poisson(detector.dark_rate_hz * t_total)
        t_s = dgen.uniform(0.0, t_total, size=k)
        parts.append(DetectionRecords(quantize_ps(t_s, detector.resolution_s), np.full(k, c, np.int8),
                                      np.full(k, -1, np.int64), np.full(k, -1, np.int8)))
    records = apply_dead_time(DetectionRecords.concat(parts), detector.dead_time_s)
    hist = build_histogram(records, protocol, bin_width_s)
    return Acquisition(hist, pattern, link, _class_pulses(pattern, n_symbols // L), records)


def truth_counts(acq: Acquisition, cls: IntensityClass) -> tuple[int, int]:
    """Correct/incorrect click counts straight from per-click truth labels (event mode only)."""
    rec = acq.records
    if rec is None:
        raise ValueError("truth labels need an event-mode acquisition")
    sel = rec.truth >= 0
    pos = rec.symbol[sel] % len(acq.pattern)
    in_cls = acq.pattern.intensities[pos] == int(cls)
    t = rec.truth[sel][in_cls]
    return int((t == 1).sum()), int((t == 0).sum())


def reduce(acq: Acquisition, protocol: ProtocolParams, *, distance_km: float = 0.0, launch: str = "underfill",
           trial: int = 0, offset: int | None = None) -> list[LinkObservables]:
    """Align, gate and score an acquisition into one observables row per intensity class."""
    rb = acq.link.receiver_basis
    if offset is None:
        offset = align_pattern(acq.hist, acq.pattern, protocol, rb)
    out = []
    for cls in IntensityClass:
        mask = acq.pattern.intensities == int(cls)
        correct, incorrect = gate_and_score(acq.hist, acq.pattern, offset, protocol, rb, mask)
        labels = dict(distance_km=distance_km, basis=rb.name, launch=launch, trial=trial,
                      intensity=cls.label, loss_db=acq.link.loss_db)
        try:
            ob = compute_observables(correct, incorrect, protocol, protocol.mean_for(cls),
                                     pulses=float(acq.pulses[int(cls)]), **labels)
        except NoSignalError:
            if cls != IntensityClass.VACUUM:
                raise
            # an empty vacuum gate is a zero yield with uniformly random errors
            ob = LinkObservables(float(distance_km), rb.name, launch, int(trial), cls.label,
                                 0.5, 0.0, float(acq.link.loss_db))
        out.append(ob)
    return out


def expected_rates(link: LinkPoint, detector: DetectorParams, protocol: ProtocolParams,
                   class_share=None) -> dict[IntensityClass, tuple[float, float]]:
    """Closed-form (qber, gain) per intensity class, no histogram and no sampling.

    Ignores jitter leakage outside the gates, which the 250 ps gate makes
    negligible; includes dark counts and the uniform dead-time correction.
    """
    share = np.asarray(protocol.intensity_probs if class_share is None else class_share, dtype=float)
    means = protocol.intensity_means
    e = link.error_prob
    eff = detector.efficiency
    p_dark = -math.expm1(-detector.dark_rate_hz * protocol.gate_s)
    scored = {}
    total_rate = 0.0
    for cls in IntensityClass:
        mu = means[int(cls)]
        if link.receiver_basis == Basis.Z:
            right = -math.expm1(-eff * link.eta * mu * (1 - e))
            wrong = -math.expm1(-eff * link.eta * mu * e)
            # everything registered by the single detector per symbol
            total_rate += share[int(cls)] * (right + wrong)
        else:
            right = -math.expm1(-eff * link.eta * mu * 0.5 * (1 - e))
            wrong = -math.expm1(-eff * link.eta * mu * 0.5 * e)
            side = -math.expm1(-eff * link.eta * mu / 8)
            # per detector: own central share plus two side slots
            total_rate += share[int(cls)] * (0.5 * (right + wrong) + 2 * side)
        right = 1 - (1 - right) * (1 - p_dark)
        wrong = 1 - (1 - wrong) * (1 - p_dark)
        scored[cls] = (right, wrong)
    rate_hz = total_rate * protocol.clock_rate_hz + detector.dark_rate_hz
    dead = 1.0 / (1.0 + rate_hz * detector.dead_time_s)
    out = {}
    for cls, (right, wrong) in scored.items():
        mu = means[int(cls)]
        per_pulse = (right + wrong) * dead
        qber = wrong / (right + wrong) if right + wrong > 0 else 0.5
        out[cls] = (qber, per_pulse / mu if mu > 0 else per_pulse)
    return out
