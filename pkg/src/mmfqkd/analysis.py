"""Data reduction: fold timetags into a pattern-period histogram, align it to
the sent pattern, gate each slot to its central window and score QBER and gain."""
from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass

import numpy as np

from .domain import Basis, IntensityClass, ProtocolParams, SymbolPattern
from .errors import AlignmentError, ConfigError, InsufficientDataError, NoSignalError, ParseError
from .receiver import CELLS, N_CHANNELS, SLOT_CENTERS, DetectionRecords, cell_fractions

DEFAULT_BIN_WIDTH_S = 15.625e-12


@dataclass(frozen=True, eq=False)
class HistogramGrid:
    """Counts per (detector channel, bin) over one pattern period."""

    bin_width_s: float
    counts: np.ndarray
    acquisition_s: float
    bins_per_symbol: int

    @property
    def n_bins(self) -> int:
        return self.counts.shape[1]

    @property
    def n_symbols(self) -> int:
        return self.n_bins // self.bins_per_symbol

    def rotated(self, symbols: int) -> "HistogramGrid":
        return HistogramGrid(self.bin_width_s, np.roll(self.counts, symbols * self.bins_per_symbol, axis=1),
                             self.acquisition_s, self.bins_per_symbol)


def _bins_per_symbol(protocol: ProtocolParams, bin_width_s: float) -> int:
    ratio = protocol.symbol_period_s / bin_width_s
    b = int(round(ratio))
    if b < 1 or abs(ratio - b) > 1e-6:
        raise ConfigError(f"bin width {bin_width_s} s does not divide the symbol period")
    return b


def _symbol_ps(protocol: ProtocolParams) -> int:
    ps = protocol.symbol_period_s * 1e12
    if abs(ps - round(ps)) > 1e-6:
        raise ConfigError("symbol period must be a whole number of picoseconds")
    return int(round(ps))


def build_histogram(records: DetectionRecords, protocol: ProtocolParams,
                    bin_width_s: float = DEFAULT_BIN_WIDTH_S, n_channels: int = N_CHANNELS) -> HistogramGrid:
    """Fold timetags modulo the pattern period into fixed-width bins."""
    bps = _bins_per_symbol(protocol, bin_width_s)
    sym_ps = _symbol_ps(protocol)
    n_bins = bps * protocol.pattern_length
    period_ps = sym_ps * protocol.pattern_length
    folded = np.mod(np.asarray(records.timetag_ps, dtype=np.int64), period_ps)
    bins = (folded * bps) // sym_ps
    counts = np.zeros((n_channels, n_bins), dtype=np.int64)
    for ch in range(n_channels):
        sel = records.channel == ch
        if np.any(sel):
            counts[ch] = np.bincount(bins[sel], minlength=n_bins)
    return HistogramGrid(bin_width_s, counts, protocol.acquisition_s, bps)


def gate_bounds(protocol: ProtocolParams, bins_per_symbol: int, center: float) -> tuple[int, int]:
    """Bin range of the gate centred at ``center`` (fraction of the symbol period)."""
    half = 0.5 * protocol.gate_s / protocol.symbol_period_s
    return int(round((center - half) * bins_per_symbol)), int(round((center + half) * bins_per_symbol))


def gate_sums(hist: HistogramGrid, protocol: ProtocolParams) -> np.ndarray:
    """Gated counts per (channel, histogram symbol, slot)."""
    per_symbol = hist.counts.reshape(hist.counts.shape[0], hist.n_symbols, hist.bins_per_symbol)
    out = np.empty(per_symbol.shape[:2] + (len(SLOT_CENTERS),), dtype=hist.counts.dtype)
    for s, center in enumerate(SLOT_CENTERS):
        lo, hi = gate_bounds(protocol, hist.bins_per_symbol, center)
        out[:, :, s] = per_symbol[:, :, lo:hi].sum(axis=2)
    return out


def expected_gate_energy(pattern: SymbolPattern, receiver_basis: Basis, error_prob: float = 0.0) -> np.ndarray:
    """Mean photons per (channel, symbol, slot) gate for a unit-transmittance link.

    Light from the late side slot of symbol k is booked into the early gate of
    symbol k+1, where it physically arrives.
    """
    fr = cell_fractions(pattern.bases, pattern.bits, receiver_basis, error_prob) * pattern.means[:, None]
    out = np.zeros((N_CHANNELS, len(pattern), len(SLOT_CENTERS)))
    for c, (ch, pos) in enumerate(CELLS[Basis(receiver_basis)]):
        shift = int(pos)
        slot = SLOT_CENTERS.index(pos - shift)
        out[ch, :, slot] += np.roll(fr[:, c], shift)
    return out


def align_pattern(hist: HistogramGrid, pattern: SymbolPattern, protocol: ProtocolParams,
                  receiver_basis: Basis) -> int:
    """Circular symbol offset at which the gated histogram best matches the pattern.

    A return value ``o`` means pattern symbol ``k`` sits at histogram symbol
    ``k + o``. Ties resolve to the smallest offset.
    """
    if hist.counts.sum() == 0:
        raise AlignmentError("cannot align an all-zero histogram")
    if hist.n_symbols != len(pattern):
        raise ConfigError("histogram and pattern lengths differ")
    measured = gate_sums(hist, protocol).astype(float)
    template = expected_gate_energy(pattern, receiver_basis)
    fm = np.fft.rfft(measured, axis=1)
    ft = np.fft.rfft(template, axis=1)
    corr = np.fft.irfft(fm * np.conj(ft), n=len(pattern), axis=1).sum(axis=(0, 2))
    best = corr.max()
    tol = 1e-9 * max(abs(best), 1.0)
    return int(np.flatnonzero(corr >= best - tol)[0])


def gate_and_score(hist: HistogramGrid, pattern: SymbolPattern, offset: int, protocol: ProtocolParams,
                   receiver_basis: Basis, mask=None) -> tuple[int, int]:
    """Sum counts in the expected (correct) and the opposite (incorrect) gate of every
    symbol sent in the receiver's basis, optionally restricted by ``mask``.

    Integer histograms give integer totals; expected-count histograms give floats.
    """
    sums = np.roll(gate_sums(hist, protocol), -int(offset), axis=1)
    k = np.arange(len(pattern))
    bits = pattern.bits.astype(np.int64)
    scored = pattern.bases == receiver_basis
    if mask is not None:
        scored &= np.asarray(mask, dtype=bool)
    k, bits = k[scored], bits[scored]
    if receiver_basis == Basis.Z:
        correct = sums[0, k, bits].sum()
        incorrect = sums[0, k, 1 - bits].sum()
    else:
        correct = sums[bits, k, 1].sum()
        incorrect = sums[1 - bits, k, 1].sum()
    if np.issubdtype(hist.counts.dtype, np.integer):
        return int(correct), int(incorrect)
    # expected-count histograms keep fractional sums
    return float(correct), float(incorrect)


@dataclass(frozen=True)
class LinkObservables:
    distance_km: float
    basis: str
    launch: str
    trial: int
    intensity: str
    qber: float
    gain: float
    loss_db: float

    FIELDS = ("distance_km", "basis", "launch", "trial", "intensity", "qber", "gain", "loss_db")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def compute_observables(correct: float, incorrect: float, protocol: ProtocolParams, mu: float,
                        pulses: float | None = None, *, distance_km: float = 0.0, basis="Z",
                        launch: str = "underfill", trial: int = 0, intensity="signal",
                        loss_db: float = math.nan) -> LinkObservables:
    """QBER and gain from gated counts.

    Gain is registered photons over sent photons, ``pulses * mu``. For the
    vacuum class (``mu == 0``) it is the per-pulse yield instead.
    """
    if correct < 0 or incorrect < 0:
        raise ValueError("counts must be non-negative")
    total = correct + incorrect
    if total == 0:
        raise NoSignalError("no gated counts")
    pulses = protocol.clock_rate_hz * protocol.acquisition_s if pulses is None else pulses
    sent = pulses * mu if mu > 0 else pulses
    basis = Basis.parse(basis).name
    intensity = IntensityClass.parse(intensity).label
    return LinkObservables(float(distance_km), basis, launch, int(trial), intensity,
                           incorrect / total, total / sent, float(loss_db))


@dataclass(frozen=True)
class CellStats:
    n: int
    qber: float
    qber_sdom: float
    gain: float
    gain_sdom: float
    loss_db: float


def _mean_sdom(values) -> tuple[float, float]:
    arr = np.asarray(values, dtype=float)
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(len(arr)))


def aggregate_trials(observables) -> dict[tuple, CellStats]:
    """Mean and standard deviation of the mean per (distance, basis, launch, intensity)."""
    groups = defaultdict(list)
    for ob in observables:
        groups[(ob.distance_km, ob.basis, ob.launch, ob.intensity)].append(ob)
    out = {}
    for key in sorted(groups, key=lambda k: (k[0], k[2], k[1], k[3])):
        obs = groups[key]
        if len(obs) < 2:
            raise InsufficientDataError(f"cell {key} has {len(obs)} trial(s); need at least 2")
        q, qs = _mean_sdom([o.qber for o in obs])
        g, gs = _mean_sdom([o.gain for o in obs])
        out[key] = CellStats(len(obs), q, qs, g, gs, float(np.mean([o.loss_db for o in obs])))
    return out


def write_observables_csv(path, observables) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LinkObservables.FIELDS)
        for ob in observables:
            w.writerow([repr(v) if isinstance(v, float) else v for v in ob.row()])


def read_observables_csv(path) -> list[LinkObservables]:
    """Parse observables; ``trial``, ``intensity`` and ``loss_db`` columns are optional."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        missing = {"distance_km", "basis", "launch", "qber", "gain"} - set(header)
        if missing:
            raise ParseError(f"missing columns {sorted(missing)}", line=1)
        col = {name: i for i, name in enumerate(header)}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)

            def get(name, default=None):
                return row[col[name]].strip() if name in col else default

            try:
                ob = LinkObservables(
                    float(get("distance_km")), Basis.parse(get("basis")).name, get("launch"),
                    int(get("trial", "0")), IntensityClass.parse(get("intensity", "signal")).label,
                    float(get("qber")), float(get("gain")), float(get("loss_db", "nan")))
            except (ValueError, KeyError) as exc:
                raise ParseError(f"bad value ({exc})", line=lineno) from None
            if not 0.0 <= ob.qber <= 1.0 or ob.gain < 0:
                raise ParseError("qber must lie in [0, 1] and gain be non-negative", line=lineno)
            out.append(ob)
    return out


def observables_dict(ob: LinkObservables) -> dict:
    return asdict(ob)
