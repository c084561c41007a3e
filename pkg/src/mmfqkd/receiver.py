"""AMZI / time-bin receiver and SNSPD detection.

Receiver output is described by *cells*: a (detector channel, arrival time
within the symbol) pair. The Z configuration has one detector watching the
early and late slots. The X configuration has an AMZI with a one-slot delay
feeding two detectors, giving side slots at 1/4 and 5/4 of the symbol period
(the latter overlapping the next symbol's early slot) and the interfering
slot at 3/4.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .domain import Basis, SeededRng

# positions in units of the symbol period
SLOT_CENTERS = (0.25, 0.75)
CELLS = {
    Basis.Z: ((0, 0.25), (0, 0.75)),
    Basis.X: ((0, 0.25), (1, 0.25), (0, 0.75), (1, 0.75), (0, 1.25), (1, 1.25)),
}
N_CHANNELS = 2


@dataclass(frozen=True)
class DetectorParams:
    efficiency: float = 0.5
    dark_rate_hz: float = 10.0
    receiver_attenuation_db: float = 3.0
    amzi_loss_db: float = 1.5
    resolution_s: float = 16e-12
    dead_time_s: float = 50e-9
    jitter_s: float = 30e-12

    def __post_init__(self):
        if not 0.0 <= self.efficiency <= 1.0:
            raise ValueError("detector efficiency must lie in [0, 1]")
        if self.dark_rate_hz < 0 or self.dead_time_s < 0 or self.jitter_s < 0:
            raise ValueError("dark rate, dead time and jitter must be non-negative")
        if self.resolution_s <= 0:
            raise ValueError("timetag resolution must be positive")

    def attenuation_db(self, receiver_basis: Basis) -> float:
        """Fixed receiver loss ahead of the detectors: VOA for Z, interferometer for X."""
        return self.receiver_attenuation_db if receiver_basis == Basis.Z else self.amzi_loss_db


@dataclass(frozen=True, eq=False)
class DetectionRecords:
    """Timetagged clicks. ``symbol`` is -1 for dark counts; ``truth`` is 1/0 for
    correct/incorrect scored clicks and -1 for side slots, sifted symbols and darks."""

    timetag_ps: np.ndarray
    channel: np.ndarray
    symbol: np.ndarray
    truth: np.ndarray

    def __len__(self) -> int:
        return len(self.timetag_ps)

    @classmethod
    def empty(cls) -> "DetectionRecords":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int8), np.zeros(0, np.int64), np.zeros(0, np.int8))

    @classmethod
    def concat(cls, parts) -> "DetectionRecords":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("timetag_ps", "channel", "symbol", "truth")))

    def take(self, idx) -> "DetectionRecords":
        return DetectionRecords(self.timetag_ps[idx], self.channel[idx], self.symbol[idx], self.truth[idx])

    def sorted(self) -> "DetectionRecords":
        return self.take(np.lexsort((self.channel, self.timetag_ps)))


def cell_fractions(bases, bits, receiver_basis: Basis, error_prob: float) -> np.ndarray:
    """Share of each symbol's photons landing in each receiver cell (rows sum to 1).

    ``error_prob`` is the phase error for an X receiver and the time-bin
    misplacement probability for a Z receiver.
    """
    bases = np.asarray(bases)
    bits = np.asarray(bits)
    n = len(bases)
    e = float(error_prob)
    is_x = bases == Basis.X
    if receiver_basis == Basis.Z:
        out = np.empty((n, 2))
        out[:, 0] = np.where(bits == 0, 1 - e, e)
        out[:, 1] = 1 - out[:, 0]
        out[is_x] = 0.5
        return out
    out = np.zeros((n, 6))
    # X symbols: quarter of the energy in each side slot, half interferes
    out[is_x, 0:2] = 1 / 8
    out[is_x, 4:6] = 1 / 8
    right = np.where(bits == 0, 0.5 * (1 - e), 0.5 * e)
    out[is_x, 2] = right[is_x]
    out[is_x, 3] = 0.5 - right[is_x]
    # Z symbols: single pulse, no interference partner
    early = (~is_x) & (bits == 0)
    late = (~is_x) & (bits == 1)
    out[early, 0:4] = 1 / 4
    out[late, 2:6] = 1 / 4
    return out


def amzi_outcome(bases, bits, phase_error_prob: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Route single photons of X symbols through the AMZI.

    Returns ``(port, slot)`` per photon, slot 0/1/2 = early side, interfering,
    late side. In the interfering slot the port equals the bit with
    probability ``1 - phase_error_prob``; side slots pick a port at random.
    """
    bases = np.asarray(bases)
    if np.any(bases != Basis.X):
        raise ValueError("amzi_outcome is only defined for X-basis symbols")
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    bits = np.asarray(bits)
    n = len(bits)
    slot = gen.choice(3, size=n, p=[0.25, 0.5, 0.25])
    flip = gen.random(n) < phase_error_prob
    port = np.where(slot == 1, bits ^ flip, gen.integers(0, 2, size=n))
    return port.astype(np.int8), slot.astype(np.int8)


def timing_misplacement(slots, timing_error_prob: float, rng) -> np.ndarray:
    """Move Z-basis detections to the other time slot with probability ``timing_error_prob``."""
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    slots = np.asarray(slots)
    if np.any(slots < 0):
        raise ValueError("timing_misplacement is only defined for Z-basis symbols")
    flip = gen.random(len(slots)) < timing_error_prob
    return (slots ^ flip).astype(np.int8)


def click_probability(mean_photons, params: DetectorParams, gate_s: float):
    """Per-gate click probability from signal photons plus dark counts."""
    mean = np.asarray(mean_photons, dtype=float)
    p_signal = -np.expm1(-params.efficiency * mean)
    p_dark = -np.expm1(-params.dark_rate_hz * gate_s)
    return 1.0 - (1.0 - p_signal) * (1.0 - p_dark)


def quantize_ps(times_s, resolution_s: float) -> np.ndarray:
    res_ps = resolution_s * 1e12
    return (np.round(np.asarray(times_s) * 1e12 / res_ps) * res_ps).astype(np.int64)


def detect(mean_photons, slot_center_s, params: DetectorParams, gate_s: float, rng):
    """Bernoulli click per gate with Gaussian-jittered, quantised timetags.

    Returns ``(clicked, timetag_ps)``; timetags are only meaningful where clicked.
    """
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    p = click_probability(mean_photons, params, gate_s)
    clicked = gen.random(p.shape) < p
    jitter = gen.normal(0.0, params.jitter_s, size=p.shape) if params.jitter_s > 0 else 0.0
    return clicked, quantize_ps(np.asarray(slot_center_s) + jitter, params.resolution_s)


def apply_dead_time(records: DetectionRecords, dead_time_s: float) -> DetectionRecords:
    """Drop clicks arriving within the dead time of the previous kept click on the same channel."""
    if len(records) == 0 or dead_time_s <= 0:
        return records.sorted()
    rec = records.sorted()
    dead_ps = dead_time_s * 1e12
    keep = np.ones(len(rec), dtype=bool)
    for ch in np.unique(rec.channel):
        idx = np.flatnonzero(rec.channel == ch)
        t = rec.timetag_ps[idx]
        gaps = np.diff(t)
        if np.all(gaps >= dead_ps):
            continue
        last = -np.inf
        for j, tj in zip(idx, t):
            if tj - last >= dead_ps:
                last = tj
            else:
                keep[j] = False
    return rec.take(keep)


def write_timetags(path, records: DetectionRecords, fmt: str | None = None) -> None:
    """Dump timetags as little-endian int64 picoseconds (``.bin``) or one integer per line (``.csv``)."""
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    tags = np.asarray(records.timetag_ps, dtype="<i8")
    if fmt == "bin":
        path.write_bytes(tags.tobytes())
    elif fmt == "csv":
        path.write_text("".join(f"{int(t)}\n" for t in tags))
    else:
        raise ValueError(f"unknown timetag format {fmt!r}")


def read_timetags(path, fmt: str | None = None) -> np.ndarray:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix.lower() == ".csv" else "bin")
    if fmt == "bin":
        return np.frombuffer(path.read_bytes(), dtype="<i8").astype(np.int64)
    text = path.read_text().split()
    return np.array([int(t) for t in text], dtype=np.int64)
