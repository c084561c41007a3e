"""Weak-coherent-pulse symbol stream.

Each 1 ns symbol holds two 500 ps sub-slots (the 2 GHz slave pulses seeded by
one 1 GHz master pulse). X symbols put half the pair intensity in each slot
with a 0 or pi relative phase; Z symbols put all of it in the early or late slot.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import Basis, ProtocolParams, SeededRng, SymbolPattern

EARLY, LATE = 0, 1


@dataclass(frozen=True, eq=False)
class EmittedSymbols:
    """Struct-of-arrays view of an emitted symbol stream."""

    index: np.ndarray
    basis: np.ndarray
    bit: np.ndarray
    intensity: np.ndarray
    mean_photons: np.ndarray
    phase_diff: np.ndarray  # NaN for Z symbols
    global_phase: np.ndarray
    slot: np.ndarray  # -1 for X symbols

    def __len__(self) -> int:
        return len(self.index)

    @property
    def early_mean(self) -> np.ndarray:
        x = self.basis == Basis.X
        return np.where(x, 0.5 * self.mean_photons, np.where(self.slot == EARLY, self.mean_photons, 0.0))

    @property
    def late_mean(self) -> np.ndarray:
        x = self.basis == Basis.X
        return np.where(x, 0.5 * self.mean_photons, np.where(self.slot == LATE, self.mean_photons, 0.0))


def encode(pattern: SymbolPattern, protocol: ProtocolParams, rng: SeededRng,
           start: int = 0, count: int | None = None) -> EmittedSymbols:
    """Emit symbols ``start .. start+count`` of the repeating pattern.

    The global phase of each pair comes from a substream keyed on the symbol
    block, so any index range can be generated independently.
    """
    n = len(pattern) if count is None else int(count)
    index = np.arange(start, start + n, dtype=np.int64)
    pos = index % len(pattern)
    basis = pattern.bases[pos]
    bit = pattern.bits[pos]
    is_x = basis == Basis.X
    phase_diff = np.where(is_x, np.pi * bit, np.nan)
    slot = np.where(is_x, -1, np.where(bit == 0, EARLY, LATE)).astype(np.int8)
    global_phase = rng.child("global_phase", start).generator().uniform(0.0, 2 * np.pi, size=n)
    return EmittedSymbols(index, basis, bit, pattern.intensities[pos], pattern.means[pos],
                          phase_diff, global_phase, slot)


def photon_number(mean_photons, rng) -> np.ndarray:
    """Poisson photon numbers for coherent pulses of the given means."""
    gen = rng.generator() if isinstance(rng, SeededRng) else rng
    mean = np.asarray(mean_photons, dtype=float)
    if np.any(mean < 0):
        raise ValueError("mean photon number must be non-negative")
    return gen.poisson(mean)
