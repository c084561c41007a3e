"""Shared domain types, deterministic RNG streams and elementary information theory."""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import ConfigError

PROB_SUM_TOL = 1e-9


class Basis(IntEnum):
    """Encoding basis. X is the relative phase of a pulse pair, Z the time bin."""

    X = 0
    Z = 1

    @classmethod
    def parse(cls, value: "str | int | Basis") -> "Basis":
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(value)


class IntensityClass(IntEnum):
    SIGNAL = 0
    DECOY = 1
    VACUUM = 2

    @classmethod
    def parse(cls, value: "str | int | IntensityClass") -> "IntensityClass":
        if isinstance(value, str):
            return cls[value.strip().upper()]
        return cls(value)

    @property
    def label(self) -> str:
        return self.name.lower()


def _check_probs(probs, name: str) -> tuple[float, ...]:
    probs = tuple(float(p) for p in probs)
    if any(p < 0 or p > 1 for p in probs):
        raise ConfigError(f"{name}: probabilities must lie in [0, 1], got {probs}")
    if abs(sum(probs) - 1.0) > PROB_SUM_TOL:
        raise ConfigError(f"{name}: probabilities must sum to 1, got {sum(probs)!r}")
    return probs


@dataclass(frozen=True)
class ProtocolParams:
    """Timing, pattern and intensity settings of one acquisition.

    Times are in seconds, mean photon numbers per pulse pair.
    """

    clock_rate_hz: float = 1e9
    pattern_length: int = 1000
    acquisition_s: float = 10.0
    basis_bias: float = 0.9
    intensity_probs: tuple[float, float, float] = (0.8, 0.15, 0.05)
    mu_signal: float = 0.4
    mu_decoy: float = 0.1
    mu_vacuum: float = 0.0
    gate_s: float = 250e-12
    slot_s: float = 500e-12

    def __post_init__(self):
        if self.clock_rate_hz <= 0 or self.acquisition_s <= 0:
            raise ConfigError("clock rate and acquisition time must be positive")
        if int(self.pattern_length) < 1:
            raise ConfigError("pattern length must be >= 1")
        if not 0.0 <= self.basis_bias <= 1.0:
            raise ConfigError(f"basis bias must lie in [0, 1], got {self.basis_bias}")
        object.__setattr__(self, "intensity_probs", _check_probs(self.intensity_probs, "intensity_probs"))
        if not self.mu_signal > self.mu_decoy > self.mu_vacuum >= 0:
            raise ConfigError("intensities must satisfy mu_signal > mu_decoy > mu_vacuum >= 0")
        if self.gate_s <= 0 or self.gate_s > self.slot_s:
            raise ConfigError("gate width must be positive and no wider than the slot separation")
        if abs(2 * self.slot_s - self.symbol_period_s) > 1e-9 * self.symbol_period_s:
            raise ConfigError("a symbol must span exactly two slots")

    @property
    def symbol_period_s(self) -> float:
        return 1.0 / self.clock_rate_hz

    @property
    def pattern_period_s(self) -> float:
        return self.pattern_length / self.clock_rate_hz

    @property
    def repetitions(self) -> int:
        """Number of whole pattern repeats inside one acquisition."""
        return int(round(self.clock_rate_hz * self.acquisition_s / self.pattern_length))

    @property
    def intensity_means(self) -> np.ndarray:
        return np.array([self.mu_signal, self.mu_decoy, self.mu_vacuum])

    def mean_for(self, cls: IntensityClass) -> float:
        return float(self.intensity_means[int(cls)])


def _label_key(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & 0xFFFFFFFF
    return zlib.crc32(str(label).encode("utf-8"))


@dataclass(frozen=True)
class SeededRng:
    """Labelled, splittable RNG stream.

    ``SeededRng(42).child("channel", 3).generator()`` always yields the same
    numpy Generator; sibling labels are statistically independent streams.
    """

    seed: int
    key: tuple[int, ...] = field(default=())

    def child(self, *labels) -> "SeededRng":
        return SeededRng(self.seed, self.key + tuple(_label_key(lb) for lb in labels))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed) & (2**64 - 1), spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(ss))


def binary_entropy(p):
    """Binary Shannon entropy in bits; accepts scalars or arrays."""
    arr = np.asarray(p, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1) or np.any(np.isnan(arr)):
        raise ValueError(f"binary entropy is defined on [0, 1], got {p!r}")
    inner = (arr > 0) & (arr < 1)
    safe = np.where(inner, arr, 0.5)
    h = np.where(inner, -safe * np.log2(safe) - (1 - safe) * np.log2(1 - safe), 0.0)
    return float(h) if h.ndim == 0 else h


@dataclass(frozen=True, eq=False)
class SymbolPattern:
    """A fixed train of (bit, basis, intensity class) symbols, repeated every pattern period."""

    bits: np.ndarray
    bases: np.ndarray
    intensities: np.ndarray
    means: np.ndarray

    def __len__(self) -> int:
        return len(self.bits)

    def rotated(self, shift: int) -> "SymbolPattern":
        return SymbolPattern(*(np.roll(a, shift) for a in (self.bits, self.bases, self.intensities, self.means)))


def random_pattern(length: int, basis_bias: float, intensity_probs, rng: SeededRng,
                   means=(0.4, 0.1, 0.0)) -> SymbolPattern:
    """Draw a random symbol pattern; ``basis_bias`` is the probability of the Z basis."""
    if length < 1:
        raise ConfigError("pattern length must be >= 1")
    if not 0.0 <= basis_bias <= 1.0:
        raise ConfigError(f"basis bias must lie in [0, 1], got {basis_bias}")
    probs = np.array(_check_probs(intensity_probs, "intensity_probs"))
    gen = rng.generator()
    bits = gen.integers(0, 2, size=length, dtype=np.uint8)
    bases = np.where(gen.random(length) < basis_bias, Basis.Z, Basis.X).astype(np.uint8)
    intensities = gen.choice(3, size=length, p=probs / probs.sum()).astype(np.uint8)
    return SymbolPattern(bits, bases, intensities, np.asarray(means, dtype=float)[intensities])
