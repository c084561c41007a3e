"""Asymptotic vacuum + weak decoy key rate for biased-basis BB84.

Key bits come from the Z (time-bin) basis; the single-photon phase error is
bounded from X-basis statistics. All gains ``q_*`` are per-pulse detection
probabilities, not per-photon.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from decimal import Decimal

import numpy as np

from .domain import binary_entropy
from .errors import BoundError, ConfigError

OM3_DB_PER_KM = 0.3


@dataclass(frozen=True)
class KeyRateInputs:
    q_mu: float
    q_nu: float
    e_mu: float
    e_nu: float
    y0: float = 0.0
    mu: float = 0.4
    nu: float = 0.1
    e0: float = 0.5
    f_ec: float = 1.16
    p_z: float = 0.5
    p_signal: float = 1.0
    clock_rate_hz: float = 1e9
    # phase-basis statistics; None means "same as the key basis"
    qx_mu: float | None = None
    qx_nu: float | None = None
    ex_mu: float | None = None
    ex_nu: float | None = None
    model_derived: bool = False

    def __post_init__(self):
        if not self.mu > self.nu >= 0:
            raise ConfigError(f"need mu > nu >= 0, got mu={self.mu}, nu={self.nu}")
        for name in ("q_mu", "q_nu", "e_mu", "e_nu", "y0", "e0", "p_z", "p_signal",
                     "qx_mu", "qx_nu", "ex_mu", "ex_nu"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.f_ec < 1.0:
            raise ConfigError("error-correction inefficiency must be >= 1")

    def phase_inputs(self) -> "KeyRateInputs":
        """The same record with the X-basis statistics in the key-basis slots."""
        return replace(
            self,
            q_mu=self.q_mu if self.qx_mu is None else self.qx_mu,
            q_nu=self.q_nu if self.qx_nu is None else self.qx_nu,
            e_mu=self.e_mu if self.ex_mu is None else self.ex_mu,
            e_nu=self.e_nu if self.ex_nu is None else self.ex_nu,
            qx_mu=None, qx_nu=None, ex_mu=None, ex_nu=None,
        )


def y1_lower_bound(inp: KeyRateInputs) -> float:
    """Lower bound on the single-photon yield from signal, decoy and vacuum gains."""
    mu, nu = inp.mu, inp.nu
    if not mu > nu > 0:
        raise BoundError("the single-photon yield bound needs mu > nu > 0")
    bound = (mu / (mu * nu - nu * nu)) * (
        inp.q_nu * math.exp(nu)
        - inp.q_mu * math.exp(mu) * (nu * nu) / (mu * mu)
        - ((mu * mu - nu * nu) / (mu * mu)) * inp.y0
    )
    return max(0.0, bound)


def e1_upper_bound(inp: KeyRateInputs, y1: float) -> float:
    """Upper bound on the single-photon error rate, clamped to [0, 0.5]."""
    if y1 <= 0:
        raise BoundError("single-photon error bound is undefined for a zero yield")
    if inp.nu <= 0:
        raise BoundError("single-photon error bound needs nu > 0")
    bound = (inp.e_nu * inp.q_nu * math.exp(inp.nu) - inp.e0 * inp.y0) / (y1 * inp.nu)
    return min(0.5, max(0.0, bound))


def secure_key_rate(inp: KeyRateInputs) -> float:
    """Secure key rate in bits per second; never negative."""
    if inp.q_mu <= 0:
        return 0.0
    y1 = y1_lower_bound(inp)
    phase = inp.phase_inputs()
    y1x = y1_lower_bound(phase)
    if y1 <= 0 or y1x <= 0:
        return 0.0
    e1 = e1_upper_bound(phase, y1x)
    q1 = y1 * inp.mu * math.exp(-inp.mu)
    per_pulse = q1 * (1.0 - binary_entropy(e1)) - inp.q_mu * inp.f_ec * binary_entropy(inp.e_mu)
    return inp.clock_rate_hz * inp.p_z ** 2 * inp.p_signal * max(0.0, per_pulse)


@dataclass(frozen=True)
class ProtocolOptimum:
    p_z: float
    intensity_probs: tuple[float, float, float]
    skr: float


def default_bias_grid() -> np.ndarray:
    return np.round(np.arange(0.50, 0.995, 0.01), 2)


def decoy_simplex_grid(step: float = 0.05) -> list[tuple[float, float, float]]:
    """Coarse (signal, decoy, vacuum) probability grid keeping both decoys populated."""
    n = int(round(1 / step))
    out = []
    for i in range(1, n):
        for j in range(1, n - i):
            k = n - i - j
            out.append((round(k * step, 10), round(i * step, 10), round(j * step, 10)))
    return sorted(out, reverse=True)


def optimize_protocol(inp: KeyRateInputs, bias_grid=None, decoy_grid=None) -> ProtocolOptimum:
    """Grid search over basis bias and decoy probabilities; ties go to the smallest bias."""
    bias_grid = default_bias_grid() if bias_grid is None else np.sort(np.asarray(bias_grid, dtype=float))
    decoy_grid = decoy_simplex_grid() if decoy_grid is None else [tuple(map(float, g)) for g in decoy_grid]
    # the rate factorises as p_z^2 * p_signal * (bias-independent term)
    base = secure_key_rate(replace(inp, p_z=1.0, p_signal=1.0))
    best = None
    for probs in decoy_grid:
        for pz in bias_grid:
            skr = base * float(pz) ** 2 * probs[0]
            if best is None or skr > best.skr or (skr == best.skr and pz < best.p_z):
                best = ProtocolOptimum(float(pz), probs, skr)
    exact = secure_key_rate(replace(inp, p_z=best.p_z, p_signal=best.intensity_probs[0]))
    return replace(best, skr=exact)


def equivalent_loss(distance_km: float, db_per_km: float = OM3_DB_PER_KM) -> float:
    """Nominal channel loss in dB at the quoted per-km attenuation."""
    if distance_km < 0:
        raise ValueError("distance must be non-negative")
    return float(Decimal(repr(float(distance_km))) * Decimal(repr(float(db_per_km))))


# Poissonian reference channel -------------------------------------------------

def oracle_gain(mu: float, eta: float, y0: float) -> float:
    """Per-pulse gain with n-photon yield 1 - (1 - y0)(1 - eta)^n."""
    return 1.0 - (1.0 - y0) * math.exp(-eta * mu)


def oracle_qber(mu: float, eta: float, y0: float, e_d: float, e0: float = 0.5) -> float:
    q = oracle_gain(mu, eta, y0)
    return (e0 * y0 + e_d * (q - y0)) / q if q > 0 else e0


def oracle_y1(eta: float, y0: float) -> float:
    return y0 + eta * (1.0 - y0)


def oracle_e1(eta: float, y0: float, e_d: float, e0: float = 0.5) -> float:
    y1 = oracle_y1(eta, y0)
    return (e0 * y0 + e_d * eta * (1.0 - y0)) / y1


def oracle_inputs(eta: float, y0: float, e_d: float, mu: float = 0.4, nu: float = 0.1,
                  e0: float = 0.5, **kw) -> KeyRateInputs:
    return KeyRateInputs(
        q_mu=oracle_gain(mu, eta, y0), q_nu=oracle_gain(nu, eta, y0),
        e_mu=oracle_qber(mu, eta, y0, e_d, e0), e_nu=oracle_qber(nu, eta, y0, e_d, e0),
        y0=y0, mu=mu, nu=nu, e0=e0, **kw)


def fit_oracle(q_mu: float, e_mu: float, mu: float, y0: float = 0.0, e0: float = 0.5) -> tuple[float, float]:
    """Transmittance and misalignment error reproducing one (gain, QBER) pair."""
    if not y0 <= q_mu < 1:
        raise ValueError("gain must satisfy y0 <= q_mu < 1")
    eta = -math.log((1.0 - q_mu) / (1.0 - y0)) / mu
    signal = q_mu - y0
    e_d = (e_mu * q_mu - e0 * y0) / signal if signal > 0 else e0
    return eta, min(max(e_d, 0.0), 1.0)


def synthesize_decoy(q_mu: float, e_mu: float, mu: float, nu: float, y0: float = 0.0,
                     e0: float = 0.5) -> tuple[float, float]:
    """Decoy gain and QBER implied by the fitted reference channel."""
    eta, e_d = fit_oracle(q_mu, e_mu, mu, y0, e0)
    return oracle_gain(nu, eta, y0), oracle_qber(nu, eta, y0, e_d, e0)
