"""End-to-end experiments: distance sweeps, stability runs, calibration and
key-rate analysis of measured observables."""
from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from . import channel as ch
from .acquisition import (acquire_analytic, acquire_events, expected_rates, link_point,
                          measurement_pattern, reduce)
from .analysis import LinkObservables, aggregate_trials, read_observables_csv, write_observables_csv
from .domain import Basis, IntensityClass, ProtocolParams, SeededRng
from .errors import CalibrationError, ConfigError, InsufficientDataError
from .keyrate import KeyRateInputs, equivalent_loss, optimize_protocol, synthesize_decoy
from .receiver import DetectorParams

DEFAULT_DISTANCES = (1.0, 2.0, 3.0, 5.0, 7.0, 8.0, 10.0, 12.0, 15.0, 17.0)
MODES = ("sweep", "stability", "calibrate", "analyze")
DEFAULT_DRIFT = ch.DriftState(period_s=600.0, amplitude=0.3303058695984547, noise_amplitude=0.16515293479922735,
                               noise_tau_s=300.0)

_SECTIONS = {"protocol": ProtocolParams, "channel": ch.ChannelConfig, "detector": DetectorParams}
_DRIFT_PREFIX = "drift_"


@dataclass(frozen=True)
class RunConfig:
    """Everything an experiment needs. Flat key namespace for config files:
    top-level fields, the fields of the protocol, channel and detector
    sections, and drift fields prefixed with ``drift_``."""

    mode: str = "sweep"
    seed: int = 42
    distances_km: tuple[float, ...] = DEFAULT_DISTANCES
    trials: int = 5
    launches: tuple[str, ...] = ch.LAUNCH_KINDS
    out_dir: str = "out"
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    channel: ch.ChannelConfig = field(default_factory=ch.ChannelConfig)
    detector: DetectorParams = field(default_factory=DetectorParams)
    drift: ch.DriftState = DEFAULT_DRIFT
    duration_s: float = 6 * 3600.0
    step_s: float = 10.0
    stability_distance_km: float = 10.0
    stability_launch: str = "underfill"
    event_mode: bool = False
    event_symbols: int = 10_000_000
    f_ec: float = 1.16
    e0: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        dists = tuple(float(d) for d in self.distances_km)
        if not dists or any(not d > 0 for d in dists):
            raise ConfigError("distances must be a non-empty list of positive values")
        object.__setattr__(self, "distances_km", dists)
        launches = tuple(self.launches)
        if not launches or any(lk not in ch.LAUNCH_KINDS for lk in launches):
            raise ConfigError(f"launches must be drawn from {ch.LAUNCH_KINDS}")
        object.__setattr__(self, "launches", launches)
        if int(self.trials) < 1:
            raise ConfigError("trials must be >= 1")
        if self.duration_s <= 0 or self.step_s <= 0 or self.step_s > self.duration_s:
            raise ConfigError("need 0 < step <= duration")
        if self.stability_launch not in ch.LAUNCH_KINDS or self.stability_distance_km <= 0:
            raise ConfigError("invalid stability link")
        if self.event_symbols < self.protocol.pattern_length:
            raise ConfigError("event mode needs at least one pattern period")

    @classmethod
    def from_mapping(cls, flat: dict) -> "RunConfig":
        """Build from a flat key -> value mapping; unknown keys are an error."""
        top = {f.name for f in fields(cls)} - set(_SECTIONS) - {"drift"}
        owner = {}
        for sec, typ in _SECTIONS.items():
            for f in fields(typ):
                owner[f.name] = sec
        drift_keys = {_DRIFT_PREFIX + f.name: f.name for f in fields(ch.DriftState)}
        kwargs, parts, drift = {}, defaultdict(dict), {}
        for key, value in flat.items():
            if isinstance(value, list):
                value = tuple(value)
            if key in top:
                kwargs[key] = value
            elif key in owner:
                parts[owner[key]][key] = value
            elif key in drift_keys:
                drift[drift_keys[key]] = value
            else:
                raise ConfigError(f"unknown configuration key {key!r}")
        try:
            for sec, typ in _SECTIONS.items():
                kwargs[sec] = typ(**parts[sec])
            kwargs["drift"] = replace(DEFAULT_DRIFT, **drift)
            return cls(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    def to_mapping(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name in _SECTIONS:
                out.update(asdict(value))
            elif f.name == "drift":
                out.update({_DRIFT_PREFIX + k: v for k, v in asdict(value).items()})
            else:
                out[f.name] = value
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}

    def echo(self) -> dict:
        """Mapping for summaries; leaves out the output location so reruns elsewhere compare equal."""
        out = self.to_mapping()
        del out["out_dir"]
        return out


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then explicit overrides."""
    flat = {}
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        flat.update(loaded)
    flat.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig.from_mapping(flat)


def _dkey(distance_km: float) -> str:
    return repr(float(distance_km))


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# link construction shared by every experiment ---------------------------------

@dataclass(frozen=True, eq=False)
class TrialLink:
    """Per-trial draws of one link: launched state and connector losses.

    The draws do not depend on the launch kind, so both launches see the
    same spools and connectors."""

    config: ch.ChannelConfig
    launched: ch.ModePowerState
    connectors_db: np.ndarray

    def output(self, drift: ch.DriftState | None = None) -> ch.ModePowerState:
        return ch.propagate(self.launched, self.config, drift, connectors_db=self.connectors_db)


def trial_draws(cfg: RunConfig, distance_km: float, launch_kind: str, trial: int) -> TrialLink:
    rng = SeededRng(cfg.seed)
    link_cfg = cfg.channel.for_link(distance_km, launch_kind)
    state = ch.launch(link_cfg, rng.child("launch", _dkey(distance_km), trial))
    conns = ch.draw_connector_losses(link_cfg, rng.child("connectors", _dkey(distance_km), trial))
    return TrialLink(link_cfg, state, conns)


def trial_link(cfg: RunConfig, distance_km: float, launch_kind: str, trial: int,
               drift: ch.DriftState | None = None) -> ch.ModePowerState:
    """Output mode state for one trial."""
    return trial_draws(cfg, distance_km, launch_kind, trial).output(drift)


def patterns(cfg: RunConfig) -> dict:
    rng = SeededRng(cfg.seed)
    return {b: measurement_pattern(cfg.protocol, b, rng) for b in Basis}


def simulate_cell(cfg: RunConfig, distance_km: float, launch_kind: str, basis: Basis, trial: int,
                  pattern=None, drift: ch.DriftState | None = None) -> list[LinkObservables]:
    """One acquisition reduced to a row per intensity class."""
    basis = Basis(basis)
    pattern = pattern if pattern is not None else patterns(cfg)[basis]
    link_cfg = cfg.channel.for_link(distance_km, launch_kind)
    out = trial_link(cfg, distance_km, launch_kind, trial, drift)
    link = link_point(link_cfg, out, basis, cfg.detector, cfg.protocol)
    rng = SeededRng(cfg.seed).child("acquire", _dkey(distance_km), launch_kind, basis.name, trial)
    if cfg.event_mode:
        proto = replace(cfg.protocol, acquisition_s=cfg.event_symbols / cfg.protocol.clock_rate_hz)
        acq = acquire_events(pattern, link, cfg.detector, proto, cfg.event_symbols, rng)
    else:
        proto = cfg.protocol
        acq = acquire_analytic(pattern, link, cfg.detector, proto, rng)
    return reduce(acq, proto, distance_km=distance_km, launch=launch_kind, trial=trial)


# key rate from observables ----------------------------------------------------

@dataclass(frozen=True)
class SkrRow:
    distance_km: float
    launch: str
    equivalent_loss_db: float
    measured_loss_db: float
    p_z: float
    p_signal: float
    skr_bps: float
    model_derived: bool

    FIELDS = ("distance_km", "launch", "equivalent_loss_db", "measured_loss_db", "p_z", "p_signal",
              "skr_bps", "model_derived")

    def row(self) -> list:
        return [getattr(self, f) for f in self.FIELDS]


def key_rate_inputs(cells: dict, protocol: ProtocolParams, f_ec: float = 1.16, e0: float = 0.5) -> KeyRateInputs:
    """Key-rate inputs from per-(basis, intensity) mean (qber, gain) pairs.

    Gains are per photon, except the vacuum entries which hold a per-pulse
    yield. Missing decoy entries are synthesised from the fitted reference
    channel and flag the result as model-derived; missing X entries fall back
    to the Z statistics.
    """
    mu, nu = protocol.mu_signal, protocol.mu_decoy
    vac = [cells[(b, "vacuum")][1] for b in ("Z", "X") if (b, "vacuum") in cells]
    y0 = float(np.mean(vac)) if vac else 0.0
    if ("Z", "signal") not in cells:
        raise InsufficientDataError("need Z-basis signal observables")
    derived = False

    def pair(basis):
        nonlocal derived
        e_mu, g_mu = cells[(basis, "signal")]
        q_mu = min(1.0, g_mu * mu)
        if (basis, "decoy") in cells:
            e_nu, g_nu = cells[(basis, "decoy")]
            q_nu = min(1.0, g_nu * nu)
        else:
            derived = True
            q_nu, e_nu = synthesize_decoy(q_mu, e_mu, mu, nu, min(y0, q_mu), e0)
        return q_mu, q_nu, e_mu, e_nu

    qz = pair("Z")
    qx = pair("X") if ("X", "signal") in cells else (None,) * 4
    return KeyRateInputs(q_mu=qz[0], q_nu=qz[1], e_mu=qz[2], e_nu=qz[3], y0=y0, mu=mu, nu=nu, e0=e0,
                         f_ec=f_ec, clock_rate_hz=protocol.clock_rate_hz,
                         qx_mu=qx[0], qx_nu=qx[1], ex_mu=qx[2], ex_nu=qx[3], model_derived=derived)


def skr_table(observables, protocol: ProtocolParams, f_ec: float = 1.16, e0: float = 0.5) -> list[SkrRow]:
    """Optimised key rate per (distance, launch) from trial-mean observables."""
    try:
        stats = aggregate_trials(observables)
    except InsufficientDataError:
        # single-trial data: means without spread
        stats = None
    groups = defaultdict(dict)
    losses = defaultdict(list)
    if stats is not None:
        for (d, basis, launch_kind, cls), st in stats.items():
            groups[(d, launch_kind)][(basis, cls)] = (st.qber, st.gain)
            if basis == "Z" and cls == "signal":
                losses[(d, launch_kind)].append(st.loss_db)
    else:
        acc = defaultdict(list)
        for ob in observables:
            acc[(ob.distance_km, ob.launch, ob.basis, ob.intensity)].append(ob)
        for (d, launch_kind, basis, cls), obs in sorted(acc.items()):
            groups[(d, launch_kind)][(basis, cls)] = (float(np.mean([o.qber for o in obs])),
                                                      float(np.mean([o.gain for o in obs])))
            if basis == "Z" and cls == "signal":
                losses[(d, launch_kind)].append(float(np.mean([o.loss_db for o in obs])))
    rows = []
    for (d, launch_kind) in sorted(groups, key=lambda k: (k[0], k[1])):
        inp = key_rate_inputs(groups[(d, launch_kind)], protocol, f_ec, e0)
        best = optimize_protocol(inp)
        loss = losses[(d, launch_kind)][0] if losses[(d, launch_kind)] else math.nan
        rows.append(SkrRow(d, launch_kind, equivalent_loss(d), loss, best.p_z,
                           best.intensity_probs[0], best.skr, inp.model_derived))
    return rows


def write_skr_csv(path, rows) -> None:
    _write_csv(path, SkrRow.FIELDS, [r.row() for r in rows])


# sweep --------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepResult:
    observables: list
    skr: list

    def skr_for(self, distance_km: float, launch_kind: str) -> float:
        for r in self.skr:
            if r.distance_km == distance_km and r.launch == launch_kind:
                return r.skr_bps
        raise KeyError((distance_km, launch_kind))


def sweep(cfg: RunConfig) -> SweepResult:
    pats = patterns(cfg)
    obs = []
    for d in cfg.distances_km:
        for launch_kind in cfg.launches:
            for trial in range(cfg.trials):
                for basis in (Basis.X, Basis.Z):
                    obs.extend(simulate_cell(cfg, d, launch_kind, basis, trial, pats[basis]))
    return SweepResult(obs, skr_table(obs, cfg.protocol, cfg.f_ec, cfg.e0))


def sweep_summary(cfg: RunConfig, result: SweepResult) -> dict:
    rates = {f"{r.distance_km:g}km/{r.launch}": r.skr_bps for r in result.skr}
    ratios = {}
    if set(cfg.launches) == set(ch.LAUNCH_KINDS):
        for d in cfg.distances_km:
            under = result.skr_for(d, "underfill")
            ratios[f"{d:g}km"] = result.skr_for(d, "adapter") / under if under > 0 else math.inf
    return {"mode": "sweep", "seed": cfg.seed, "skr_bps": rates, "adapter_gain_ratio": ratios,
            "config": cfg.echo()}


def run_sweep(cfg: RunConfig, plots: bool = True) -> SweepResult:
    out = _out_dir(cfg)
    result = sweep(cfg)
    write_observables_csv(out / "observables.csv", result.observables)
    write_skr_csv(out / "skr.csv", result.skr)
    _write_json(out / "summary.json", sweep_summary(cfg, result))
    if plots:
        from .plotting import plot_observables, plot_skr
        plot_observables(out / "observables.csv", out / "observables.svg")
        plot_skr(out / "skr.csv", out / "skr.svg")
    return result


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


# stability ------------------------------------------------------------------------

def drift_series(cfg: RunConfig) -> list[ch.DriftState]:
    """Drift states at t = 0, step, 2*step, ... over the configured duration."""
    n = int(round(cfg.duration_s / cfg.step_s))
    rng = SeededRng(cfg.seed).child("drift")
    z = rng.child("init").generator().standard_normal()
    state = replace(cfg.drift, time_s=0.0, noise_value=cfg.drift.noise_amplitude * z)
    out = [state]
    for i in range(1, n):
        state = ch.advance_drift(state, cfg.step_s, rng.child(i))
        out.append(state)
    return out


@dataclass(frozen=True)
class StabilityRow:
    time_s: float
    basis: str
    qber: float
    gain: float

    FIELDS = ("time_s", "basis", "qber", "gain")


def stability_statistics(rows) -> dict:
    out = {}
    for basis in ("X", "Z"):
        q = np.array([r.qber for r in rows if r.basis == basis])
        g = np.array([r.gain for r in rows if r.basis == basis])
        if len(q) < 2:
            continue
        out[basis] = {
            "qber_mean": float(q.mean()), "qber_std": float(q.std(ddof=1)),
            "qber_rel_std": float(q.std(ddof=1) / q.mean()) if q.mean() > 0 else math.nan,
            "gain_mean": float(g.mean()), "gain_rel_std": float(g.std(ddof=1) / g.mean()),
        }
    return out


def stability(cfg: RunConfig) -> list[StabilityRow]:
    pats = patterns(cfg)
    d, launch_kind = cfg.stability_distance_km, cfg.stability_launch
    link_cfg = cfg.channel.for_link(d, launch_kind)
    rows = []
    base = SeededRng(cfg.seed).child("stability")
    link0 = trial_draws(cfg, d, launch_kind, 0)
    for i, drift in enumerate(drift_series(cfg)):
        out = link0.output(drift)
        for basis in (Basis.X, Basis.Z):
            link = link_point(link_cfg, out, basis, cfg.detector, cfg.protocol)
            acq = acquire_analytic(pats[basis], link, cfg.detector, cfg.protocol, base.child(basis.name, i))
            sig = reduce(acq, cfg.protocol, distance_km=d, launch=launch_kind, offset=link.offset_symbols)[0]
            rows.append(StabilityRow(drift.time_s, basis.name, sig.qber, sig.gain))
    return rows


def run_stability(cfg: RunConfig, plots: bool = True) -> list[StabilityRow]:
    out = _out_dir(cfg)
    rows = stability(cfg)
    _write_csv(out / "stability.csv", StabilityRow.FIELDS, [[getattr(r, f) for f in StabilityRow.FIELDS] for r in rows])
    _write_json(out / "summary.json", {"mode": "stability", "seed": cfg.seed,
                                       "statistics": stability_statistics(rows), "config": cfg.echo()})
    if plots:
        from .plotting import plot_stability
        plot_stability(out / "stability.csv", out / "stability.svg")
    return rows


# analysis of external data ------------------------------------------------------

def run_analyze(csv_path, cfg: RunConfig | None = None, write: bool = True) -> list[SkrRow]:
    cfg = cfg or RunConfig(mode="analyze")
    rows = skr_table(read_observables_csv(csv_path), cfg.protocol, cfg.f_ec, cfg.e0)
    if write:
        out = _out_dir(cfg)
        write_skr_csv(out / "skr.csv", rows)
    return rows


# calibration -------------------------------------------------------------------

ANCHOR_KINDS = ("qber", "gain", "skr", "qber_std", "gain_rel_std")


@dataclass(frozen=True)
class Anchor:
    kind: str
    target: float
    distance_km: float = 10.0
    launch: str = "underfill"
    basis: str = "X"

    def __post_init__(self):
        if self.kind not in ANCHOR_KINDS:
            raise ConfigError(f"anchor kind must be one of {ANCHOR_KINDS}")
        if not self.target > 0:
            raise ConfigError("anchor targets must be positive")
        object.__setattr__(self, "basis", Basis.parse(self.basis).name)


DEFAULT_ANCHORS = (
    Anchor("skr", 1.18e6, 1.0, "adapter", "Z"),
    Anchor("skr", 193e3, 17.0, "adapter", "Z"),
    Anchor("qber", 0.038, 10.0, "underfill", "X"),
    Anchor("qber", 0.005, 10.0, "underfill", "Z"),
    Anchor("qber_std", 0.0049, 10.0, "underfill", "X"),
    Anchor("qber_std", 0.0011, 10.0, "underfill", "Z"),
    Anchor("gain_rel_std", 0.065, 10.0, "underfill", "X"),
    Anchor("gain_rel_std", 0.065, 10.0, "underfill", "Z"),
)

CALIBRATED_KEYS = ("excess_loss_db", "phase_coeff", "timing_coeff", "coupling_per_km", "drift_amplitude")
_BOUNDS = {
    "excess_loss_db": (0.0, 40.0, False),
    "phase_coeff": (1e-3, 1e3, True),
    "timing_coeff": (1e-3, 1e3, True),
    "coupling_per_km": (1e-4, 1.0, True),
    "drift_amplitude": (0.0, 0.9, False),
}


def load_anchors(path) -> tuple[Anchor, ...]:
    try:
        items = json.loads(Path(path).read_text())
        return tuple(Anchor(**item) for item in items)
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"cannot read anchors {path}: {exc}") from None


class ExpectedModel:
    """Noise-free observables of a configuration, for calibration and trend checks."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        pats = patterns(cfg)
        self.shares = {b: np.bincount(p.intensities, minlength=3) / len(p) for b, p in pats.items()}

    def rates(self, distance_km, launch_kind, basis, trial, drift=None):
        cfg = self.cfg
        basis = Basis.parse(basis)
        out = trial_link(cfg, distance_km, launch_kind, trial, drift)
        link = link_point(cfg.channel.for_link(distance_km, launch_kind), out, basis, cfg.detector, cfg.protocol)
        return expected_rates(link, cfg.detector, cfg.protocol, self.shares[basis])

    def cells(self, distance_km, launch_kind) -> dict:
        acc = defaultdict(list)
        for trial in range(self.cfg.trials):
            for basis in (Basis.X, Basis.Z):
                for cls, qg in self.rates(distance_km, launch_kind, basis, trial).items():
                    acc[(basis.name, cls.label)].append(qg)
        return {k: (float(np.mean([q for q, _ in v])), float(np.mean([g for _, g in v]))) for k, v in acc.items()}

    def skr(self, distance_km, launch_kind) -> float:
        inp = key_rate_inputs(self.cells(distance_km, launch_kind), self.cfg.protocol, self.cfg.f_ec, self.cfg.e0)
        return optimize_protocol(inp).skr

    def stability(self, distance_km, launch_kind) -> dict:
        cfg = self.cfg
        link0 = trial_draws(cfg, distance_km, launch_kind, 0)
        rows = []
        for drift in drift_series(cfg):
            out = link0.output(drift)
            for basis in (Basis.X, Basis.Z):
                link = link_point(link0.config, out, basis, cfg.detector, cfg.protocol)
                q, g = expected_rates(link, cfg.detector, cfg.protocol, self.shares[basis])[IntensityClass.SIGNAL]
                rows.append(StabilityRow(drift.time_s, basis.name, q, g))
        return stability_statistics(rows)

    def evaluate(self, anchors) -> list[float]:
        values, stab = [], {}
        for a in anchors:
            if a.kind == "skr":
                values.append(self.skr(a.distance_km, a.launch))
            elif a.kind in ("qber", "gain"):
                cell = self.cells(a.distance_km, a.launch)[(a.basis, "signal")]
                values.append(cell[0] if a.kind == "qber" else cell[1])
            else:
                key = (a.distance_km, a.launch)
                if key not in stab:
                    stab[key] = self.stability(*key)
                s = stab[key][a.basis]
                values.append(s["qber_std"] if a.kind == "qber_std" else s["gain_rel_std"])
        return values


def relative_residuals(cfg: RunConfig, anchors) -> list[float]:
    values = ExpectedModel(cfg).evaluate(anchors)
    return [v / a.target - 1.0 for v, a in zip(values, anchors)]


def get_parameter(cfg: RunConfig, name: str) -> float:
    return cfg.drift.amplitude if name == "drift_amplitude" else getattr(cfg.channel, name)


def with_parameter(cfg: RunConfig, name: str, value: float) -> RunConfig:
    if name == "drift_amplitude":
        d = cfg.drift
        ratio = d.noise_amplitude / d.amplitude if d.amplitude > 0 else DEFAULT_DRIFT.noise_amplitude / DEFAULT_DRIFT.amplitude
        return replace(cfg, drift=replace(d, amplitude=value, noise_amplitude=value * ratio))
    return replace(cfg, channel=replace(cfg.channel, **{name: value}))


@dataclass(frozen=True)
class CalibrationResult:
    config: RunConfig
    anchors: tuple
    residuals: tuple
    iterations: int


def calibrate(cfg: RunConfig, anchors=DEFAULT_ANCHORS, params=CALIBRATED_KEYS,
              max_iter: int = 20, tol: float = 1e-4) -> CalibrationResult:
    """Coordinate descent on the squared relative anchor errors."""
    anchors = tuple(anchors)
    for p in params:
        if p not in _BOUNDS:
            raise ConfigError(f"cannot calibrate {p!r}")
    if not any(a.kind in ("qber_std", "gain_rel_std") for a in anchors):
        params = tuple(p for p in params if p != "drift_amplitude")

    def cost_of(c):
        return float(np.sum(np.square(relative_residuals(c, anchors))))

    best, best_cost = cfg, cost_of(cfg)
    if best_cost == 0.0:
        return CalibrationResult(cfg, anchors, tuple(relative_residuals(cfg, anchors)), 0)
    for it in range(1, max_iter + 1):
        start_cost = best_cost
        for name in params:
            lo, hi, log = _BOUNDS[name]
            to_value = math.exp if log else float
            res = minimize_scalar(lambda x: cost_of(with_parameter(best, name, to_value(x))),
                                  bounds=(math.log(lo), math.log(hi)) if log else (lo, hi),
                                  method="bounded", options={"xatol": 1e-6})
            if res.fun < best_cost:
                best, best_cost = with_parameter(best, name, to_value(res.x)), float(res.fun)
        if start_cost - best_cost <= tol * max(start_cost, 1e-12):
            return CalibrationResult(best, anchors, tuple(relative_residuals(best, anchors)), it)
    raise CalibrationError(f"no convergence after {max_iter} sweeps (cost {best_cost:.3g})",
                           best=best, residuals=tuple(relative_residuals(best, anchors)))


def run_calibrate(cfg: RunConfig, anchors=DEFAULT_ANCHORS, max_iter: int = 20) -> CalibrationResult:
    out = _out_dir(cfg)
    try:
        result = calibrate(cfg, anchors, max_iter=max_iter)
    except CalibrationError as exc:
        _write_calibration(out, exc.best, anchors, exc.residuals, converged=False)
        raise
    _write_calibration(out, result.config, anchors, result.residuals, converged=True)
    return result


def _write_calibration(out: Path, cfg: RunConfig, anchors, residuals, converged: bool) -> None:
    params = {name: get_parameter(cfg, name) for name in CALIBRATED_KEYS}
    _write_json(out / "calibrated.json", cfg.to_mapping())
    _write_json(out / "summary.json", {
        "mode": "calibrate", "converged": converged, "parameters": params,
        "anchors": [dict(asdict(a), relative_residual=r) for a, r in zip(anchors, residuals)],
    })
