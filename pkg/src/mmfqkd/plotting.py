"""SVG figures rendered from the emitted CSV files only, so they can be
regenerated offline from a results directory."""
from __future__ import annotations

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .analysis import read_observables_csv  # noqa: E402

COLORS = {"underfill": "tab:blue", "adapter": "tab:red", "X": "tab:purple", "Z": "tab:green"}

# fixed ids and no timestamp keep the SVG bytes reproducible
plt.rcParams["svg.hashsalt"] = "mmfqkd"
_META = {"Date": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_observables(csv_path, svg_path) -> None:
    """QBER and gain against distance per basis, one series per launch, mean +- SDOM over trials."""
    groups = defaultdict(list)
    for ob in read_observables_csv(csv_path):
        if ob.intensity == "signal":
            groups[(ob.basis, ob.launch, ob.distance_km)].append(ob)
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5), sharex=True)
    for col, basis in enumerate(("X", "Z")):
        for launch_kind in ("underfill", "adapter"):
            dists = sorted(d for b, lk, d in groups if b == basis and lk == launch_kind)
            if not dists:
                continue
            for row, attr, scale in ((0, "qber", 100.0), (1, "gain", 1.0)):
                vals = [np.array([getattr(o, attr) for o in groups[(basis, launch_kind, d)]]) * scale
                        for d in dists]
                mean = [v.mean() for v in vals]
                err = [v.std(ddof=1) / np.sqrt(len(v)) if len(v) > 1 else 0.0 for v in vals]
                axes[row, col].errorbar(dists, mean, yerr=err, marker="o", ms=4, capsize=3,
                                        color=COLORS[launch_kind], label=launch_kind)
        axes[0, col].set_title(f"{basis} basis")
        axes[0, col].set_ylabel("QBER (%)")
        axes[1, col].set_ylabel("gain")
        axes[1, col].set_yscale("log")
        axes[1, col].set_xlabel("distance (km)")
        axes[0, col].legend()
    _save(fig, svg_path)


def plot_skr(csv_path, svg_path) -> None:
    """Secure key rate against equivalent channel loss, log scale."""
    series = defaultdict(list)
    for row in _read_rows(csv_path):
        series[row["launch"]].append((float(row["equivalent_loss_db"]), float(row["skr_bps"])))
    fig, ax = plt.subplots(figsize=(6, 4.5))
    for launch_kind in ("underfill", "adapter"):
        pts = sorted(series.get(launch_kind, []))
        if not pts:
            continue
        x, y = zip(*pts)
        y = np.where(np.asarray(y) > 0, y, np.nan)
        ax.plot(x, y, marker="o", color=COLORS[launch_kind], label=launch_kind)
    ax.set_yscale("log")
    ax.set_xlabel("equivalent loss (dB)")
    ax.set_ylabel("secure key rate (bit/s)")
    ax.legend()
    _save(fig, svg_path)


def plot_stability(csv_path, svg_path) -> None:
    """QBER and gain time series for both bases."""
    series = defaultdict(list)
    for row in _read_rows(csv_path):
        series[row["basis"]].append((float(row["time_s"]), float(row["qber"]), float(row["gain"])))
    fig, (ax_q, ax_g) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for basis in ("X", "Z"):
        if basis not in series:
            continue
        t, q, g = (np.array(c) for c in zip(*series[basis]))
        hours = t / 3600.0
        ax_q.plot(hours, 100 * q, lw=0.8, color=COLORS[basis], label=basis)
        ax_g.plot(hours, g / g.mean(), lw=0.8, color=COLORS[basis], label=basis)
    ax_q.set_ylabel("QBER (%)")
    ax_g.set_ylabel("gain / mean gain")
    ax_g.set_xlabel("time (h)")
    ax_q.legend()
    _save(fig, svg_path)
