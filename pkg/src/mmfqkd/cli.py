"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 calibration failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments as ex
from .errors import CalibrationError, ConfigError, MMFQKDError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CALIBRATION = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _launches(text: str) -> list[str]:
    if text == "both":
        return ["underfill", "adapter"]
    if text in ("underfill", "adapter"):
        return [text]
    raise argparse.ArgumentTypeError("launch must be underfill, adapter or both")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with flat configuration keys")
    common.add_argument("--seed", type=int, help="master RNG seed")
    common.add_argument("--out", help="output directory")

    link = argparse.ArgumentParser(add_help=False)
    link.add_argument("--distances", type=_floats, help="comma-separated link lengths in km")
    link.add_argument("--launch", type=_launches, help="underfill, adapter or both")
    link.add_argument("--trials", type=int, help="trials per distance")

    parser = _Parser(prog="mmfqkd", description="Decoy-state BB84 over multimode fibre: simulation and analysis.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("sweep", parents=[common, link], help="distance sweep for both launch kinds")
    p.add_argument("--event-mode", action="store_true", default=None,
                   help="per-photon simulation instead of expected-count histograms")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("stability", parents=[common], help="long-term QBER and gain time series")
    p.add_argument("--duration", type=float, help="simulated duration in seconds")
    p.add_argument("--step", type=float, help="measurement interval in seconds")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("calibrate", parents=[common, link], help="fit channel parameters to anchor observables")
    p.add_argument("--anchors", help="JSON list of anchors (kind, target, distance_km, launch, basis)")
    p.add_argument("--duration", type=float, help="stability duration used by fluctuation anchors")
    p.add_argument("--step", type=float, help="stability step used by fluctuation anchors")
    p.add_argument("--max-iter", type=int, default=20)

    p = sub.add_parser("analyze", parents=[common], help="key rate from a measured observables CSV")
    p.add_argument("csv", help="CSV with distance_km, basis, launch, qber, gain columns")

    p = sub.add_parser("plot", help="re-render figures from the CSVs in a results directory")
    p.add_argument("directory")
    return parser


def _overrides(args) -> dict:
    get = lambda name: getattr(args, name, None)  # noqa: E731
    return {
        "mode": args.command,
        "seed": get("seed"),
        "out_dir": get("out"),
        "distances_km": get("distances"),
        "launches": get("launch"),
        "trials": get("trials"),
        "duration_s": get("duration"),
        "step_s": get("step"),
        "event_mode": get("event_mode"),
    }


def _replot(directory: Path) -> None:
    from .plotting import plot_observables, plot_skr, plot_stability
    found = False
    if (directory / "observables.csv").exists():
        plot_observables(directory / "observables.csv", directory / "observables.svg")
        found = True
    if (directory / "skr.csv").exists():
        plot_skr(directory / "skr.csv", directory / "skr.svg")
        found = True
    if (directory / "stability.csv").exists():
        plot_stability(directory / "stability.csv", directory / "stability.svg")
        found = True
    if not found:
        raise ConfigError(f"no result CSVs in {directory}")


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "plot":
            _replot(Path(args.directory))
            return EXIT_OK
        cfg = ex.load_config(args.config, _overrides(args))
        if args.command == "sweep":
            result = ex.run_sweep(cfg, plots=not args.no_plots)
            for row in result.skr:
                print(f"{row.distance_km:6g} km  {row.launch:9s}  SKR {row.skr_bps:12.1f} bit/s")
        elif args.command == "stability":
            ex.run_stability(cfg, plots=not args.no_plots)
            stats = json.loads((Path(cfg.out_dir) / "summary.json").read_text())["statistics"]
            for basis, s in stats.items():
                print(f"{basis}: QBER std {100 * s['qber_std']:.3f} pp, gain rel. std {100 * s['gain_rel_std']:.2f} %")
        elif args.command == "calibrate":
            anchors = ex.load_anchors(args.anchors) if args.anchors else ex.DEFAULT_ANCHORS
            result = ex.run_calibrate(cfg, anchors, max_iter=args.max_iter)
            for a, r in zip(result.anchors, result.residuals):
                print(f"{a.kind:12s} {a.distance_km:5g} km {a.launch:9s} {a.basis}  residual {100 * r:+.1f} %")
        elif args.command == "analyze":
            for row in ex.run_analyze(args.csv, cfg):
                print(f"{row.distance_km:6g} km  {row.launch:9s}  SKR {row.skr_bps:12.1f} bit/s")
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MMFQKDError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def main(argv=None) -> int:
    return run(argv)
