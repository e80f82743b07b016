"""Command-line experiment runner.

Exit status: 0 success, 2 validation/parse error, 3 runtime or fit failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    HomScanResult,
    ScanFormatError,
    accidental_rate,
    build_histogram,
    comb_contrast,
    count_coincidences,
    fit_envelope,
    fit_scan,
    standard_scan_grid,
    run_hom_scan,
)
from .config_io import ConfigConsistencyWarning, config_hash, load_config, resolve_config_path
from .detection import StreamFormatError, TimeTagStream
from .params import ConfigError, SourceConfig, derive_quantities, spectral_metrics
from .simulation import simulate_stream
from .source import MeasurementBasis

log = logging.getLogger("cavity_spdc")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

# reference values quoted for the source, used only in the comparison table
REFERENCE_VALUES = {
    "fsr": (490e6, "Hz"),
    "cavity_linewidth": (7e6, "Hz"),
    "round_trip_time": (2.03e-9, "s"),
    "phase_matching_bandwidth": (148e9, "Hz"),
    "hom_base_width": (2.03e-3, "m"),
    "mode_count_fwhm": (600.0, ""),
    "degenerate_mode_fraction": (1 / 300, ""),
    "conditional_detection_efficiency": (0.21, ""),
}
UNITS = {
    "fsr": "Hz",
    "cavity_linewidth": "Hz",
    "round_trip_time": "s",
    "ring_down_time": "s",
    "phase_matching_bandwidth": "Hz",
    "bandwidth_nm": "m",
    "zeta": "1/s",
    "hom_base_width": "m",
    "mode_count_fwhm": "",
    "degenerate_mode_fraction": "",
    "conditional_detection_efficiency": "",
    "roundtrip_termination_probability": "",
    "comb_envelope_decay": "s",
}


class CliError(Exception):
    def __init__(self, message: str, status: int = EXIT_VALIDATION):
        super().__init__(message)
        self.status = status


@dataclass
class RunManifest:
    """What was asked for; everything but the output directory goes into
    each artifact so re-runs elsewhere stay byte-identical."""

    config_path: str
    subcommand: str
    seed: int | None
    out_dir: str | None
    fmt: str | None

    @classmethod
    def from_args(cls, args) -> "RunManifest":
        seed = None if args.command in ("derive", "fit") else args.seed
        return cls(args.config_label, args.command, seed, args.out_dir, args.format)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _provenance(args, config: SourceConfig) -> dict:
    m = RunManifest.from_args(args)
    return {"tool": "cavity_spdc", "version": __version__, "command": m.subcommand, "config": m.config_path,
            "config_sha256": config_hash(config), "seed": m.seed}


def _header_lines(args, config: SourceConfig) -> list[str]:
    p = _provenance(args, config)
    return [" ".join(f"{k}={v}" for k, v in p.items())]


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc.strerror}", EXIT_RUNTIME) from None
    return out


# ---------------------------------------------------------------------------
# derive


def derive_table(config: SourceConfig) -> list[dict]:
    dq = derive_quantities(config).to_dict()
    rows = []
    for name, value in dq.items():
        row = {"quantity": name, "value": value, "unit": UNITS.get(name, "")}
        if name in REFERENCE_VALUES:
            ref = REFERENCE_VALUES[name][0]
            row["reference"] = ref
            row["rel_diff"] = value / ref - 1.0
        rows.append(row)
    return rows


def cmd_derive(args, config: SourceConfig) -> int:
    rows = derive_table(config)
    payload = {"derived": {r["quantity"]: r["value"] for r in rows}, "units": UNITS, "comparison": rows,
               "provenance": _provenance(args, config)}
    if args.format == "json":
        print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))
    else:
        print(f"{'quantity':36s} {'value':>14s} {'unit':5s} {'reference':>12s} {'rel.diff':>9s}")
        for r in rows:
            ref = f"{r['reference']:12.4g}" if "reference" in r else f"{'-':>12s}"
            diff = f"{r['rel_diff']:+9.2%}" if "rel_diff" in r else f"{'-':>9s}"
            print(f"{r['quantity']:36s} {r['value']:14.6g} {r['unit']:5s} {ref} {diff}")
    if args.out_dir:
        _write_json(_out_dir(args) / "derived.json", payload)
    return EXIT_OK


# ---------------------------------------------------------------------------
# simulate


def rate_summary(stream: TimeTagStream, config: SourceConfig, window: float) -> dict:
    n_coin, _ = count_coincidences(stream, window)
    live = stream.live_time
    s_a, s_b = len(stream.a), len(stream.b)
    if live > 0:
        r_a, r_b = s_a / live, s_b / live
        acc = accidental_rate(r_a, r_b, window)
        coin = n_coin / live
    else:
        r_a = r_b = acc = coin = 0.0
    wall = stream.duration
    return {
        "duration_s": stream.duration,
        "live_time_s": live,
        "singles_a": s_a,
        "singles_b": s_b,
        "coincidences": n_coin,
        "window_s": window,
        "live_rates": {
            "singles_a": r_a,
            "singles_b": r_b,
            "coincidences": coin,
            "accidentals": acc,
            "corrected_coincidences": coin - acc,
        },
        "raw_rates": {
            "singles_a": s_a / wall if wall > 0 else 0.0,
            "singles_b": s_b / wall if wall > 0 else 0.0,
            "coincidences": n_coin / wall if wall > 0 else 0.0,
        },
    }


def cmd_simulate(args, config: SourceConfig) -> int:
    basis = MeasurementBasis.parse(args.basis)
    dl = config.path_difference_center if args.delta_l_mm is None else args.delta_l_mm * 1e-3
    stream = simulate_stream(config, basis, args.duration_s, args.seed, dl, n_chunks=args.chunks,
                             workers=args.workers)
    out = _out_dir(args)
    stream.write(out / "stream.ptag")
    if args.format == "csv":
        stream.write_csv(out / "stream.csv")
    summary = rate_summary(stream, config, config.coincidence_window)
    summary.update(basis=basis.value, path_difference_m=dl, provenance=_provenance(args, config))
    if config.pump_power > 0 and summary["live_time_s"] > 0:
        summary["spectral_metrics"] = spectral_metrics(
            summary["live_rates"]["corrected_coincidences"], config).to_dict()
    _write_json(out / "summary.json", summary)
    lr = summary["live_rates"]
    print(f"singles A {lr['singles_a']:.0f}/s  B {lr['singles_b']:.0f}/s  coincidences {lr['coincidences']:.0f}/s  "
          f"accidentals {lr['accidentals']:.0f}/s  corrected {lr['corrected_coincidences']:.0f}/s "
          f"(live time {summary['live_time_s']:.4g} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# histogram


def histogram_report(stream: TimeTagStream, config: SourceConfig, bin_width: float, range_: float):
    _, dt = count_coincidences(stream, 2 * range_)
    hist = build_histogram(dt, bin_width, range_, resolution=stream.resolution)
    report: dict = {"bin_width_s": bin_width, "range_s": range_, "total_events": hist.total_events,
                    "counts_sum": int(hist.counts.sum())}
    if hist.counts.sum() > 100:
        env = fit_envelope(hist)
        report["envelope"] = asdict(env)
        report["ring_down_time_s"] = derive_quantities(config).ring_down_time
        if math.isclose(bin_width, stream.resolution, rel_tol=1e-9):
            cc = comb_contrast(hist)
            report["comb"] = {"period_peaks": cc.period, "crossings": cc.crossings,
                              "minima_spacing": cc.minima_spacing}
    return hist, report


def _load_stream(args, config: SourceConfig) -> TimeTagStream:
    if args.stream:
        try:
            return TimeTagStream.read(args.stream)
        except OSError as exc:
            raise CliError(f"cannot read stream {args.stream}: {exc.strerror}", EXIT_RUNTIME) from None
    basis = MeasurementBasis.parse(args.basis)
    dl = config.path_difference_center if args.delta_l_mm is None else args.delta_l_mm * 1e-3
    return simulate_stream(config, basis, args.duration_s, args.seed, dl, n_chunks=args.chunks, workers=args.workers)


def cmd_histogram(args, config: SourceConfig) -> int:
    stream = _load_stream(args, config)
    bin_width = stream.resolution if args.bin_width_ns is None else args.bin_width_ns * 1e-9
    range_ = config.coincidence_window / 2 if args.range_ns is None else args.range_ns * 1e-9
    hist, report = histogram_report(stream, config, bin_width, range_)
    out = _out_dir(args)
    hist.write_csv(out / "histogram.csv", _header_lines(args, config))
    report["provenance"] = _provenance(args, config)
    _write_json(out / "histogram.json", report)
    print(f"histogram: {len(hist.counts)} bins, {int(hist.counts.sum())} entries -> {out / 'histogram.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# homscan / fit


def _fit_payload(scan: HomScanResult) -> dict:
    f = scan.fit
    return {
        "width_m": f.width,
        "width_err_m": f.width_err,
        "zeta_fit": f.zeta_fit,
        "center_m": f.center,
        "r_avg": f.r_avg,
        "visibility_raw": f.visibility_raw,
        "visibility_raw_err": f.visibility_raw_err,
        "visibility_corrected": f.visibility_corrected,
        "visibility_corrected_err": f.visibility_corrected_err,
        "residual_norm": f.residual_norm,
        "converged": f.converged,
        "raw_fit": f.raw.to_dict(),
        "corrected_fit": f.corrected.to_dict(),
    }


def _print_fit(scan: HomScanResult) -> None:
    f = scan.fit
    print(f"width {f.width * 1e3:.4f} mm  center {f.center * 1e3:+.4f} mm  "
          f"V_raw {f.visibility_raw:.4f}  V_corrected {f.visibility_corrected:.4f}  "
          f"{'converged' if f.converged else 'NOT converged'}")


def cmd_homscan(args, config: SourceConfig) -> int:
    grid = standard_scan_grid(config, args.span_mm * 1e-3, args.step_mm * 1e-3)
    acc_window = None if args.accidental_window_ns is None else args.accidental_window_ns * 1e-9
    scan = run_hom_scan(config, grid, args.duration_s, args.seed, accidental_window=acc_window,
                        workers=args.workers, n_chunks=args.chunks)
    out = _out_dir(args)
    scan.write_csv(out / "scan.csv", _header_lines(args, config))
    report = {
        "grid": {"span_m": args.span_mm * 1e-3, "step_m": args.step_mm * 1e-3, "points": len(grid),
                 "duration_per_point_s": args.duration_s},
        "window_s": scan.window,
        "accidental_window_s": scan.accidental_window,
        "expected_width_m": derive_quantities(config).hom_base_width,
        "fit": _fit_payload(scan),
        "provenance": _provenance(args, config),
    }
    _write_json(out / "hom_report.json", report)
    _print_fit(scan)
    return EXIT_OK if scan.fit.converged else EXIT_RUNTIME


def cmd_fit(args, config: SourceConfig) -> int:
    if not args.scan:
        raise CliError("fit needs --scan CSV")
    try:
        scan = HomScanResult.read_csv(args.scan, window=config.coincidence_window)
    except OSError as exc:
        raise CliError(f"cannot read scan {args.scan}: {exc.strerror}", EXIT_RUNTIME) from None
    exclude = None
    if args.exclude_above_mm is not None:
        exclude = scan.path_difference > args.exclude_above_mm * 1e-3
    scan.fit = fit_scan(scan, exclude=exclude)
    out = _out_dir(args)
    _write_json(out / "fit.json", {"fit": _fit_payload(scan), "source": str(args.scan),
                                   "provenance": _provenance(args, config)})
    _print_fit(scan)
    return EXIT_OK if scan.fit.converged else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# report


def cmd_report(args, config: SourceConfig) -> int:
    """Replicate the headline numbers: derived table, rate chain, histogram, HOM dip."""
    out = _out_dir(args)
    dq = derive_quantities(config)
    stream = simulate_stream(config, MeasurementBasis.HV, args.duration_s, args.seed, n_chunks=args.chunks,
                             workers=args.workers)
    rates = rate_summary(stream, config, config.coincidence_window)
    _, hist_report = histogram_report(stream, config, stream.resolution, config.coincidence_window / 2)
    report = {
        "derived": derive_table(config),
        "rates": rates,
        "spectral_metrics": spectral_metrics(rates["live_rates"]["corrected_coincidences"], config, dq).to_dict(),
        "histogram": hist_report,
        "provenance": _provenance(args, config),
    }
    status = EXIT_OK
    if not args.skip_hom:
        scan = run_hom_scan(config, standard_scan_grid(config), args.hom_duration_s, args.seed, workers=args.workers)
        scan.write_csv(out / "scan.csv", _header_lines(args, config))
        report["hom"] = _fit_payload(scan)
        status = EXIT_OK if scan.fit.converged else EXIT_RUNTIME
    _write_json(out / "report.json", report)
    print(f"report -> {out / 'report.json'}")
    return status


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="TOML config path or 'reference' (default: $CAVITY_SPDC_CONFIG or the bundled reference)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out-dir", default=None)
    common.add_argument("--format", choices=("csv", "json"), default=None,
                        help="derive: json prints JSON instead of a table; simulate: csv also writes stream.csv")
    common.add_argument("--chunks", type=int, default=1, help="simulation chunks (output is chunk-independent)")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--duration-s", type=float, default=1.0)
    sim.add_argument("--basis", choices=("hv", "diag"), default="hv")
    sim.add_argument("--delta-l-mm", type=float, default=None)

    parser = argparse.ArgumentParser(prog="cavity-spdc", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("derive", parents=[common], help="print derived quantities and the comparison table")
    sub.add_parser("simulate", parents=[common, sim], help="simulate a time-tag stream and rate summary")
    p = sub.add_parser("histogram", parents=[common, sim], help="Δt histogram of a stream")
    p.add_argument("--stream", default=None, help="PTAG file (default: simulate one)")
    p.add_argument("--bin-width-ns", type=float, default=None)
    p.add_argument("--range-ns", type=float, default=None)
    p = sub.add_parser("homscan", parents=[common], help="HOM scan and triangular fit")
    p.add_argument("--duration-s", type=float, default=1.0, help="simulated time per scan point")
    p.add_argument("--span-mm", type=float, default=8.0)
    p.add_argument("--step-mm", type=float, default=0.2)
    p.add_argument("--accidental-window-ns", type=float, default=None)
    p = sub.add_parser("fit", parents=[common], help="fit a scan CSV")
    p.add_argument("--scan", required=True)
    p.add_argument("--exclude-above-mm", type=float, default=None)
    p = sub.add_parser("report", parents=[common], help="full replication report")
    p.add_argument("--duration-s", type=float, default=5.0)
    p.add_argument("--hom-duration-s", type=float, default=1.0)
    p.add_argument("--skip-hom", action="store_true")
    return parser


COMMANDS = {
    "derive": cmd_derive,
    "simulate": cmd_simulate,
    "histogram": cmd_histogram,
    "homscan": cmd_homscan,
    "fit": cmd_fit,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out_dir is None and args.command != "derive":
        args.out_dir = "."
    args.config_label = str(resolve_config_path(args.config))
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConfigConsistencyWarning)
            config, _ = load_config(args.config)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
        return COMMANDS[args.command](args, config)
    except (ConfigError, StreamFormatError, ScanFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.status
    except (OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
