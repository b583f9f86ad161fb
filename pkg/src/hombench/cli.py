"""``hombench`` command line.

Exit codes: 0 success, 1 analysis failure (e.g. a fit that does not
converge), 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (DecoyRecord, both_live_gates, build_histogram, count_coincidences,
                       decoy_upper_bound, estimate_g2, fit_dip, live_gates)
from .config import ConfigError, config_to_ini, load_config
from .detector import fit_detector_response
from .formats import (FormatError, SchemaError, atomic_write, format_record, read_scan,
                      read_tags, scan_to_csv, scan_to_jsonl, write_tags)
from .levmar import FitError
from .simulator import ExperimentConfig, ScanPoint, simulate_scan_detailed


class UsageError(Exception):
    pass


def parse_delays(spec):
    """``"start:stop:count"`` in ps, endpoints included."""
    try:
        start, stop, count = spec.split(":")
        start, stop, count = float(start), float(stop), int(count)
    except ValueError:
        raise UsageError(f"bad delay spec {spec!r}, expected start:stop:count") from None
    if count < 1:
        raise UsageError("delay count must be >= 1")
    if count == 1:
        return [start]
    return [float(v) for v in np.linspace(start, stop, count)]


def _threads(args):
    if args.threads is not None:
        return args.threads
    env = os.environ.get("HOMBENCH_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"HOMBENCH_THREADS must be an integer, got {env!r}") from None
    return 1


def _config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    return cfg


class Run:
    """Tracks outputs and writes the manifest last."""

    def __init__(self, args, command):
        self.args = args
        self.command = command
        self.out = Path(args.out)
        self.outputs = []
        self.t0 = time.monotonic()

    def write(self, name, data):
        path = self.out / name
        atomic_write(path, data)
        self.outputs.append(str(path))
        return path

    def finish(self, seed=None):
        manifest = {
            "command": self.command,
            "config": self.args.config,
            "seed": seed,
            "outputs": self.outputs,
            "version": __version__,
            "wall_seconds": round(time.monotonic() - self.t0, 3),
        }
        atomic_write(self.out / f"manifest-{self.command}.json", json.dumps(manifest, indent=2) + "\n")


def _table(rows, fmt):
    if fmt == "json-lines":
        return "".join(json.dumps(r) + "\n" for r in rows)
    if not rows:
        return ""
    keys = list(rows[0])
    lines = [",".join(keys)]
    for r in rows:
        lines.append(",".join("" if r[k] is None else repr(r[k]) if isinstance(r[k], float) else str(r[k])
                              for k in keys))
    return "\n".join(lines) + "\n"


def _ext(fmt):
    return "jsonl" if fmt == "json-lines" else "csv"


# -- commands ----------------------------------------------------------------

def cmd_simulate_scan(args):
    cfg = _config(args)
    if args.block:
        cfg = cfg.with_(block=args.block)
    if args.n_pulses:
        cfg = cfg.with_(n_pulses=args.n_pulses)
    delays = parse_delays(args.delays)
    run = Run(args, "simulate-scan")
    results = simulate_scan_detailed(cfg, delays, threads=_threads(args), keep_tags=args.tags)
    points = [r.point for r in results]
    text = scan_to_jsonl(points) if args.format == "json-lines" else scan_to_csv(points)
    run.write(f"{args.name}.{_ext(args.format)}", text)
    if args.tags:
        for i, r in enumerate(results):
            path = Path(args.out) / f"{args.name}_tags_{i:03d}.homt"
            write_tags(path, r.tags[0], r.tags[1], cfg.gate.tdc_bin, cfg.rep_period)
            run.outputs.append(str(path))
    run.write(f"{args.name}.config.ini", config_to_ini(cfg))
    run.finish(cfg.seed)
    for p in points:
        g2 = "undefined" if p.g2 is None else f"{p.g2:.4f} ± {p.g2_err:.4f}"
        print(f"tau = {p.tau:9.2f} ps  n1 = {p.n1}  n2 = {p.n2}  nc = {p.n_coinc}  g2 = {g2}")
    return 0


def cmd_fit_dip(args):
    from .plotting import dip_svg

    points = read_scan(args.input)
    fit = fit_dip(points, mode=args.mode)
    run = Run(args, "fit-dip")
    run.write(f"{args.name}.txt", format_record(fit.record()))
    run.write(f"{args.name}.svg", dip_svg(points, fit))
    run.finish()
    print(format_record(fit.record()), end="")
    for w in fit.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def _points_from_tags(path, cfg, tau, n_slots):
    tf = read_tags(path)
    t1, t2 = tf.timestamps_for(0), tf.timestamps_for(1)
    n1, n2, nc, n = count_coincidences(t1, t2, tf.rep_period, cfg.coincidence_window,
                                       tdc_bin=tf.tdc_bin, n_slots=n_slots)
    dead = cfg.gate.dead_time
    return ScanPoint.from_counts(
        tau, n, n1, n2, nc,
        n_live1=live_gates(t1, tf.rep_period, tf.tdc_bin, dead, n),
        n_live2=live_gates(t2, tf.rep_period, tf.tdc_bin, dead, n),
        n_live12=both_live_gates(t1, t2, tf.rep_period, tf.tdc_bin, dead, n))


def cmd_decoy(args):
    if bool(args.scans) == bool(args.tags):
        raise UsageError("give exactly one of --scans or --tags (three files each)")
    if args.scans:
        tables = [read_scan(p) for p in args.scans]
        grids = [{p.tau: p for p in t} for t in tables]
        all_tau = set().union(*grids)
        bad = sorted(t for t in all_tau if not all(t in g for g in grids))
        if bad:
            raise UsageError("delay grids differ; delays not present in all inputs: "
                             + ", ".join(f"{t:g}" for t in bad))
        triplets = [(t, *(g[t] for g in grids)) for t in sorted(all_tau)]
    else:
        cfg = _config(args)
        n_slots = args.n_slots or cfg.n_pulses
        pts = [_points_from_tags(p, cfg, args.tau, n_slots) for p in args.tags]
        triplets = [(args.tau, *pts)]
    rows = []
    for tau, mm, zm, mz in triplets:
        rec = DecoyRecord.from_points(mm, zm, mz)
        try:
            p_ub, err = decoy_upper_bound(rec)
        except ZeroDivisionError:
            p_ub = err = None
        rows.append({"tau_ps": tau, "p_ub": p_ub, "p_ub_err": err,
                     "p_cc_mumu": rec.p_cc_mumu, "p_cc_0mu": rec.p_cc_0mu,
                     "p_cc_mu0": rec.p_cc_mu0, "p_d1": rec.p_d1, "p_d2": rec.p_d2})
    run = Run(args, "decoy")
    run.write(f"{args.name}.{_ext(args.format)}", _table(rows, args.format))
    run.finish()
    for r in rows:
        val = "undefined" if r["p_ub"] is None else f"{r['p_ub']:.4f} ± {r['p_ub_err']:.4f}"
        print(f"tau = {r['tau_ps']:9.2f} ps  P(1,1|1,1)_ub = {val}")
    return 0


def _read_histogram_csv(path):
    from .analysis import Histogram

    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != 2 or rows.shape[0] < 2:
        raise SchemaError(f"{path}: expected columns bin_start_ps,count")
    width = rows[1, 0] - rows[0, 0]
    return Histogram(float(width), float(rows[0, 0]), rows[:, 1].astype(np.int64))


def _histogram_csv(hist):
    lines = ["bin_start_ps,count"]
    lines += [f"{e!r},{c}" for e, c in zip(hist.edges()[:-1].tolist(), hist.counts.tolist())]
    return "\n".join(lines) + "\n"


def cmd_detector_fit(args):
    from .plotting import histogram_svg

    path = Path(args.input)
    if not path.is_file():
        raise FileNotFoundError(f"input not found: {path}")
    if path.suffix == ".csv":
        hist = _read_histogram_csv(path)
    else:
        tf = read_tags(path)
        width = args.bin_width or tf.tdc_bin
        hist = build_histogram(tf, width, channel=args.channel, fold_period=tf.rep_period)
    if np.count_nonzero(hist.counts) < 10:
        raise UsageError("fewer than 10 non-empty histogram bins")
    c = hist.centers()
    peak = c[int(np.argmax(hist.counts))]
    lo, hi = peak - args.fit_before, peak + args.fit_after
    idx = np.nonzero((c >= lo) & (c <= hi))[0]
    i0, i1 = int(idx[0]), int(idx[-1]) + 1
    fit = fit_detector_response((hist.edges()[i0:i1 + 1], hist.counts[i0:i1]))
    p, e = fit.params, fit.errors
    record = {
        "amplitude": p.amplitude, "amplitude_err": float(e[0]),
        "t0_ps": p.t0, "t0_err_ps": float(e[1]),
        "sigma_ps": p.sigma, "sigma_err_ps": float(e[2]),
        "t1_ps": p.t1, "t1_err_ps": float(e[3]),
        "tau_decay_ps": p.tau_decay, "tau_decay_err_ps": float(e[4]),
        "fwhm_ps": fit.fwhm, "chi2_red": fit.chi2_red,
        "n_counts": hist.total, "converged": fit.converged,
    }
    run = Run(args, "detector-fit")
    run.write(f"{args.name}.txt", format_record(record))
    run.write(f"{args.name}_histogram.csv", _histogram_csv(hist))
    run.write(f"{args.name}.svg", histogram_svg(hist, fit, window=(lo, hi)))
    run.finish()
    print(format_record(record), end="")
    return 0


def cmd_g2(args):
    if args.tags:
        cfg = _config(args)
        tf = read_tags(args.tags)
        counts = count_coincidences(tf.timestamps_for(0), tf.timestamps_for(1), tf.rep_period,
                                    args.window or cfg.coincidence_window, tdc_bin=tf.tdc_bin,
                                    n_slots=args.n_slots)
    elif args.counts:
        counts = tuple(args.counts)
    else:
        raise UsageError("give --counts N1 N2 NC NSLOTS or --tags FILE")
    g2, err = estimate_g2(counts)
    row = {"n1": counts[0], "n2": counts[1], "n_coinc": counts[2], "n_slots": counts[3],
           "g2": g2, "g2_err": err}
    sys.stdout.write(_table([row], args.format))
    return 0


# -- parser ------------------------------------------------------------------

def _global_options(parser, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", metavar="PATH", default=d(None), help="experiment config (INI)")
    parser.add_argument("--seed", type=int, metavar="U64", default=d(None), help="override the RNG seed")
    parser.add_argument("--out", metavar="DIR", default=d("."), help="output directory")
    parser.add_argument("--threads", type=int, metavar="N", default=d(None),
                        help="worker threads, 0 = auto (fallback: $HOMBENCH_THREADS)")
    parser.add_argument("--format", choices=("csv", "json-lines"), default=d("csv"),
                        help="format of tabular outputs")


def build_parser():
    parser = argparse.ArgumentParser(prog="hombench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_options(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_options(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate-scan", parents=[common], help="simulate an optical delay scan")
    p.add_argument("--delays", default="-240:240:21", help="start:stop:count in ps (inclusive)")
    p.add_argument("--block", choices=("none", "block1", "block2"), help="blocked input port")
    p.add_argument("--n-pulses", type=int, help="gates per delay (overrides the config)")
    p.add_argument("--tags", action="store_true", help="also write one tag file per delay")
    p.add_argument("--name", default="scan", help="output file stem")
    p.set_defaults(func=cmd_simulate_scan)

    p = sub.add_parser("fit-dip", parents=[common], help="fit the Lorentzian dip to a scan table")
    p.add_argument("input")
    p.add_argument("--mode", choices=("constrained", "free"), default="constrained")
    p.add_argument("--name", default="dip_fit")
    p.set_defaults(func=cmd_fit_dip)

    p = sub.add_parser("decoy", parents=[common], help="two-decoy upper bound")
    p.add_argument("--scans", nargs=3, metavar=("MU_MU", "ZERO_MU", "MU_ZERO"))
    p.add_argument("--tags", nargs=3, metavar=("MU_MU", "ZERO_MU", "MU_ZERO"))
    p.add_argument("--tau", type=float, default=0.0, help="delay of the tag files (ps)")
    p.add_argument("--n-slots", type=int, help="gates per tag file (default: config n_pulses)")
    p.add_argument("--name", default="decoy")
    p.set_defaults(func=cmd_decoy)

    p = sub.add_parser("detector-fit", parents=[common], help="fit the detector temporal response")
    p.add_argument("input", help="tag file or histogram CSV (bin_start_ps,count)")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--bin-width", type=int, help="histogram bin (default: TDC bin)")
    p.add_argument("--fit-before", type=float, default=1000.0, help="fit range before the peak (ps)")
    p.add_argument("--fit-after", type=float, default=2000.0, help="fit range after the peak (ps)")
    p.add_argument("--name", default="response")
    p.set_defaults(func=cmd_detector_fit)

    p = sub.add_parser("g2", parents=[common], help="g2 from counts or a tag file")
    p.add_argument("--counts", type=int, nargs=4, metavar=("N1", "N2", "NC", "NSLOTS"))
    p.add_argument("--tags", metavar="FILE")
    p.add_argument("--window", type=int, help="coincidence window (ps)")
    p.add_argument("--n-slots", type=int)
    p.set_defaults(func=cmd_g2)
    return parser


def _join_delays(argv):
    # "--delays -200:200:21" would otherwise read the value as an option
    out = []
    it = iter(argv)
    for a in it:
        if a == "--delays":
            value = next(it, None)
            out.append(a if value is None else f"--delays={value}")
        else:
            out.append(a)
    return out


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(_join_delays(sys.argv[1:] if argv is None else argv))
    try:
        return args.func(args)
    except FitError as exc:
        print(f"hombench: analysis failed: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"hombench: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ConfigError, SchemaError, FormatError, ValueError) as exc:
        print(f"hombench: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
