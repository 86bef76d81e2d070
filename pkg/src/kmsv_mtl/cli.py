"""Command line front end: ``kmsv-mtl {synth,fit,eval,report}``.

Exit codes: 0 success, 2 config/validation error, 3 data-format error,
4 numerical failure.
"""

import argparse
import csv
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import data as data_mod
from .errors import KmsvError, NumericalError
from .evaluation import (
    evaluate,
    export_spectrum,
    fmt,
    write_convergence_csv,
    write_metrics_csv,
    write_spectrum_csv,
)
from .experiment import ConfigError, build_dataset, fit_method, iter_runs, load_config, resolve_config
from .tasks import ModelParams

log = logging.getLogger("kmsv_mtl")

CONFIG_NAME = "config.yaml"
SUMMARY_COLUMNS = [
    "method", "train_fraction", "repetition", "weight",
    "nmse_mean", "nmse_pooled", "ew", "runtime", "config_hash",
]


def _atomic_text(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _write_rows(path, header, rows):
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    os.replace(tmp, path)


def _read_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _config(args, out=None):
    out = out or args.out
    if args.config:
        raw = load_config(args.config)
    elif out and (Path(out) / CONFIG_NAME).exists():
        raw = load_config(Path(out) / CONFIG_NAME)
    else:
        raw = {}
    return resolve_config(raw, seed=args.seed, output_dir=out,
                          standardize=True if args.standardize else None)


def _prepare_out(cfg):
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _atomic_text(out / CONFIG_NAME, cfg.dump_yaml())
    except OSError as exc:
        raise ConfigError(f"cannot write to output directory {out}: {exc}") from None
    return out


def cmd_synth(args):
    cfg = _config(args)
    if cfg.dataset["kind"] != "synthetic":
        raise ConfigError("synth needs a synthetic dataset section")
    out = _prepare_out(cfg)
    dataset, W_star = build_dataset(cfg)
    data_mod.write_csv_tasks(dataset, out / "tasks.csv.tmp")
    os.replace(out / "tasks.csv.tmp", out / "tasks.csv")
    _write_rows(
        out / "wstar.csv",
        [f"t{j}" for j in range(W_star.shape[1])],
        [[fmt(v) for v in row] for row in W_star],
    )
    p = cfg.dataset["synthetic"]
    print(f"wrote {out / 'tasks.csv'}: T={dataset.T} d={dataset.d} n={p['n']} "
          f"rank={p['rank']} seed={cfg.seed}")
    print(f"wrote {out / 'wstar.csv'}: {W_star.shape[0]}x{W_star.shape[1]}")
    return 0


def _run_dir(out, method, run):
    return Path(out) / "fits" / method / run.tag


def _save_fit(run_dir, params, report, weight, spec, dataset_names):
    tmp = run_dir.with_name(run_dir.name + f".tmp{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    np.savetxt(tmp / "W.csv", params.W, delimiter=",", fmt="%.17g")
    c_max = max(len(b) for b in params.b)
    with open(tmp / "b.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["task_id", "width"] + [f"b{j + 1}" for j in range(c_max)])
        for name, b in zip(dataset_names, params.b):
            w.writerow([name, len(b)] + [fmt(v) for v in b] + [""] * (c_max - len(b)))
    write_convergence_csv(tmp / "convergence.csv", report.objective_trace)
    meta = {
        "method": spec.name,
        "weight": weight,
        "k": spec.k,
        "iterations": report.iterations,
        "converged": report.converged,
        "initial_objective": report.initial_objective,
        "final_objective": report.objective_trace[-1],
        "eps": report.eps,
        "wall_time": report.wall_time,
    }
    (tmp / "fit.json").write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    if run_dir.exists():
        shutil.rmtree(run_dir)
    os.replace(tmp, run_dir)
    return meta


def _load_params(run_dir, dataset):
    run_dir = Path(run_dir)
    if not (run_dir / "W.csv").exists():
        raise ConfigError(f"no fitted model in {run_dir}; run 'fit' first")
    W = np.loadtxt(run_dir / "W.csv", delimiter=",", ndmin=2)
    bs = []
    for row in _read_rows(run_dir / "b.csv"):
        width = int(row["width"])
        bs.append([float(row[f"b{j + 1}"]) for j in range(width)])
    if W.shape != (dataset.d, dataset.c) or len(bs) != dataset.T:
        raise ConfigError(f"model in {run_dir} does not match the configured dataset")
    return ModelParams(W, tuple(bs), tuple(dataset.blocks()))


def cmd_fit(args):
    cfg = _config(args)
    out = _prepare_out(cfg)
    dataset, _ = build_dataset(cfg)
    jobs = [(run, spec) for run in iter_runs(cfg, dataset) for spec in cfg.methods]

    def work(job):
        run, spec = job
        run_dir = _run_dir(out, spec.name, run)
        run_dir.parent.mkdir(parents=True, exist_ok=True)
        try:
            params, report, weight = fit_method(spec, run.train, run.seed, cfg.tuning_fraction)
        except NumericalError as exc:
            run_dir.mkdir(exist_ok=True)
            (run_dir / "FAILED").write_text(str(exc) + "\n", encoding="utf-8")
            return spec.name, run, None, str(exc)
        return spec.name, run, _save_fit(run_dir, params, report, weight, spec, run.train.names), None

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    rows, failures = [], 0
    for method, run, meta, err in results:
        if err:
            failures += 1
            log.error("fit %s %s failed: %s", method, run.tag, err)
            rows.append([method, fmt(run.train_fraction), run.repetition, "", "", "", "failed"])
            continue
        rows.append([method, fmt(run.train_fraction), run.repetition, fmt(meta["weight"]),
                     meta["iterations"], int(meta["converged"]), fmt(meta["final_objective"])])
        print(f"{method:9s} {run.tag:18s} weight={meta['weight']:<8g} "
              f"iterations={meta['iterations']:<4d} converged={meta['converged']}")
    _write_rows(out / "fit_summary.csv",
                ["method", "train_fraction", "repetition", "weight", "iterations",
                 "converged", "final_objective"], rows)
    if failures:
        print(f"{failures} fit(s) failed; see FAILED markers under {out / 'fits'}", file=sys.stderr)
        return 4
    return 0


def cmd_eval(args):
    cfg = _config(args)
    out = Path(cfg.output_dir)
    dataset, W_star = build_dataset(cfg)
    config_hash = cfg.config_hash()
    rows, spectra, curves, ratio_series = [], {}, {}, {}
    for run in iter_runs(cfg, dataset):
        for spec in cfg.methods:
            run_dir = _run_dir(out, spec.name, run)
            if (run_dir / "FAILED").exists():
                raise NumericalError(f"fit in {run_dir} failed; nothing to evaluate")
            params = _load_params(run_dir, run.train)
            metrics = evaluate(params, run.test, W_star)
            write_metrics_csv(run_dir / "metrics.csv", metrics)
            spectrum = export_spectrum(params)
            write_spectrum_csv(run_dir / "spectrum.csv", spectrum)
            meta = json.loads((run_dir / "fit.json").read_text(encoding="utf-8"))
            runtime = fmt(meta["wall_time"]) if args.timing else ""
            rows.append([spec.name, fmt(run.train_fraction), run.repetition, fmt(meta["weight"]),
                         fmt(metrics.nmse_mean), fmt(metrics.nmse_pooled), fmt(metrics.ew),
                         runtime, config_hash])
            ratio_series.setdefault(spec.name, {}).setdefault(run.train_fraction, []).append(
                metrics.nmse_mean)
            if run.repetition == 0:
                label = f"{spec.name} @ {run.train_fraction:g}"
                spectra[label] = spectrum
                series = [float(r["objective"]) for r in _read_rows(run_dir / "convergence.csv")]
                if spec.name in ("kmsv", "kmsv-new", "trace"):
                    curves[label] = series
            ew = "" if metrics.ew is None else f" ew={metrics.ew:.6g}"
            print(f"{spec.name:9s} {run.tag:18s} nmse={metrics.nmse_mean:.6g}{ew}")
    _write_rows(out / "summary.csv", SUMMARY_COLUMNS, rows)
    if args.plot:
        from . import plots

        plots.plot_nmse_vs_ratio(
            out / "nmse_vs_ratio.svg",
            {m: [(f, float(np.mean(v))) for f, v in d.items()] for m, d in ratio_series.items()},
        )
        plots.plot_spectrum(out / "spectrum.svg", spectra)
        plots.plot_convergence(out / "convergence.svg", curves)
    return 0


def aggregate_summary(rows):
    """Group summary rows by (method, train_fraction) with mean and sample std."""
    groups = {}
    for r in rows:
        groups.setdefault((r["method"], float(r["train_fraction"])), []).append(r)
    out = []
    for (method, frac), grp in groups.items():
        nm = np.array([float(r["nmse_mean"]) for r in grp])
        pooled = np.array([float(r["nmse_pooled"]) for r in grp])
        ews = [float(r["ew"]) for r in grp if r["ew"] != ""]

        def std(x):
            return float(np.std(x, ddof=1)) if len(x) > 1 else None

        out.append([
            method, fmt(frac), len(grp), fmt(nm.mean()), fmt(std(nm)), fmt(pooled.mean()),
            fmt(np.mean(ews)) if ews else "", fmt(std(np.array(ews))) if ews else "",
        ])
    return out


REPORT_COLUMNS = ["method", "train_fraction", "runs", "nmse_mean", "nmse_std",
                  "nmse_pooled_mean", "ew_mean", "ew_std"]


def cmd_report(args):
    out = Path(args.out or "runs")
    summary = out / "summary.csv"
    if not summary.exists():
        raise ConfigError(f"{summary} not found; run 'eval' first")
    rows = aggregate_summary(_read_rows(summary))
    _write_rows(out / "report.csv", REPORT_COLUMNS, rows)
    print(f"{'method':9s} {'ratio':>6s} {'runs':>4s} {'nMSE (std)':>24s} {'E.W.':>12s}")
    for method, frac, runs, nm, nsd, _, ew, _ in rows:
        spread = f"{float(nm):.4f}({float(nsd):.4f})" if nsd else f"{float(nm):.4f}"
        print(f"{method:9s} {frac:>6s} {runs:>4d} {spread:>24s} "
              f"{(f'{float(ew):.4g}' if ew else '-'):>12s}")
    return 0


def _common_flags(suppress):
    # subcommand copies must not overwrite values given before the subcommand
    p = argparse.ArgumentParser(add_help=False)
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    flag_kw = kw if suppress else {"default": False}
    p.add_argument("--config", help="YAML or JSON experiment config", **kw)
    p.add_argument("--seed", type=int, help="override the config seed", **kw)
    p.add_argument("--out", help="output directory (default: config output_dir or ./runs)", **kw)
    p.add_argument("--plot", action="store_true", help="emit SVG figures (eval)", **flag_kw)
    p.add_argument("--threads", type=int, help="parallel fits",
                   **(kw if suppress else {"default": 1}))
    p.add_argument("--standardize", action="store_true", help="z-score features", **flag_kw)
    p.add_argument("--timing", action="store_true",
                   help="record wall time in summary.csv (breaks byte-identical output)",
                   **flag_kw)
    p.add_argument("-v", "--verbose", action="store_true", **flag_kw)
    return p


def build_parser():
    common = _common_flags(suppress=False)
    sub_common = _common_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="kmsv-mtl", description="Multi-task regression with k-smallest singular value penalties",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, helptext in [
        ("synth", cmd_synth, "generate a synthetic low-rank task CSV and W*"),
        ("fit", cmd_fit, "fit every configured method/ratio/repetition"),
        ("eval", cmd_eval, "evaluate fitted models and write metric CSVs"),
        ("report", cmd_report, "aggregate summary.csv across repetitions"),
    ]:
        p = sub.add_parser(name, help=helptext, parents=[sub_common])
        p.set_defaults(func=fn)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except KmsvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
