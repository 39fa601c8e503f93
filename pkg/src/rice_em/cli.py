"""Command-line driver: simulate, fit, metrics, and maps subcommands.

Voxels are fitted independently by a process pool; results are collected,
sorted by voxel id, and only then written, so the output bytes do not
depend on the worker count or scheduling.  Worker counts and wall times
go to the console, never into result files.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import io
from .baselines import BaselineReport, fit_ls, fit_rician_direct, fit_wls
from .em import FitOptions, PriorSpec, fit_map, fit_mle
from .io import ParseError, parse_number, read_dataset, read_results, write_dataset, write_results
from .metrics import mse_report, raw_snr_curve, signal_curve, snr_curve
from .synth import (
    DEFAULT_S0,
    DEFAULT_SEED,
    GroundTruth,
    VoxelData,
    default_knots,
    derive_seed,
    fixture_tensor,
    make_scheme,
    synthesize,
)
from .tensor import TensorParams, coefficient_count

__all__ = ["main", "entrypoint"]

METHODS = ("mle", "map", "ls", "ls-trunc", "wls", "wls-trunc", "rician-direct")
TRUNC_DEFAULT_CUTOFF = 1000.0


class CliError(Exception):
    def __init__(self, message: str, code: int = 2):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    # argparse default prints usage + message; the contract is a single
    # machine-parsable line on stderr
    def error(self, message):
        raise CliError(message, 2)


# --- config files --------------------------------------------------------


def load_config(path) -> dict[str, str]:
    """Flat key = value file; '#' starts a comment, blank lines ignored."""
    entries: dict[str, str] = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc.strerror or exc}", 2) from None
    for line_no, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}: line {line_no}: expected 'key = value'", 2)
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise CliError(f"{path}: line {line_no}: empty key", 2)
        if key in entries:
            raise CliError(f"{path}: line {line_no}: duplicate key {key!r}", 2)
        entries[key] = value
    return entries


def _cfg_float(cfg, key):
    try:
        return parse_number(cfg[key])
    except ValueError:
        raise CliError(f"config field {key!r}: {cfg[key]!r} is not a number", 2) from None


def _cfg_int(cfg, key):
    try:
        return int(cfg[key])
    except ValueError:
        raise CliError(f"config field {key!r}: {cfg[key]!r} is not an integer", 2) from None


def _cfg_bool(cfg, key):
    text = cfg[key].strip().lower()
    if text in ("true", "yes", "1", "on"):
        return True
    if text in ("false", "no", "0", "off"):
        return False
    raise CliError(f"config field {key!r}: {cfg[key]!r} is not a boolean", 2)


# --- simulate ------------------------------------------------------------

_SIMULATE_KEYS = {
    "order", "noise", "s0", "seed", "ensemble", "voxels",
    "n_directions", "repetitions", "knots", "zero_floor", "out",
}


def _ensemble_path(pattern: str, index: int, count: int) -> str:
    if "{i}" in pattern:
        return pattern.replace("{i}", f"{index:0{max(3, len(str(count - 1)))}d}")
    root, ext = os.path.splitext(pattern)
    width = max(3, len(str(count - 1)))
    return f"{root}-{index:0{width}d}{ext or '.csv'}"


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    unknown = set(cfg) - _SIMULATE_KEYS
    if unknown:
        raise CliError(f"config field {sorted(unknown)[0]!r} is not recognized", 2)

    order = _cfg_int(cfg, "order") if "order" in cfg else 2
    if order not in (2, 4):
        raise CliError(f"config field 'order': must be 2 or 4, got {order}", 2)
    noise_text = cfg.get("noise", "high")
    if noise_text in ("high", "low"):
        noise = noise_text
    else:
        noise = _cfg_float(cfg, "noise")
    s0 = _cfg_float(cfg, "s0") if "s0" in cfg else DEFAULT_S0
    seed = args.seed if args.seed is not None else (_cfg_int(cfg, "seed") if "seed" in cfg else DEFAULT_SEED)
    ensemble = _cfg_int(cfg, "ensemble") if "ensemble" in cfg else 1
    voxels = _cfg_int(cfg, "voxels") if "voxels" in cfg else 1
    if ensemble < 1 or voxels < 1:
        raise CliError("config fields 'ensemble' and 'voxels' must be >= 1", 2)
    n_directions = _cfg_int(cfg, "n_directions") if "n_directions" in cfg else 32
    repetitions = _cfg_int(cfg, "repetitions") if "repetitions" in cfg else 3
    if "knots" in cfg:
        try:
            knots = np.array([parse_number(tok) for tok in cfg["knots"].split()])
        except ValueError:
            raise CliError("config field 'knots': expected whitespace-separated numbers", 2) from None
        if knots.size == 0:
            raise CliError("config field 'knots': expected whitespace-separated numbers", 2)
    else:
        knots = default_knots()
    zero_floor = _cfg_float(cfg, "zero_floor") if "zero_floor" in cfg else None
    out = args.out or cfg.get("out")
    if not out:
        raise CliError("config field 'out' is required (or pass --out)", 2)

    try:
        scheme = make_scheme(n_directions, knots, repetitions)
        from .synth import HIGH_NOISE_SIGMA_SQ, LOW_NOISE_SIGMA_SQ

        sigma_sq = {"high": HIGH_NOISE_SIGMA_SQ, "low": LOW_NOISE_SIGMA_SQ}.get(noise, noise)
        truth = GroundTruth(
            theta_true=fixture_tensor(order), s0_true=s0,
            sigma_sq_true=float(sigma_sq), seed=seed,
        )
    except ValueError as exc:
        raise CliError(str(exc), 2) from None

    def build_voxels(file_seed: int) -> list[VoxelData]:
        if voxels == 1:
            return [synthesize(scheme, truth, seed=file_seed, zero_floor=zero_floor, voxel_id=0)]
        return [
            synthesize(
                scheme, truth, seed=derive_seed(file_seed, vid),
                zero_floor=zero_floor, voxel_id=vid,
            )
            for vid in range(voxels)
        ]

    paths = []
    try:
        if ensemble == 1:
            write_dataset(out, scheme, build_voxels(seed), truth=truth, seed=seed)
            paths.append(out)
        else:
            for i in range(ensemble):
                path = _ensemble_path(out, i, ensemble)
                write_dataset(path, scheme, build_voxels(derive_seed(seed, i)), truth=truth, seed=seed)
                paths.append(path)
    except OSError as exc:
        raise CliError(f"cannot write {exc.filename or out}: {exc.strerror or exc}", 1) from None

    snr_b0 = s0 / math.sqrt(truth.sigma_sq_true)
    print(
        f"wrote {len(paths)} dataset file(s): {voxels} voxel(s) x {scheme.size} rows, "
        f"{scheme.knots.size} knots, SNR at b=0 {snr_b0:.2f}"
    )
    for p in paths[:4]:
        print(f"  {p}")
    if len(paths) > 4:
        print(f"  ... and {len(paths) - 4} more")
    return 0


# --- fit -----------------------------------------------------------------

_FIT_OPTION_KEYS = {
    "alpha", "max_em_iters", "max_scoring_iters", "tol_theta", "tol_loglik",
    "scoring_tol", "anneal_threshold", "init_method", "init_b_cutoff",
    "positivity_projection", "positivity_floor",
}
_PRIOR_KEYS = {"c1", "c2", "omega_scale"}


def _fit_options_from(cfg: dict[str, str], args) -> FitOptions:
    kwargs = {}
    for key in _FIT_OPTION_KEYS & set(cfg):
        if key in ("max_em_iters", "max_scoring_iters"):
            kwargs[key] = _cfg_int(cfg, key)
        elif key == "init_method":
            kwargs[key] = cfg[key].strip()
        elif key == "positivity_projection":
            kwargs[key] = _cfg_bool(cfg, key)
        elif key == "init_b_cutoff":
            text = cfg[key].strip().lower()
            kwargs[key] = None if text in ("none", "") else _cfg_float(cfg, key)
        else:
            kwargs[key] = _cfg_float(cfg, key)
    if args.alpha is not None:
        kwargs["alpha"] = args.alpha
    if args.b_cutoff is not None:
        kwargs["init_b_cutoff"] = args.b_cutoff if args.b_cutoff > 0 else None
    if args.positivity_project:
        kwargs["positivity_projection"] = True
    try:
        return FitOptions(**kwargs)
    except ValueError as exc:
        raise CliError(str(exc), 2) from None


def _prior_from(cfg: dict[str, str], args, order: int) -> PriorSpec:
    c1 = args.c1 if args.c1 is not None else (_cfg_float(cfg, "c1") if "c1" in cfg else 1e-6)
    c2 = args.c2 if args.c2 is not None else (_cfg_float(cfg, "c2") if "c2" in cfg else 1e-6)
    scale = args.omega_scale
    if scale is None and "omega_scale" in cfg:
        scale = _cfg_float(cfg, "omega_scale")
    omega = None
    if scale is not None and scale != 0.0:
        omega = float(scale) * np.eye(coefficient_count(order))
    try:
        return PriorSpec(omega=omega, c1=c1, c2=c2)
    except ValueError as exc:
        raise CliError(str(exc), 2) from None


def _fit_one(payload):
    """Worker body: fit one voxel; must stay top-level for pickling."""
    scheme, vid, y, method, order, options, prior, cutoff = payload
    t0 = time.perf_counter()
    if method == "mle":
        rep = fit_mle(scheme, y, order, options)
    elif method == "map":
        rep = fit_map(scheme, y, prior=prior, order=order, options=options)
    elif method == "ls":
        rep = fit_ls(scheme, y, order, b_cutoff=None)
    elif method == "ls-trunc":
        rep = fit_ls(scheme, y, order, b_cutoff=cutoff)
    elif method == "wls":
        rep = fit_wls(scheme, y, order, b_cutoff=None)
    elif method == "wls-trunc":
        rep = fit_wls(scheme, y, order, b_cutoff=cutoff)
    elif method == "rician-direct":
        rep = fit_rician_direct(
            scheme, y, order=order,
            init_method=options.init_method, init_b_cutoff=options.init_b_cutoff,
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    return vid, rep, time.perf_counter() - t0


def _worker_count(args) -> int:
    if args.workers is not None:
        n = args.workers
    else:
        env = os.environ.get("RICE_EM_WORKERS", "").strip()
        if env:
            try:
                n = int(env)
            except ValueError:
                raise CliError(f"RICE_EM_WORKERS must be an integer, got {env!r}", 2) from None
        else:
            n = os.cpu_count() or 1
    if n < 1:
        raise CliError("worker count must be >= 1", 2)
    return n


def cmd_fit(args) -> int:
    if args.order not in (2, 4):
        raise CliError(f"order must be 2 or 4, got {args.order}", 2)
    cfg = load_config(args.config) if args.config else {}
    unknown = set(cfg) - _FIT_OPTION_KEYS - _PRIOR_KEYS
    if unknown:
        raise CliError(f"config field {sorted(unknown)[0]!r} is not recognized", 2)
    options = _fit_options_from(cfg, args)
    prior = _prior_from(cfg, args, args.order)
    cutoff = args.b_cutoff if args.b_cutoff is not None else TRUNC_DEFAULT_CUTOFF
    out = args.out
    if not out:
        raise CliError("--out is required", 2)

    dataset = read_dataset(args.dataset)
    workers = _worker_count(args)
    payloads = [
        (dataset.scheme, vox.voxel_id, vox.y, args.method, args.order, options, prior, cutoff)
        for vox in dataset.voxels
    ]

    t0 = time.perf_counter()
    try:
        if workers == 1 or len(payloads) == 1:
            outcome = [_fit_one(p) for p in payloads]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcome = list(pool.map(_fit_one, payloads))
    except ValueError as exc:
        raise CliError(str(exc), 1) from None
    total = time.perf_counter() - t0

    pairs = sorted(((vid, rep) for vid, rep, _ in outcome), key=lambda p: p[0])
    try:
        write_results(out, dataset.scheme, pairs, truth=dataset.truth)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc.strerror or exc}", 1) from None

    bad = 0
    for vid, rep, wall in sorted(outcome, key=lambda o: o[0]):
        ok = rep.converged or "degenerate" in rep.flags
        bad += 0 if ok else 1
        status = "converged" if rep.converged else ",".join(rep.flags) or "non-converged"
        print(f"voxel {vid}: {wall:.3f} s ({status})")
    print(
        f"fitted {len(pairs)} voxel(s) with {args.method} order {args.order} "
        f"using {workers} worker(s) in {total:.3f} s -> {out}"
    )
    if bad:
        print(f"error: {bad} voxel(s) neither converged nor degenerate", file=sys.stderr)
        return 1
    return 0


# --- metrics -------------------------------------------------------------


def _schemes_equal(a, b) -> bool:
    return (
        np.array_equal(a.knots, b.knots)
        and np.array_equal(a.directions, b.directions)
        and a.repetitions == b.repetitions
    )


def _row_as_fit(row: io.ResultRow) -> BaselineReport:
    return BaselineReport(
        method=row.method, order=row.order,
        theta=TensorParams(row.order, row.theta),
        s0_sq=row.s0_sq, sigma_sq=row.sigma_sq,
        converged=row.converged, iterations=row.iterations,
    )


def _metrics_header(fh, kind: str) -> None:
    fh.write("# " + json.dumps({"format": "rice-em-metrics", "kind": kind, "version": 1}, sort_keys=True) + "\n")


def cmd_metrics(args) -> int:
    if not args.results:
        raise CliError("at least one --results file is required", 2)
    results = [read_results(p) for p in args.results]
    datasets = [read_dataset(p) for p in args.datasets] if args.datasets else []

    scheme = results[0].scheme
    for r in results[1:]:
        if not _schemes_equal(r.scheme, scheme):
            raise CliError("result files use different acquisition schemes", 2)
    for d in datasets:
        if not _schemes_equal(d.scheme, scheme):
            raise CliError("dataset scheme differs from result scheme", 2)

    dataset_ids = {v.voxel_id for d in datasets for v in d.voxels}
    if datasets:
        missing = sorted(
            {row.voxel_id for r in results for row in r.rows} - dataset_ids
        )
        if missing:
            raise CliError(
                f"result voxel ids missing from datasets: {missing[:10]}", 2
            )

    truths = [d.truth for d in datasets if d.truth is not None]
    truth = None
    if truths:
        first = truths[0]
        for other in truths[1:]:
            if (
                other.s0_true != first.s0_true
                or other.sigma_sq_true != first.sigma_sq_true
                or other.theta_true.order != first.theta_true.order
                or not np.array_equal(other.theta_true.theta, first.theta_true.theta)
            ):
                raise CliError("datasets carry different ground truths", 2)
        truth = first

    os.makedirs(args.out, exist_ok=True)
    written = []

    # fitted SNR curves, one row per (method, voxel, knot)
    path = os.path.join(args.out, "snr_fitted.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _metrics_header(fh, "snr-fitted")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "voxel_id", "b", "snr"])
        for r in sorted(results, key=lambda r: r.method):
            for row in sorted(r.rows, key=lambda row: row.voxel_id):
                curve = snr_curve(_row_as_fit(row), scheme)
                for b, s in zip(curve.knots, curve.snr):
                    writer.writerow([row.method, row.voxel_id, io.format_float(b), io.format_float(s)])
    written.append(path)

    # raw moment-based curves from the datasets
    if datasets:
        path = os.path.join(args.out, "snr_raw.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            _metrics_header(fh, "snr-raw")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["voxel_id", "b", "snr"])
            all_voxels = sorted(
                (v for d in datasets for v in d.voxels), key=lambda v: v.voxel_id
            )
            for vox in all_voxels:
                curve = raw_snr_curve(vox, scheme)
                for b, s in zip(curve.knots, curve.snr):
                    writer.writerow([vox.voxel_id, io.format_float(b), io.format_float(s)])
        written.append(path)

    # per-direction fitted signal, ensemble mean per method and knot
    path = os.path.join(args.out, "signal_curves.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        _metrics_header(fh, "signal-curves")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["method", "b", "direction_index", "mean_signal"])
        by_method: dict[str, list] = {}
        for r in results:
            by_method.setdefault(r.method, []).extend(_row_as_fit(row) for row in r.rows)
        for method in sorted(by_method):
            fits = by_method[method]
            for b in scheme.knots:
                mean_curve = np.mean(
                    [signal_curve(fit, scheme, float(b)) for fit in fits], axis=0
                )
                for g, val in enumerate(mean_curve):
                    writer.writerow([method, io.format_float(float(b)), g, io.format_float(float(val))])
    written.append(path)

    # MSE table needs the ground truth
    if truth is None:
        print("warning: no ground truth in datasets; MSE table omitted", file=sys.stderr)
    else:
        order_ok = all(r.order == truth.theta_true.order for r in results)
        if not order_ok:
            raise CliError("result order differs from ground-truth order", 2)
        table = mse_report(
            {m: by_method[m] for m in sorted(by_method)}, truth, scheme
        )
        d = coefficient_count(truth.theta_true.order)
        path = os.path.join(args.out, "mse.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            _metrics_header(fh, "mse")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["method", "n_fits", "theta_mse_mean", "sigma_sq_mse"]
                + [f"theta_mse_{i}" for i in range(d)]
                + [f"signal_mse_b{b:g}" for b in scheme.knots]
            )
            for method in sorted(table.methods):
                entry = table.methods[method]
                writer.writerow(
                    [method, len(by_method[method]),
                     io.format_float(entry.theta_mse_mean),
                     io.format_float(entry.sigma_sq_mse)]
                    + [io.format_float(v) for v in entry.theta_mse]
                    + [io.format_float(v) for v in entry.signal_mse]
                )
        written.append(path)

    for p in written:
        print(f"wrote {p}")
    return 0


# --- maps ----------------------------------------------------------------


def _parse_geometry(text: str) -> tuple[int, int]:
    parts = text.lower().replace("×", "x").split("x")
    if len(parts) != 2:
        raise CliError(f"geometry must look like WIDTHxHEIGHT, got {text!r}", 2)
    try:
        w, h = int(parts[0]), int(parts[1])
    except ValueError:
        raise CliError(f"geometry must look like WIDTHxHEIGHT, got {text!r}", 2) from None
    if w < 1 or h < 1:
        raise CliError("geometry dimensions must be >= 1", 2)
    return w, h


def _write_pgm(path, grid: np.ndarray) -> None:
    h, w = grid.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(grid.astype(np.uint8).tobytes())


def cmd_maps(args) -> int:
    result = read_results(args.results)
    w, h = _parse_geometry(args.geometry)
    rows = {row.voxel_id: row for row in result.rows}
    wanted = set(range(w * h))
    missing = sorted(wanted - set(rows))
    if missing:
        raise CliError(f"geometry misses voxel ids: {missing[:20]}", 2)
    extra = sorted(set(rows) - wanted)
    if extra:
        raise CliError(f"result has voxel ids outside the geometry: {extra[:20]}", 2)

    os.makedirs(args.out, exist_ok=True)

    def cell_metric(row: io.ResultRow, metric: str) -> float | None:
        if "degenerate" in row.flags:
            return None
        if metric == "fa":
            return row.fa
        if metric == "md":
            return row.md
        return math.sqrt(row.sigma_sq)

    for metric in ("fa", "md", "sigma"):
        values = np.full((h, w), math.nan)
        flagged: list[list[int]] = []
        for vid in range(w * h):
            r, c = divmod(vid, w)
            val = cell_metric(rows[vid], metric)
            if val is None:
                flagged.append([r, c])
            else:
                values[r, c] = val
        valid = np.isfinite(values)
        vmin = float(np.min(values[valid])) if valid.any() else math.nan
        vmax = float(np.max(values[valid])) if valid.any() else math.nan

        csv_path = os.path.join(args.out, f"{metric}.csv")
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            _metrics_header(fh, f"map-{metric}")
            writer = csv.writer(fh, lineterminator="\n")
            for r in range(h):
                writer.writerow(
                    ["" if not valid[r, c] else io.format_float(values[r, c]) for c in range(w)]
                )

        # flagged cells encode to 0; equal-valued grids encode to 255 so a
        # constant map stays distinguishable from a flagged one
        grid = np.zeros((h, w), dtype=np.uint8)
        if valid.any():
            if vmax > vmin:
                scaled = np.round(255.0 * (values - vmin) / (vmax - vmin))
                grid[valid] = scaled[valid].astype(np.uint8)
                grid[~valid] = 0
            else:
                grid[valid] = 255
        pgm_path = os.path.join(args.out, f"{metric}.pgm")
        _write_pgm(pgm_path, grid)

        sidecar = {
            "metric": metric,
            "width": w,
            "height": h,
            "min": None if math.isnan(vmin) else vmin,
            "max": None if math.isnan(vmax) else vmax,
            "flagged_cells": flagged,
            "encoding": "linear min-max to [0, 255]; flagged cells encode 0",
        }
        json_path = os.path.join(args.out, f"{metric}.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(sidecar, fh, sort_keys=True, indent=2)
            fh.write("\n")
        print(f"wrote {csv_path}, {pgm_path}, {json_path}")
    return 0


# --- entry ---------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="rice-em", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="write synthetic dataset files from a config")
    p_sim.add_argument("config", help="flat key = value config file")
    p_sim.add_argument("--seed", type=int, default=None, help="master seed override")
    p_sim.add_argument("--out", default=None, help="output path override")
    p_sim.set_defaults(func=cmd_simulate)

    p_fit = sub.add_parser("fit", help="fit every voxel of a dataset")
    p_fit.add_argument("dataset", help="dataset CSV path")
    p_fit.add_argument("--method", required=True, choices=METHODS)
    p_fit.add_argument("--order", type=int, default=2)
    p_fit.add_argument("--config", default=None, help="fit options config file")
    p_fit.add_argument("--alpha", type=float, default=None)
    p_fit.add_argument(
        "--b-cutoff", type=float, default=None,
        help="truncation cutoff for *-trunc methods and the initializer; 0 disables",
    )
    p_fit.add_argument("--workers", type=int, default=None)
    p_fit.add_argument("--omega-scale", type=float, default=None, help="MAP: omega = scale * I")
    p_fit.add_argument("--c1", type=float, default=None)
    p_fit.add_argument("--c2", type=float, default=None)
    p_fit.add_argument("--positivity-project", action="store_true")
    p_fit.add_argument("--out", required=True)
    p_fit.set_defaults(func=cmd_fit)

    p_met = sub.add_parser("metrics", help="SNR, MSE, and signal-curve reports")
    p_met.add_argument("--results", nargs="+", required=True)
    p_met.add_argument("--datasets", nargs="*", default=[])
    p_met.add_argument("--out", required=True, help="output directory")
    p_met.set_defaults(func=cmd_metrics)

    p_map = sub.add_parser("maps", help="FA/MD/sigma grids and PGM images")
    p_map.add_argument("results", help="result CSV path")
    p_map.add_argument("--geometry", required=True, help="WIDTHxHEIGHT voxel-id layout")
    p_map.add_argument("--out", required=True, help="output directory")
    p_map.set_defaults(func=cmd_maps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return exc.code
    except ParseError as exc:
        print(f"error: {str(exc).splitlines()[0]}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = getattr(exc, "filename", None)
        detail = exc.strerror or str(exc)
        print(f"error: {detail}" + (f": {name}" if name else ""), file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
