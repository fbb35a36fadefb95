"""``gsv-interp`` command line.

Data goes to stdout (JSON reports, CSV, metric lines) and diagnostics to
stderr.  Exit status: 0 on success, 1 when solver work failed, 2 for usage
or input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import _kernels
from .graphmodel import checkerboard_partition
from .imaging import (
    PGMError,
    PatchGrid,
    load_pgm,
    psnr,
    save_pgm,
    ssim,
)
from .linalg import LinalgError
from .mapsolver import dr_run, perturbed_interpolate
from .modelfile import ModelFileError, load_model, save_model
from .pipeline import MODES, InterpModel, build_graphs, interpolate_image, prepare_patch
from .tuner import PatchDataset, TrainConfig, default_tunables, select_tunables, tune, write_history
from .verify import format_table, run_checks

log = logging.getLogger("gsv_interp")


class UsageError(Exception):
    """Bad arguments or unreadable inputs (exit status 2)."""


def _setup_logging():
    level = os.environ.get("GSV_INTERP_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def _read_image(path):
    try:
        return load_pgm(path)
    except PGMError as exc:
        raise UsageError(f"{path}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror or exc}") from None


def _read_model(path):
    if path is None:
        return InterpModel()
    try:
        return load_model(path)
    except ModelFileError as exc:
        raise UsageError(f"{path}: {exc}") from None
    except OSError as exc:
        raise UsageError(f"{path}: {exc.strerror or exc}") from None


def sidecar_path(output):
    p = Path(output)
    return p.with_name(p.stem + ".mask" + p.suffix)


def metric_line(a, b):
    return f"{psnr(a, b):.2f} | {ssim(a, b):.4f}"


def cmd_mask(args):
    img = _read_image(args.input)
    part = checkerboard_partition(img.width, img.height)
    px = np.array(img.pixels)
    px[~part.mask] = 0.0
    save_pgm(args.output, px)
    mask_path = args.mask_out or sidecar_path(args.output)
    save_pgm(mask_path, part.mask.astype(np.float64))
    log.info("wrote %s and mask %s", args.output, mask_path)
    return 0


def _load_mask(args, img):
    path = args.mask
    if path is None:
        guess = sidecar_path(args.input)
        path = guess if guess.exists() else None
    if path is None:
        return checkerboard_partition(img.width, img.height).mask
    mask = np.asarray(_read_image(path)) >= 0.5
    if mask.shape != img.shape:
        raise UsageError(f"mask {path} is {mask.shape}, image is {img.shape}")
    return mask


def _grid(args):
    try:
        return PatchGrid(args.patch_size, args.stride)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_interpolate(args):
    img = _read_image(args.input)
    model = _read_model(args.model)
    mask = _load_mask(args, img)
    grid = _grid(args)
    if min(img.shape) < 2:
        raise UsageError(f"image {img.shape} is too small")
    out, report = interpolate_image(img, mask, model, args.mode, grid, threads=args.threads)
    save_pgm(args.output, out)
    report = {"input": str(args.input), "output": str(args.output), **report}
    if args.truth is not None:
        truth = _read_image(args.truth)
        if truth.shape != out.shape:
            raise UsageError(f"truth {truth.shape} does not match image {out.shape}")
        report["psnr"] = psnr(out, truth)
        report["ssim"] = ssim(out, truth)
        report["psnr_ssim"] = metric_line(out, truth)
    json.dump(report, sys.stdout, indent=2)
    sys.stdout.write("\n")
    for f in report["failures"]:
        print(f"patch ({f['row']}, {f['col']}) failed: {f['error']}", file=sys.stderr)
    return 1 if report["failures"] else 0


def _pgm_dir(path):
    d = Path(path)
    if not d.is_dir():
        raise UsageError(f"{path} is not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in (".pgm", ".pnm"))
    if not files:
        raise UsageError(f"{path} contains no PGM images")
    return [_read_image(p) for p in files]


def cmd_tune(args):
    train = _pgm_dir(args.train_dir)
    val = _pgm_dir(args.val_dir)
    model = _read_model(args.model_in)
    # only the crop size matters here; training crops are random, not tiled
    args.stride = min(args.stride, args.patch_size)
    grid = _grid(args)
    dataset = PatchDataset.from_images(train, val, grid, per_image=args.patches_per_image,
                                       seed=args.seed, edges=model.edges)
    if args.tunables:
        try:
            tunables = select_tunables([n.strip() for n in args.tunables.split(",")], model)
        except KeyError as exc:
            raise UsageError(str(exc.args[0])) from None
    else:
        tunables = default_tunables(model)
    cfg = TrainConfig(max_epochs=args.epochs, seed=args.seed, workers=args.threads)
    tuned, history = tune(model, dataset, cfg, tunables)
    save_model(tuned, args.model_out)
    hist_path = args.history or Path(args.model_out).with_suffix(".history.csv")
    write_history(history, hist_path)
    print(json.dumps({"epochs": history[-1]["epoch"],
                      "baseline_val_mse": history[0]["val_mse"],
                      "val_mse": history[-1]["val_mse"],
                      "history": str(hist_path)}))
    return 0


def cmd_verify(args):
    results = run_checks(seed=args.seed)
    print(format_table(results))
    return 0 if all(r.passed for r in results) else 1


def cmd_metrics(args):
    a, b = _read_image(args.image), _read_image(args.reference)
    if a.shape != b.shape:
        raise UsageError(f"image shapes differ: {a.shape} vs {b.shape}")
    print(metric_line(a, b))
    return 0


def _bench_image(size, rng):
    r, c = np.mgrid[0:size, 0:size] / size
    base = 0.5 + 0.3 * np.sin(2 * np.pi * (r + 0.5 * c)) * np.cos(3 * np.pi * c)
    return np.clip(base + 0.02 * rng.standard_normal((size, size)), 0, 1)


def bench_rows(sizes, repeats=3, seed=0):
    """One row per patch size with per-iteration BiCG cost and DR timing."""
    rows = []
    for size in sizes:
        rng = np.random.default_rng([seed, size])
        px = _bench_image(size, rng)
        part = checkerboard_partition(size, size)
        model = replace(InterpModel(), gain_p=0.3, gain_l=0.3)
        prep = prepare_patch(part, px[part.mask], model.edges)
        p, lap = build_graphs(prep, model)
        bicg_best = dr_best = float("inf")
        for _ in range(repeats):
            trace = []
            t0 = time.perf_counter()
            perturbed_interpolate(prep.theta, p, prep.y, model.solver, trace=trace)
            t1 = time.perf_counter()
            dr_trace = []
            dr_run(prep.theta, p, lap, prep.y, model.solver, trace=dr_trace)
            t2 = time.perf_counter()
            bicg_best = min(bicg_best, t1 - t0)
            dr_best = min(dr_best, t2 - t1)
        iters = trace[0][1]
        rows.append({
            "size": size,
            "n_missing": part.N,
            "nnz": prep.theta.theta.nnz + p.p.nnz,
            "bicg_iters": iters,
            "bicg_ms": 1e3 * bicg_best,
            "bicg_ms_per_iter": 1e3 * bicg_best / max(iters, 1),
            "dr_ms": 1e3 * dr_best,
            "dr_bicg_iters": sum(t[1] for t in dr_trace if t[0] == "bicg"),
            "dr_cg_iters": sum(t[1] for t in dr_trace if t[0] == "cg"),
            "backend": _kernels.BACKEND,
        })
    return rows


def cmd_bench(args):
    if any(s < 4 or s % 2 for s in args.sizes):
        raise UsageError("sizes must be even and >= 4")
    rows = bench_rows(args.sizes, args.repeats, args.seed)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.items()})
    return 0


def cmd_init_model(args):
    save_model(InterpModel(), args.output)
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def build_parser():
    ap = _Parser(prog="gsv-interp", description="Graph-based image interpolation.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def grid_flags(p):
        p.add_argument("--patch-size", type=int, default=64)
        p.add_argument("--stride", type=int, default=48)

    p = sub.add_parser("mask", help="apply the checkerboard mask")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--mask-out", help="mask file (default: <output>.mask.pgm)")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("interpolate", help="fill the missing pixels of a masked image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--model", help="model JSON (default: zero-gain model)")
    p.add_argument("--mode", choices=MODES, default="dr")
    p.add_argument("--mask", help="mask PGM, nonzero = observed (default: sidecar or checkerboard)")
    p.add_argument("--truth", help="ground-truth image; adds PSNR and SSIM to the report")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    grid_flags(p)
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("tune", help="fit model parameters on image folders")
    p.add_argument("train_dir")
    p.add_argument("val_dir")
    p.add_argument("model_in")
    p.add_argument("model_out")
    p.add_argument("--history", help="CSV path (default: <model_out>.history.csv)")
    p.add_argument("--epochs", type=_positive_int, default=50)
    p.add_argument("--tunables", help="comma-separated subset, e.g. s,s2,mu")
    p.add_argument("--patches-per-image", type=_positive_int, default=4)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--seed", type=int, default=0)
    grid_flags(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("verify", help="run the dense-oracle self checks")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("metrics", help="print 'PSNR | SSIM' of an image against a reference")
    p.add_argument("image")
    p.add_argument("reference")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="time BiCG and DR per patch size (CSV)")
    p.add_argument("sizes", type=int, nargs="+")
    p.add_argument("--repeats", type=_positive_int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("init-model", help="write the zero-gain default model")
    p.add_argument("output")
    p.set_defaults(func=cmd_init_model)
    return ap


def main(argv=None):
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"gsv-interp: error: {exc}", file=sys.stderr)
        return 2
    except LinalgError as exc:
        print(f"gsv-interp: solver failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
