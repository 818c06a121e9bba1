"""Command-line interface.

Subcommands: ``simulate``, ``denoise``, ``evaluate``, ``integrate``,
``sweep``, ``detection-table`` and ``replay``. Stacks are read and written in
FSTK v1 (see :mod:`photongmrf.fstk`), tables as comma-separated text and
run manifests as flat ``key=value`` files.

Exit codes: 0 success, 2 usage error, 3 data validation error, 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import logging
import os
import shlex
import sys
import time
import warnings
from datetime import datetime, timezone

import numpy as np

from . import __version__, fstk
from .core import DataValidationError, NumericalError, as_stack, check_observation
from .distributions import RngStream
from .evaluation import (
    SWEEP_TARGETS,
    detection_table,
    integrate_and_threshold,
    make_scene,
    masked_nmse,
    nse_std,
    run_replicates,
)
from .observation import ObservationModel, scale_to_target, simulate
from .sampler import ADAPT_MODES, SHARING_MODES, SamplerConfig, run_chain
from .gmrf import XTILDE_FORMS

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
STREAM_MASK = 301
MANIFEST_NAME = "manifest.txt"

log = logging.getLogger("photongmrf")


# -- manifests ------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Ordered key=value record of one command run."""

    def __init__(self, command: str, argv):
        self.items: list[tuple[str, str]] = []
        self.add("engine_version", __version__)
        self.add("command", command)
        self.add("argv", shlex.join(argv))
        self.add("cwd", os.getcwd())
        self.add("started_utc", datetime.now(timezone.utc).isoformat(timespec="seconds"))
        self._t0 = time.perf_counter()

    def add(self, key, value):
        value = str(value)
        if "\n" in value or "=" in key:
            raise ValueError(f"manifest entry {key!r} is not representable")
        self.items.append((key, value))

    def add_config(self, obj, prefix="config"):
        for k, v in sorted(vars(obj).items()):
            self.add(f"{prefix}.{k}", v)

    def add_file(self, kind: str, name: str, path):
        self.add(f"{kind}.{name}.path", os.path.abspath(path))
        self.add(f"{kind}.{name}.sha256", sha256_file(path))

    def timing(self, stage: str, seconds: float):
        self.add(f"timing.{stage}_s", f"{seconds:.3f}")

    def write(self, path):
        self.timing("total", time.perf_counter() - self._t0)
        fstk.write_atomic(path, "".join(f"{k}={v}\n" for k, v in self.items))


def read_manifest(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            if "=" not in line:
                raise DataValidationError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k] = v
    return out


# -- helpers --------------------------------------------------------------------

def _write_csv(rows, header, out):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    if out is None:
        sys.stdout.write(buf.getvalue())
    else:
        fstk.write_atomic(out, buf.getvalue())


def _fmt(v) -> str:
    return f"{v:.17g}" if isinstance(v, (float, np.floating)) else str(v)


def _obs_dtype(kind):
    return "u1" if kind == "bernoulli" else "u32"


def _load_optional(path, what):
    if path is None:
        return None
    stack, _ = fstk.read(path)
    log.info("loaded %s from %s", what, path)
    return stack


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _positive_float(s):
    v = float(s)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return v


def _fraction(s):
    v = float(s)
    if not 0 <= v < 1:
        raise argparse.ArgumentTypeError("must lie in [0, 1)")
    return v


def fault_mask(shape, fraction: float, seed: int) -> np.ndarray:
    """Persistent dead pixels: the same ``round(fraction * rows * cols)`` sites in every frame."""
    t, r, c = shape
    n = int(round(fraction * r * c))
    h = np.ones((r, c), bool)
    if n:
        rng = RngStream(seed).generator(0, STREAM_MASK)
        h.reshape(-1)[rng.choice(r * c, size=n, replace=False)] = False
    return np.repeat(h[None], t, axis=0)


# -- commands -------------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    man = Manifest("simulate", argv)
    os.makedirs(args.out_dir, exist_ok=True)
    if args.input is not None:
        x_raw, _ = fstk.read(args.input)
        man.add_file("input", "truth", args.input)
    else:
        x_raw = make_scene(args.scene, args.rows, args.cols, args.frames, args.seed)
    x = scale_to_target(x_raw, args.target_mean)
    eta = _load_optional(args.eta, "efficiency map")
    if args.eta is not None:
        man.add_file("input", "eta", args.eta)
    mask = fault_mask(x.shape, args.mask_fraction, args.seed)
    y = simulate(ObservationModel(args.model, eta, mask), x, seed=args.seed)

    paths = {n: os.path.join(args.out_dir, f"{args.prefix}{n}.fstk") for n in ("truth", "obs", "mask")}
    fstk.write(paths["truth"], x, "f64")
    fstk.write(paths["obs"], y, _obs_dtype(args.model))
    fstk.write(paths["mask"], mask.astype(np.uint8), "u1")
    man.add("seed", args.seed)
    man.add("model", args.model)
    man.add("target_mean", _fmt(args.target_mean))
    for n, p in paths.items():
        man.add_file("output", n, p)
    man.write(os.path.join(args.out_dir, f"{args.prefix}{MANIFEST_NAME}"))
    print(f"wrote {', '.join(paths.values())}; detection rate {y[mask].mean():.4f}")
    return EXIT_OK


def sampler_config(args, temporal: bool) -> SamplerConfig:
    n_mc = args.iters if args.iters is not None else (3000 if temporal else 2000)
    n_bi = args.burnin if args.burnin is not None else (1000 if temporal else 600)
    return SamplerConfig(
        n_mc=n_mc, n_bi=n_bi, temporal=temporal, model=args.model, adapt=args.adapt,
        alpha0=args.alpha, beta0=args.beta, support=(args.support_min, args.support_max),
        seed=args.seed, thinning=args.thinning, threads=args.threads, literal_scale=args.literal_scale,
        xtilde_form=args.xtilde_form, cyclic_time=args.cyclic_time, hyper_sharing=args.hyper_sharing,
        quantiles=args.quantiles,
    )


def cmd_denoise(args, argv) -> int:
    man = Manifest("denoise", argv)
    t0 = time.perf_counter()
    y, _ = fstk.read(args.input)
    y = check_observation(y, args.model)
    man.add_file("input", "obs", args.input)
    eta = _load_optional(args.eta, "efficiency map")
    mask = _load_optional(args.mask, "mask")
    for name, p in (("eta", args.eta), ("mask", args.mask)):
        if p is not None:
            man.add_file("input", name, p)
    temporal = args.temporal == "on"
    config = sampler_config(args, temporal)
    try:
        config.validate()
    except ValueError as e:
        raise _UsageError(str(e)) from None
    man.add_config(config)
    man.timing("load", time.perf_counter() - t0)

    t0 = time.perf_counter()
    summary = run_chain(y, ObservationModel(args.model, eta, mask), config)
    man.timing("sample", time.perf_counter() - t0)

    os.makedirs(args.out_dir, exist_ok=True)
    paths = {n: os.path.join(args.out_dir, f"{args.prefix}{n}.fstk") for n in ("x_mmse", "x_var", "accept")}
    fstk.write(paths["x_mmse"], summary.x_mmse)
    fstk.write(paths["x_var"], summary.x_var)
    fstk.write(paths["accept"], summary.accept_rate)
    if summary.x_quantiles:
        for q, arr in summary.x_quantiles.items():
            p = os.path.join(args.out_dir, f"{args.prefix}x_q{int(round(q * 100)):02d}.fstk")
            fstk.write(p, arr)
            paths[f"x_q{int(round(q * 100)):02d}"] = p
    trace_path = os.path.join(args.out_dir, f"{args.prefix}hyper_trace.csv")
    n_alpha = summary.hyper_trace.shape[1] - 2
    header = ["iteration", *(["alpha"] if n_alpha == 1 else [f"alpha_{t + 1}" for t in range(n_alpha)]), "beta", "log_posterior"]
    logp = np.concatenate([[np.nan], summary.log_post_trace])
    rows = [[int(r[0]), *map(_fmt, r[1:]), _fmt(lp)] for r, lp in zip(summary.hyper_trace, logp)]
    _write_csv(rows, header, trace_path)
    paths["hyper_trace"] = trace_path

    man.add("kept_samples", summary.kept)
    man.add("adapt_skipped_updates", summary.adapt_warnings)
    for n, p in paths.items():
        man.add_file("output", n, p)
    man.write(os.path.join(args.out_dir, f"{args.prefix}{MANIFEST_NAME}"))
    y1 = (y == 1) & (True if mask is None else as_stack(mask).astype(bool))
    if args.model == "bernoulli" and y1.any():
        print(f"mean acceptance over y=1 pixels: {summary.accept_rate[y1].mean():.3f}")
    print(f"wrote {len(paths)} outputs to {args.out_dir}")
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    x_true, _ = fstk.read(args.truth)
    x_hat, _ = fstk.read(args.estimate)
    x_true, x_hat = as_stack(x_true), as_stack(x_hat)
    if x_true.shape != x_hat.shape:
        raise DataValidationError(f"shape mismatch: truth {x_true.shape} vs estimate {x_hat.shape}")
    valid = np.ones(x_true.shape, bool)
    if args.mask is not None:
        valid = as_stack(fstk.read(args.mask)[0]).astype(bool)
    if np.any(np.sum(np.where(valid, x_true, 0) ** 2, axis=(1, 2)) == 0):
        raise DataValidationError("a ground-truth frame is zero on every valid pixel; NMSE is undefined")
    e = masked_nmse(x_true, x_hat, valid)
    s = nse_std(x_true, x_hat)
    rows = [[t + 1, _fmt(float(e[t])), _fmt(float(s[t]))] for t in range(len(e))]
    rows.append(["all", _fmt(float(e.mean())), _fmt(float(s.mean()))])
    _write_csv(rows, ["frame", "nmse", "nse_std"], args.out)
    return EXIT_OK


def cmd_integrate(args, argv) -> int:
    man = Manifest("integrate", argv)
    y, _ = fstk.read(args.input)
    man.add_file("input", "obs", args.input)
    z = integrate_and_threshold(check_observation(y, "poisson"), args.group_size)
    fstk.write(args.out, z, "u1")
    man.add_file("output", "obs", args.out)
    man.write(args.out + ".manifest")
    print(f"wrote {z.shape[0]} frame(s) to {args.out}")
    return EXIT_OK


def cmd_sweep(args, argv) -> int:
    x_raw = make_scene(args.scene, args.rows, args.cols, args.frames, args.seed)
    config = SamplerConfig(n_mc=args.iters, n_bi=args.burnin, model=args.model, alpha0=args.alpha,
                           temporal=args.frames > 1 and args.temporal == "on", threads=args.threads)
    rows = []
    for target in args.targets:
        x = scale_to_target(x_raw, target)
        r = run_replicates(x, args.model, args.model, config, n_reps=args.reps, seed=args.seed)
        rows.append([_fmt(target), _fmt(r["detection_rate"]), _fmt(r["mean"]), _fmt(r["std"])])
        log.info("target %g: nmse %.4f +- %.4f", target, r["mean"], r["std"])
    _write_csv(rows, ["target_mean", "detection_rate", "nmse_mean", "nmse_std"], args.out)
    return EXIT_OK


def cmd_detection_table(args, argv) -> int:
    if args.input is not None:
        x, _ = fstk.read(args.input)
    else:
        x = make_scene(args.scene, args.rows, args.cols, 1, args.seed)
    eta = _load_optional(args.eta, "efficiency map")
    table = detection_table(x, eta, n_reps=args.reps, seed=args.seed, targets=args.targets)
    keys = ["target", "poisson", "bernoulli", "bernoulli_expected"]
    _write_csv([[_fmt(r[k]) for k in keys] for r in table], keys, args.out)
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    """Re-run the command recorded in a manifest and compare output digests."""
    m = read_manifest(args.manifest)
    rec = shlex.split(m["argv"])
    if args.out_dir is not None:
        rec = _override(rec, "--out-dir", args.out_dir)
    old = os.getcwd()
    os.chdir(m["cwd"])
    try:
        code = main(rec)
    finally:
        os.chdir(old)
    if code != EXIT_OK:
        return code
    out_dir = args.out_dir
    mismatched = 0
    for k, v in m.items():
        if not (k.startswith("output.") and k.endswith(".sha256")):
            continue
        path = m[k[: -len(".sha256")] + ".path"]
        if out_dir is not None:
            path = os.path.join(out_dir, os.path.basename(path))
        ok = os.path.exists(path) and sha256_file(path) == v
        mismatched += not ok
        print(f"{'match' if ok else 'MISMATCH'} {path}")
    return EXIT_OK if mismatched == 0 else EXIT_NUMERIC


def _override(argv, flag, value):
    argv = list(argv)
    if flag in argv:
        argv[argv.index(flag) + 1] = value
    else:
        argv += [flag, value]
    return argv


# -- parser ---------------------------------------------------------------------

class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="photongmrf", description="Photon-limited image denoising with a hidden gamma-MRF prior.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate ground truth and noisy observations")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--scene", choices=("piecewise", "smooth", "moving"))
    src.add_argument("--input", help="ground-truth intensity stack (FSTK)")
    s.add_argument("--rows", type=_positive_int, default=64)
    s.add_argument("--cols", type=_positive_int, default=64)
    s.add_argument("--frames", type=_positive_int, default=1)
    s.add_argument("--model", choices=("poisson", "bernoulli"), required=True)
    s.add_argument("--target-mean", type=_positive_float, required=True)
    s.add_argument("--eta", help="efficiency map (FSTK f64, one frame)")
    s.add_argument("--mask-fraction", type=_fraction, default=0.0, help="fraction of dead pixels")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", default=".")
    s.add_argument("--prefix", default="")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("denoise", help="run the sampler and write MMSE/variance/acceptance maps")
    d.add_argument("input", help="observation stack (FSTK)")
    d.add_argument("--model", choices=("poisson", "bernoulli"), required=True)
    d.add_argument("--temporal", choices=("on", "off"), default="off")
    d.add_argument("--iters", type=_positive_int, help="total iterations (2000, or 3000 with --temporal on)")
    d.add_argument("--burnin", type=int, help="burn-in iterations (600, or 1000 with --temporal on)")
    d.add_argument("--thinning", type=_positive_int, default=1)
    d.add_argument("--alpha", type=_positive_float, default=10.0)
    d.add_argument("--beta", type=_positive_float, default=10.0)
    d.add_argument("--adapt", choices=ADAPT_MODES, default="off")
    d.add_argument("--hyper-sharing", choices=SHARING_MODES, default="shared")
    d.add_argument("--mask", help="validity mask (FSTK u1; 0 = dead pixel)")
    d.add_argument("--eta", help="efficiency map (FSTK f64)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--support-min", type=float, default=0.0)
    d.add_argument("--support-max", type=_positive_float, default=float("inf"))
    d.add_argument("--literal-scale", action="store_true",
                   help="use x_bar / (1 + x_bar * eta) as the 2D posterior scale (comparison only)")
    d.add_argument("--xtilde-form", choices=XTILDE_FORMS, default="rate-sum")
    d.add_argument("--cyclic-time", action="store_true")
    d.add_argument("--quantiles", action="store_true", help="also write 5/50/95%% posterior quantiles")
    d.add_argument("--threads", type=_positive_int, default=1)
    d.add_argument("--out-dir", default=".")
    d.add_argument("--prefix", default="")
    d.set_defaults(func=cmd_denoise)

    e = sub.add_parser("evaluate", help="per-frame NMSE and error dispersion")
    e.add_argument("--truth", required=True)
    e.add_argument("--estimate", required=True)
    e.add_argument("--mask", help="restrict NMSE to valid pixels")
    e.add_argument("--out", help="CSV file (default: standard output)")
    e.set_defaults(func=cmd_evaluate)

    g = sub.add_parser("integrate", help="sum groups of frames and threshold to binary")
    g.add_argument("input")
    g.add_argument("--group-size", type=_positive_int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_integrate)

    w = sub.add_parser("sweep", help="NMSE across the target-mean grid")
    w.add_argument("--scene", choices=("piecewise", "smooth", "moving"), default="piecewise")
    w.add_argument("--rows", type=_positive_int, default=64)
    w.add_argument("--cols", type=_positive_int, default=64)
    w.add_argument("--frames", type=_positive_int, default=1)
    w.add_argument("--temporal", choices=("on", "off"), default="off")
    w.add_argument("--model", choices=("poisson", "bernoulli"), required=True)
    w.add_argument("--targets", type=_positive_float, nargs="+", default=list(SWEEP_TARGETS))
    w.add_argument("--reps", type=_positive_int, default=20)
    w.add_argument("--iters", type=_positive_int, default=2000)
    w.add_argument("--burnin", type=int, default=600)
    w.add_argument("--alpha", type=_positive_float, default=10.0)
    w.add_argument("--threads", type=_positive_int, default=1)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out")
    w.set_defaults(func=cmd_sweep)

    t = sub.add_parser("detection-table", help="mean detections per pixel under both detector models")
    tsrc = t.add_mutually_exclusive_group(required=True)
    tsrc.add_argument("--scene", choices=("piecewise", "smooth", "moving"))
    tsrc.add_argument("--input")
    t.add_argument("--rows", type=_positive_int, default=64)
    t.add_argument("--cols", type=_positive_int, default=64)
    t.add_argument("--eta")
    t.add_argument("--targets", type=_positive_float, nargs="+", default=list(SWEEP_TARGETS))
    t.add_argument("--reps", type=_positive_int, default=20)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out")
    t.set_defaults(func=cmd_detection_table)

    r = sub.add_parser("replay", help="re-run a manifest and verify output digests")
    r.add_argument("manifest")
    r.add_argument("--out-dir", help="write outputs here instead of the recorded location")
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args, argv)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"photongmrf: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as e:
        print(f"photongmrf: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"photongmrf: numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        # remaining ValueErrors come from inconsistent inputs (shapes, ranges)
        print(f"photongmrf: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
