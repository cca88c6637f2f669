"""Command-line front end.

Exit codes: 0 success, 2 configuration or input-format error, 3 I/O error,
4 a solver diverged on at least one sample.
"""

from __future__ import annotations

import argparse
import glob
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np

from . import __version__, io_formats, synthetic
from .baseline_explicit import run_explicit_stream
from .metrics import mean_trace
from .model import ConfigError, EngineConfig, ExplicitParams, ImplicitHyperParams
from .orpca_engine import run_stream

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4


class Diverged(RuntimeError):
    pass


# --------------------------------------------------------------------------
# helpers


def _number(text):
    if text in ("auto", "formula"):
        return text
    try:
        return int(text)
    except ValueError:
        return float(text)


def add_hyper_flags(ap):
    g = ap.add_argument_group("implicit solver settings (unset means the built-in default)")
    for f in fields(ImplicitHyperParams):
        g.add_argument(f"--{f.name}", type=_number, default=None, metavar="V")
    g.add_argument("--conv_tol", type=float, default=1e-3)


def hyper_from_args(args):
    given = {f.name: getattr(args, f.name) for f in fields(ImplicitHyperParams)
             if getattr(args, f.name) is not None}
    try:
        return ImplicitHyperParams(**given)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def explicit_params(args, p):
    if args.lambda1 is not None or args.lambda2 is not None:
        if args.lambda1 is None or args.lambda2 is None:
            raise ConfigError("give both --lambda1 and --lambda2")
        return "custom", ExplicitParams(args.lambda1, args.lambda2)
    return args.lambdas, ExplicitParams.preset(args.lambdas, p)


def add_lambda_flags(ap):
    ap.add_argument("--lambda", dest="lambdas", choices=("default", "tuned"), default="default",
                    help="default is 1/sqrt(p) for both penalties, tuned is 1")
    ap.add_argument("--lambda1", type=float)
    ap.add_argument("--lambda2", type=float)


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path, obj):
    io_formats._write_target(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def manifest(command, config, seeds=None, inputs=None, extra=None):
    out = {
        "command": command,
        "config": {k: _jsonable(v) for k, v in config.items()},
        "seeds": list(seeds or []),
        "inputs": inputs or {},
        "tool_version": __version__,
    }
    if extra:
        out.update(extra)
    return out


def write_timing(out, enabled, seconds):
    if enabled:
        write_json(os.path.join(out, "timing.json"), {"wall_time_s": seconds})


def write_diagnostics(path, rep):
    lines = ["sample,fidelity,inner_iters,diverged\n"]
    for t in range(len(rep.fidelity)):
        lines.append(f"{t + 1},{rep.fidelity[t]:.17g},{rep.inner_iters[t]},{int(rep.diverged[t])}\n")
    io_formats._write_target(path, "".join(lines).encode())


# --------------------------------------------------------------------------
# simulate


def _simulate_one(job):
    cfg, algos, hyper, conv_tol, rank, export_dir = job
    data = synthetic.generate(cfg)
    out = {}
    for label, params in algos:
        if params is None:
            rep = run_stream(data.Z, EngineConfig(rank, hyper, conv_tol), truth=data.U)
        else:
            rep = run_explicit_stream(data.Z, rank, params, truth=data.U,
                                      T_0=hyper.T_0, conv_tol=conv_tol)
        out[label] = (rep.ev, rep.n_diverged)
        if export_dir and params is None:
            s = cfg.seed
            io_formats.write_matrix(os.path.join(export_dir, f"R_seed{s}.orpm"), rep.R)
            io_formats.write_matrix(os.path.join(export_dir, f"E_seed{s}.orpm"), rep.E)
            io_formats.write_matrix(os.path.join(export_dir, f"L_seed{s}.orpm"), rep.basis)
    if export_dir:
        s = cfg.seed
        io_formats.write_matrix(os.path.join(export_dir, f"Z_seed{s}.orpm"), data.Z)
        io_formats.write_matrix(os.path.join(export_dir, f"U_seed{s}.orpm"), data.U)
        io_formats.write_matrix(os.path.join(export_dir, f"Etrue_seed{s}.orpm"), data.E)
    return cfg.seed, out


def cmd_simulate(args):
    t0 = time.perf_counter()
    overrides = {k: v for k, v in (("p", args.p), ("n", args.n), ("rho", args.rho),
                                   ("r_true", args.rank), ("magnitude", args.magnitude))
                 if v is not None}
    if args.preset:
        base = synthetic.preset(args.preset, **overrides)
    else:
        missing = [k for k in ("p", "n", "rho") if k not in overrides]
        if missing:
            raise ConfigError(f"without --preset, give {', '.join('--' + m for m in missing)}")
        overrides.setdefault("r_true", 10)
        base = synthetic.SyntheticConfig(**overrides)
    if args.seeds < 1:
        raise ConfigError("--seeds must be at least 1")
    hyper = hyper_from_args(args)
    rank = base.r_true
    EngineConfig(rank, hyper, args.conv_tol)
    algos = []
    if args.algo in ("implicit", "both"):
        algos.append(("implicit", None))
    if args.algo in ("explicit", "both"):
        label, params = explicit_params(args, base.p)
        algos.append((f"explicit_{label}", params))

    os.makedirs(args.out, exist_ok=True)
    seeds = [args.seed_base + i for i in range(args.seeds)]
    jobs = [(synthetic.SyntheticConfig(base.p, base.n, base.r_true, base.rho, base.magnitude, s),
             algos, hyper, args.conv_tol, rank, args.out if args.export else None)
            for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as ex:
            results = list(ex.map(_simulate_one, jobs))
    else:
        results = [_simulate_one(j) for j in jobs]

    diverged = 0
    summary = {}
    for label, _ in algos:
        traces = []
        for seed, out in results:
            ev, nd = out[label]
            diverged += nd
            traces.append(ev)
            io_formats.write_ev_csv(os.path.join(args.out, f"ev_{label}_seed{seed}.csv"), ev)
        mean = mean_trace(traces)
        io_formats.write_ev_csv(os.path.join(args.out, f"ev_{label}_mean.csv"), mean)
        summary[label] = float(mean[-1])
    config = dict(vars(base))
    config.pop("seed")
    config.update(algo=args.algo, rank=rank, conv_tol=args.conv_tol, **hyper.to_dict())
    for label, params in algos:
        if params is not None:
            config[f"{label}_lambda1"] = params.lambda1
            config[f"{label}_lambda2"] = params.lambda2
    write_json(os.path.join(args.out, "manifest.json"),
               manifest("simulate", config, seeds, extra={
                   "generator": synthetic.GENERATOR_VERSION,
                   "final_mean_ev": summary,
                   "diverged_samples": diverged}))
    write_timing(args.out, args.timing, time.perf_counter() - t0)
    for label, v in summary.items():
        print(f"{label}: final mean EV {v:.4f}")
    if diverged:
        raise Diverged(f"{diverged} samples diverged")


# --------------------------------------------------------------------------
# run


def cmd_run(args):
    t0 = time.perf_counter()
    Z = io_formats.load_any(args.input)
    if Z.ndim != 2 or Z.shape[1] == 0:
        raise ConfigError("input must hold at least one sample column")
    if not np.all(np.isfinite(Z)):
        raise ConfigError("input contains NaN or Inf")
    p = Z.shape[0]
    if not 1 <= args.rank <= p:
        raise ConfigError(f"rank {args.rank} must lie in [1, {p}]")
    hyper = hyper_from_args(args)
    config = {"algo": args.algo, "rank": args.rank, "conv_tol": args.conv_tol}
    if args.algo == "implicit":
        rep = run_stream(Z, EngineConfig(args.rank, hyper, args.conv_tol))
        config.update(hyper.to_dict())
    else:
        label, params = explicit_params(args, p)
        rep = run_explicit_stream(Z, args.rank, params, T_0=hyper.T_0, conv_tol=args.conv_tol)
        config.update(lambda1=params.lambda1, lambda2=params.lambda2, T_0=hyper.T_0)
    os.makedirs(args.out, exist_ok=True)
    io_formats.write_matrix(os.path.join(args.out, "L.orpm"), rep.basis)
    io_formats.write_matrix(os.path.join(args.out, "R.orpm"), rep.R)
    io_formats.write_matrix(os.path.join(args.out, "E.orpm"), rep.E)
    write_diagnostics(os.path.join(args.out, "diagnostics.csv"), rep)
    write_json(os.path.join(args.out, "manifest.json"),
               manifest("run", config, inputs={args.input: sha256_file(args.input)},
                        extra={"diverged_samples": rep.n_diverged}))
    write_timing(args.out, args.timing, time.perf_counter() - t0)
    if rep.n_diverged:
        raise Diverged(f"{rep.n_diverged} samples diverged")


# --------------------------------------------------------------------------
# frames


def frame_paths(args):
    if args.list:
        with open(args.list) as fh:
            return [ln.strip() for ln in fh if ln.strip()]
    paths = set()
    for pat in args.inputs:
        hits = glob.glob(pat)
        paths.update(hits if hits else ([pat] if os.path.exists(pat) else []))
    return sorted(paths)


def cmd_frames(args):
    t0 = time.perf_counter()
    paths = frame_paths(args)
    if not paths:
        raise ConfigError("no frames matched")
    if args.width < 1 or args.height < 1:
        raise ConfigError("--width and --height must be positive")
    cols, src_shape = [], None
    for path in paths:
        with open(path, "rb") as fh:
            img = io_formats.parse_pgm(fh.read())
        if src_shape is None:
            src_shape = img.shape
        elif img.shape != src_shape:
            raise ConfigError(f"{path} is {img.shape[1]}x{img.shape[0]}, "
                              f"expected {src_shape[1]}x{src_shape[0]}")
        cols.append(io_formats.box_downscale(img, args.height, args.width).ravel())
    Z = np.array(cols).T
    p = Z.shape[0]
    if not 1 <= args.rank <= p:
        raise ConfigError(f"rank {args.rank} must lie in [1, {p}]")
    hyper = hyper_from_args(args)
    rep = run_stream(Z, EngineConfig(args.rank, hyper, args.conv_tol), keep_lowrank=True)
    os.makedirs(args.out, exist_ok=True)
    w, h = args.width, args.height
    for t in range(Z.shape[1]):
        io_formats._write_target(os.path.join(args.out, f"bg_{t:05d}.pgm"),
                                 io_formats.write_pgm_frame(rep.lowrank[:, t], w, h))
        io_formats._write_target(os.path.join(args.out, f"fg_{t:05d}.pgm"),
                                 io_formats.write_pgm_frame(rep.E[:, t], w, h, absolute=True))
    write_diagnostics(os.path.join(args.out, "diagnostics.csv"), rep)
    config = {"width": w, "height": h, "rank": args.rank, "conv_tol": args.conv_tol,
              "source_width": src_shape[1], "source_height": src_shape[0], **hyper.to_dict()}
    write_json(os.path.join(args.out, "manifest.json"),
               manifest("frames", config, inputs={q: sha256_file(q) for q in paths},
                        extra={"frame_order": paths, "diverged_samples": rep.n_diverged}))
    write_timing(args.out, args.timing, time.perf_counter() - t0)
    if rep.n_diverged:
        raise Diverged(f"{rep.n_diverged} frames diverged")


# --------------------------------------------------------------------------
# convert


def cmd_convert(args):
    src, dst = io_formats.detect_format(args.input), io_formats.detect_format(args.output)
    M = io_formats.load_any(args.input)
    if dst == src and os.path.abspath(args.input) == os.path.abspath(args.output):
        raise ConfigError("input and output are the same file")
    io_formats.save_any(args.output, M)


# --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="implicit-orpca", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthetic explained-variance experiments")
    s.add_argument("--preset", choices=sorted(synthetic.PRESETS))
    s.add_argument("--p", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--rho", type=float)
    s.add_argument("--rank", type=int, help="true rank, also used as the tracked rank")
    s.add_argument("--magnitude", type=float)
    s.add_argument("--algo", choices=("implicit", "explicit", "both"), default="implicit")
    add_lambda_flags(s)
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--seed-base", type=int, default=0)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--export", action="store_true",
                   help="also write each seed's data and implicit outputs as ORPM")
    s.add_argument("--out", required=True)
    s.add_argument("--timing", action="store_true")
    add_hyper_flags(s)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("run", help="decompose a matrix whose columns are samples")
    r.add_argument("--input", required=True)
    r.add_argument("--rank", type=int, required=True)
    r.add_argument("--algo", choices=("implicit", "explicit"), default="implicit")
    add_lambda_flags(r)
    r.add_argument("--out", required=True)
    r.add_argument("--timing", action="store_true")
    add_hyper_flags(r)
    r.set_defaults(func=cmd_run)

    f = sub.add_parser("frames", help="background/foreground separation of PGM frames")
    f.add_argument("inputs", nargs="*", help="files or glob patterns, ordered by name")
    f.add_argument("--list", help="file with one frame path per line, in order")
    f.add_argument("--width", type=int, default=72)
    f.add_argument("--height", type=int, default=48)
    f.add_argument("--rank", type=int, default=1)
    f.add_argument("--out", required=True)
    f.add_argument("--timing", action="store_true")
    add_hyper_flags(f)
    f.set_defaults(func=cmd_frames)

    c = sub.add_parser("convert", help="convert between .csv and .orpm matrices")
    c.add_argument("input")
    c.add_argument("output")
    c.set_defaults(func=cmd_convert)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        args.func(args)
    except (ConfigError, io_formats.FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Diverged as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
