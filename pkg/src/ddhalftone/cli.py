"""Command-line surface for the halftoning pipeline.

Subcommands: build-masks, build-ct, halftone, apsd, optimize, metrics.
Exit codes: 0 success, 1 usage error (bad flags or flag preconditions),
2 runtime error.  Every source of randomness takes an explicit seed, so
identical invocations produce identical bytes.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

import numpy as np

from . import __version__
from .classtiling import (
    ClassTiling,
    bayer_matrix,
    quantize_prototype,
    validate_ct,
)
from .dbs import DbsConfig, MaskStack, build_mask_stack
from .dotdiffusion import DiffusedMatrix, ParameterTable, halftone, halftone_fixed
from .hvs_metrics import gaussian_lowpass, hmse, hpsnr
from .imagecore import load_pbm, load_pgm, save_pbm
from .optimizer import OptimizerConfig, SimplexOptions, init_table, optimize_stage
from .spectrum import bartlett_apsd, randomized_apsd, welch_apsd


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _parse_cm(text: str) -> tuple[int, int]:
    try:
        m, n = text.lower().split("x")
        return int(m), int(n)
    except ValueError:
        raise UsageError(f"bad CM size {text!r}, expected MxN") from None


def _dbs_config(args) -> DbsConfig:
    cfg = DbsConfig(seed=args.seed)
    if getattr(args, "scale", None) is not None:
        cfg = dataclasses.replace(
            cfg,
            model1=dataclasses.replace(cfg.model1, scale_s=args.scale),
            model2=dataclasses.replace(cfg.model2, scale_s=args.scale),
        )
    if getattr(args, "max_sweeps", None) is not None:
        cfg = dataclasses.replace(cfg, max_sweeps=args.max_sweeps)
    return cfg


def cmd_build_masks(args) -> int:
    stack = build_mask_stack(args.size, _dbs_config(args))
    stack.save_pgm(args.out)
    print(f"wrote prototype {args.size}x{args.size} to {args.out}")
    return 0


def cmd_build_ct(args) -> int:
    m, n = _parse_cm(args.cm)
    if m * n > 256:
        raise UsageError(f"CM size {m}x{n} exceeds the 256 prototype levels")
    prototype = MaskStack.from_pgm(args.prototype)
    ct = quantize_prototype(prototype, m, n)
    ct.save(args.out)
    print(f"wrote class tiling {ct.size}x{ct.size} ({m}x{n} orders) to {args.out}")
    if args.verify:
        report = validate_ct(ct, seed=args.seed, threshold_factor=args.factor)
        print(
            f"order counts: min {report.min_count} max {report.max_count} "
            f"mean {report.counts.mean():.1f}"
        )
        if report.flagged_orders:
            print(f"impulse flags on orders: {report.flagged_orders}")
        else:
            print("no spectral impulse flags")
        if args.fig:
            from .figures import ct_report_figure

            ct_report_figure(report, args.fig)
            print(f"wrote report figure to {args.fig}")
    return 0


def cmd_halftone(args) -> int:
    x = load_pgm(args.input)
    if args.mode == "proposed":
        if not (args.ct and args.prototype and args.params):
            raise UsageError("proposed mode needs --ct, --prototype and --params")
        ct = ClassTiling.load(args.ct)
        prototype = MaskStack.from_pgm(args.prototype)
        table = ParameterTable.load_csv(args.params)
        out = halftone(x, ct, prototype, table, threads=args.threads,
                       mirror_gamma=args.mirror_gamma)
    else:
        cm = bayer_matrix(8)
        dm = DiffusedMatrix(args.alpha, args.beta)
        out = halftone_fixed(x, cm, dm, gamma=args.gamma, threads=args.threads)
    save_pbm(out, args.out)
    print(f"wrote halftone {out.width}x{out.height} to {args.out}")
    return 0


def cmd_apsd(args) -> int:
    h = load_pbm(args.input)
    if args.method == "random":
        if args.seed is None:
            raise UsageError("--method random requires --seed for reproducibility")
        apsd = randomized_apsd(h, args.window, args.k, seed=args.seed)
    elif args.method == "bartlett":
        apsd = bartlett_apsd(h, args.window, args.k, step=args.step)
    else:
        apsd = welch_apsd(h, args.window, args.k)
    apsd.save_csv(args.out)
    print(f"wrote {args.method} APSD ({args.window}x{args.window}, K={args.k}) to {args.out}")
    if args.png_like:
        apsd.save_pgm_visualization(args.png_like)
        print(f"wrote visualization to {args.png_like}")
    if args.fig:
        from .figures import apsd_figure

        apsd_figure(apsd, args.fig)
        print(f"wrote report figure to {args.fig}")
    return 0


def cmd_optimize(args) -> int:
    stages = [1, 2] if args.stage == "all" else [int(args.stage)]
    if stages == [2] and args.table is None:
        raise UsageError("stage 2 requires --table with the stage-1 output")
    tones = tuple(int(t) for t in args.tones.split(","))
    ct = ClassTiling.load(args.ct)
    prototype = MaskStack.from_pgm(args.prototype)
    table = ParameterTable.load_csv(args.table) if args.table else init_table()
    cfg = OptimizerConfig(
        tones=tones,
        ct=ct,
        prototype=prototype,
        dbs=DbsConfig(seed=args.dbs_seed),
        patch_size=args.patch,
        apsd_window=args.window,
        apsd_k=args.k,
        apsd_seed=args.seed,
        simplex=SimplexOptions(tol=args.tol, max_evals=args.max_evals),
        outer_max_iters=args.outer_iters,
        cache_dir=args.gt_dir,
        workers=args.workers,
    )
    traces = []
    for stage in stages:
        table, trace = optimize_stage(table, stage, cfg)
        traces.extend(trace.steps)
        print(f"stage {stage}: {len(trace.steps)} commits over tones {tones}")
    table.save_csv(args.out)
    if args.trace:
        from .optimizer import OptimizationTrace

        OptimizationTrace(traces).save_jsonl(args.trace)
        print(f"wrote trace to {args.trace}")
    print(f"wrote parameter table to {args.out}")
    return 0


def cmd_metrics(args) -> int:
    ref = load_pgm(args.ref)
    ht = load_pbm(args.halftone)
    size = args.kernel_size if args.kernel_size else args.kernel
    kernel = gaussian_lowpass(size)
    err = hmse(ref, ht, kernel)
    snr = hpsnr(ref, ht, kernel)
    print(f"HMSE={err:.6g} HPSNR={'inf' if np.isinf(snr) else format(snr, '.6g')}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="ddhalftone", description=__doc__)
    parser.add_argument("--version", action="version", version=f"ddhalftone {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-masks", help="design the stacked mask prototype")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scale", type=float, default=None,
                   help="override the HVS sampling scale basis")
    p.add_argument("--max-sweeps", type=int, default=None)
    p.set_defaults(func=cmd_build_masks)

    p = sub.add_parser("build-ct", help="quantize a prototype into a class tiling")
    p.add_argument("--prototype", required=True)
    p.add_argument("--cm", required=True, help="CM size as MxN (e.g. 8x8)")
    p.add_argument("--out", required=True)
    p.add_argument("--verify", action="store_true")
    p.add_argument("--fig", default=None, help="write a verification figure (PNG)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--factor", type=float, default=20.0)
    p.set_defaults(func=cmd_build_ct)

    p = sub.add_parser("halftone", help="dot-diffuse a grayscale image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=["proposed", "fixed-cm"], default="proposed")
    p.add_argument("--ct", default=None)
    p.add_argument("--prototype", default=None)
    p.add_argument("--params", default=None)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--gamma", type=float, default=128.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=2.0)
    p.add_argument("--mirror-gamma", action="store_true")
    p.set_defaults(func=cmd_halftone)

    p = sub.add_parser("apsd", help="averaged power spectrum of a halftone")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=["bartlett", "welch", "random"], required=True)
    p.add_argument("--window", type=int, default=128)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--step", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--png-like", default=None)
    p.add_argument("--fig", default=None, help="write a spectrum report figure (PNG)")
    p.set_defaults(func=cmd_apsd)

    p = sub.add_parser("optimize", help="tune diffusion parameters per tone")
    p.add_argument("--stage", choices=["1", "2", "all"], required=True)
    p.add_argument("--tones", required=True, help="comma-separated tones in [0,127]")
    p.add_argument("--prototype", required=True)
    p.add_argument("--ct", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", default=None)
    p.add_argument("--table", default=None, help="input table (stage-1 output)")
    p.add_argument("--patch", type=int, default=512)
    p.add_argument("--window", type=int, default=128)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dbs-seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-evals", type=int, default=200)
    p.add_argument("--outer-iters", type=int, default=64)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("metrics", help="HMSE / HPSNR of a halftone vs its source")
    p.add_argument("--ref", required=True)
    p.add_argument("--halftone", required=True)
    p.add_argument("--kernel", type=int, choices=[7, 15, 31], default=15)
    p.add_argument("--kernel-size", type=int, default=None,
                   help="arbitrary odd kernel size (overrides --kernel)")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
