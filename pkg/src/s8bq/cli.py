"""Command-line front end: ``s8bq <subcommand> ...``.

Reports go to stdout and outputs go to files.  Output paths that are not given
explicitly land in ``$S8BQ_OUT_DIR`` (default: the working directory).

Exit codes: 0 success, 1 failed gradient check, 2 usage, 3 I/O, 4 format,
5 divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .codebook import SCALE_MODES, Codebook, WeightTensor, fit_codebook
from .compressor import convergence_rate, hard_compress, write_reports_csv
from .errors import DivergenceError, FormatError, InvalidCodebookError, InvalidInputError
from .harness import QatConfig, run_pipeline
from .packing import (
    compression_ratio,
    decompress_to_int8,
    header_size,
    pack,
    payload_size,
    unpack,
)
from .regularizer import finite_difference_check, mracos, mracos_grad
from .weightio import FORMATS, parse_shape, read_weights, resolve_format, write_weights

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_DIVERGENCE = 5

GRAD_TOLERANCE = 1e-5


def out_dir() -> Path:
    return Path(os.environ.get("S8BQ_OUT_DIR") or ".")


def _output(explicit: Optional[str], default_name: str) -> Path:
    if explicit:
        return Path(explicit)
    d = out_dir()
    d.mkdir(parents=True, exist_ok=True)
    return d / default_name


def _bits(text: str) -> int:
    try:
        b = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 1 <= b <= 8:
        raise argparse.ArgumentTypeError(f"bit width must be in [1, 8], got {b}")
    return b


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _load(args):
    return read_weights(args.weights, args.format, parse_shape(args.shape))


def _load_codebook(path) -> Codebook:
    return Codebook.from_text(Path(path).read_text())


def _print_codebook(cb: Codebook) -> None:
    print(f"bit_width: {cb.bit_width}")
    print(f"scale: {cb.scale!r}")
    print(f"K: {cb.k}")
    print("numerators: " + " ".join(str(k) for k in cb.numerators))
    print(f"regions: {len(cb.regions)}")
    for r in cb.regions:
        print(f"  [{r.lo:.6g}, {r.hi:.6g})  theta={r.theta:.6g}  lambda={r.lam:.6g}  anchor={r.anchor:.6g}")


def _print_report(report) -> None:
    print(f"epsilon: {report.epsilon!r}")
    print(f"overall_gamma: {report.overall_gamma!r}")
    for p in report.per_partition:
        print(f"  k={p.numerator:4d}  count={p.count:8d}  gamma={p.gamma:.6f}")


def cmd_fit(args) -> int:
    w = _load(args)
    cb = fit_codebook(w, args.bits, args.lam, args.scale_mode, scale=args.scale, levels=args.levels)
    dest = _output(args.output, f"{w.name}.codebook")
    dest.write_text(cb.to_text())
    mse = float(np.mean((w.values - hard_compress(w.values, cb).weights) ** 2))
    _print_codebook(cb)
    print(f"mse: {mse!r}")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    w = _load(args)
    cb = _load_codebook(args.codebook)
    q = hard_compress(w, cb)
    fmt = resolve_format(args.weights, args.format)
    suffix = ".txt" if fmt == "text" else ".bin"
    dest = _output(args.output, f"{w.name}.quantized{suffix}")
    write_weights(dest, q.weights, fmt)
    before = convergence_rate(w, cb, args.epsilon)
    after = convergence_rate(q.weights, cb, args.epsilon)
    print(f"clipped: {mracos(w, cb).clipped_count}")
    print(f"gamma_before: {before.overall_gamma!r}")
    _print_report(after)
    if args.report_csv:
        write_reports_csv(args.report_csv, [(0, before), (1, after)])
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_pack(args) -> int:
    w = _load(args)
    cb = _load_codebook(args.codebook)
    q = hard_compress(w, cb)
    data = pack(q.indices, cb, w.shape)
    dest = _output(args.output, f"{w.name}.s8bq")
    dest.write_bytes(data)
    print(f"elements: {len(w)}")
    print(f"bytes: {len(data)}")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_unpack(args) -> int:
    src = Path(args.packed)
    pt = unpack(src.read_bytes())
    codes = decompress_to_int8(pt)
    values = codes.dequantize().reshape(-1)
    suffix = ".txt" if args.format == "text" else ".bin"
    dest = _output(args.output, f"{src.stem}.weights{suffix}")
    write_weights(dest, WeightTensor(values, pt.shape, src.stem), resolve_format(dest, args.format))
    if args.int8:
        Path(args.int8).write_bytes(codes.codes.astype(np.int8).tobytes())
    print(f"shape: {','.join(str(d) for d in pt.shape)}")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    data = Path(args.packed).read_bytes()
    pt = unpack(data)
    n = int(np.prod(pt.shape, dtype=np.int64))
    print("magic: S8BQ")
    print("version: 1")
    print(f"shape: {','.join(str(d) for d in pt.shape)}")
    print(f"elements: {n}")
    print(f"header_bytes: {header_size(len(pt.shape), pt.k)}")
    print(f"payload_bytes: {payload_size(n, pt.bit_width)}")
    print(f"total_bytes: {len(data)}")
    print(f"ratio_vs_int8: {compression_ratio(pt.bit_width, n, len(pt.shape), pt.k):.6f}")
    _print_codebook(pt.codebook())
    print("centroids: " + " ".join(repr(float(c)) for c in pt.codebook().centroids))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    rng = np.random.default_rng(args.seed)
    cb = fit_codebook(rng.normal(scale=0.1, size=4096), args.bits, args.lam)
    # sample a little beyond the outer regions so clipped weights are covered too
    points = rng.uniform(-1.05 * cb.scale, 1.05 * cb.scale, size=args.points)
    grad = mracos_grad(points, cb)
    if args.perturb:
        grad = grad * (1.0 + args.perturb)
    res = finite_difference_check(points, cb, h=args.h, exclude=args.exclude, grad=grad)
    ok = res.max_rel_error < GRAD_TOLERANCE
    print(f"K: {cb.k}  regions: {len(cb.regions)}")
    print(f"checked: {res.n_checked}  excluded: {res.n_excluded}")
    print(f"max_rel_error: {res.max_rel_error:.3e}")
    print("PASS" if ok else f"FAIL (tolerance {GRAD_TOLERANCE:g})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_train_demo(args) -> int:
    config = QatConfig.from_text(Path(args.config).read_text()) if args.config else QatConfig()
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    dest = Path(args.out_dir) if args.out_dir else out_dir() / "s8bq-demo"
    result = run_pipeline(config, dest)
    (dest / "config.txt").write_text(config.to_text())
    print(f"steps: {config.total_steps}  (float {config.baseline_steps})")
    print(f"final_gamma: {result.final_gamma!r}")
    if result.float_val_loss is not None:
        print(f"val_loss_float: {result.float_val_loss!r}")
        print(f"val_loss_quantized: {result.quantized_val_loss!r}")
        print(f"degradation: {result.degradation!r}")
    for name, data in result.packed.items():
        print(f"{name}: {len(data)} bytes")
    print(f"wrote {dest}")
    return EXIT_OK


def cmd_stats(args) -> int:
    w = _load(args)
    v = w.values
    print(f"shape: {','.join(str(d) for d in w.shape)}")
    print(f"elements: {v.size}")
    if v.size:
        print(f"min: {float(v.min())!r}  max: {float(v.max())!r}")
        print(f"mean: {float(v.mean())!r}  std: {float(v.std())!r}")
        print(f"distinct: {np.unique(v).size}")
    if args.codebook:
        cb = _load_codebook(args.codebook)
        q = hard_compress(w.values, cb).weights
        res = mracos(w, cb)
        print(f"mse: {float(np.mean((v - q) ** 2)) if v.size else 0.0!r}")
        print(f"mracos_loss: {res.loss!r}")
        print(f"clipped: {res.clipped_count}")
        _print_report(convergence_rate(w, cb, args.epsilon))
    return EXIT_OK


def _weights_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("weights", help="weight file (binary float64 or text)")
    p.add_argument("--format", choices=FORMATS, default="auto", help="weight file format (auto: .txt/.csv is text)")
    p.add_argument("--shape", help="tensor shape, e.g. 1024,4096 (binary files are flat otherwise)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s8bq", description="Sub-8-bit codebook quantization tools.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("fit", help="fit an INT8-grid codebook to a weight file")
    _weights_args(p)
    p.add_argument("--bits", type=_bits, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=5e-4)
    p.add_argument("--scale-mode", choices=SCALE_MODES, default="max-abs")
    p.add_argument("--scale", type=_positive, help="scale for --scale-mode fixed")
    p.add_argument("--levels", choices=("odd", "full"), default="odd", help="2^b-1 or 2^b centroids")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("quantize", help="hard-compress weights to a codebook")
    _weights_args(p)
    p.add_argument("codebook")
    p.add_argument("--epsilon", type=_positive)
    p.add_argument("--report-csv")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("pack", help="quantize and write the packed sub-8-bit format")
    _weights_args(p)
    p.add_argument("codebook")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("unpack", help="decode a packed file to dequantized weights")
    p.add_argument("packed")
    p.add_argument("--format", choices=FORMATS, default="auto")
    p.add_argument("--int8", help="also write the raw INT8 codes here")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_unpack)

    p = sub.add_parser("inspect", help="print header fields and codebook of a packed file")
    p.add_argument("packed")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("grad-check", help="finite-difference check of the regularizer gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bits", type=_bits, default=5)
    p.add_argument("--lambda", dest="lam", type=float, default=5e-4)
    p.add_argument("--points", type=int, default=1000)
    p.add_argument("--h", type=_positive, default=1e-6)
    p.add_argument("--exclude", type=float, default=1e-4)
    p.add_argument("--perturb", type=float, default=0.0, help="relative error injected into the gradient")
    p.set_defaults(func=cmd_grad_check)

    p = sub.add_parser("train-demo", help="run the toy quantization-aware training pipeline")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out-dir")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train_demo)

    p = sub.add_parser("stats", help="weight statistics, optionally against a codebook")
    _weights_args(p)
    p.add_argument("--codebook")
    p.add_argument("--epsilon", type=_positive)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"s8bq: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, InvalidCodebookError) as exc:
        print(f"s8bq: format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except DivergenceError as exc:
        print(f"s8bq: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"s8bq: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
