"""Command-line interface: ``uqdm {train,compress,decompress,eval,sweep,inspect}``."""

from __future__ import annotations

import argparse
import logging
import struct
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, codec, evaluation
from .data import FormatError, data_to_pixels, load_image, pixels_to_data, save_image, swirl
from .diffusion import UQDM
from .reconstruct import MODES
from .training import TrainConfig, TrainingDiverged, evaluate_bpd, train

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_DIGEST = 4
EXIT_RANGE = 5
EXIT_DIVERGED = 6

EXIT_HELP = f"""exit codes:
  {EXIT_OK}  success
  {EXIT_ERROR}  unexpected error (I/O and the like)
  {EXIT_USAGE}  bad command line
  {EXIT_FORMAT}  malformed stream, checkpoint, image or config file
  {EXIT_DIGEST}  weights digest mismatch (stream made with another checkpoint)
  {EXIT_RANGE}  value out of range (off-grid data, bad --stop-at, ...)
  {EXIT_DIVERGED}  training produced a non-finite loss
"""

IMAGE_SUFFIXES = (".pgm", ".ppm", ".pnm")


class UsageError(Exception):
    pass


def _is_image(path) -> bool:
    return Path(path).suffix.lower() in IMAGE_SUFFIXES


def _read_data(path) -> np.ndarray:
    if _is_image(path):
        return pixels_to_data(load_image(path))
    try:
        return np.load(path, allow_pickle=False)
    except (ValueError, OSError) as exc:
        raise FormatError(f"{path}: not a .npy array or PGM/PPM image") from exc


def _write_data(path, x: np.ndarray) -> None:
    if _is_image(path):
        save_image(path, data_to_pixels(x))
    else:
        with open(path, "wb") as fh:
            np.save(fh, x, allow_pickle=False)


def _dataset(spec: str, n_swirl: int, seed: int) -> np.ndarray:
    """Rows of training/eval data: ``swirl`` or a directory of same-sized PGM/PPM files."""
    if spec == "swirl":
        return swirl(n_swirl, seed)
    folder = Path(spec)
    if not folder.is_dir():
        raise UsageError(f"--data must be 'swirl' or a directory of images, got {spec!r}")
    files = sorted(p for p in folder.iterdir() if _is_image(p))
    if not files:
        raise UsageError(f"no PGM/PPM files in {folder}")
    imgs = [pixels_to_data(load_image(p)) for p in files]
    if len({im.shape for im in imgs}) != 1:
        raise FormatError("images in the data directory differ in shape")
    return np.stack(imgs).reshape(len(imgs), -1)


def cmd_train(args) -> int:
    data = _dataset(args.data, args.n, args.seed)
    model = UQDM(data.shape[1], T=args.T, variance=args.variance)
    cfg = TrainConfig(steps=args.steps, batch_size=args.batch_size, lr=args.lr, seed=args.seed,
                      eval_every=args.log_every, log_every=args.log_every)
    try:
        model, tlog = train(model, data, cfg)
    except TrainingDiverged as exc:
        checkpoint.save(exc.model, args.out)
        raise
    digest = checkpoint.save(model, args.out)
    print(f"saved {args.out} sha256={digest.hex()} ({tlog.seconds:.1f}s)")
    return EXIT_OK


def cmd_compress(args) -> int:
    model = checkpoint.load(args.ckpt)
    x = _read_data(args.inp)
    stream = codec.compress(x, model, args.seed, recon=args.recon)
    Path(args.out).write_bytes(stream)
    bits = 8 * len(stream)
    print(f"wrote {bits} bits ({bits / max(x.size, 1):.4f} bits/dim)")
    return EXIT_OK


def cmd_decompress(args) -> int:
    model = checkpoint.load(args.ckpt)
    buf = Path(args.inp).read_bytes()
    res = codec.decompress(buf, model, stop_at=args.stop_at, recon=args.recon, seed=args.seed)
    _write_data(args.out, res.x)
    if res.lossy:
        print(f"lossy: received {res.bits_received} bits")
    else:
        print(f"lossless: received {res.bits_received} bits")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = checkpoint.load(args.ckpt)
    if args.data == "swirl":
        data = swirl(*evaluation.SWIRL_VAL)
    else:
        data = _dataset(args.data, 0, 0)
    bpd = evaluate_bpd(model, data, mode="quadrature")
    x = data[: args.points]
    rows = evaluation.progressive_curve(model, x, seed=args.seed, reference=data[-args.points:])
    name = "swirl" if args.data == "swirl" else Path(args.data).name
    table = [dict(dataset=name, T=model.T, variance_mode=model.variance, bpd_total=bpd, **r) for r in rows]
    if args.csv:
        evaluation.write_csv(table, args.csv)
    print(f"bpd_total {bpd:.4f}")
    for r in table:
        print(f"step {r['step']}: {r['bits_cum']:.4f} bits/dim  psnr {r['psnr']:.2f}  sw {r['sw']:.5f}")
    return EXIT_OK


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value.strip('"').strip("'")
    return out


def cmd_sweep(args) -> int:
    cfg = read_config(args.config)
    known = {"dataset", "T_values", "variances", "steps", "seed", "eval_points", "cache_dir", "csv"}
    unknown = set(cfg) - known
    if unknown:
        raise FormatError(f"unknown sweep keys: {', '.join(sorted(unknown))}")
    try:
        sc = evaluation.SweepConfig(
            T_values=[int(v) for v in cfg.get("T_values", "3,5,10").split(",")],
            variances=[v.strip() for v in cfg.get("variances", "fixed,learned").split(",")],
            steps=int(cfg.get("steps", 10_000)),
            seed=int(cfg.get("seed", 0)),
            eval_points=int(cfg.get("eval_points", evaluation.SW_SAMPLES)),
            cache_dir=cfg.get("cache_dir"),
        )
    except ValueError as exc:
        raise FormatError(f"bad sweep config: {exc}") from exc
    out = args.csv or cfg.get("csv", "sweep.csv")
    table = evaluation.sweep_T(cfg.get("dataset", "swirl"), sc, out)
    for r in table:
        if r["step"] == 0:
            print(f"T={r['T']} {r['variance_mode']}: bpd {r['bpd_total']:.4f}")
    print(f"wrote {len(table)} rows to {out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    buf = Path(args.inp).read_bytes()
    h = codec.read_header(buf)
    prof = codec.rate_profile(buf)
    print(f"shape {h.shape}  data_dim {h.data_dim}  levels {h.levels}  T {h.T}")
    print(f"gamma [{h.gamma_min:.6f}, {h.gamma_max:.6f}]  seed {h.seed}")
    print(f"variance {'learned' if h.flags & codec.FLAG_LEARNED else 'fixed'}  recon {h.recon_mode}")
    print(f"weights sha256 {h.digest.hex()}")
    print(f"header {prof['header_bits']} bits")
    for j, b in enumerate(prof["step_bits"]):
        print(f"step t={h.T - j}: {b} bits")
    print(f"tail {prof['tail_bits']} bits")
    parts = prof["header_bits"] + sum(prof["step_bits"]) + prof["tail_bits"]
    print(f"total {prof['total_bits']} bits (sum of parts {parts})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uqdm", description="Progressive lossy-to-lossless diffusion codec.",
                                epilog=EXIT_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write a checkpoint", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    t.add_argument("--data", required=True, help="'swirl' or a directory of PGM/PPM images")
    t.add_argument("--T", type=int, default=5, help="number of diffusion steps")
    t.add_argument("--variance", choices=("fixed", "learned"), default="learned")
    t.add_argument("--steps", type=int, default=50_000)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=3e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--n", type=int, default=200_000, help="swirl training set size")
    t.add_argument("--log-every", type=int, default=0)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="encode a .npy array or PGM/PPM image", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    c.add_argument("--ckpt", required=True)
    c.add_argument("--in", dest="inp", metavar="PATH", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--seed", type=int, default=0, help="shared randomness seed stored in the stream")
    c.add_argument("--recon", choices=MODES, default="denoise", help="default reconstruction for prefixes")
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="decode a stream or any prefix of it", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    d.add_argument("--ckpt", required=True)
    d.add_argument("--in", dest="inp", metavar="PATH", required=True)
    d.add_argument("--out", required=True, help=".pgm/.ppm writes an image, anything else .npy")
    d.add_argument("--stop-at", type=int, default=None, help="stop once z_t is decoded (0..T)")
    d.add_argument("--recon", choices=MODES, default=None, help="lossy reconstruction (default: from stream)")
    d.add_argument("--seed", type=int, default=0, help="seed for ancestral sampling")
    d.set_defaults(func=cmd_decompress)

    e = sub.add_parser("eval", help="bpd and rate/PSNR/SW curve of a checkpoint", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", default="swirl", help="'swirl' (held-out split) or an image directory")
    e.add_argument("--csv", default=None)
    e.add_argument("--points", type=int, default=evaluation.SW_SAMPLES)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train and evaluate over T and variance modes", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    s.add_argument("--config", required=True, help="key = value file (dataset, T_values, variances, "
                   "steps, seed, eval_points, cache_dir, csv)")
    s.add_argument("--csv", default=None, help="overrides the config's csv key")
    s.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inspect", help="print a stream's header and rate profile", epilog=EXIT_HELP,
                       formatter_class=argparse.RawDescriptionHelpFormatter)
    i.add_argument("--in", dest="inp", metavar="PATH", required=True)
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except codec.DigestMismatch as exc:
        print(f"error: digest: {exc}", file=sys.stderr)
        return EXIT_DIGEST
    except (codec.CodecError, checkpoint.CheckpointError, FormatError, struct.error) as exc:
        print(f"error: format: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except TrainingDiverged as exc:
        print(f"error: diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: range: {exc}", file=sys.stderr)
        return EXIT_RANGE
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
