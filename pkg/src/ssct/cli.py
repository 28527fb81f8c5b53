"""Command-line entry point: ``ssct {phantom,simulate,reconstruct,train,benchmark}``."""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from . import io
from .baselines import SartConfig, sart, sart_tv
from .benchmark import BenchmarkSpec, fbp_ramlak, parse_seeds, run_benchmark
from .metrics import psnr, ssim
from .phantoms import MIN_SIZE, gen_phantom, simulate
from .tomo import apply_circle
from .training import (
    LEARNED_SELF_SUPERVISED,
    LEARNED_SINGLE_SHOT,
    MODES,
    SELF_SUPERVISED,
    PhantomDataset,
    TrainConfig,
    fine_tune,
    reconstruct,
    train_dataset,
    train_single,
)

RECON_METHODS = ("fbp", "sart", "sart_tv", "n2s_self", "n2s_single", "n2s_learned")


class CliError(Exception):
    """Reported as a one-line diagnostic with exit status 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _out_path(path: str) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise CliError(f"output directory does not exist: {p.parent}")
    return p


def _loss_logger(log_file: str | None, every: int):
    fh = open(log_file, "w") if log_file else None

    def progress(it: int, loss: float) -> None:
        line = f"{it},{loss:.8g}"
        if it % every == 0:
            print(line, flush=True)
        if fh is not None:
            fh.write(line + "\n")

    return progress, fh


def cmd_phantom(args) -> None:
    if args.size < MIN_SIZE:
        raise CliError(f"--size must be >= {MIN_SIZE}, got {args.size}")
    if args.count < 1:
        raise CliError(f"--count must be >= 1, got {args.count}")
    out = Path(args.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        for seed in range(args.seed, args.seed + args.count):
            io.save_image(out / f"phantom_{seed}.simg", gen_phantom(seed, args.size))
    except OSError as exc:
        raise CliError(f"cannot write phantoms to {out}: {exc.strerror or exc}") from None


def cmd_simulate(args) -> None:
    if args.phantom is not None:
        if not Path(args.phantom).is_file():
            raise CliError(f"phantom file not found: {args.phantom}")
        image = io.load_image(args.phantom)
    elif args.phantom_seed is not None:
        image = gen_phantom(args.phantom_seed, args.size)
    else:
        raise CliError("simulate needs --phantom or --phantom-seed")
    sino = simulate(image, args.views, args.sigma_rel, args.seed)
    io.save_sinogram(_out_path(args.out), sino)


def _sart_config(args) -> SartConfig:
    return SartConfig(args.sweeps, args.relaxation, args.tv_weight, args.tv_steps)


def cmd_reconstruct(args) -> None:
    if not Path(args.sinogram).is_file():
        raise CliError(f"sinogram file not found: {args.sinogram}")
    y = io.load_sinogram(args.sinogram)
    g = y.geometry
    method = args.method
    if method in ("n2s_single", "n2s_learned") and not args.checkpoint:
        raise CliError(f"method {method} requires --checkpoint")
    out = _out_path(args.out)
    if method == "fbp":
        rec = fbp_ramlak(y)
    elif method == "sart":
        rec = sart(y, _sart_config(args))
    elif method == "sart_tv":
        rec = sart_tv(y, _sart_config(args))
    elif method == "n2s_self":
        cfg = TrainConfig.for_mode(
            SELF_SUPERVISED, n_views=g.n_views, image_size=g.image_size, seed=args.seed,
            mask_stride=args.mask_stride,
            **({"iterations": args.iterations} if args.iterations is not None else {}),
            **({"learning_rate": args.lr} if args.lr is not None else {}),
        )
        rec = reconstruct(y, train_single(y, cfg))
    else:
        ckpt = io.load_checkpoint(args.checkpoint)
        if ckpt.geometry != g:
            raise CliError(f"checkpoint geometry {ckpt.geometry} does not match sinogram geometry {g}")
        if method == "n2s_learned":
            cfg = TrainConfig.for_mode(
                LEARNED_SELF_SUPERVISED, n_views=g.n_views, image_size=g.image_size, seed=args.seed,
                mask_stride=args.mask_stride, channels=ckpt.denoiser.arch.channels, layers=ckpt.denoiser.arch.layers,
                **({"iterations": args.iterations} if args.iterations is not None else {}),
                **({"learning_rate": args.lr} if args.lr is not None else {}),
            )
            ckpt = fine_tune(ckpt, y, cfg)
        rec = reconstruct(y, ckpt)
    io.save_image(out, rec, format=args.format)
    if args.reference:
        ref = apply_circle(io.load_image(args.reference))
        print(f"{method} {g.n_views} {psnr(ref, rec):.4f} {ssim(ref, rec):.4f}")


def cmd_train(args) -> None:
    mode = args.mode
    if mode in (SELF_SUPERVISED, LEARNED_SELF_SUPERVISED) and not args.sinogram:
        raise CliError(f"mode {mode} trains on one sinogram: pass --sinogram")
    if mode == LEARNED_SINGLE_SHOT and not args.dataset_seeds:
        raise CliError(f"mode {mode} trains on a phantom stream: pass --dataset-seeds")
    if mode == LEARNED_SINGLE_SHOT and args.sinogram:
        raise CliError(f"mode {mode} does not take --sinogram")
    if mode == LEARNED_SELF_SUPERVISED and not args.init_checkpoint:
        raise CliError(f"mode {mode} fine-tunes an existing model: pass --init-checkpoint")
    if mode != LEARNED_SELF_SUPERVISED and args.init_checkpoint:
        raise CliError(f"--init-checkpoint only applies to mode {LEARNED_SELF_SUPERVISED}")
    if mode != LEARNED_SINGLE_SHOT and args.dataset_seeds:
        raise CliError(f"--dataset-seeds only applies to mode {LEARNED_SINGLE_SHOT}")
    out = _out_path(args.out_checkpoint)

    overrides = dict(seed=args.seed, mask_stride=args.mask_stride, noise_sigma_rel=args.sigma_rel)
    for key, val in (("iterations", args.iterations), ("batch_size", args.batch), ("learning_rate", args.lr)):
        if val is not None:
            overrides[key] = val
    y = None
    if args.sinogram:
        if not Path(args.sinogram).is_file():
            raise CliError(f"sinogram file not found: {args.sinogram}")
        y = io.load_sinogram(args.sinogram)
        if args.views is not None and args.views != y.geometry.n_views:
            raise CliError(f"--views {args.views} disagrees with the sinogram's {y.geometry.n_views} views")
        overrides.update(n_views=y.geometry.n_views, image_size=y.geometry.image_size)
    else:
        overrides.update(n_views=args.views or 32, image_size=args.size)

    progress, fh = _loss_logger(args.log_file, args.log_every)
    try:
        if mode == SELF_SUPERVISED:
            ckpt = train_single(y, TrainConfig.for_mode(mode, **overrides), progress)
        elif mode == LEARNED_SINGLE_SHOT:
            seeds = parse_seeds(args.dataset_seeds)
            cfg = TrainConfig.for_mode(mode, **overrides)
            ds = PhantomDataset(seeds, cfg.image_size, cfg.n_views, cfg.noise_sigma_rel)
            ckpt = train_dataset(ds, cfg, progress)
        else:
            if not Path(args.init_checkpoint).is_file():
                raise CliError(f"checkpoint file not found: {args.init_checkpoint}")
            init = io.load_checkpoint(args.init_checkpoint)
            arch = init.denoiser.arch
            cfg = TrainConfig.for_mode(mode, channels=arch.channels, layers=arch.layers, **overrides)
            ckpt = fine_tune(init, y, cfg, progress)
    finally:
        if fh is not None:
            fh.close()
    io.save_checkpoint(out, ckpt)


def cmd_benchmark(args) -> None:
    if not Path(args.spec_file).is_file():
        raise CliError(f"spec file not found: {args.spec_file}")
    try:
        spec = BenchmarkSpec.load(args.spec_file)
    except ValueError as exc:
        raise CliError(f"bad spec file: {exc}") from None
    path = run_benchmark(spec, progress=print if args.verbose else None)
    print(path)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssct", description="Self-supervised sparse-view CT reconstruction toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="write seeded ellipse phantoms")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--count", type=int, default=1)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("simulate", help="noisy sparse-view sinogram of a phantom")
    s.add_argument("--phantom", help="phantom .simg file")
    s.add_argument("--phantom-seed", type=int, help="generate the phantom from this seed instead")
    s.add_argument("--size", type=int, default=128, help="size for --phantom-seed")
    s.add_argument("--views", type=int, default=32)
    s.add_argument("--sigma-rel", type=float, default=0.02)
    s.add_argument("--seed", type=int, default=0, help="noise seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("reconstruct", help="reconstruct a sinogram file")
    s.add_argument("--sinogram", required=True)
    s.add_argument("--method", required=True, choices=RECON_METHODS)
    s.add_argument("--checkpoint")
    s.add_argument("--out", required=True)
    s.add_argument("--format", choices=("raw", "png"), default="raw")
    s.add_argument("--reference", help="ground-truth .simg; prints 'method views psnr ssim'")
    s.add_argument("--iterations", type=int, help="training iterations for n2s_self / n2s_learned")
    s.add_argument("--lr", type=float)
    s.add_argument("--mask-stride", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--sweeps", type=int, default=20)
    s.add_argument("--relaxation", type=float, default=0.4)
    s.add_argument("--tv-weight", type=float, default=0.001)
    s.add_argument("--tv-steps", type=int, default=5)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("train", help="train a filter + denoiser checkpoint")
    s.add_argument("--mode", required=True, choices=MODES)
    s.add_argument("--views", type=int)
    s.add_argument("--size", type=int, default=128)
    s.add_argument("--iterations", type=int)
    s.add_argument("--batch", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--mask-stride", type=int, default=4)
    s.add_argument("--sigma-rel", type=float, default=0.02)
    s.add_argument("--sinogram")
    s.add_argument("--dataset-seeds", help="e.g. 1000:1200 or 1,2,3")
    s.add_argument("--init-checkpoint")
    s.add_argument("--out-checkpoint", required=True)
    s.add_argument("--log-file")
    s.add_argument("--log-every", type=int, default=50)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("benchmark", help="run a benchmark grid from a key=value spec file")
    s.add_argument("--spec-file", required=True)
    s.add_argument("--verbose", action="store_true")
    s.set_defaults(func=cmd_benchmark)
    return p


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("SSCT_THREADS")
    if threads:
        try:
            torch.set_num_threads(max(1, int(threads)))
        except ValueError:
            print(f"ssct: error: SSCT_THREADS must be an integer, got {threads!r}", file=sys.stderr)
            return 2
    logging.basicConfig(level=logging.WARNING, format="%(message)s")
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CliError as exc:
        print(f"ssct: error: {exc}", file=sys.stderr)
        return 2
    except (io.FormatError, ValueError, OSError) as exc:
        print(f"ssct: error: {exc}".replace("\n", " "), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
