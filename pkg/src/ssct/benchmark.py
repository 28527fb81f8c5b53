"""Benchmark grid: every method on every (views, seed) cell, one shared noisy
sinogram per cell, a CSV of mean/std metrics and a PNG montage per cell."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from . import io
from .baselines import SartConfig, sart, sart_tv
from .fbp import fbp, ramp_init
from .metrics import psnr, ssim
from .phantoms import gen_phantom, noise_seed, simulate
from .tomo import Sinogram, apply_circle
from .training import (
    LEARNED_SELF_SUPERVISED,
    LEARNED_SINGLE_SHOT,
    SELF_SUPERVISED,
    Checkpoint,
    PhantomDataset,
    TrainConfig,
    fine_tune,
    reconstruct,
    train_dataset,
    train_single,
)

log = logging.getLogger(__name__)

METHODS = ("fbp", "sart", "sart_tv", "n2s_self", "n2s_single", "n2s_learned")
LEARNED = ("n2s_single", "n2s_learned")
# left-to-right panel order; the proposed panel uses the first n2s method present
PANEL_ORDER = ("fbp", "sart", "sart_tv")
PROPOSED_PREFERENCE = ("n2s_learned", "n2s_self", "n2s_single")
CAPTION = (
    "montage panels left to right: ground truth, FBP, SART, SART+TV, proposed "
    "(SART+BM3D panel omitted)"
)


def parse_seeds(text: str) -> list[int]:
    """``"0,1,5"`` or ``"0:5"`` (half-open range) or a mix of both."""
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            lo, hi = part.split(":", 1)
            out.extend(range(int(lo), int(hi)))
        else:
            out.append(int(part))
    return out


@dataclass
class BenchmarkSpec:
    methods: list[str] = field(default_factory=lambda: list(METHODS))
    views: list[int] = field(default_factory=lambda: [32, 64])
    seeds: list[int] = field(default_factory=lambda: list(range(5)))
    sigma_rel: float = 0.02
    size: int = 128
    out_dir: Path = Path("benchmark_out")
    ss_iterations: int = 4000
    finetune_iterations: int = 1000
    train_seeds: list[int] = field(default_factory=lambda: list(range(10_000, 10_200)))
    train_iterations: int = 10000
    batch_size: int = 8
    lr: float = 0.01
    finetune_lr: float = 0.001
    mask_stride: int = 4
    train_seed: int = 0
    sart_sweeps: int = 20
    sart_relaxation: float = 0.4
    tv_weight: float = 0.001
    tv_steps: int = 5
    checkpoints: dict[int, Path] = field(default_factory=dict)

    _SCALARS = {
        "sigma_rel": float,
        "size": int,
        "ss_iterations": int,
        "finetune_iterations": int,
        "train_iterations": int,
        "batch_size": int,
        "lr": float,
        "finetune_lr": float,
        "mask_stride": int,
        "train_seed": int,
        "sart_sweeps": int,
        "sart_relaxation": float,
        "tv_weight": float,
        "tv_steps": int,
    }

    @classmethod
    def parse(cls, text: str, base_dir: Path | None = None) -> "BenchmarkSpec":
        """Parse ``key = value`` lines; ``#`` starts a comment; unknown keys are errors."""
        spec = cls()
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            try:
                if key == "methods":
                    methods = [m.strip() for m in value.split(",") if m.strip()]
                    bad = [m for m in methods if m not in METHODS]
                    if bad or not methods:
                        raise ValueError(f"unknown methods {bad}; choose from {', '.join(METHODS)}")
                    spec.methods = methods
                elif key == "views":
                    spec.views = [int(v) for v in value.split(",") if v.strip()]
                elif key == "seeds":
                    spec.seeds = parse_seeds(value)
                elif key == "train_seeds":
                    spec.train_seeds = parse_seeds(value)
                elif key == "out_dir":
                    spec.out_dir = base / value
                elif key.startswith("checkpoint_") and key[len("checkpoint_") :].isdigit():
                    spec.checkpoints[int(key[len("checkpoint_") :])] = base / value
                elif key in cls._SCALARS:
                    setattr(spec, key, cls._SCALARS[key](value))
                else:
                    raise ValueError(f"unknown key {key!r}")
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        if not spec.seeds or not spec.views:
            raise ValueError("benchmark needs at least one seed and one view count")
        overlap = set(spec.seeds) & set(spec.train_seeds)
        if overlap and any(m in LEARNED for m in spec.methods):
            raise ValueError(f"train_seeds overlap test seeds {sorted(overlap)[:5]}")
        return spec

    @classmethod
    def load(cls, path) -> "BenchmarkSpec":
        path = Path(path)
        return cls.parse(path.read_text(), base_dir=path.parent)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def fbp_ramlak(y: Sinogram) -> torch.Tensor:
    with torch.no_grad():
        return fbp(y.data, ramp_init(y.geometry.n_bins, trainable=False), y.geometry).clamp(0.0, 1.0)


def _train_config(spec: BenchmarkSpec, mode: str, views: int, iterations: int) -> TrainConfig:
    return TrainConfig.for_mode(
        mode,
        iterations=iterations,
        learning_rate=spec.finetune_lr if mode == LEARNED_SELF_SUPERVISED else spec.lr,
        mask_stride=spec.mask_stride,
        seed=spec.train_seed,
        noise_sigma_rel=spec.sigma_rel,
        n_views=views,
        image_size=spec.size,
        **({"batch_size": spec.batch_size} if mode == LEARNED_SINGLE_SHOT else {}),
    )


def learned_checkpoint(spec: BenchmarkSpec, views: int) -> Checkpoint:
    """Load the configured checkpoint for ``views`` or train and cache one."""
    if views in spec.checkpoints:
        return io.load_checkpoint(spec.checkpoints[views])
    path = spec.out_dir / "checkpoints" / f"learned_v{views}.ssck"
    cfg = _train_config(spec, LEARNED_SINGLE_SHOT, views, spec.train_iterations)
    log.info("training dataset checkpoint for %d views on %d phantoms", views, len(spec.train_seeds))
    ckpt = train_dataset(PhantomDataset(spec.train_seeds, spec.size, views, spec.sigma_rel), cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(path, ckpt)
    return io.load_checkpoint(path)


def run_method(method: str, y: Sinogram, spec: BenchmarkSpec, learned: Checkpoint | None) -> torch.Tensor:
    views = y.geometry.n_views
    sart_cfg = SartConfig(spec.sart_sweeps, spec.sart_relaxation, spec.tv_weight, spec.tv_steps)
    if method == "fbp":
        return fbp_ramlak(y)
    if method == "sart":
        return sart(y, sart_cfg)
    if method == "sart_tv":
        return sart_tv(y, sart_cfg)
    if method == "n2s_self":
        ckpt = train_single(y, _train_config(spec, SELF_SUPERVISED, views, spec.ss_iterations))
        return reconstruct(y, ckpt)
    if learned is None:
        raise ValueError(f"{method} needs a trained checkpoint")
    if method == "n2s_single":
        return reconstruct(y, learned)
    if method == "n2s_learned":
        cfg = _train_config(spec, LEARNED_SELF_SUPERVISED, views, spec.finetune_iterations)
        return reconstruct(y, fine_tune(learned, y, cfg))
    raise ValueError(f"unknown method {method!r}")


def montage(images: list[torch.Tensor]) -> np.ndarray:
    gap = np.ones((images[0].shape[0], 2), dtype=np.float32)
    cols: list[np.ndarray] = []
    for i, img in enumerate(images):
        if i:
            cols.append(gap)
        cols.append(np.asarray(img.detach().cpu().numpy(), dtype=np.float32))
    return np.concatenate(cols, axis=1)


def run_benchmark(spec: BenchmarkSpec, progress: Callable[[str], None] | None = None) -> Path:
    """Run every cell and write ``results.csv``; returns its path."""
    out = spec.out_dir
    for sub in ("phantoms", "sinograms", "cells"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rows: list[io.MetricRow] = []
    for views in spec.views:
        learned = None
        learned_error = None
        if any(m in LEARNED for m in spec.methods):
            try:
                learned = learned_checkpoint(spec, views)
            except Exception as exc:  # recorded per cell below
                learned_error = f"{type(exc).__name__}: {exc}"
        scores = {m: ([], [], []) for m in spec.methods}
        for seed in spec.seeds:
            x = gen_phantom(seed, spec.size)
            io.save_image(out / "phantoms" / f"phantom_{seed}.simg", x)
            sino_path = out / "sinograms" / f"v{views}_s{seed}.ssct"
            io.save_sinogram(sino_path, simulate(x, views, spec.sigma_rel, noise_seed(seed)))
            digest = sha256_file(sino_path)
            y = io.load_sinogram(sino_path)
            truth = apply_circle(x)
            cell_dir = out / "cells" / f"v{views}" / f"s{seed}"
            cell_dir.mkdir(parents=True, exist_ok=True)
            recons: dict[str, torch.Tensor] = {}
            for method in spec.methods:
                meta = {"method": method, "views": views, "seed": seed, "sinogram": sino_path.name, "sinogram_sha256": digest}
                try:
                    if method in LEARNED and learned is None:
                        raise RuntimeError(learned_error or "no checkpoint")
                    rec = run_method(method, y, spec, learned)
                    p, s = psnr(truth, rec), ssim(truth, rec)
                    io.save_image(cell_dir / f"{method}.simg", rec)
                    recons[method] = rec
                    scores[method][0].append(p)
                    scores[method][1].append(s)
                    meta.update(psnr=p, ssim=s)
                except Exception as exc:
                    scores[method][2].append(f"{type(exc).__name__}: {exc}")
                    meta["error"] = f"{type(exc).__name__}: {exc}"
                (cell_dir / f"{method}.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
                if progress is not None:
                    progress(f"views={views} seed={seed} {method} " + (
                        f"psnr={meta['psnr']:.2f} ssim={meta['ssim']:.3f}" if "psnr" in meta else f"error={meta['error']}"
                    ))
            panels = [truth] + [recons[m] for m in PANEL_ORDER if m in recons]
            proposed = next((m for m in PROPOSED_PREFERENCE if m in recons), None)
            if proposed is not None:
                panels.append(recons[proposed])
            io.save_image(out / f"montage_v{views}_s{seed}.png", montage(panels), format="png")
        for method in spec.methods:
            p, s, errors = scores[method]
            rows.append(io.MetricRow(method, views, "ellipses", p, s, errors[0] if errors else None))
    csv_path = out / "results.csv"
    io.write_metrics_csv(csv_path, rows, comment=CAPTION)
    return csv_path
