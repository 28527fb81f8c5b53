"""Binary file formats (sinograms, checkpoints, raw images), PNG export and
metric tables.

All binary formats are little-endian.  Readers validate the header and the
total byte count before touching any payload.
"""
from __future__ import annotations

import csv
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from PIL import Image as PILImage

from . import denoiser as dn
from .tomo import Geometry, Sinogram

SINO_MAGIC = b"SSCT"
SINO_VERSION = 1
CKPT_MAGIC = b"SSCK"
CKPT_VERSION = 1
IMG_MAGIC = b"SIMG"

CSV_HEADER = ["method", "views", "dataset", "psnr_mean", "psnr_std", "ssim_mean", "ssim_std", "n"]


class FormatError(ValueError):
    """Malformed binary input; ``field`` names the offending header field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, field: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                field, f"truncated: expected {self.pos + n} bytes, got {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, field: str) -> int:
        return struct.unpack("<I", self.take(4, field))[0]

    def f32(self, field: str) -> float:
        return struct.unpack("<f", self.take(4, field))[0]

    def magic(self, expected: bytes) -> None:
        got = self.take(4, "magic")
        if got != expected:
            raise FormatError("magic", f"expected {expected!r}, got {got!r}")

    def need(self, n: int, field: str) -> None:
        """Fail before allocating if fewer than ``n`` bytes remain."""
        if self.pos + n != len(self.buf):
            raise FormatError(
                field,
                f"expected {self.pos + n} bytes in total, got {len(self.buf)}",
            )

    def array(self, dtype: str, count: int, field: str) -> np.ndarray:
        raw = self.take(np.dtype(dtype).itemsize * count, field)
        return np.frombuffer(raw, dtype=dtype).copy()


def _write_atomic(path: Path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


# -- sinograms -------------------------------------------------------------


def sinogram_bytes(sino: Sinogram) -> bytes:
    g = sino.geometry
    data = sino.data.detach().cpu().numpy().astype("<f4", copy=False)
    if data.shape != g.sino_shape:
        raise ValueError(f"can only save a single sinogram, got shape {data.shape}")
    head = SINO_MAGIC + struct.pack("<IIII", SINO_VERSION, g.n_views, g.n_bins, g.image_size)
    return head + g.angles.astype("<f8").tobytes() + data.tobytes()


def parse_sinogram(buf: bytes) -> Sinogram:
    r = _Reader(buf)
    r.magic(SINO_MAGIC)
    version = r.u32("version")
    if version != SINO_VERSION:
        raise FormatError("version", f"unsupported version {version}, expected {SINO_VERSION}")
    n_views = r.u32("n_views")
    n_bins = r.u32("n_bins")
    size = r.u32("image_size")
    if n_views == 0 or n_bins == 0 or size == 0:
        raise FormatError("n_views", f"empty geometry ({n_views} views, {n_bins} bins, size {size})")
    r.need(8 * n_views + 4 * n_views * n_bins, "data")
    try:
        geometry = Geometry(size, n_views, n_bins)
    except ValueError as exc:
        raise FormatError("n_bins", str(exc)) from None
    angles = r.array("<f8", n_views, "angles")
    if not np.array_equal(angles, geometry.angles):
        raise FormatError("angles", "angles are not uniformly spaced over [0, 2*pi)")
    data = r.array("<f4", n_views * n_bins, "data").reshape(n_views, n_bins)
    return Sinogram(torch.from_numpy(data.astype(np.float32)), geometry)


def save_sinogram(path, sino: Sinogram) -> None:
    _write_atomic(Path(path), sinogram_bytes(sino))


def load_sinogram(path) -> Sinogram:
    return parse_sinogram(Path(path).read_bytes())


# -- raw images ------------------------------------------------------------


def image_bytes(image) -> bytes:
    arr = np.asarray(image.detach().cpu() if hasattr(image, "detach") else image, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {arr.shape}")
    return IMG_MAGIC + struct.pack("<II", *arr.shape) + arr.tobytes()


def parse_image(buf: bytes) -> torch.Tensor:
    r = _Reader(buf)
    r.magic(IMG_MAGIC)
    h = r.u32("height")
    w = r.u32("width")
    r.need(4 * h * w, "data")
    return torch.from_numpy(r.array("<f4", h * w, "data").reshape(h, w).astype(np.float32))


def quantize(image) -> np.ndarray:
    """[0, 1] floats -> uint8 with round-half-up."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def save_image(path, image, format: str = "raw") -> None:
    """Write ``image`` as raw float32 (``"raw"``) or 8-bit grayscale PNG (``"png"``)."""
    path = Path(path)
    if format == "raw":
        _write_atomic(path, image_bytes(image))
    elif format == "png":
        arr = image.detach().cpu().numpy() if hasattr(image, "detach") else image
        PILImage.fromarray(quantize(arr), mode="L").save(path, format="PNG")
    else:
        raise ValueError(f"unknown image format {format!r}")


def load_image(path) -> torch.Tensor:
    return parse_image(Path(path).read_bytes())


# -- checkpoints -----------------------------------------------------------


def checkpoint_bytes(ckpt) -> bytes:
    arch = ckpt.denoiser.arch
    phi = ckpt.phi.detach().cpu().numpy().astype("<f4")
    g = ckpt.geometry
    meta = json.dumps(
        {
            "config": ckpt.config.to_dict(),
            "geometry": {"image_size": g.image_size, "n_views": g.n_views, "n_bins": g.n_bins},
        },
        sort_keys=True,
    ).encode("utf-8")
    hist = np.asarray(ckpt.loss_history, dtype="<f4")
    parts = [
        CKPT_MAGIC,
        struct.pack("<IIIIf", CKPT_VERSION, arch.layers, arch.channels, arch.kernel, arch.slope),
        struct.pack("<I", phi.size),
        struct.pack("<I", len(meta)),
        meta,
        phi.tobytes(),
    ]
    for t in ckpt.denoiser.tensors():
        parts.append(t.detach().cpu().numpy().astype("<f4").tobytes())
    parts.append(struct.pack("<I", hist.size))
    parts.append(hist.tobytes())
    return b"".join(parts)


def parse_checkpoint(buf: bytes, expect: dn.Architecture | None = None):
    from .training import Checkpoint, TrainConfig

    r = _Reader(buf)
    r.magic(CKPT_MAGIC)
    version = r.u32("version")
    if version != CKPT_VERSION:
        raise FormatError("version", f"unsupported version {version}, expected {CKPT_VERSION}")
    layers = r.u32("layers")
    channels = r.u32("channels")
    kernel = r.u32("kernel")
    # stored as f32; the shortest round-tripping decimal recovers values like 0.1
    slope = float(str(np.float32(r.f32("slope"))))
    if not (2 <= layers <= 64 and 1 <= channels <= 1024 and kernel % 2 == 1 and kernel <= 15):
        raise FormatError("architecture", f"implausible descriptor layers={layers} channels={channels} kernel={kernel}")
    if not 0.0 < slope < 1.0:
        raise FormatError("slope", f"slope {slope} outside (0, 1)")
    arch = dn.Architecture(layers=layers, channels=channels, kernel=kernel, slope=slope)
    if expect is not None and arch != expect:
        raise FormatError("architecture", f"checkpoint has {arch}, expected {expect}")
    n_phi = r.u32("phi_length")
    n_meta = r.u32("config_length")
    if r.pos + n_meta > len(buf):
        raise FormatError("config", f"truncated: expected {r.pos + n_meta} bytes, got {len(buf)}")
    try:
        meta = json.loads(r.take(n_meta, "config").decode("utf-8"))
        config = TrainConfig.from_dict(meta["config"])
        geometry = Geometry(**meta["geometry"])
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError("config", f"unreadable config block ({exc})") from None
    from .fbp import n_freq

    if n_phi != n_freq(geometry.n_bins):
        raise FormatError("phi_length", f"{n_phi} coefficients do not fit {geometry.n_bins} detector bins")
    n_weights = arch.n_params()
    if r.pos + 4 * (n_phi + n_weights) + 4 > len(buf):
        raise FormatError(
            "payload", f"truncated: expected at least {r.pos + 4 * (n_phi + n_weights) + 4} bytes, got {len(buf)}"
        )
    phi = torch.from_numpy(r.array("<f4", n_phi, "phi").astype(np.float32))
    weights, biases = [], []
    for w_shape, b_shape in arch.shapes():
        w = r.array("<f4", math.prod(w_shape), "weights").reshape(w_shape)
        b = r.array("<f4", math.prod(b_shape), "biases").reshape(b_shape)
        weights.append(torch.from_numpy(w.astype(np.float32)))
        biases.append(torch.from_numpy(b.astype(np.float32)))
    n_hist = r.u32("history_length")
    r.need(4 * n_hist, "loss_history")
    hist = r.array("<f4", n_hist, "loss_history")
    return Checkpoint(
        phi, dn.DenoiserParams(arch, weights, biases), config, geometry, [float(v) for v in hist]
    )


def save_checkpoint(path, ckpt) -> None:
    _write_atomic(Path(path), checkpoint_bytes(ckpt))


def load_checkpoint(path, expect: dn.Architecture | None = None):
    return parse_checkpoint(Path(path).read_bytes(), expect)


# -- metric tables ---------------------------------------------------------


@dataclass
class MetricRow:
    method: str
    views: int
    dataset: str
    psnr: Sequence[float]
    ssim: Sequence[float]
    error: str | None = None

    def cells(self) -> list[str]:
        if self.error is not None or not self.psnr:
            return [self.method, str(self.views), self.dataset, "error", "error", "error", "error", str(len(self.psnr))]
        p = np.asarray(self.psnr, dtype=np.float64)
        s = np.asarray(self.ssim, dtype=np.float64)
        return [
            self.method,
            str(self.views),
            self.dataset,
            f"{p.mean():.4f}",
            f"{p.std():.4f}",
            f"{s.mean():.4f}",
            f"{s.std():.4f}",
            str(p.size),
        ]


def write_metrics_csv(path, rows: Iterable[MetricRow], comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for row in rows:
            w.writerow(row.cells())


def read_metrics_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    return list(csv.DictReader(lines))
