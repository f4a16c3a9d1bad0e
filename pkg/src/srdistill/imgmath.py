"""Bicubic resampling, PSNR, SSIM and 8-bit PPM image I/O.

Images are ``float64`` arrays of shape (H, W, C) with values nominally in
[0, 1].  Resampling is separable (rows, then columns) and may overshoot the
range; nothing here clamps unless asked to.
"""

from __future__ import annotations

import dataclasses
import functools
import math
import re
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import _backend

PSNR_CAP_DB = 100.0
_MSE_FLOOR = 1e-10


class ImageError(ValueError):
    """Malformed image data or incompatible image shapes."""


def as_image(data) -> np.ndarray:
    """Coerce ``data`` to an (H, W, C) float64 array; 2-D input gains a channel axis."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ImageError(f"expected HxWx1 or HxWx3 image, got shape {img.shape}")
    if not np.all(np.isfinite(img)):
        raise ImageError("image contains non-finite values")
    return img


def cubic_kernel(x: float, a: float = -0.5) -> float:
    """Keys cubic convolution kernel with parameter ``a`` (support [-2, 2])."""
    x = abs(x)
    if x <= 1.0:
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    if x < 2.0:
        return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    return 0.0


def _cubic_array(x: np.ndarray, a: float) -> np.ndarray:
    x = np.abs(x)
    inner = ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    outer = ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    return np.where(x <= 1.0, inner, np.where(x < 2.0, outer, 0.0))


@dataclasses.dataclass(frozen=True)
class ResampleSpec:
    """Parameters of a bicubic resize.

    ``scale`` is the output/input size ratio.  With ``antialias`` set and
    ``scale < 1`` the kernel is stretched by ``1/scale`` so it low-passes.
    Out-of-range taps are reflected about the edge (``-1 -> 0``) and the
    weights of every output sample are renormalized to sum to one.
    """

    scale: Fraction
    kernel_a: float = -0.5
    antialias: bool = True
    boundary: str = "reflect"

    def __post_init__(self):
        object.__setattr__(self, "scale", Fraction(self.scale).limit_denominator(10**6))
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not math.isfinite(self.kernel_a):
            raise ValueError("kernel_a must be finite")
        if self.boundary != "reflect":
            raise ValueError(f"unsupported boundary rule {self.boundary!r}")

    def output_size(self, n: int) -> int:
        return math.floor(n * self.scale + Fraction(1, 2))

    @property
    def stretch(self) -> float:
        return float(1 / self.scale) if self.antialias and self.scale < 1 else 1.0


def reflect_index(j: np.ndarray, n: int) -> np.ndarray:
    """Half-sample symmetric reflection of integer indices into [0, n)."""
    period = 2 * n
    j = np.mod(j, period)
    return np.where(j < n, j, period - 1 - j)


def tap_weights(center: float, spec: ResampleSpec) -> tuple[np.ndarray, np.ndarray]:
    """Source positions and normalized weights for one output sample.

    ``center`` is the output sample's position in input pixel coordinates.
    Returned positions are unreflected integers; weights sum to one.
    """
    stretch = spec.stretch
    radius = 2.0 * stretch
    lo = math.floor(center - radius) + 1
    hi = math.ceil(center + radius) - 1
    pos = np.arange(lo, hi + 1)
    w = _cubic_array((pos - center) / stretch, spec.kernel_a)
    return pos, w / w.sum()


@functools.lru_cache(maxsize=256)
def _tap_table(n_in: int, spec: ResampleSpec) -> tuple[np.ndarray, np.ndarray]:
    n_out = spec.output_size(n_in)
    if n_out < 1:
        raise ImageError("output too small")
    inv = float(1 / spec.scale)
    rows = []
    for i in range(n_out):
        center = (i + 0.5) * inv - 0.5
        pos, w = tap_weights(center, spec)
        rows.append((reflect_index(pos, n_in), w))
    taps = max(len(p) for p, _ in rows)
    index = np.zeros((n_out, taps), dtype=np.int64)
    weight = np.zeros((n_out, taps))
    for i, (p, w) in enumerate(rows):
        index[i, :len(p)] = p
        weight[i, :len(w)] = w
    index.setflags(write=False)
    weight.setflags(write=False)
    return index, weight


def resample_matrix(n_in: int, spec: ResampleSpec) -> np.ndarray:
    """Dense (n_out, n_in) matrix of the 1-D resampling operator."""
    index, weight = _tap_table(n_in, spec)
    mat = np.zeros((index.shape[0], n_in))
    for i in range(index.shape[0]):
        np.add.at(mat[i], index[i], weight[i])
    return mat


def _resample_axis0(arr: np.ndarray, spec: ResampleSpec) -> np.ndarray:
    n = arr.shape[0]
    index, weight = _tap_table(n, spec)
    out = _backend.apply_taps(arr.reshape(n, -1), index, weight)
    return out.reshape((index.shape[0],) + arr.shape[1:])


def resample(img, spec: ResampleSpec) -> np.ndarray:
    """Resize an (H, W, C) image, or an (N, H, W, C) batch, by ``spec.scale``."""
    arr = np.asarray(img, dtype=np.float64)
    batched = arr.ndim == 4
    if not batched:
        arr = as_image(arr)[None]
    _, h, w, _ = arr.shape
    if spec.output_size(h) < 1 or spec.output_size(w) < 1:
        raise ImageError("output too small")
    # rows (H axis) first, then columns (W axis)
    out = _resample_axis0(np.moveaxis(arr, 1, 0), spec)
    out = np.moveaxis(out, 0, 1)
    out = _resample_axis0(np.moveaxis(out, 2, 0), spec)
    out = np.ascontiguousarray(np.moveaxis(out, 0, 2))
    return out if batched else out[0]


def down_up(img, factor: int = 4, kernel_a: float = -0.5, antialias: bool = True) -> np.ndarray:
    """Bicubic downsample by ``factor`` followed by bicubic upsample back."""
    down = ResampleSpec(Fraction(1, factor), kernel_a, antialias)
    up = ResampleSpec(Fraction(factor), kernel_a, antialias)
    return resample(resample(img, down), up)


def mse(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ImageError(f"shape mismatch: {x.shape} vs {y.shape}")
    return float(np.mean((x - y) ** 2))


def psnr(x, y) -> float:
    """PSNR in dB for peak value 1.0, capped at 100 dB for vanishing error."""
    err = mse(x, y)
    if err < _MSE_FLOOR:
        return PSNR_CAP_DB
    return 10.0 * math.log10(1.0 / err)


@functools.lru_cache(maxsize=32)
def _ssim_taps(n: int, size: int, sigma: float) -> tuple[np.ndarray, np.ndarray]:
    g = np.exp(-((np.arange(size) - (size - 1) / 2) ** 2) / (2 * sigma**2))
    g /= g.sum()
    n_out = n - size + 1
    index = np.arange(n_out)[:, None] + np.arange(size)[None, :]
    weight = np.broadcast_to(g, (n_out, size)).copy()
    return index, weight


def _valid_filter(arr: np.ndarray, size: int, sigma: float) -> np.ndarray:
    h, w = arr.shape[:2]
    ih, wh = _ssim_taps(h, size, sigma)
    out = _backend.apply_taps(arr.reshape(h, -1), ih, wh).reshape((-1,) + arr.shape[1:])
    iw, ww = _ssim_taps(w, size, sigma)
    out = np.moveaxis(out, 1, 0)
    out = _backend.apply_taps(np.ascontiguousarray(out).reshape(w, -1), iw, ww)
    return np.moveaxis(out.reshape((-1, ih.shape[0]) + arr.shape[2:]), 0, 1)


def ssim(x, y, window: int = 11, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03) -> float:
    """Single-scale SSIM with a Gaussian window, averaged over valid positions and channels."""
    x = as_image(x)
    y = as_image(y)
    if x.shape != y.shape:
        raise ImageError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape[:2]) < window:
        raise ImageError(f"image {x.shape[:2]} smaller than {window}x{window} SSIM window")
    c1 = k1**2
    c2 = k2**2
    stack = np.concatenate([x, y, x * x, y * y, x * y], axis=2)
    f = _valid_filter(stack, window, sigma)
    ch = x.shape[2]
    mx, my, exx, eyy, exy = (f[..., i * ch:(i + 1) * ch] for i in range(5))
    vx = exx - mx * mx
    vy = eyy - my * my
    cxy = exy - mx * my
    num = (2 * mx * my + c1) * (2 * cxy + c2)
    den = (mx * mx + my * my + c1) * (vx + vy + c2)
    per_channel = (num / den).mean(axis=(0, 1))
    return float(per_channel.mean())


def quantize(img) -> np.ndarray:
    """Round-to-nearest 8-bit quantization of a [0, 1] image (values clipped first)."""
    return np.floor(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_ppm(path, img) -> None:
    """Write an 8-bit binary PPM (P6); single-channel images are replicated to RGB."""
    img = as_image(img)
    if img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    q = quantize(img)
    h, w = q.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    header = re.match(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s", data)
    if header is None:
        raise ImageError(f"{path}: not a binary PPM (P6)")
    w, h, maxval = (int(g) for g in header.groups())
    if maxval != 255:
        raise ImageError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    body = data[header.end():header.end() + w * h * 3]
    if len(body) != w * h * 3:
        raise ImageError(f"{path}: truncated pixel data")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).astype(np.float64) / 255.0


def load_image(path) -> np.ndarray:
    """Load a PPM, or a PNG when Pillow is installed, as an (H, W, 3) float image."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        try:
            from PIL import Image
        except ImportError as exc:
            raise ImageError("PNG support needs Pillow") from exc
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        return arr
    return read_ppm(path)


IMAGE_SUFFIXES = (".ppm", ".png")
