"""Procedural test corpus: flat regions mixed with oriented textures."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import imgmath


def _grating(h, w, rng):
    period = rng.uniform(6.0, 20.0)
    theta = rng.uniform(0.0, math.pi)
    phase = rng.uniform(0.0, 2 * math.pi)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    u = (xx * math.cos(theta) + yy * math.sin(theta)) * 2 * math.pi / period + phase
    wave = np.sin(u)
    if rng.random() < 0.5:
        # squared-off stripes carry harmonics above the fundamental
        wave = np.tanh(3.0 * wave)
    return 0.5 + 0.5 * wave


def _half_plane(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    a = rng.uniform(0, 2 * math.pi)
    c = rng.uniform(-0.3, 0.3) * min(h, w)
    return (xx - w / 2) * math.cos(a) + (yy - h / 2) * math.sin(a) < c


def _blob(h, w, rng):
    """Disc or axis-aligned rectangle covering roughly 10-25% of the frame."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    if rng.random() < 0.5:
        cy, cx = rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w
        r = rng.uniform(0.18, 0.28) * min(h, w)
        return (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
    bh, bw = int(rng.uniform(0.3, 0.5) * h), int(rng.uniform(0.3, 0.5) * w)
    y0, x0 = int(rng.integers(0, h - bh + 1)), int(rng.integers(0, w - bw + 1))
    return (yy >= y0) & (yy < y0 + bh) & (xx >= x0) & (xx < x0 + bw)


def make_image(rng: np.random.Generator, size: int = 64) -> np.ndarray:
    """Flat background, an optional flat region with a straight edge, and 1-2 textured blobs."""
    img = np.empty((size, size, 3))
    img[:] = rng.uniform(0.1, 0.9, 3)
    if rng.random() < 0.5:
        img[_half_plane(size, size, rng)] = rng.uniform(0.1, 0.9, 3)
    for _ in range(int(rng.integers(1, 3))):
        mask = _blob(size, size, rng)
        lo, hi = rng.uniform(0.0, 0.4, 3), rng.uniform(0.6, 1.0, 3)
        fill = lo + (hi - lo) * _grating(size, size, rng)[..., None]
        img[mask] = fill[mask]
    return img


def make_corpus(n: int = 200, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    return [make_image(np.random.default_rng(s), size) for s in np.random.SeedSequence(seed).spawn(n)]


def write_corpus(directory, n: int = 200, size: int = 64, seed: int = 0) -> list[Path]:
    """Write ``img_0000.ppm`` ... into ``directory``; values are 8-bit quantized."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(make_corpus(n, size, seed)):
        path = directory / f"img_{i:04d}.ppm"
        imgmath.write_ppm(path, img)
        paths.append(path)
    return paths
