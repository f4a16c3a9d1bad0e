"""Patch descriptors, feature-file I/O, cosine similarity and k-means pseudo-labels."""

from __future__ import annotations

import dataclasses
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _backend, imgmath

FEATURE_DIM = 30
_LUMA = np.array([0.299, 0.587, 0.114])


class FeatureFileError(ValueError):
    pass


def luminance(img: np.ndarray) -> np.ndarray:
    img = imgmath.as_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ _LUMA


def normalize(v: np.ndarray) -> np.ndarray:
    """L2-normalize; the zero vector maps to e1."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        v = np.zeros_like(v)
        v[0] = 1.0
        return v
    return v / norm


def orientation_histogram(lum: np.ndarray, bins: int = 8) -> np.ndarray:
    """Magnitude-weighted histogram of unsigned gradient orientation.

    Central differences on interior pixels; bin 0 is centred on 0 degrees
    (gradient along +x).  Normalized by pixel count.
    """
    gx = (lum[1:-1, 2:] - lum[1:-1, :-2]) / 2.0
    gy = (lum[2:, 1:-1] - lum[:-2, 1:-1]) / 2.0
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    width = np.pi / bins
    idx = np.floor((theta + width / 2) / width).astype(int) % bins
    return np.bincount(idx.ravel(), weights=mag.ravel(), minlength=bins) / mag.size


def block_means(arr: np.ndarray, grid: int = 4) -> np.ndarray:
    rows = np.array_split(np.arange(arr.shape[0]), grid)
    cols = np.array_split(np.arange(arr.shape[1]), grid)
    return np.array([[arr[np.ix_(r, c)].mean() for c in cols] for r in rows])


def builtin_features(patch) -> np.ndarray:
    """30-dim handcrafted descriptor: 8 orientation bins, 6 channel stats, 4x4 luma thumbnail."""
    img = imgmath.as_image(patch)
    if min(img.shape[:2]) < 8:
        raise ValueError("patch must be at least 8x8")
    rgb = np.repeat(img, 3, axis=2) if img.shape[2] == 1 else img
    lum = luminance(rgb)
    stats = np.concatenate([rgb.mean(axis=(0, 1)), rgb.std(axis=(0, 1))])
    vec = np.concatenate([orientation_histogram(lum), stats, block_means(lum).ravel()])
    return normalize(vec)


def cosine_similarity(a, b) -> float:
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined similarity for a zero vector")
    return float(min(1.0, max(-1.0, np.dot(a, b) / (na * nb))))


def save_features(path, vectors: Sequence[np.ndarray]) -> None:
    vectors = [np.asarray(v, dtype=np.float64).ravel() for v in vectors]
    d = len(vectors[0]) if vectors else 0
    with open(path, "w") as fh:
        fh.write(f"n={len(vectors)} d={d}\n")
        for v in vectors:
            fh.write(" ".join(repr(float(x)) for x in v) + "\n")


def load_features(path) -> list[np.ndarray]:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise FeatureFileError(f"{path}:1: empty feature file")
    head = lines[0].split()
    try:
        if len(head) != 2 or not head[0].startswith("n=") or not head[1].startswith("d="):
            raise ValueError
        n, d = int(head[0][2:]), int(head[1][2:])
        if n < 0 or d < 1:
            raise ValueError
    except ValueError:
        raise FeatureFileError(f"{path}:1: malformed header {lines[0]!r}, expected 'n=<count> d=<dim>'") from None
    rows = [(i, line) for i, line in enumerate(lines[1:], start=2) if line.strip()]
    if len(rows) != n:
        raise FeatureFileError(f"{path}: header declares n={n} but file has {len(rows)} rows")
    out = []
    for lineno, line in rows:
        parts = line.split()
        if len(parts) != d:
            raise FeatureFileError(f"{path}:{lineno}: expected {d} values, got {len(parts)}")
        try:
            v = np.array([float(p) for p in parts])
        except ValueError as exc:
            raise FeatureFileError(f"{path}:{lineno}: {exc}") from None
        if not np.all(np.isfinite(v)):
            raise FeatureFileError(f"{path}:{lineno}: non-finite value")
        out.append(v)
    return out


@dataclasses.dataclass(frozen=True)
class ClusteringResult:
    k: int
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    inertia_history: tuple = ()
    n_iter: int = 0


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    centers = [x[rng.integers(n)]]
    _, d2 = _backend.nearest_centroid(x, np.array(centers))
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a centre
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(x[idx])
        _, d2 = _backend.nearest_centroid(x, np.array(centers))
    return np.array(centers)


def _repair_empty(x, labels, d2, centroids, k):
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        donors = np.flatnonzero(counts[labels] > 1)
        if donors.size == 0:
            break
        far = donors[np.argmax(d2[donors])]
        counts[labels[far]] -= 1
        labels[far] = j
        d2[far] = 0.0
        counts[j] = 1
        centroids[j] = x[far]
    return labels


def _lloyd(x: np.ndarray, k: int, rng: np.random.Generator, max_iter: int) -> ClusteringResult:
    centroids = kmeans_pp_init(x, k, rng)
    labels, d2 = _backend.nearest_centroid(x, centroids)
    labels = _repair_empty(x, labels, d2, centroids, k)
    history = [float(d2.sum())]
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        centroids = np.array([x[labels == j].mean(axis=0) for j in range(k)])
        new_labels, d2 = _backend.nearest_centroid(x, centroids)
        # repair after every assignment: with coincident points the stolen point
        # would otherwise tie back to the lower-index centroid
        new_labels = _repair_empty(x, new_labels, d2, centroids, k)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return ClusteringResult(k, labels, centroids, float(d2.sum()), tuple(history), n_iter)


def kmeans(vectors, k: int = 7, seed: int = 0, max_iter: int = 100, n_restart: int = 1) -> ClusteringResult:
    """k-means++ seeded Lloyd clustering with squared Euclidean distance.

    Restarts draw independent substreams of ``seed``; the lowest inertia wins,
    earlier restarts winning ties.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("vectors must form an (n, d) array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(x) < k:
        raise ValueError(f"need at least k={k} vectors, got {len(x)}")
    best: Optional[ClusteringResult] = None
    for child in np.random.SeedSequence(seed).spawn(max(1, n_restart)):
        result = _lloyd(x, k, np.random.default_rng(child), max_iter)
        if best is None or result.inertia < best.inertia:
            best = result
    return best


def same_partition(a: Sequence[int], b: Sequence[int]) -> bool:
    """True when two labelings induce the same partition (up to relabeling)."""
    a = list(a)
    b = list(b)
    if len(a) != len(b):
        return False
    fwd: dict = {}
    rev: dict = {}
    for p, q in zip(a, b):
        if fwd.setdefault(p, q) != q or rev.setdefault(q, p) != p:
            return False
    return True


def feature_matrix(patches: Sequence[np.ndarray]) -> np.ndarray:
    return np.array([builtin_features(p) for p in patches])

