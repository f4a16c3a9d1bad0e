"""Patch extraction, bicubic-reconstruction scoring and threshold filtering."""

from __future__ import annotations

import csv
import dataclasses
import statistics
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import imgmath

DEFAULT_THRESHOLD_DB = 23.0
MANIFEST_FIELDS = ("image_id", "x", "y", "size", "psnr_bic", "cluster_id")


class ManifestError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class PatchRecord:
    image_id: str
    x: int
    y: int
    size: int
    psnr_bic: Optional[float] = None
    cluster_id: Optional[int] = None

    def crop(self, image: np.ndarray) -> np.ndarray:
        return image[self.y:self.y + self.size, self.x:self.x + self.size]


@dataclasses.dataclass(frozen=True)
class CurationConfig:
    patch_size: int = 32
    stride: int = 16
    threshold_mode: str = "fixed"
    threshold_db: float = DEFAULT_THRESHOLD_DB

    def __post_init__(self):
        if self.patch_size < 8:
            raise ValueError(f"patch_size must be >= 8, got {self.patch_size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.threshold_mode not in ("fixed", "median"):
            raise ValueError(f"threshold_mode must be 'fixed' or 'median', got {self.threshold_mode!r}")


def grid_positions(length: int, size: int, stride: int) -> range:
    return range(0, (length - size) // stride * stride + 1, stride)


def extract_patches(image, size: int, stride: int, image_id: str = "") -> list[PatchRecord]:
    """Top-left anchored grid of square patches; partial edge patches are dropped."""
    h, w = np.shape(image)[:2]
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image dims {h}x{w}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return [
        PatchRecord(image_id, x, y, size)
        for y in grid_positions(h, size, stride)
        for x in grid_positions(w, size, stride)
    ]


def score_patch(patch, kernel_a: float = -0.5, antialias: bool = True) -> float:
    """PSNR between a patch and its x4 bicubic down-up reconstruction.

    Low scores mean the patch carries detail that bicubic downsampling destroys.
    """
    patch = imgmath.as_image(patch)
    h, w = patch.shape[:2]
    if h % 4 or w % 4:
        raise ValueError(f"patch dims {h}x{w} not divisible by 4")
    return imgmath.psnr(patch, imgmath.down_up(patch, 4, kernel_a, antialias))


def score_records(records: Iterable[PatchRecord], images: dict, **kwargs) -> list[PatchRecord]:
    return [
        dataclasses.replace(r, psnr_bic=score_patch(r.crop(images[r.image_id]), **kwargs))
        for r in records
    ]


def resolve_threshold(records: Sequence[PatchRecord], config: CurationConfig) -> float:
    if config.threshold_mode == "median":
        return float(statistics.median(r.psnr_bic for r in records))
    return config.threshold_db


def filter_patches(records: Sequence[PatchRecord], config: CurationConfig) -> list[PatchRecord]:
    """Keep records scoring strictly below the threshold, preserving order."""
    if not records:
        return []
    if any(r.psnr_bic is None for r in records):
        raise ValueError("filter_patches needs scored records")
    threshold = resolve_threshold(records, config)
    return [r for r in records if r.psnr_bic < threshold]


def write_manifest(path, records: Iterable[PatchRecord]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow([
                r.image_id, r.x, r.y, r.size,
                "" if r.psnr_bic is None else f"{r.psnr_bic:.6f}",
                "" if r.cluster_id is None else r.cluster_id,
            ])


def read_manifest(path) -> list[PatchRecord]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise ManifestError(f"{path}: expected header {','.join(MANIFEST_FIELDS)}")
        records = []
        for lineno, row in enumerate(reader, start=2):
            try:
                records.append(PatchRecord(
                    row["image_id"], int(row["x"]), int(row["y"]), int(row["size"]),
                    float(row["psnr_bic"]) if row["psnr_bic"] else None,
                    int(row["cluster_id"]) if row["cluster_id"] else None,
                ))
            except (TypeError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    return records
