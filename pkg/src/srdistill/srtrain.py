"""LR/HR pair synthesis, a toy x4 SR network, and the crop-based baseline datasets."""

from __future__ import annotations

import dataclasses
import logging
import math
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import imgmath, nn
from .curation import score_patch

log = logging.getLogger(__name__)

SCALE = 4


class BudgetExhausted(RuntimeError):
    def __init__(self, message: str, accepted: int, attempts: int):
        super().__init__(message)
        self.accepted = accepted
        self.attempts = attempts

    @property
    def rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


@dataclasses.dataclass(frozen=True)
class DistilledPair:
    hr: np.ndarray
    lr: np.ndarray


def down_spec(kernel_a: float = -0.5, antialias: bool = True) -> imgmath.ResampleSpec:
    return imgmath.ResampleSpec(Fraction(1, SCALE), kernel_a, antialias)


def up_spec(kernel_a: float = -0.5) -> imgmath.ResampleSpec:
    return imgmath.ResampleSpec(Fraction(SCALE), kernel_a, True)


def make_pairs(hr_images, kernel_a: float = -0.5, antialias: bool = True) -> list[DistilledPair]:
    """Pair each HR image with its bicubic x1/4 downsample."""
    spec = down_spec(kernel_a, antialias)
    pairs = []
    for hr in hr_images:
        hr = imgmath.as_image(hr)
        h, w = hr.shape[:2]
        if h % SCALE or w % SCALE:
            raise ValueError(f"HR dims {h}x{w} not divisible by {SCALE}")
        pairs.append(DistilledPair(hr, imgmath.resample(hr, spec)))
    return pairs


# --------------------------------------------------------------------------- network


@dataclasses.dataclass(frozen=True)
class SRConfig:
    width: int = 32
    channels: int = 3
    residual_bicubic: bool = True
    input_pad: int = 3
    kernel_a: float = -0.5
    lr: float = 1e-3
    batch_size: int = 4
    augment: bool = True


class SRNet:
    """conv3x3 -> SiLU -> conv3x3 -> conv3x3 (48 ch) -> depth-to-space x4.

    With ``residual_bicubic`` the network output is added to the bicubic
    upsample of its input, so a zero head reproduces bicubic interpolation.
    The input is reflect-padded by ``input_pad`` LR pixels (the receptive
    field radius) and the output cropped back, so border pixels see image
    content instead of zeros.
    """

    def __init__(self, config: SRConfig = SRConfig()):
        self.config = config
        W, C = config.width, config.channels
        self.layout = nn.ParamLayout({
            "w1": (9 * C, W), "b1": (W,),
            "w2": (9 * W, W), "b2": (W,),
            "w3": (9 * W, C * SCALE * SCALE), "b3": (C * SCALE * SCALE,),
        })

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        theta = self.layout.zeros()
        p = self.layout.views(theta)
        C, W = self.config.channels, self.config.width
        p["w1"][:] = rng.normal(0.0, nn.conv_std(C), p["w1"].shape)
        p["w2"][:] = rng.normal(0.0, nn.conv_std(W, 0.7), p["w2"].shape)
        gain = 0.0 if self.config.residual_bicubic else 0.7
        p["w3"][:] = rng.normal(0.0, nn.conv_std(W, gain), p["w3"].shape)
        return theta

    def _base(self, lr):
        if not self.config.residual_bicubic:
            return 0.0
        return imgmath.resample(lr, up_spec(self.config.kernel_a))

    def _pad(self, lr):
        k = self.config.input_pad
        return np.pad(lr, ((0, 0), (k, k), (k, k), (0, 0)), mode="symmetric") if k else lr

    def _crop(self, hr):
        k = self.config.input_pad * SCALE
        return hr[:, k:hr.shape[1] - k, k:hr.shape[2] - k] if k else hr

    def forward(self, theta, lr):
        p = self.layout.views(theta)
        x = self._pad(lr)
        a1 = nn.conv3x3(x, p["w1"], p["b1"])
        h1 = nn.silu(a1)
        h2 = nn.conv3x3(h1, p["w2"], p["b2"])
        h3 = nn.conv3x3(h2, p["w3"], p["b3"])
        out = self._crop(nn.depth_to_space(h3, SCALE)) + self._base(lr)
        return out, (x, a1, h1, h2)

    def __call__(self, theta, lr) -> np.ndarray:
        return self.forward(theta, lr)[0]

    def backward(self, theta, cache, dout) -> np.ndarray:
        p = self.layout.views(theta)
        x, a1, h1, h2 = cache
        grad = self.layout.zeros()
        d = self.layout.views(grad)
        k = self.config.input_pad * SCALE
        dfull = np.pad(dout, ((0, 0), (k, k), (k, k), (0, 0))) if k else dout
        dh3 = nn.space_to_depth(dfull, SCALE)
        dh2, d["w3"][:], d["b3"][:] = nn.conv3x3_grad(h2, p["w3"], dh3)
        dh1, d["w2"][:], d["b2"][:] = nn.conv3x3_grad(h1, p["w2"], dh2)
        da1 = dh1 * nn.silu_grad(a1)
        _, d["w1"][:], d["b1"][:] = nn.conv3x3_grad(x, p["w1"], da1)
        return grad

    def loss_and_grad(self, theta, lr, hr) -> tuple[float, np.ndarray]:
        out, cache = self.forward(theta, lr)
        diff = out - hr
        loss = float(np.mean(diff**2))
        return loss, self.backward(theta, cache, 2.0 * diff / diff.size)

    def predict(self, theta, lr) -> np.ndarray:
        lr = np.asarray(lr, dtype=np.float64)
        single = lr.ndim == 3
        out = self(theta, lr[None] if single else lr)
        return out[0] if single else out


@dataclasses.dataclass
class SRModelParams:
    config: SRConfig
    theta: np.ndarray
    history: list = dataclasses.field(default_factory=list)

    @property
    def net(self) -> SRNet:
        return SRNet(self.config)


def dihedral(x: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 flips/rotations of the spatial axes of an (..., H, W, C) array."""
    if k >= 4:
        x = x[..., ::-1, :]
    return np.rot90(x, k % 4, axes=(-3, -2))


def train_sr(pairs: Sequence[DistilledPair], epochs: int, seed, config: SRConfig = SRConfig()) -> SRModelParams:
    """Adam on per-pixel MSE.

    Pair order is reshuffled every epoch from the seeded stream; with
    ``augment`` each batch also gets a random flip/rotation.
    """
    if not pairs:
        raise ValueError("train_sr needs at least one pair")
    rng = np.random.default_rng(seed)
    net = SRNet(config)
    theta = net.init_params(rng)
    adam = nn.Adam(net.n_params, lr=config.lr)
    lr_all = np.stack([p.lr for p in pairs])
    hr_all = np.stack([p.hr for p in pairs])
    history = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(pairs))
        losses = []
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            lr_b, hr_b = lr_all[idx], hr_all[idx]
            if config.augment:
                k = int(rng.integers(8))
                lr_b = np.ascontiguousarray(dihedral(lr_b, k))
                hr_b = np.ascontiguousarray(dihedral(hr_b, k))
            loss, grad = net.loss_and_grad(theta, lr_b, hr_b)
            if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
                raise FloatingPointError(f"SR training diverged at epoch {epoch}")
            adam.step(theta, grad)
            losses.append(loss * len(idx))
        history.append(sum(losses) / len(pairs))
        log.debug("sr epoch %d loss %.6g", epoch, history[-1])
    return SRModelParams(config, theta, history)


def evaluate(params: SRModelParams, test_pairs: Sequence[DistilledPair]) -> tuple[float, float]:
    """Mean PSNR (dB) and mean SSIM of the clamped network output over ``test_pairs``."""
    if not test_pairs:
        raise ValueError("evaluate needs at least one test pair")
    net = params.net
    psnrs, ssims = [], []
    for pair in test_pairs:
        out = np.clip(net.predict(params.theta, pair.lr), 0.0, 1.0)
        psnrs.append(imgmath.psnr(out, pair.hr))
        ssims.append(imgmath.ssim(out, pair.hr))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def bicubic_baseline(test_pairs: Sequence[DistilledPair], kernel_a: float = -0.5) -> tuple[float, float]:
    psnrs, ssims = [], []
    for pair in test_pairs:
        up = np.clip(imgmath.resample(pair.lr, up_spec(kernel_a)), 0.0, 1.0)
        psnrs.append(imgmath.psnr(up, pair.hr))
        ssims.append(imgmath.ssim(up, pair.hr))
    return float(np.mean(psnrs)), float(np.mean(ssims))


# --------------------------------------------------------------------------- baselines


def _random_crop(images, size, rng):
    img = images[int(rng.integers(len(images)))]
    h, w = img.shape[:2]
    if size > min(h, w):
        raise ValueError(f"crop size {size} exceeds image dims {h}x{w}")
    y = int(rng.integers(h - size + 1))
    x = int(rng.integers(w - size + 1))
    return img[y:y + size, x:x + size].copy(), (x, y)


def baseline_random_crop(source_images, n: int, size: int, seed) -> list[np.ndarray]:
    """``n`` fixed-size crops at uniformly random images and positions."""
    rng = np.random.default_rng(seed)
    return [_random_crop(source_images, size, rng)[0] for _ in range(n)]


def baseline_threshold_crop(source_images, n: int, size: int, seed, threshold: float,
                            budget_factor: int = 100, kernel_a: float = -0.5,
                            antialias: bool = True) -> list[np.ndarray]:
    """Random crops kept only if their down-up PSNR is below ``threshold``."""
    rng = np.random.default_rng(seed)
    budget = budget_factor * n
    kept: list[np.ndarray] = []
    attempts = 0
    while len(kept) < n:
        if attempts >= budget:
            rate = len(kept) / attempts if attempts else 0.0
            raise BudgetExhausted(
                f"only {len(kept)}/{n} crops passed {threshold} dB after {attempts} attempts "
                f"(acceptance rate {rate:.4f})", len(kept), attempts)
        crop, _ = _random_crop(source_images, size, rng)
        attempts += 1
        if score_patch(crop, kernel_a, antialias) < threshold:
            kept.append(crop)
    return kept


def acceptance_rate(source_images, size: int, seed, threshold: float, draws: int = 1000,
                    kernel_a: float = -0.5, antialias: bool = True) -> float:
    """Fraction of ``draws`` uniform random crops scoring below ``threshold``."""
    rng = np.random.default_rng(seed)
    hits = sum(score_patch(_random_crop(source_images, size, rng)[0], kernel_a, antialias) < threshold
               for _ in range(draws))
    return hits / draws
