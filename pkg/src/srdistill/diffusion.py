"""Toy class-conditional diffusion model trained with a minimax + high-frequency objective.

The latent space is the image itself (identity encoder/decoder), so latents are
(H, W, C) float arrays.  The training objective is

    L = L_simple + lambda_r * L_r + lambda_d * L_d + lambda_sr * L_SR

with every term phrased for minimization:

* ``L_simple`` mean-square noise-prediction error,
* ``L_r = -min_m cos(z_hat, z_m)`` over a FIFO bank of recent real latents,
* ``L_d = +max_d cos(z_hat, z_d)`` over a FIFO bank of recent predictions,
* ``L_SR = -mean |up4(down4(x_hat)) - x_hat|^2`` on the smoothly clamped prediction.
"""

from __future__ import annotations

import collections
import dataclasses
import functools
import logging
import math
import struct
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import imgmath, nn
from .features import cosine_similarity

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"DKSR"
CHECKPOINT_VERSION = 1
PREDICT_MODES = ("direct", "scaled")


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, step: Optional[int] = None):
        super().__init__(message)
        self.step = step


class CheckpointError(ValueError):
    pass


# --------------------------------------------------------------------------- schedule


@dataclasses.dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray
    alphas_bar: np.ndarray

    @property
    def T(self) -> int:
        return len(self.betas)

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at step ``t``; ``t = 0`` is the clean sample."""
        t = int(t)
        if t == 0:
            return 1.0
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} outside [1, {self.T}]")
        return float(self.alphas_bar[t - 1])


def make_schedule(T: int = 100, beta_start: float = 1e-3, beta_end: float = 0.2) -> NoiseSchedule:
    """Linear beta schedule, endpoints inclusive.

    The defaults are the common 1000-step range (1e-4, 0.02) scaled by
    1000/T, which leaves alpha_bar_T ~ 2e-5: sampling starts from pure noise,
    so the forward process has to end there too.
    """
    if T < 2:
        raise ValueError(f"T must be >= 2, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start, beta_end, T)
    alphas_bar = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alphas_bar.setflags(write=False)
    return NoiseSchedule(betas, alphas_bar)


def forward_diffuse(z0, t: int, eps, sched: NoiseSchedule) -> np.ndarray:
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if z0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {z0.shape} vs {eps.shape}")
    ab = sched.alpha_bar(t)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


# --------------------------------------------------------------------------- denoiser


@dataclasses.dataclass(frozen=True)
class DenoiserConfig:
    image_size: int = 32
    channels: int = 3
    width: int = 16
    n_classes: int = 7
    emb_dim: int = 16


class Denoiser:
    """conv-conv -> (+ class and timestep embedding) -> conv-conv -> linear 3x3 head.

    All convolutions are 3x3 with zero padding; hidden activations are SiLU.
    """

    def __init__(self, config: DenoiserConfig):
        self.config = config
        W, C, E = config.width, config.channels, config.emb_dim
        self.layout = nn.ParamLayout({
            "w1": (9 * C, W), "b1": (W,),
            "w2": (9 * W, W), "b2": (W,),
            "wt": (E, W), "bt": (W,),
            "cls": (config.n_classes, W),
            "w3": (9 * W, W), "b3": (W,),
            "w4": (9 * W, W), "b4": (W,),
            "wh": (9 * W, C), "bh": (C,),
        })

    @property
    def n_params(self) -> int:
        return self.layout.size

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        theta = self.layout.zeros()
        p = self.layout.views(theta)
        W, C, E = self.config.width, self.config.channels, self.config.emb_dim
        p["w1"][:] = rng.normal(0.0, nn.conv_std(C), p["w1"].shape)
        for name in ("w2", "w3", "w4"):
            p[name][:] = rng.normal(0.0, nn.conv_std(W), p[name].shape)
        p["wh"][:] = rng.normal(0.0, nn.conv_std(W, 0.5), p["wh"].shape)
        p["wt"][:] = rng.normal(0.0, 1.0 / math.sqrt(E), p["wt"].shape)
        p["cls"][:] = rng.normal(0.0, 0.5, p["cls"].shape)
        return theta

    def _check_labels(self, c: np.ndarray) -> None:
        if np.any(c < 0) or np.any(c >= self.config.n_classes):
            raise ValueError(f"class labels must lie in [0, {self.config.n_classes})")

    def forward(self, theta, x, t, c):
        p = self.layout.views(theta)
        c = np.asarray(c, dtype=np.int64).reshape(-1)
        self._check_labels(c)
        temb = nn.timestep_embedding(np.asarray(t).reshape(-1), self.config.emb_dim)
        a1 = nn.conv3x3(x, p["w1"], p["b1"])
        h1 = nn.silu(a1)
        a2 = nn.conv3x3(h1, p["w2"], p["b2"])
        h2 = nn.silu(a2)
        e = temb @ p["wt"] + p["bt"] + p["cls"][c]
        g = h2 + e[:, None, None, :]
        a3 = nn.conv3x3(g, p["w3"], p["b3"])
        h3 = nn.silu(a3)
        a4 = nn.conv3x3(h3, p["w4"], p["b4"])
        h4 = nn.silu(a4)
        out = nn.conv3x3(h4, p["wh"], p["bh"])
        cache = (x, c, temb, a1, h1, a2, g, a3, h3, a4, h4)
        return out, cache

    def __call__(self, theta, x, t, c) -> np.ndarray:
        return self.forward(theta, x, t, c)[0]

    def backward(self, theta, cache, dout) -> np.ndarray:
        p = self.layout.views(theta)
        x, c, temb, a1, h1, a2, g, a3, h3, a4, h4 = cache
        grad = self.layout.zeros()
        d = self.layout.views(grad)
        dh4, d["wh"][:], d["bh"][:] = nn.conv3x3_grad(h4, p["wh"], dout)
        da4 = dh4 * nn.silu_grad(a4)
        dh3, d["w4"][:], d["b4"][:] = nn.conv3x3_grad(h3, p["w4"], da4)
        da3 = dh3 * nn.silu_grad(a3)
        dg, d["w3"][:], d["b3"][:] = nn.conv3x3_grad(g, p["w3"], da3)
        de = dg.sum(axis=(1, 2))
        d["wt"][:] = temb.T @ de
        d["bt"][:] = de.sum(axis=0)
        np.add.at(d["cls"], c, de)
        da2 = dg * nn.silu_grad(a2)
        dh1, d["w2"][:], d["b2"][:] = nn.conv3x3_grad(h1, p["w2"], da2)
        da1 = dh1 * nn.silu_grad(a1)
        _, d["w1"][:], d["b1"][:] = nn.conv3x3_grad(x, p["w1"], da1)
        return grad


def predict_clean(z_t, eps_pred, alpha_bar: float = None, mode: str = "direct") -> np.ndarray:
    """Clean-latent estimate from a noisy latent and a noise prediction.

    ``direct`` mode returns ``z_t - eps_pred``; ``scaled`` mode returns the
    schedule-consistent ``(z_t - sqrt(1 - ab) eps_pred) / sqrt(ab)``.
    """
    if mode == "direct":
        return z_t - eps_pred
    if mode == "scaled":
        return (z_t - math.sqrt(1.0 - alpha_bar) * eps_pred) / math.sqrt(alpha_bar)
    raise ValueError(f"unknown predict mode {mode!r}")


def _clean_jacobian(alpha_bar: float, mode: str) -> float:
    if mode == "direct":
        return -1.0
    return -math.sqrt(1.0 - alpha_bar) / math.sqrt(alpha_bar)


# --------------------------------------------------------------------------- memory banks


class MemoryBank:
    """Fixed-capacity FIFO of latents; index 0 is the oldest entry."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("bank capacity must be >= 1")
        self.capacity = capacity
        self._entries: collections.deque = collections.deque(maxlen=capacity)
        self.pushes = 0
        self._matrix = None

    def push(self, latent) -> "MemoryBank":
        latent = np.array(latent, dtype=np.float64)
        if not np.all(np.isfinite(latent)):
            raise ValueError("cannot store a non-finite latent")
        latent.setflags(write=False)
        self._entries.append(latent)
        self.pushes += 1
        self._matrix = None
        return self

    @property
    def cursor(self) -> int:
        """Slot the next push overwrites, in ring-buffer terms."""
        return self.pushes % self.capacity

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, i):
        return self._entries[i]

    def entries(self) -> list[np.ndarray]:
        return list(self._entries)

    def matrix(self) -> np.ndarray:
        """Entries flattened into rows, oldest first (cached until the next push)."""
        if self._matrix is None:
            self._matrix = np.stack([e.reshape(-1) for e in self._entries])
        return self._matrix


def bank_push(bank: MemoryBank, latent) -> MemoryBank:
    return bank.push(latent)


# --------------------------------------------------------------------------- loss terms


@dataclasses.dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 0.002
    lambda_d: float = 0.008
    lambda_sr: float = 1.0

    def __post_init__(self):
        for name in ("lambda_r", "lambda_d", "lambda_sr"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclasses.dataclass(frozen=True)
class LossParts:
    simple: float
    repr: float
    div: float
    sr: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.simple, self.repr, self.div, self.sr)


def total_loss(parts: Union[LossParts, Sequence[float]], weights: LossWeights) -> float:
    if not isinstance(parts, LossParts):
        parts = LossParts(*parts)
    for name, value in zip(("L_simple", "L_r", "L_d", "L_SR"), parts.as_tuple()):
        if not math.isfinite(value):
            raise DivergenceError(f"non-finite loss term {name} = {value}")
    return (parts.simple + weights.lambda_r * parts.repr
            + weights.lambda_d * parts.div + weights.lambda_sr * parts.sr)


def loss_simple(eps_pred, eps) -> float:
    eps_pred = np.asarray(eps_pred, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if eps_pred.shape != eps.shape:
        raise ValueError(f"shape mismatch: {eps_pred.shape} vs {eps.shape}")
    return float(np.mean((eps_pred - eps) ** 2))


def _cosine_grad(a: np.ndarray, b: np.ndarray, cos: float) -> np.ndarray:
    na = np.linalg.norm(a)
    return b / (na * np.linalg.norm(b)) - cos * a / (na * na)


def _similarities(z_hat, bank: MemoryBank) -> np.ndarray:
    mat = bank.matrix()
    v = z_hat.reshape(-1)
    nv = np.linalg.norm(v)
    nm = np.linalg.norm(mat, axis=1)
    if nv == 0.0 or np.any(nm == 0.0):
        raise ValueError("undefined similarity for a zero vector")
    return np.clip(mat @ v / (nm * nv), -1.0, 1.0)


def _extreme_similarity(z_hat, bank: MemoryBank, pick_max: bool, with_grad: bool):
    z_hat = np.asarray(z_hat, dtype=np.float64)
    if len(bank) == 0:
        log.warning("empty memory bank; minimax term contributes 0")
        return 0.0, (np.zeros_like(z_hat) if with_grad else None)
    sims = _similarities(z_hat, bank)
    # argmax/argmin return the first occurrence, i.e. the oldest entry on ties
    best = int(np.argmax(sims) if pick_max else np.argmin(sims))
    # the reported value comes from the scalar routine, so it agrees bit-for-bit
    # with a per-element enumeration
    value = cosine_similarity(z_hat, bank[best])
    grad = _cosine_grad(z_hat, bank[best], value) if with_grad else None
    return value, grad


def loss_repr(z_hat, bank_m: MemoryBank) -> float:
    """``-min_m cos(z_hat, z_m)``; minimizing it raises the worst-case similarity to real latents."""
    return -_extreme_similarity(z_hat, bank_m, pick_max=False, with_grad=False)[0]


def loss_repr_grad(z_hat, bank_m: MemoryBank) -> tuple[float, np.ndarray]:
    value, grad = _extreme_similarity(z_hat, bank_m, pick_max=False, with_grad=True)
    return -value, -grad


def loss_div(z_hat, bank_d: MemoryBank) -> float:
    """``max_d cos(z_hat, z_d)``; minimizing it pushes away from the nearest past prediction."""
    return _extreme_similarity(z_hat, bank_d, pick_max=True, with_grad=False)[0]


def loss_div_grad(z_hat, bank_d: MemoryBank) -> tuple[float, np.ndarray]:
    return _extreme_similarity(z_hat, bank_d, pick_max=True, with_grad=True)


SMOOTH_CLAMP_SHARPNESS = 20.0


def _softplus(u, k):
    return np.logaddexp(0.0, k * u) / k


def smooth_clamp(x, sharpness: float = SMOOTH_CLAMP_SHARPNESS):
    """Differentiable squash toward [0, 1]: ``x + sp(-x) - sp(x - 1)``.

    Since ``sp(x) - sp(-x) = x`` this equals ``sp(x) - sp(x - 1)`` and, by
    symmetry, ``1 - (sp(1 - x) - sp(-x))``; each half uses the form whose
    softplus terms are small, which avoids cancellation in saturation.
    """
    x = np.asarray(x, dtype=np.float64)
    low = _softplus(x, sharpness) - _softplus(x - 1.0, sharpness)
    high = 1.0 - (_softplus(1.0 - x, sharpness) - _softplus(-x, sharpness))
    return np.where(x < 0.5, low, high)


def smooth_clamp_grad(x, sharpness: float = SMOOTH_CLAMP_SHARPNESS):
    return 1.0 - nn.sigmoid(-sharpness * x) - nn.sigmoid(sharpness * (x - 1.0))


@functools.lru_cache(maxsize=16)
def _down_up_matrix(n: int, kernel_a: float, antialias: bool) -> np.ndarray:
    down = imgmath.ResampleSpec(Fraction(1, 4), kernel_a, antialias)
    up = imgmath.ResampleSpec(Fraction(4), kernel_a, antialias)
    mat = imgmath.resample_matrix(n // 4, up) @ imgmath.resample_matrix(n, down)
    mat.setflags(write=False)
    return mat


def _apply_separable(x, ah, aw):
    """``ah @ x @ aw.T`` over the spatial axes of (..., H, W, C) arrays."""
    y = np.matmul(ah, x.reshape(x.shape[:-2] + (-1,))).reshape(x.shape)
    return np.matmul(aw, y)


def _sr_residual(x_hat, kernel_a, antialias):
    h, w = x_hat.shape[-3:-1]
    if h % 4 or w % 4:
        raise ValueError(f"latent dims {h}x{w} not divisible by 4")
    ah = _down_up_matrix(h, kernel_a, antialias)
    aw = _down_up_matrix(w, kernel_a, antialias)
    return _apply_separable(x_hat, ah, aw) - x_hat, ah, aw


def loss_sr(z_hat, kernel_a: float = -0.5, antialias: bool = True) -> float:
    """Negative mean squared x4 bicubic reconstruction error of the clamped prediction."""
    resid, _, _ = _sr_residual(smooth_clamp(np.asarray(z_hat, dtype=np.float64)), kernel_a, antialias)
    return -float(np.mean(resid**2))


def loss_sr_grad(z_hat, kernel_a: float = -0.5, antialias: bool = True) -> tuple[float, np.ndarray]:
    """Value and gradient; a leading batch axis gives per-item values and gradients."""
    z_hat = np.asarray(z_hat, dtype=np.float64)
    resid, ah, aw = _sr_residual(smooth_clamp(z_hat), kernel_a, antialias)
    n = resid[0].size if z_hat.ndim == 4 else resid.size
    back = _apply_separable(resid, ah.T, aw.T) - resid
    grad = (-2.0 / n) * back * smooth_clamp_grad(z_hat)
    if z_hat.ndim == 4:
        return -np.mean(resid**2, axis=(1, 2, 3)), grad
    return -float(np.mean(resid**2)), grad


# --------------------------------------------------------------------------- objective


@dataclasses.dataclass
class ObjectiveResult:
    parts: LossParts
    total: float
    grad: Optional[np.ndarray]
    z_hat: np.ndarray


def objective(model: Denoiser, theta, z0, labels, t, eps, sched: NoiseSchedule,
              bank_m: MemoryBank, bank_d: MemoryBank, weights: LossWeights,
              predict_mode: str = "direct", need_grad: bool = True,
              coef: Optional[dict] = None, kernel_a: float = -0.5,
              antialias: bool = True) -> ObjectiveResult:
    """Evaluate the composite loss for fixed timesteps and noise.

    ``coef`` overrides the per-term multipliers used for the gradient (keys
    ``simple``, ``repr``, ``div``, ``sr``); by default the gradient is that of
    the weighted total.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64).reshape(-1)
    B = len(z0)
    ab = np.array([sched.alpha_bar(ti) for ti in t])
    z_t = np.sqrt(ab)[:, None, None, None] * z0 + np.sqrt(1.0 - ab)[:, None, None, None] * eps
    eps_pred, cache = model.forward(theta, z_t, t, labels)
    z_hat = np.stack([predict_clean(z_t[i], eps_pred[i], ab[i], predict_mode) for i in range(B)])

    if coef is None:
        coef = {"simple": 1.0, "repr": weights.lambda_r, "div": weights.lambda_d, "sr": weights.lambda_sr}
    l_simple = float(np.mean((eps_pred - eps) ** 2))
    l_r = l_d = l_sr = 0.0
    dz = np.zeros_like(z_hat)
    for i in range(B):
        v, g = loss_repr_grad(z_hat[i], bank_m) if len(bank_m) else (0.0, None)
        l_r += v / B
        if g is not None:
            dz[i] += coef.get("repr", 0.0) * g / B
        v, g = loss_div_grad(z_hat[i], bank_d) if len(bank_d) else (0.0, None)
        l_d += v / B
        if g is not None:
            dz[i] += coef.get("div", 0.0) * g / B
    v, g = loss_sr_grad(z_hat, kernel_a, antialias)
    l_sr = float(np.mean(v))
    dz += coef.get("sr", 0.0) * g / B
    if len(bank_m) == 0 or len(bank_d) == 0:
        log.warning("memory bank empty (M=%d, D=%d); minimax terms contribute 0", len(bank_m), len(bank_d))
    parts = LossParts(l_simple, l_r, l_d, l_sr)
    total = total_loss(parts, weights)
    grad = None
    if need_grad:
        jac = np.array([_clean_jacobian(a, predict_mode) for a in ab])[:, None, None, None]
        d_eps = coef.get("simple", 0.0) * 2.0 * (eps_pred - eps) / eps.size + jac * dz
        grad = model.backward(theta, cache, d_eps)
    return ObjectiveResult(parts, total, grad, z_hat)


# --------------------------------------------------------------------------- training


@dataclasses.dataclass(frozen=True)
class DiffusionConfig:
    image_size: int = 32
    channels: int = 3
    width: int = 16
    emb_dim: int = 16
    n_classes: int = 7
    T: int = 100
    beta_start: float = 1e-3
    beta_end: float = 0.2
    lambda_r: float = 0.002
    lambda_d: float = 0.008
    lambda_sr: float = 1.0
    bank_m: int = 64
    bank_d: int = 64
    lr: float = 1e-3
    batch_size: int = 8
    predict_mode: str = "direct"
    kernel_a: float = -0.5
    antialias: bool = True

    def denoiser_config(self) -> DenoiserConfig:
        return DenoiserConfig(self.image_size, self.channels, self.width, self.n_classes, self.emb_dim)

    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_r, self.lambda_d, self.lambda_sr)

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.T, self.beta_start, self.beta_end)

    def to_text(self) -> dict[str, str]:
        return {f.name: repr(getattr(self, f.name)) for f in dataclasses.fields(self)}

    @classmethod
    def from_text(cls, kv: dict[str, str]) -> "DiffusionConfig":
        values = {}
        for f in dataclasses.fields(cls):
            if f.name in kv:
                raw = kv[f.name]
                values[f.name] = raw.strip("'\"") if f.type == "str" else (
                    raw == "True" if f.type == "bool" else (int(raw) if f.type == "int" else float(raw)))
        return cls(**values)


@dataclasses.dataclass(frozen=True)
class StepResult:
    step: int
    parts: LossParts
    total: float


class Trainer:
    """Owns parameters, Adam state, memory banks and the run's random stream."""

    def __init__(self, config: DiffusionConfig, rng: np.random.Generator, theta=None):
        self.config = config
        self.model = Denoiser(config.denoiser_config())
        self.sched = config.schedule()
        self.weights = config.weights()
        self.rng = rng
        self.theta = self.model.init_params(rng) if theta is None else np.array(theta, dtype=np.float64)
        self.adam = nn.Adam(self.model.n_params, lr=config.lr)
        self.bank_m = MemoryBank(config.bank_m)
        self.bank_d = MemoryBank(config.bank_d)
        self.steps_done = 0

    def step(self, z0, labels) -> StepResult:
        """One optimization step on a batch of clean latents and their class labels."""
        z0 = np.asarray(z0, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.int64)
        if len(z0) == 0:
            raise ValueError("empty batch")
        step = self.steps_done + 1
        t = self.rng.integers(1, self.sched.T + 1, size=len(z0))
        eps = self.rng.standard_normal(z0.shape)
        # overflow is reported below as a DivergenceError
        with np.errstate(over="ignore", invalid="ignore"):
            res = objective(self.model, self.theta, z0, labels, t, eps, self.sched,
                            self.bank_m, self.bank_d, self.weights, self.config.predict_mode,
                            kernel_a=self.config.kernel_a, antialias=self.config.antialias)
        if not np.all(np.isfinite(res.grad)):
            raise DivergenceError(f"non-finite gradient at step {step}", step)
        for z in z0:
            self.bank_m.push(z)
        for z in res.z_hat:
            self.bank_d.push(z)
        self.adam.step(self.theta, res.grad)
        self.steps_done = step
        return StepResult(step, res.parts, res.total)


def train_step(trainer: Trainer, z0, labels) -> tuple[np.ndarray, float]:
    result = trainer.step(z0, labels)
    return trainer.theta, result.total


# --------------------------------------------------------------------------- sampling


@dataclasses.dataclass(frozen=True)
class Sample:
    image: np.ndarray
    label: int
    index: int


def ddim_timesteps(T: int, steps: int) -> np.ndarray:
    if not 1 <= steps <= T:
        raise ValueError(f"sampling steps must lie in [1, {T}], got {steps}")
    return np.round(np.linspace(T, 1, steps)).astype(np.int64)


def sample(model: Denoiser, theta, n: int, label: Union[int, Sequence[int]], sched: NoiseSchedule,
           steps: int = 50, seed: int = 0, clip_denoised: bool = True) -> list[Sample]:
    """Deterministic DDIM (eta = 0) sampling.

    Each image starts from its own seeded standard-normal latent; with a list
    of labels, classes are assigned round-robin.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    classes = [int(label)] if np.isscalar(label) else [int(c) for c in label]
    labels = np.array([classes[i % len(classes)] for i in range(n)])
    cfg = model.config
    shape = (cfg.image_size, cfg.image_size, cfg.channels)
    z = np.stack([np.random.default_rng(s).standard_normal(shape)
                  for s in np.random.SeedSequence(seed).spawn(n)])
    ts = ddim_timesteps(sched.T, steps)
    x0 = z
    for i, t in enumerate(ts):
        ab = sched.alpha_bar(t)
        eps = model(theta, z, np.full(n, t), labels)
        x0 = (z - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)
        if clip_denoised:
            x0 = np.clip(x0, 0.0, 1.0)
            eps = (z - math.sqrt(ab) * x0) / math.sqrt(1.0 - ab)
        ab_prev = sched.alpha_bar(ts[i + 1]) if i + 1 < len(ts) else 1.0
        z = math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps
    out = np.clip(x0, 0.0, 1.0)
    return [Sample(out[i], int(labels[i]), i) for i in range(n)]


# --------------------------------------------------------------------------- checkpoints


def save_checkpoint(path, theta, config: dict[str, str]) -> None:
    """``DKSR`` | u16 version | u64 n | n x f64 | u32 len | UTF-8 ``key=value`` lines (LE)."""
    theta = np.ascontiguousarray(theta, dtype="<f8")
    text = "".join(f"{k}={v}\n" for k, v in sorted(config.items())).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", theta.size))
        fh.write(theta.tobytes())
        fh.write(struct.pack("<I", len(text)))
        fh.write(text)


def load_checkpoint(path) -> tuple[np.ndarray, dict[str, str]]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    try:
        (n,) = struct.unpack_from("<Q", data, 6)
        theta = np.frombuffer(data, dtype="<f8", count=n, offset=14).astype(np.float64)
        off = 14 + 8 * n
        (tlen,) = struct.unpack_from("<I", data, off)
        text = data[off + 4:off + 4 + tlen].decode("utf-8")
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint") from exc
    if len(text.encode("utf-8")) != tlen:
        raise CheckpointError(f"{path}: truncated config block")
    config = dict(line.split("=", 1) for line in text.splitlines() if line)
    return theta, config
