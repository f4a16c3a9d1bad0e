"""Minimal hand-differentiated building blocks shared by the denoiser and the SR net.

Parameters live in one flat float64 vector; a :class:`ParamLayout` hands out
named, shaped views into it so optimizers and gradient checks see a single
array.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import _backend


class ParamLayout:
    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self.shapes = dict(shapes)
        self.offsets: dict[str, tuple[int, int]] = {}
        pos = 0
        for name, shape in self.shapes.items():
            n = math.prod(shape)
            self.offsets[name] = (pos, pos + n)
            pos += n
        self.size = pos

    def views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        if flat.shape != (self.size,):
            raise ValueError(f"expected flat vector of length {self.size}, got {flat.shape}")
        return {name: flat[a:b].reshape(self.shapes[name]) for name, (a, b) in self.offsets.items()}

    def zeros(self) -> np.ndarray:
        return np.zeros(self.size)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def silu(x):
    return x * sigmoid(x)


def silu_grad(x):
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def conv3x3(x, w, b):
    return _backend.conv3x3_forward(x, w, b)


def conv3x3_grad(x, w, dy):
    return _backend.conv3x3_backward(x, w, dy)


def timestep_embedding(t, dim: int) -> np.ndarray:
    """Sinusoidal embedding: ``[sin(t f_k), cos(t f_k)]`` with geometric frequencies."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1)


def depth_to_space(x: np.ndarray, r: int) -> np.ndarray:
    """(B, H, W, C*r*r) -> (B, H*r, W*r, C); channel index is (c, dy, dx) major-to-minor."""
    B, H, W, Crr = x.shape
    C = Crr // (r * r)
    y = x.reshape(B, H, W, C, r, r).transpose(0, 1, 4, 2, 5, 3)
    return y.reshape(B, H * r, W * r, C)


def space_to_depth(y: np.ndarray, r: int) -> np.ndarray:
    """Inverse (and adjoint) of :func:`depth_to_space`."""
    B, Hr, Wr, C = y.shape
    x = y.reshape(B, Hr // r, r, Wr // r, r, C).transpose(0, 1, 3, 5, 2, 4)
    return x.reshape(B, Hr // r, Wr // r, C * r * r)


@dataclasses.dataclass
class Adam:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = None
    v: np.ndarray = None

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Update ``params`` in place and return it."""
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        params -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params


def conv_std(fan_in_channels: int, gain: float = 1.0) -> float:
    """He-style init scale for a 3x3 conv."""
    return gain * math.sqrt(2.0 / (9 * fan_in_channels))
