"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``.

Selected automatically when the extension is not built, or forced with
``SRDISTILL_PURE_PYTHON=1``.
"""

import numpy as np


def _im2col(x):
    B, H, W, C = x.shape
    padded = np.zeros((B, H + 2, W + 2, C))
    padded[:, 1:-1, 1:-1, :] = x
    cols = np.empty((B, H, W, 9 * C))
    for ky in range(3):
        for kx in range(3):
            k = ky * 3 + kx
            cols[..., k * C:(k + 1) * C] = padded[:, ky:ky + H, kx:kx + W, :]
    return cols.reshape(B * H * W, 9 * C)


def conv3x3_forward(x, w, bias):
    B, H, W, C = x.shape
    if w.shape[0] != 9 * C or bias.shape[0] != w.shape[1]:
        raise ValueError("weight/bias shape does not match input channels")
    out = _im2col(x) @ w + bias
    return out.reshape(B, H, W, w.shape[1])


def conv3x3_backward(x, w, dy):
    B, H, W, C = x.shape
    Co = w.shape[1]
    cols = _im2col(x)
    dy2 = dy.reshape(-1, Co)
    dw = cols.T @ dy2
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.T).reshape(B, H, W, 9, C)
    dpad = np.zeros((B, H + 2, W + 2, C))
    for ky in range(3):
        for kx in range(3):
            dpad[:, ky:ky + H, kx:kx + W, :] += dcols[:, :, :, ky * 3 + kx, :]
    return dpad[:, 1:-1, 1:-1, :].copy(), dw, db


def apply_taps(src, index, weight):
    n_out, taps = index.shape
    out = np.zeros((n_out, src.shape[1]))
    for k in range(taps):
        out += weight[:, k:k + 1] * src[index[:, k]]
    return out


def nearest_centroid(x, centroids):
    dist = np.stack([((x - c) ** 2).sum(axis=1) for c in centroids], axis=1)
    labels = np.argmin(dist, axis=1).astype(np.int64)
    return labels, dist[np.arange(len(x)), labels]
