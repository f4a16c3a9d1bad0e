"""Slow, independent reference implementations used as test oracles.

Nothing here calls into the code paths it checks beyond shared constants.
"""

import math

import numpy as np


def cubic_poly(x, a):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def reflect(j, n):
    while j < 0 or j >= n:
        j = -1 - j if j < 0 else 2 * n - 1 - j
    return j


def axis_weights(n_in, n_out, scale, a, antialias):
    """Dense per-axis weights built with scalar loops."""
    stretch = 1.0 / scale if (antialias and scale < 1) else 1.0
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / scale - 0.5
        taps = {}
        j0 = math.floor(center - 2 * stretch) - 1
        for j in range(j0, j0 + int(4 * stretch) + 4):
            w = cubic_poly((j - center) / stretch, a)
            if w != 0.0:
                taps[j] = taps.get(j, 0.0) + w
        total = sum(taps.values())
        for j, w in taps.items():
            mat[i, reflect(j, n_in)] += w / total
    return mat


def resample_dense_2d(img, scale, a=-0.5, antialias=True):
    """Each output pixel as an explicit double sum over the whole input."""
    h, w, c = img.shape
    ho, wo = math.floor(h * scale + 0.5), math.floor(w * scale + 0.5)
    wr = axis_weights(h, ho, scale, a, antialias)
    wc = axis_weights(w, wo, scale, a, antialias)
    out = np.zeros((ho, wo, c))
    for i in range(ho):
        for j in range(wo):
            for y in range(h):
                for x in range(w):
                    out[i, j] += wr[i, y] * wc[j, x] * img[y, x]
    return out


def mse_loop(x, y):
    total = 0.0
    for u, v in zip(np.ravel(x), np.ravel(y)):
        total += (u - v) ** 2
    return total / np.size(x)


def psnr_loop(x, y):
    err = mse_loop(x, y)
    return 100.0 if err < 1e-10 else 10 * math.log10(1 / err)


def ssim_naive(x, y, size=11, sigma=1.5, k1=0.01, k2=0.03):
    ax = np.arange(size) - (size - 1) / 2
    g1 = np.exp(-ax**2 / (2 * sigma**2))
    win = np.outer(g1, g1)
    win /= win.sum()
    c1, c2 = k1**2, k2**2
    h, w, ch = x.shape
    per_channel = []
    for c in range(ch):
        vals = []
        for i in range(h - size + 1):
            for j in range(w - size + 1):
                px = x[i:i + size, j:j + size, c]
                py = y[i:i + size, j:j + size, c]
                mx = (win * px).sum()
                my = (win * py).sum()
                vx = (win * (px - mx) ** 2).sum()
                vy = (win * (py - my) ** 2).sum()
                cov = (win * (px - mx) * (py - my)).sum()
                vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                            / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
        per_channel.append(np.mean(vals))
    return float(np.mean(per_channel))


def cosine(a, b):
    a = np.ravel(a)
    b = np.ravel(b)
    dot = sum(float(u) * float(v) for u, v in zip(a, b))
    return dot / (math.sqrt(sum(float(u) ** 2 for u in a)) * math.sqrt(sum(float(v) ** 2 for v in b)))


def conv3x3_direct(x, w, b):
    """Zero-padded 3x3 convolution with explicit loops; w is (9*Cin, Cout)."""
    B, H, W, C = x.shape
    co = w.shape[1]
    wk = w.reshape(3, 3, C, co)
    out = np.zeros((B, H, W, co)) + b
    for ky in range(3):
        for kx in range(3):
            for i in range(H):
                for j in range(W):
                    yy, xx = i + ky - 1, j + kx - 1
                    if 0 <= yy < H and 0 <= xx < W:
                        out[:, i, j, :] += x[:, yy, xx, :] @ wk[ky, kx]
    return out


def central_difference(f, theta, coords, h=1e-3):
    grads = []
    for i in coords:
        e = np.zeros_like(theta)
        e[i] = h
        grads.append((f(theta + e) - f(theta - e)) / (2 * h))
    return np.array(grads)


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
