"""Finite-difference checks for the diffusion objective and the SR net.

A coordinate counts as a tie point (and is skipped) when perturbing it by
+-h changes which bank element a minimax term selects; there the loss is
not differentiable and central differences mean nothing.
"""

import numpy as np

from oracles import central_difference, relative_error
from srdistill import diffusion as D
from srdistill import srtrain

TERMS = ("simple", "repr", "div", "sr")

def random_diffusion_case(rng):
    size = int(rng.choice([8, 12, 16]))
    cfg = D.DiffusionConfig(
        image_size=size, width=int(rng.integers(2, 6)), emb_dim=int(rng.choice([4, 8])),
        n_classes=int(rng.integers(2, 5)), bank_m=int(rng.integers(2, 6)), bank_d=int(rng.integers(2, 6)),
        predict_mode=str(rng.choice(D.PREDICT_MODES)))
    model = D.Denoiser(cfg.denoiser_config())
    theta = model.init_params(rng)
    # larger head than the default init so every term has a sizeable gradient
    theta += rng.normal(0.0, 0.05, theta.size)
    B = int(rng.integers(1, 4))
    shape = (B, size, size, 3)
    z0 = rng.random(shape)
    labels = rng.integers(0, cfg.n_classes, B)
    t = rng.integers(1, cfg.T + 1, B)
    eps = rng.standard_normal(shape)
    bank_m, bank_d = D.MemoryBank(cfg.bank_m), D.MemoryBank(cfg.bank_d)
    for _ in range(cfg.bank_m):
        bank_m.push(rng.random(shape[1:]))
    for _ in range(cfg.bank_d):
        bank_d.push(rng.random(shape[1:]) - 0.3)
    return cfg, model, theta, (z0, labels, t, eps, cfg.schedule(), bank_m, bank_d, cfg.weights(), cfg.predict_mode)


def _selection(z_hat, bank_m, bank_d):
    out = []
    for z in z_hat:
        sm = D._similarities(z, bank_m)
        sd = D._similarities(z, bank_d)
        out.append((int(np.argmin(sm)), int(np.argmax(sd))))
    return out


def diffusion_term_error(model, theta, args, term, rng, n_coords=64, h=1e-3):
    """Max relative error over ``n_coords`` random non-tie coordinates, and the skip count."""
    z0, labels, t, eps, sched, bank_m, bank_d, weights, mode = args
    coef = {term: 1.0}

    def run(th, need_grad=False):
        return D.objective(model, th, z0, labels, t, eps, sched, bank_m, bank_d, weights, mode,
                           need_grad=need_grad, coef=coef)

    grad = run(theta, True).grad
    base_sel = _selection(run(theta).z_hat, bank_m, bank_d)
    coords = rng.choice(theta.size, n_coords, replace=False)
    keep = []
    for i in coords:
        e = np.zeros_like(theta)
        e[i] = h
        if term in ("repr", "div") and (_selection(run(theta + e).z_hat, bank_m, bank_d) != base_sel
                                        or _selection(run(theta - e).z_hat, bank_m, bank_d) != base_sel):
            continue
        keep.append(i)
    fd = central_difference(lambda th: getattr(run(th).parts, term), theta, keep, h)
    err = relative_error(grad[keep], fd)
    return float(err.max()) if len(keep) else 0.0, n_coords - len(keep)


def random_sr_case(rng):
    cfg = srtrain.SRConfig(width=int(rng.integers(2, 6)), input_pad=int(rng.integers(0, 4)),
                           residual_bicubic=bool(rng.integers(2)))
    net = srtrain.SRNet(cfg)
    theta = net.init_params(rng) + rng.normal(0.0, 0.05, net.n_params)
    n = int(rng.choice([4, 6]))
    B = int(rng.integers(1, 3))
    hr = rng.random((B, 4 * n, 4 * n, 3))
    lr = srtrain.make_pairs(list(hr))
    return net, theta, np.stack([p.lr for p in lr]), hr


def sr_error(net, theta, lr, hr, rng, n_coords=64, h=1e-3):
    _, grad = net.loss_and_grad(theta, lr, hr)
    coords = rng.choice(theta.size, n_coords, replace=False)
    fd = central_difference(lambda th: net.loss_and_grad(th, lr, hr)[0], theta, coords, h)
    return float(relative_error(grad[coords], fd).max())
