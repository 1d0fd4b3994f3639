"""Pure numpy implementations of the hot kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature and the same output up to floating-point reassociation.
"""

import numpy as np


def _sqdist(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def rbf_stein(Z, G, h):
    n = Z.shape[0]
    K = np.exp(-_sqdist(Z, Z) / h)
    drive = K @ G
    repulse = (2.0 / h) * (K.sum(axis=1)[:, None] * Z - K @ Z)
    return drive / n, repulse / n


def message_reduce(logits, grads):
    mx = logits.max(axis=1)
    finite = np.isfinite(mx)
    safe_mx = np.where(finite, mx, 0.0)
    w = np.exp(logits - safe_mx[:, None])
    s = w.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = np.where(finite, safe_mx + np.log(s), -np.inf)
        g = np.einsum("nm,nmf->nf", w, grads) / s[:, None]
    g[~finite] = 0.0
    return logm, g


def distance_pairwise(xs, xt, L, alpha):
    delta = xs[:, None, :] - xt[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", delta, delta))
    res = d - L
    logp = -alpha * res * res
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(d > 0.0, -2.0 * alpha * res / d, 0.0)
    return logp, coef[..., None] * delta


def collision_pairwise(ps, pt, alphas, r, beta, dmin):
    delta = ps[:, None, :, :] - pt[None, :, :, :]
    d = np.sqrt(np.einsum("ijkl,ijkl->ijk", delta, delta))
    inside = d <= r
    term = np.where(inside, alphas * (1.0 - (d / r) ** beta), 0.0)
    logp = -term.sum(axis=2)
    dd = np.maximum(d, dmin)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = np.where(inside & (d > 0.0) & (alphas != 0.0),
                         alphas * beta * dd ** (beta - 1.0) / r ** beta / d, 0.0)
    return logp, slope[..., None] * delta


def rbf_sum(A, B, h, chunk=1024):
    total = 0.0
    for start in range(0, A.shape[0], chunk):
        total += float(np.exp(-_sqdist(A[start:start + chunk], B) / h).sum())
    return total


def grid_conditional_draw(base, grid, nbr, L, alpha, u, work):
    delta = grid[:, None, :] - nbr[None, :, :]
    d = np.sqrt(np.einsum("ijk,ijk->ij", delta, delta))
    logits = base - (alpha * (d - L) ** 2).sum(axis=1)
    mx = logits.max()
    if not np.isfinite(mx):
        return -1
    v = logits - mx
    cdf = np.cumsum(np.where(v > -60.0, np.exp(v), 0.0))
    work[:] = cdf
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, grid.shape[0] - 1)
