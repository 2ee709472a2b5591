"""Compiled evaluation of the anchored log-posterior.

Evaluation is split in two around a numpy ``tanh`` call (its vectorised
form is far faster than the scalar libm call these loops would make).
Matrix products in the backward pass go through BLAS:

    forward  : flat vector -> normalised W1, full latent matrix, pre-activations
    backward : activations -> log density and gradient

No fastmath, so floating-point contraction is off. For q <= 2 every sum
over the latent dimension is symmetric in its terms, so permuting latent
dimensions leaves results bit-identical; for q > 2 the terms are sorted
first.
"""

import numpy as np
from numba import njit

LOG_2PI = float(np.log(2.0 * np.pi))


@njit(cache=True)
def _sym_sum(buf, q):
    if q == 1:
        return buf[0]
    if q == 2:
        return buf[0] + buf[1]
    tmp = np.sort(buf[:q])
    acc = tmp[0]
    for j in range(1, q):
        acc += tmp[j]
    return acc


@njit(cache=True)
def row_sumsq(M):
    """Sum of squares, rows in order, each row summed symmetrically."""
    n, q = M.shape
    total = 0.0
    if q == 1:
        for i in range(n):
            total += M[i, 0] * M[i, 0]
    elif q == 2:
        for i in range(n):
            total += M[i, 0] * M[i, 0] + M[i, 1] * M[i, 1]
    else:
        buf = np.empty(q)
        for i in range(n):
            for j in range(q):
                buf[j] = M[i, j] * M[i, j]
            total += _sym_sum(buf, q)
    return total


@njit(cache=True)
def project(X, W, b):
    """``X @ W.T + b`` with a symmetric sum over the latent dimension."""
    n, q = X.shape
    h = W.shape[0]
    out = np.empty((n, h))
    if q == 1:
        for i in range(n):
            for k in range(h):
                out[i, k] = X[i, 0] * W[k, 0] + b[k]
    elif q == 2:
        for i in range(n):
            for k in range(h):
                out[i, k] = (X[i, 0] * W[k, 0] + X[i, 1] * W[k, 1]) + b[k]
    else:
        buf = np.empty(q)
        for i in range(n):
            for k in range(h):
                for j in range(q):
                    buf[j] = X[i, j] * W[k, j]
                out[i, k] = _sym_sum(buf, q) + b[k]
    return out


@njit(cache=True)
def fill_latents(z, X, free_index, offset, q):
    for r in range(free_index.shape[0]):
        i = free_index[r]
        for j in range(q):
            X[i, j] = z[offset + r * q + j]


@njit(cache=True)
def forward(z, X_fixed, free_index, h, q, p, constrain, eps):
    """Returns ``(ok, W1_effective, norms, X, preactivation)``."""
    W1_raw = z[: h * q].reshape((h, q))
    b1 = z[h * q: h * q + h]
    norms = np.ones(q)
    W1 = W1_raw.copy()
    ok = True
    if constrain:
        for j in range(q):
            s = 0.0
            for k in range(h):
                s += W1_raw[k, j] * W1_raw[k, j]
            norms[j] = np.sqrt(s)
            if norms[j] < eps:
                ok = False
        if ok:
            for k in range(h):
                for j in range(q):
                    W1[k, j] = W1_raw[k, j] / norms[j]
    X = X_fixed.copy()
    fill_latents(z, X, free_index, h * q + h + p * h + p, q)
    return ok, W1, norms, X, project(X, W1, b1)


@njit(cache=True)
def backward(
    z, X, H, W1, norms, Y, free_index, h, q, p,
    constrain, include_likelihood, latent_normal, include_variance_prior, scale, need_grad,
):
    """Log density and gradient given forward-pass activations ``H``."""
    n = X.shape[0]
    o_b1 = h * q
    o_W2 = o_b1 + h
    o_b2 = o_W2 + p * h
    o_X = o_b2 + p
    n_free = free_index.shape[0]
    o_tau = o_X + n_free * q
    o_sig = o_tau + 1
    dim = o_sig + 1
    u_tau = z[o_tau]
    u_sig = z[o_sig]
    tau_sq = np.exp(u_tau)
    sigma_sq = np.exp(u_sig)
    grad = np.zeros(dim if need_grad else 0)
    lp = 0.0

    if include_likelihood:
        W2 = z[o_W2:o_b2].reshape((p, h))
        b2 = z[o_b2:o_X]
        R = Y - (H @ W2.T + b2)
        ss = np.sum(R * R)
        npn = n * p
        lp += -0.5 * ss / tau_sq - 0.5 * npn * (LOG_2PI + u_tau)
        if need_grad:
            inv = 1.0 / tau_sq
            G = (R @ W2) * (1.0 - H * H)
            gW1 = G.T @ X
            gX = G @ W1
            if constrain:
                for j in range(q):
                    dot = 0.0
                    for k in range(h):
                        dot += W1[k, j] * gW1[k, j]
                    for k in range(h):
                        gW1[k, j] = (gW1[k, j] - W1[k, j] * dot) / norms[j]
            grad[:o_b1] = gW1.ravel() * inv
            grad[o_b1:o_W2] = G.sum(axis=0) * inv
            grad[o_W2:o_b2] = (R.T @ H).ravel() * inv
            grad[o_b2:o_X] = R.sum(axis=0) * inv
            for rr in range(n_free):
                i = free_index[rr]
                for j in range(q):
                    grad[o_X + rr * q + j] = gX[i, j] * inv
            grad[o_tau] = 0.5 * ss * inv - 0.5 * npn

    # N(0, sigma_sq) on decoder weights and biases
    th_ss = row_sumsq(z[:o_b1].reshape((h, q)))
    for t in range(o_b1, o_X):
        th_ss += z[t] * z[t]
    lp += -0.5 * th_ss / sigma_sq - 0.5 * o_X * (LOG_2PI + u_sig)
    if need_grad:
        for t in range(o_X):
            grad[t] -= z[t] / sigma_sq
        grad[o_sig] += 0.5 * th_ss / sigma_sq - 0.5 * o_X

    if latent_normal and n_free > 0:
        lat_ss = row_sumsq(z[o_X:o_tau].reshape((n_free, q)))
        lp += -0.5 * lat_ss - 0.5 * n_free * q * LOG_2PI
        if need_grad:
            for t in range(o_X, o_tau):
                grad[t] -= z[t]

    if include_variance_prior:
        rt = (tau_sq / scale) ** 2
        rs = (sigma_sq / scale) ** 2
        lp += 2.0 * np.log(2.0 / (np.pi * scale)) - np.log1p(rt) - np.log1p(rs)
        if need_grad:
            grad[o_tau] -= 2.0 * rt / (1.0 + rt)
            grad[o_sig] -= 2.0 * rs / (1.0 + rs)

    lp += u_tau + u_sig
    if need_grad:
        grad[o_tau] += 1.0
        grad[o_sig] += 1.0
    return lp, grad
