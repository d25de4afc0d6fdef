"""Pure-numpy versions of the particle kernels in ``_kernels.pyx``."""
from __future__ import annotations

import itertools

import numpy as np

TWO_PI = 2.0 * np.pi


def _wrap(x):
    return x - TWO_PI * np.floor(x / TWO_PI)


def _eval_linear(F, n, X):
    P, d = X.shape
    h = TWO_PI / n
    s = _wrap(X) / h
    i0 = np.floor(s).astype(np.int64)
    w = s - i0
    i0 %= n
    i1 = (i0 + 1) % n
    out = np.zeros((P, F.shape[1]))
    for corner in itertools.product((0, 1), repeat=d):
        wt = np.ones(P)
        flat = np.zeros(P, dtype=np.int64)
        for a in range(d):
            if corner[a]:
                wt = wt * w[:, a]
                flat = flat * n + i1[:, a]
            else:
                wt = wt * (1.0 - w[:, a])
                flat = flat * n + i0[:, a]
        out += wt[:, None] * F[flat]
    return out


def _eval_spectral(K, CR, CI, X, chunk=4096):
    out = np.empty((X.shape[0], CR.shape[0]))
    for s in range(0, X.shape[0], chunk):
        ph = X[s:s + chunk] @ K.T
        out[s:s + chunk] = np.cos(ph) @ CR.T - np.sin(ph) @ CI.T
    return out


def operator_norm(G):
    """Largest singular value of each matrix in the stack ``G`` (shape ``(P, d, d)``)."""
    if G.shape[1] == 1:
        return np.abs(G[:, 0, 0])
    return np.linalg.norm(G, ord=2, axis=(1, 2))


def evaluate_linear(F, n, X, out):
    out[...] = _eval_linear(F, n, X)


def evaluate_spectral(K, CR, CI, X, out):
    out[...] = _eval_spectral(K, CR, CI, X)


def euler_step(stack, X, J, acc_grad, acc_pot, noise, per_noise, dt, grad_row, pot_row):
    d = X.shape[1]
    if stack.mode == "spectral":
        vals = _eval_spectral(stack.kvec, stack.cre, stack.cim, X)
    else:
        vals = _eval_linear(stack.nodes, stack.n, X)
    if acc_pot is not None and pot_row >= 0:
        acc_pot += vals[:, pot_row] * dt
    if J is not None or acc_grad is not None:
        G = vals[:, grad_row:grad_row + d * d].reshape(-1, d, d)
        if acc_grad is not None:
            acc_grad += operator_norm(G) * dt
        if J is not None:
            J += np.einsum("pik,pkj->pij", G, J) * dt
    q = np.arange(X.shape[0]) // per_noise
    X += vals[:, :d] * dt + noise[q]
