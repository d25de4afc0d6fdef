"""Kernel selection and stacked-field containers.

The compiled extension ``fnse._kernels`` is used when it imports; otherwise
(or when ``FNSE_PURE_PYTHON=1``) the numpy implementation in
``fnse._kernels_py`` takes over with the same call signatures.
"""
from __future__ import annotations

import os

import numpy as np

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("FNSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        _compiled = None
    if _compiled is not None:
        _impl = _compiled
        BACKEND = "cython"

# relative magnitude below which Fourier modes are dropped from sparse stacks
SPARSE_THRESHOLD = 1e-15


def use_backend(name):
    """Switch kernels at runtime (``"cython"`` or ``"python"``); returns the previous name."""
    global _impl, BACKEND
    prev = BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "cython":
        from . import _kernels as compiled
        _impl, BACKEND = compiled, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True


class FieldStack:
    """Rows of real fields on one periodic grid, ready for point evaluation.

    ``linear`` keeps node values (``data``, shape ``(rows, n**d)``, plus the
    node-major transpose ``nodes``);
    ``spectral`` keeps the active full-FFT modes ``kvec`` and the real and
    imaginary coefficient parts ``cre``/``cim`` (shape ``(rows, modes)``).
    """

    def __init__(self, mode, dim, n, data=None, kvec=None, cre=None, cim=None):
        if mode not in ("linear", "spectral"):
            raise ValueError(f"unknown interpolation mode {mode!r}")
        self.mode = mode
        self.dim = dim
        self.n = n
        self.data = None if data is None else np.ascontiguousarray(data, dtype=float)
        # node-major copy used by the particle kernels
        self.nodes = None if data is None else np.ascontiguousarray(self.data.T)
        self.kvec = None if kvec is None else np.ascontiguousarray(kvec, dtype=float)
        self.cre = None if cre is None else np.ascontiguousarray(cre, dtype=float)
        self.cim = None if cim is None else np.ascontiguousarray(cim, dtype=float)

    @property
    def nrows(self):
        return (self.data if self.mode == "linear" else self.cre).shape[0]

    @classmethod
    def from_rows(cls, rows, dim, n, mode, modes=None):
        """Build from node values ``rows`` of shape ``(r, n**d)``.

        For the spectral mode, ``modes`` (a boolean mask over the full FFT
        grid) fixes the active set; by default it is every mode whose
        coefficient exceeds ``SPARSE_THRESHOLD`` times the largest one.
        """
        rows = np.asarray(rows, dtype=float).reshape(-1, n ** dim)
        if mode == "linear":
            return cls("linear", dim, n, data=rows)
        coeffs = spectral_coeffs(rows, dim, n)
        if modes is None:
            modes = active_modes([coeffs])
        return cls.from_coeffs(coeffs, modes, dim, n)

    @classmethod
    def from_coeffs(cls, coeffs, modes, dim, n):
        kfull = full_wavenumbers(dim, n)
        sel = coeffs.reshape(coeffs.shape[0], -1)[:, modes.ravel()]
        kvec = kfull.reshape(dim, -1)[:, modes.ravel()].T
        return cls("spectral", dim, n, kvec=kvec, cre=sel.real, cim=sel.imag)

    @classmethod
    def from_fields(cls, fields, mode):
        g = fields[0].grid
        rows = np.concatenate([f.values.reshape(f.comps, -1) for f in fields])
        return cls.from_rows(rows, g.dim, g.n, mode)


def full_wavenumbers(dim, n):
    k = np.fft.fftfreq(n, 1.0 / n)
    return np.stack(np.meshgrid(*([k] * dim), indexing="ij"))


def spectral_coeffs(rows, dim, n):
    """Normalized full-FFT coefficients of each row, shape ``(r, n, ..., n)``."""
    arr = np.asarray(rows, dtype=float).reshape((-1,) + (n,) * dim)
    return np.fft.fftn(arr, axes=tuple(range(1, dim + 1))) / n ** dim


def active_modes(coeff_list):
    """Union of modes above the sparsity threshold across coefficient arrays."""
    mags = np.max([np.max(np.abs(c), axis=0) for c in coeff_list], axis=0)
    top = mags.max()
    if top == 0.0:
        mask = np.zeros(mags.shape, dtype=bool)
        mask.flat[0] = True
        return mask
    return mags > SPARSE_THRESHOLD * top


def evaluate(stack, X):
    """Values of every stacked row at points ``X`` (shape ``(P, d)``) -> ``(P, rows)``."""
    X = np.ascontiguousarray(X, dtype=float)
    out = np.empty((X.shape[0], stack.nrows))
    if stack.mode == "linear":
        _impl.evaluate_linear(stack.nodes, stack.n, X, out)
    else:
        _impl.evaluate_spectral(stack.kvec, stack.cre, stack.cim, X, out)
    return out


def euler_step(stack, X, J, acc_grad, acc_pot, noise, per_noise, dt, grad_row=-1, pot_row=-1):
    """One in-place Euler-Maruyama step for particles ``X``.

    Positions are not wrapped (field evaluation is periodic), so ``X``
    keeps the unwrapped displacement of each particle.

    ``noise[p // per_noise]`` is the (already scaled) increment of particle
    ``p``.  Jacobians ``J`` follow ``J += grad u(X) J dt``; ``acc_grad`` and
    ``acc_pot`` accumulate ``|grad u(X)| dt`` (operator norm) and ``c(X) dt`` at the left
    endpoint.
    """
    if (J is not None or acc_grad is not None) and grad_row < 0:
        raise ValueError("Jacobian or gradient accumulation needs gradient rows")
    _impl.euler_step(stack, X, J, acc_grad, acc_pot, np.ascontiguousarray(noise, dtype=float),
                     int(per_noise), float(dt), int(grad_row), int(pot_row))
