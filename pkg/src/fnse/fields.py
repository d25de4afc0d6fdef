"""Periodic grid fields on [0, 2pi)^d with spectral calculus.

Vector fields store components along axis 0; tensor-valued gradients use
the flat index ``i * d + j`` for ``d_j f_i`` (row i, column j), the same
layout as a Jacobian matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .levy import LevySymbol, symbol_radial

DIV_FREE_TOL = 1e-10


@dataclass(frozen=True)
class PeriodicGrid:
    dim: int
    n: int

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"grid dimension must be 1, 2 or 3, got {self.dim}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"grid resolution must be a power of two >= 4, got {self.n}")

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def h(self):
        return 2.0 * np.pi / self.n

    @property
    def size(self):
        return self.n ** self.dim

    @property
    def cell_volume(self):
        return self.h ** self.dim

    @property
    def volume(self):
        return (2.0 * np.pi) ** self.dim

    @cached_property
    def axes(self):
        return np.arange(self.n) * self.h

    @cached_property
    def coords(self):
        """Node coordinates, shape ``(dim, n, ..., n)``."""
        return np.stack(np.meshgrid(*([self.axes] * self.dim), indexing="ij"))

    def points(self):
        """Node coordinates as a ``(size, dim)`` array in row-major order."""
        return self.coords.reshape(self.dim, -1).T.copy()

    @cached_property
    def spectral_shape(self):
        return self.shape[:-1] + (self.n // 2 + 1,)

    @cached_property
    def wavenumbers(self):
        """Integer wavenumbers on the rfft layout, shape ``(dim, *spectral_shape)``."""
        full = np.fft.fftfreq(self.n, 1.0 / self.n)
        half = np.fft.rfftfreq(self.n, 1.0 / self.n)
        axes = [full] * (self.dim - 1) + [half]
        return np.stack(np.meshgrid(*axes, indexing="ij"))

    @cached_property
    def derivative_wavenumbers(self):
        """Wavenumbers with the Nyquist entry of each axis zeroed."""
        k = self.wavenumbers.copy()
        for j in range(self.dim):
            k[j][np.abs(k[j]) == self.n // 2] = 0.0
        return k

    @cached_property
    def k_norm(self):
        return np.sqrt(np.sum(self.wavenumbers ** 2, axis=0))

    def fft(self, values):
        axes = tuple(range(-self.dim, 0))
        return np.fft.rfftn(values, axes=axes)

    def ifft(self, coeffs):
        axes = tuple(range(-self.dim, 0))
        return np.fft.irfftn(coeffs, s=self.shape, axes=axes)


class PeriodicField:
    """Immutable real field sampled at the nodes of a :class:`PeriodicGrid`.

    ``values`` has shape ``(comps, *grid.shape)``.  The rfft coefficients are
    computed once at construction.
    """

    def __init__(self, grid, values, divergence_free=False, check=True):
        v = np.array(values, dtype=float)
        if v.shape == grid.shape:
            v = v[None]
        if v.shape[1:] != grid.shape:
            raise ValueError(f"values of shape {v.shape} do not fit grid {grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.flags.writeable = False
        self.grid = grid
        self.values = v
        coeffs = grid.fft(v)
        coeffs.flags.writeable = False
        self.coeffs = coeffs
        if divergence_free and check:
            if v.shape[0] != grid.dim:
                raise ValueError("only vector fields can be divergence-free")
            div = np.max(np.abs(divergence(self).values)) if grid.n else 0.0
            scale = max(np.max(np.abs(v)), 1.0)
            if div > DIV_FREE_TOL * scale:
                raise ValueError(f"field flagged divergence-free has divergence {div:.3e}")
        self.divergence_free = bool(divergence_free)

    @classmethod
    def from_coeffs(cls, grid, coeffs, divergence_free=False, check=False):
        return cls(grid, grid.ifft(coeffs), divergence_free=divergence_free, check=check)

    @classmethod
    def from_function(cls, grid, func, divergence_free=False):
        """Sample ``func(*coords)`` at the nodes; it may return a list of components."""
        vals = func(*grid.coords)
        if isinstance(vals, (list, tuple)):
            vals = np.stack([np.broadcast_to(np.asarray(c, float), grid.shape) for c in vals])
        else:
            vals = np.broadcast_to(np.asarray(vals, float), grid.shape)
        return cls(grid, vals, divergence_free=divergence_free)

    @classmethod
    def zeros(cls, grid, comps=1):
        return cls(grid, np.zeros((comps,) + grid.shape), divergence_free=comps == grid.dim)

    @property
    def comps(self):
        return self.values.shape[0]

    def __add__(self, other):
        return PeriodicField(self.grid, self.values + other.values,
                             divergence_free=self.divergence_free and other.divergence_free,
                             check=False)

    def __sub__(self, other):
        return PeriodicField(self.grid, self.values - other.values,
                             divergence_free=self.divergence_free and other.divergence_free,
                             check=False)

    def scaled(self, c):
        return PeriodicField(self.grid, c * self.values, divergence_free=self.divergence_free,
                             check=False)

    def mean(self):
        return self.values.reshape(self.comps, -1).mean(axis=1)

    def max_norm(self):
        return float(np.max(np.sqrt(np.sum(self.values ** 2, axis=0))))

    def __repr__(self):
        return f"PeriodicField(dim={self.grid.dim}, n={self.grid.n}, comps={self.comps})"


def spectral_gradient(f):
    """Exact gradient of the trigonometric interpolant; Nyquist derivatives are zero."""
    g = f.grid
    k = g.derivative_wavenumbers
    out = np.empty((f.comps * g.dim,) + g.spectral_shape, dtype=complex)
    for i in range(f.comps):
        for j in range(g.dim):
            out[i * g.dim + j] = 1j * k[j] * f.coeffs[i]
    return PeriodicField.from_coeffs(g, out)


def divergence(u):
    g = u.grid
    if u.comps != g.dim:
        raise ValueError("divergence needs a vector field")
    k = g.derivative_wavenumbers
    c = sum(1j * k[j] * u.coeffs[j] for j in range(g.dim))
    return PeriodicField.from_coeffs(g, c[None])


def _project_coeffs(grid, coeffs):
    # same wavenumbers as the derivative operators, so P(u) is exactly
    # divergence-free under `divergence`
    k = grid.derivative_wavenumbers
    k2 = np.sum(k ** 2, axis=0)
    safe = np.where(k2 == 0, 1.0, k2)
    kdotu = sum(k[j] * coeffs[j] for j in range(grid.dim))
    out = np.array(coeffs)
    for j in range(grid.dim):
        out[j] = coeffs[j] - k[j] * kdotu / safe
    return out


def leray_project(u):
    """Apply I - k k^T/|k|^2 to every non-zero mode; the mean passes through."""
    g = u.grid
    if u.comps != g.dim:
        raise ValueError("Leray projection needs a vector field")
    return PeriodicField.from_coeffs(g, _project_coeffs(g, u.coeffs), divergence_free=True)


def remove_mean(u):
    c = np.array(u.coeffs)
    c[(slice(None),) + (0,) * u.grid.dim] = 0.0
    return PeriodicField.from_coeffs(u.grid, c, divergence_free=u.divergence_free)


def symbol_on_grid(grid, symbol, viscosity=1.0):
    """psi(nu^{1/alpha} k) for every rfft mode (real for symmetric measures)."""
    scale = viscosity ** (1.0 / symbol.alpha)
    return np.real(symbol_radial(symbol, scale * grid.k_norm, grid.dim))


def generator_multiplier(grid, symbol, viscosity=1.0, adjoint=False):
    """Fourier multiplier of the generator L_nu (or its dual), i.e. -psi(nu^{1/alpha} k).

    The built-in measures are symmetric, so the dual multiplier (the complex
    conjugate of the symbol) coincides with the primal one.
    """
    m = -symbol_on_grid(grid, symbol, viscosity).astype(complex)
    return np.conj(m) if adjoint else m


def semigroup_multiplier(grid, symbol, viscosity, t, adjoint=False):
    if t > 0:
        raise ValueError(f"semigroup time must be <= 0 (backward convention), got {t}")
    return np.exp(-t * generator_multiplier(grid, symbol, viscosity, adjoint))


def semigroup_apply(f, t, symbol, viscosity=1.0, adjoint=False):
    """T^nu_t f = E f(nu^{1/alpha} L_t + x): multiply mode k by exp(t psi(nu^{1/alpha} k))."""
    if viscosity <= 0:
        raise ValueError("viscosity must be positive")
    m = semigroup_multiplier(f.grid, symbol, viscosity, t, adjoint)
    if t == 0:
        return f
    return PeriodicField.from_coeffs(f.grid, f.coeffs * m, divergence_free=f.divergence_free)


def interpolate(f, x, mode="spectral"):
    """Values of ``f`` at points ``x`` (shape ``(d,)`` or ``(P, d)``); returns ``(P, comps)``.

    ``spectral`` evaluates the trigonometric interpolant (exact for
    band-limited fields, costs one term per active Fourier mode);
    ``linear`` is multilinear interpolation between nodes.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    stack = kernels.FieldStack.from_fields([f], mode)
    return kernels.evaluate(stack, pts)


def grid_norm(values, p, grid):
    """L^p norm of the pointwise Euclidean norm of ``values`` (components on axis 0)."""
    mag = np.sqrt(np.sum(np.asarray(values) ** 2, axis=0))
    if np.isinf(p):
        return float(mag.max())
    if p < 1:
        raise ValueError("p must be >= 1")
    return float((np.sum(mag ** p) * grid.cell_volume) ** (1.0 / p))


def sobolev_norm(f, order=0, p=2.0):
    """Grid-quadrature L^p norm of f (order 0) or of its gradient (order 1).

    The sup norm is the grid maximum, a lower bound of the true supremum.
    """
    if order == 0:
        return grid_norm(f.values, p, f.grid)
    if order == 1:
        return grid_norm(spectral_gradient(f).values, p, f.grid)
    raise ValueError("only orders 0 and 1 are supported")


@dataclass
class VelocityHistory:
    """Divergence-free slices at decreasing times 0 = t_0 > t_1 > ... > t_K = T.

    Between slices the velocity is linear in time.
    """

    times: np.ndarray
    slices: list
    _grads: list = field(default=None, repr=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.slices) or len(self.slices) == 0:
            raise ValueError("need one slice per time")
        if abs(self.times[0]) > 1e-14:
            raise ValueError("the first slice must be at t = 0")
        if np.any(np.diff(self.times) >= 0):
            raise ValueError("slice times must be strictly decreasing")
        g = self.slices[0].grid
        for s in self.slices:
            if s.grid != g or s.comps != g.dim:
                raise ValueError("slices must be vector fields on one grid")
            if not s.divergence_free:
                raise ValueError("velocity slices must be divergence-free")

    @classmethod
    def frozen(cls, u, horizon):
        """Time-independent velocity ``u`` on [horizon, 0]."""
        if horizon >= 0:
            return cls(np.array([0.0]), [u])
        return cls(np.array([0.0, horizon]), [u, u])

    @property
    def grid(self):
        return self.slices[0].grid

    @property
    def horizon(self):
        return float(self.times[-1])

    def covers(self, t):
        return self.horizon - 1e-12 <= t <= 1e-12 or len(self.times) == 1

    @property
    def gradients(self):
        if self._grads is None:
            self._grads = [spectral_gradient(s) for s in self.slices]
        return self._grads

    def weights(self, t):
        """Index pair and linear weight for time ``t``."""
        if len(self.times) == 1:
            return 0, 0, 0.0
        if not self.covers(t):
            raise ValueError(f"velocity undefined at t = {t} (history covers [{self.horizon}, 0])")
        t = min(max(t, self.horizon), 0.0)
        j = int(np.searchsorted(-self.times, -t, side="right")) - 1
        j = min(max(j, 0), len(self.times) - 2)
        t0, t1 = self.times[j], self.times[j + 1]
        theta = (t0 - t) / (t0 - t1)
        return j, j + 1, float(theta)

    def at(self, t):
        j0, j1, th = self.weights(t)
        if th == 0.0:
            return self.slices[j0]
        v = (1 - th) * self.slices[j0].values + th * self.slices[j1].values
        return PeriodicField(self.grid, v, divergence_free=True, check=False)

    def drift_stack(self, t, with_gradient=True):
        """Row-stacked ``[u_1..u_d, du_i/dx_j...]`` node values at time ``t``."""
        j0, j1, th = self.weights(t)
        parts0 = [self.slices[j0].values]
        if with_gradient:
            parts0.append(self.gradients[j0].values)
        a = np.concatenate(parts0).reshape(-1, self.grid.size)
        if th == 0.0:
            return a
        parts1 = [self.slices[j1].values]
        if with_gradient:
            parts1.append(self.gradients[j1].values)
        b = np.concatenate(parts1).reshape(-1, self.grid.size)
        return (1 - th) * a + th * b

    def is_zero(self):
        return all(not np.any(s.values) for s in self.slices)


@dataclass
class FieldSeries:
    """Fields at decreasing times starting from 0, linear in time between them."""

    times: np.ndarray
    fields: list

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if len(self.times) != len(self.fields) or len(self.fields) == 0:
            raise ValueError("need one field per time")
        if len(self.times) > 1 and np.any(np.diff(self.times) >= 0):
            raise ValueError("times must be strictly decreasing")

    def __len__(self):
        return len(self.fields)

    @property
    def grid(self):
        return self.fields[0].grid

    def at(self, t):
        ts = self.times
        if len(ts) == 1 or abs(t - ts[0]) <= 1e-12:
            return self.fields[0]
        if not (ts[-1] - 1e-12 <= t <= ts[0] + 1e-12):
            raise ValueError(f"time {t} outside [{ts[-1]}, {ts[0]}]")
        j = int(np.searchsorted(-ts, -t, side="right")) - 1
        j = min(max(j, 0), len(ts) - 2)
        th = (ts[j] - t) / (ts[j] - ts[j + 1])
        if th <= 1e-12:
            return self.fields[j]
        if th >= 1 - 1e-12:
            return self.fields[j + 1]
        a, b = self.fields[j], self.fields[j + 1]
        return PeriodicField(a.grid, (1 - th) * a.values + th * b.values,
                             divergence_free=a.divergence_free and b.divergence_free,
                             check=False)

    def as_history(self):
        return VelocityHistory(self.times, list(self.fields))


def project_values(grid, values):
    """Leray projection of a batch of vector fields.

    ``values`` has shape ``(..., dim, *grid.shape)``; the projection acts on
    the ``dim`` axis of every leading index.
    """
    d = grid.dim
    axes = tuple(range(-d, 0))
    c = np.fft.rfftn(values, axes=axes)
    k = grid.derivative_wavenumbers
    k2 = np.sum(k ** 2, axis=0)
    safe = np.where(k2 == 0, 1.0, k2)
    comp = [(Ellipsis, j) + (slice(None),) * d for j in range(d)]
    kdotu = sum(k[j] * c[comp[j]] for j in range(d))
    for j in range(d):
        c[comp[j]] -= k[j] * kdotu / safe
    return np.fft.irfftn(c, s=grid.shape, axes=axes)


def gradient_values(grid, values):
    """Spectral gradient of a batch of fields ``(..., comps, *shape)``.

    Returns ``(..., comps * dim, *shape)`` with entry ``i * dim + j`` equal
    to the derivative of component ``i`` along axis ``j``.
    """
    d = grid.dim
    axes = tuple(range(-d, 0))
    c = np.fft.rfftn(values, axes=axes)
    k = grid.derivative_wavenumbers
    out = np.stack([1j * k[j] * c for j in range(d)], axis=-d - 1)
    lead = values.shape[:-d - 1]
    comps = values.shape[-d - 1]
    out = out.reshape(lead + (comps * d,) + c.shape[-d:])
    return np.fft.irfftn(out, s=grid.shape, axes=axes)
