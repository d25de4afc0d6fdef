"""Deterministic pseudo-spectral reference for the fractal Navier-Stokes and Burgers equations.

The backward problem on ``[T, 0]`` is solved in reflected time
``tau = -t``, where it reads::

    dv/dtau = L_nu v + P[(v . grad) v]          (Navier-Stokes, d = 2)
    dv/dtau = L_nu v + d/dx (v^2 / 2)           (Burgers, d = 1)

Integration is by the integrating-factor (Lawson) fourth-order Runge-Kutta
method with the dissipation multiplier treated exactly, 2/3-rule
dealiasing and a Leray projection in every stage.
"""
from __future__ import annotations

import numpy as np

from . import fields as F


class StepSizeError(ValueError):
    """The advective CFL number of the reference step exceeds one."""


def _dealias_mask(grid):
    kmax = grid.n // 3
    k = grid.wavenumbers
    mask = np.ones(grid.spectral_shape, dtype=bool)
    for j in range(grid.dim):
        mask &= np.abs(k[j]) <= kmax
    return mask


def _check_cfl(vmax, dt, grid):
    cfl = vmax * dt / grid.h
    if cfl > 1.0:
        raise StepSizeError(f"advective CFL number {cfl:.3g} > 1; reduce dt_ref")


def _save_steps(horizon, dt_ref, save_times):
    n_total = int(round(-horizon / dt_ref))
    if n_total < 0 or abs(n_total * dt_ref + horizon) > 1e-9 * max(1.0, -horizon):
        raise ValueError("horizon must be a nonpositive multiple of dt_ref")
    if save_times is None:
        save_times = [0.0, horizon]
    steps = []
    for t in save_times:
        s = int(round(-t / dt_ref))
        if t > 1e-14 or abs(s * dt_ref + t) > 1e-9 * max(1.0, -t) or s > n_total:
            raise ValueError(f"save time {t} is not a step of the reference run")
        steps.append(s)
    if any(b <= a for a, b in zip(steps, steps[1:])):
        raise ValueError("save times must be strictly decreasing")
    return n_total, steps


def _integrate(grid, c0, psi, rhs, horizon, dt_ref, save_times):
    n_total, steps = _save_steps(horizon, dt_ref, save_times)
    h = dt_ref
    E = np.exp(-psi * h)
    E2 = np.exp(-psi * h / 2.0)
    c = np.array(c0)
    out = {}
    want = set(steps)
    if 0 in want:
        out[0] = c.copy()
    for s in range(1, n_total + 1):
        k1 = rhs(c, h)
        k2 = rhs(E2 * (c + 0.5 * h * k1), h)
        k3 = rhs(E2 * c + 0.5 * h * k2, h)
        k4 = rhs(E * c + h * E2 * k3, h)
        c = E * c + (h / 6.0) * (E * k1 + 2.0 * E2 * (k2 + k3) + k4)
        if s in want:
            out[s] = c.copy()
    times = np.array([-s * dt_ref for s in steps])
    return times, [out[s] for s in steps]


def solve_fnse_spectral(u0, symbol, viscosity, horizon, dt_ref, grid=None, save_times=None):
    """Reference solution of the backward fractal Navier-Stokes equation (d = 2).

    Parameters
    ----------
    u0 : PeriodicField
        Divergence-free, mean-zero terminal velocity.
    symbol : LevySymbol
    viscosity : float
    horizon : float
        ``T <= 0``, a multiple of ``dt_ref``.
    dt_ref : float
    grid : PeriodicGrid, optional
        Must equal ``u0.grid`` when given.
    save_times : sequence of float, optional
        Decreasing times in ``[T, 0]`` on the step grid (default ``[0, T]``).

    Returns
    -------
    FieldSeries
    """
    g = grid or u0.grid
    if g != u0.grid:
        raise ValueError("u0 is not on the requested grid")
    if g.dim != 2 or u0.comps != 2:
        raise ValueError("the Navier-Stokes reference needs a 2D vector field")
    if np.max(np.abs(F.divergence(u0).values)) > F.DIV_FREE_TOL * max(1.0, u0.max_norm()):
        raise ValueError("u0 must be divergence-free")
    if np.max(np.abs(u0.mean())) > 1e-12 * max(1.0, u0.max_norm()):
        raise ValueError("u0 must have zero mean")
    psi = F.symbol_on_grid(g, symbol, viscosity)
    mask = _dealias_mask(g)
    k = g.derivative_wavenumbers

    def rhs(c, h):
        c = c * mask
        v = g.ifft(c)
        _check_cfl(float(np.max(np.abs(v))), h, g)
        nl = []
        for i in range(2):
            nl.append(sum(v[j] * g.ifft(1j * k[j] * c[i]) for j in range(2)))
        nc = g.fft(np.stack(nl)) * mask
        return F._project_coeffs(g, nc)

    _check_cfl(u0.max_norm(), dt_ref, g)
    times, coeffs = _integrate(g, F._project_coeffs(g, u0.coeffs), psi, rhs, horizon, dt_ref,
                               save_times)
    fields = [F.PeriodicField.from_coeffs(g, c, divergence_free=True, check=False) for c in coeffs]
    return F.FieldSeries(times, fields)


def solve_burgers_spectral(u0, symbol, viscosity, horizon, dt_ref, save_times=None):
    """Reference solution of the backward fractal Burgers equation (d = 1), conservative form."""
    g = u0.grid
    if g.dim != 1 or u0.comps != 1:
        raise ValueError("the Burgers reference needs a scalar field on a 1D grid")
    psi = F.symbol_on_grid(g, symbol, viscosity)
    mask = _dealias_mask(g)
    k = g.derivative_wavenumbers

    def rhs(c, h):
        c = c * mask
        v = g.ifft(c)
        _check_cfl(float(np.max(np.abs(v))), h, g)
        return 1j * k[0] * g.fft(0.5 * v * v) * mask

    _check_cfl(u0.max_norm(), dt_ref, g)
    times, coeffs = _integrate(g, u0.coeffs, psi, rhs, horizon, dt_ref, save_times)
    return F.FieldSeries(times, [F.PeriodicField.from_coeffs(g, c) for c in coeffs])


def _restrict(f, grid):
    if f.grid == grid:
        return f.values
    if f.grid.dim != grid.dim or f.grid.n % grid.n:
        raise ValueError("fields live on incompatible grids")
    r = f.grid.n // grid.n
    idx = (slice(None),) + (slice(None, None, r),) * grid.dim
    return f.values[idx]


def compare_fields(a, b, p=2.0, eps=1e-14):
    """Relative errors ``|a_t - b_t|_p / max(|a_t|_p, eps)`` at the times of ``a``.

    ``b`` is interpolated linearly in time when its slices differ, and
    sampled at the nodes of ``a`` when it lives on a refinement of a's grid.
    ``a`` and ``b`` are :class:`FieldSeries` or :class:`VelocityHistory`.
    """
    ta = np.asarray(a.times)
    fa = a.fields if hasattr(a, "fields") else a.slices
    sb = b if isinstance(b, F.FieldSeries) else F.FieldSeries(b.times, list(b.slices))
    out = []
    for t, f in zip(ta, fa):
        g = f.grid
        other = _restrict(sb.at(float(t)), g)
        num = F.grid_norm(f.values - other, p, g)
        den = max(F.grid_norm(f.values, p, g), eps)
        out.append(num / den)
    return np.array(out)
