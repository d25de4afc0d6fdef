"""Monte Carlo Feynman-Kac estimators and a deterministic mild-form solver.

For a drift history ``u``, potential ``c`` and terminal data ``phi``::

    h_t(x) = E[exp(int_t^0 c_r(X_r) dr) phi(X_{t,0}(x))]
    w_t(x) = P E[grad^T X_{t,0}(x) . phi(X_{t,0}(x))]

solve the backward transport equations with generator ``L_nu``.  Because
the noise of sample ``m`` is shared by every start point, each sample
yields a whole field; projections and derivatives are applied per sample,
which keeps their standard errors exact.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import fields as F
from . import kernels
from .flow import FlowConfig, iter_flow_chunks
from .levy import IncrementSampler, LevySymbol
from .stats import McEstimate, RunningMoments

log = logging.getLogger(__name__)


class HorizonTooLongError(RuntimeError):
    """The Picard map of the mild equation stopped contracting."""

    def __init__(self, message, growth):
        super().__init__(message)
        self.growth = growth


@dataclass
class PideProblem:
    """Drift ``u``, terminal data ``phi`` and optional potential ``c``.

    ``c`` is ``None``, a scalar :class:`PeriodicField`, or a callable
    ``t -> PeriodicField``.
    """

    u: F.VelocityHistory
    phi: F.PeriodicField
    symbol: LevySymbol
    viscosity: float = 1.0
    c: object = None

    def __post_init__(self):
        if self.viscosity < 1.0:
            raise ValueError(f"viscosity must be >= 1, got {self.viscosity}")
        if self.phi.grid != self.u.grid:
            raise ValueError("phi and u must live on one grid")
        if isinstance(self.c, F.PeriodicField) and (self.c.grid != self.u.grid or self.c.comps != 1):
            raise ValueError("the potential must be a scalar field on the drift grid")

    @property
    def grid(self):
        return self.u.grid

    def potential(self, t):
        if self.c is None:
            return None
        return self.c(t) if callable(self.c) else self.c


def flow_config(prob, dt=1e-3, seed=0, scheme=None, interpolation="spectral", workers=1,
                chunk_samples=64):
    """Flow settings for ``prob``: exact stable sampling when the symbol allows it."""
    if scheme is None:
        scheme = "exact-stable" if prob.symbol.kind == "isotropic-stable" else "compound-poisson-gaussian"
    sampler = IncrementSampler(prob.symbol, dim=prob.grid.dim, scheme=scheme, seed=seed)
    return FlowConfig(dt=dt, sampler=sampler, viscosity=prob.viscosity,
                      interpolation=interpolation, chunk_samples=chunk_samples, workers=workers)


def _check_count(M):
    if int(M) < 1:
        raise ValueError("sample count must be at least 1")


def estimate_h(prob, x, t, M, cfg=None, **kw):
    """Monte Carlo estimate of ``h_t`` at the points ``x``.

    Parameters
    ----------
    prob : PideProblem
    x : array_like
        One point ``(d,)`` or several ``(P, d)``.
    t : float
        Start time, ``t <= 0`` and on the step grid of ``cfg``.
    M : int
        Samples per point.
    cfg : FlowConfig, optional
        Built by :func:`flow_config` from ``kw`` when omitted.

    Returns
    -------
    McEstimate
        Mean of shape ``(P,)`` (or ``(P, comps)`` for vector ``phi``);
        scalar for a single scalar point query.
    """
    _check_count(M)
    cfg = cfg or flow_config(prob, **kw)
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    d = prob.grid.dim
    stack = kernels.FieldStack.from_fields([prob.phi], "spectral")
    acc = RunningMoments()
    for ch in iter_flow_chunks(pts, t, prob.u, cfg, np.arange(M), jacobian=False,
                               potential=prob.c):
        S, P0 = ch.X.shape[:2]
        vals = kernels.evaluate(stack, ch.X.reshape(-1, d)).reshape(S, P0, -1)
        if ch.potential_integral is not None:
            vals = vals * np.exp(ch.potential_integral)[..., None]
        acc.add(vals)
    est = acc.estimate()
    mean, err = est.mean, est.stderr
    if prob.phi.comps == 1:
        mean, err = mean[..., 0], err[..., 0]
    if single:
        mean, err = mean[0], err[0]
    return McEstimate(mean, err, est.n)


@dataclass
class FieldEstimate:
    """Estimated field with per-node standard errors (same layout as ``values``)."""

    field: F.PeriodicField
    stderr: np.ndarray
    n: int

    def aggregate_stderr(self, p=2.0):
        """Grid ``L^p`` norm of the standard-error field."""
        return F.grid_norm(self.stderr, p, self.field.grid)


def _tensor_project(grid, T):
    # T: (S, d*d, *shape) with entry l*d + i; project over l for each i
    d = grid.dim
    S = T.shape[0]
    A = T.reshape((S, d, d) + grid.shape)
    A = np.swapaxes(A, 1, 2)
    A = F.project_values(grid, A)
    return np.swapaxes(A, 1, 2).reshape((S, d * d) + grid.shape)


def sample_field_moments(prob, t, M, cfg, grid_eval=None, project=True, want_w=True,
                         want_grad=False, want_grad_of_w=False, subtract_mean=False,
                         first_sample=0, exp_gamma=None):
    """Per-node moments of the representation integrands.

    Each sample ``m`` contributes the fields ``w^m(x) = grad^T X . phi(X)``
    and (optionally) ``g^m(x) = grad^T X . (grad phi - grad^T phi)(X) . grad X``
    over all nodes of ``grid_eval``.  Projection, mean removal and the
    spectral gradient of ``w^m`` are applied sample by sample.

    With ``exp_gamma`` the per-node moment ``E exp(gamma int |grad u_r(X_r)| dr)``
    is collected as well.

    Returns a dict with keys ``"w"``, ``"grad"``, ``"grad_of_w"``,
    ``"exp_moment"`` mapping to :class:`~fnse.stats.McEstimate` of node arrays.
    """
    _check_count(M)
    g = grid_eval or prob.grid
    d = g.dim
    if prob.phi.comps != d:
        raise ValueError("the representation of w needs a vector-valued phi")
    pts = g.points()
    rows = [prob.phi]
    if want_grad:
        rows.append(F.spectral_gradient(prob.phi))
    stack = kernels.FieldStack.from_fields(rows, "spectral")
    acc = {k: RunningMoments() for k, on in
           (("w", want_w or want_grad_of_w), ("grad", want_grad), ("grad_of_w", want_grad_of_w),
            ("exp_moment", exp_gamma is not None)) if on}
    samples = np.arange(first_sample, first_sample + M)
    for ch in iter_flow_chunks(pts, t, prob.u, cfg, samples, jacobian=True,
                               grad_cache=exp_gamma is not None):
        S = ch.X.shape[0]
        if exp_gamma is not None:
            acc["exp_moment"].add(np.exp(exp_gamma * ch.grad_integral).reshape((S,) + g.shape))
        vals = kernels.evaluate(stack, ch.X.reshape(-1, d)).reshape(S, g.size, -1)
        J = ch.J
        phiX = vals[..., :d]
        w = np.einsum("spji,spj->spi", J, phiX)
        w = np.moveaxis(w, 2, 1).reshape((S, d) + g.shape)
        if project:
            w = F.project_values(g, w)
        if subtract_mean:
            w = w - w.mean(axis=tuple(range(2, 2 + d)), keepdims=True)
        if "w" in acc:
            acc["w"].add(w)
        if want_grad_of_w:
            acc["grad_of_w"].add(F.gradient_values(g, w))
        if want_grad:
            G = vals[..., d:d + d * d].reshape(S, g.size, d, d)
            A = G - np.swapaxes(G, 2, 3)
            T = np.einsum("spjl,spjk,spki->spli", J, A, J)
            T = np.moveaxis(T.reshape(S, g.size, d * d), 2, 1).reshape((S, d * d) + g.shape)
            if project:
                T = _tensor_project(g, T)
            acc["grad"].add(T)
    return {k: a.estimate() for k, a in acc.items()}


def _to_field_estimate(grid, est, divergence_free=False):
    fld = F.PeriodicField(grid, est.mean, divergence_free=divergence_free, check=False)
    return FieldEstimate(fld, np.asarray(est.stderr), est.n)


def _zero_step_shortcut(prob, t, cfg, grid_eval):
    g = grid_eval or prob.grid
    return cfg.steps_to(t) == 0 and g == prob.grid


def estimate_w(prob, t, M, grid_eval=None, project=True, cfg=None, **kw):
    """Estimate ``w_t`` on the nodes of ``grid_eval`` (default: the problem grid).

    Returns a :class:`FieldEstimate`; with ``project`` the Leray projection
    is applied to every sample field.
    """
    _check_count(M)
    cfg = cfg or flow_config(prob, **kw)
    if _zero_step_shortcut(prob, t, cfg, grid_eval):
        out = F.leray_project(prob.phi) if project else prob.phi
        return FieldEstimate(out, np.zeros_like(out.values), int(M))
    g = grid_eval or prob.grid
    est = sample_field_moments(prob, t, M, cfg, g, project=project)["w"]
    return _to_field_estimate(g, est, divergence_free=project)


def estimate_grad_w(prob, t, M, grid_eval=None, cfg=None, with_w=False, project=True, **kw):
    """Estimate the gradient of ``w_t`` through the antisymmetrized formula.

    Entry ``l * d + i`` of the returned tensor field is ``d w_l / d x_i``.
    With ``with_w`` the estimate of ``w_t`` from the same samples is
    returned too, as ``(grad_estimate, w_estimate)``.
    """
    _check_count(M)
    cfg = cfg or flow_config(prob, **kw)
    g = grid_eval or prob.grid
    d = g.dim
    if _zero_step_shortcut(prob, t, cfg, grid_eval):
        G = F.spectral_gradient(prob.phi).values.reshape((1, d, d) + g.shape)
        T = G - np.swapaxes(G, 1, 2)
        T = T.reshape((1, d * d) + g.shape)
        if project:
            T = _tensor_project(g, T)
        ge = FieldEstimate(F.PeriodicField(g, T[0]), np.zeros((d * d,) + g.shape), int(M))
        if with_w:
            w = F.leray_project(prob.phi) if project else prob.phi
            return ge, FieldEstimate(w, np.zeros_like(w.values), int(M))
        return ge
    res = sample_field_moments(prob, t, M, cfg, g, project=project, want_w=with_w, want_grad=True)
    ge = _to_field_estimate(g, res["grad"])
    if with_w:
        return ge, _to_field_estimate(g, res["w"], divergence_free=project)
    return ge


def _phi_functions(z):
    """``E1 = int_0^1 e^{-z s} ds`` and ``E2 = int_0^1 s e^{-z s} ds`` for ``z >= 0``."""
    z = np.asarray(z, dtype=float)
    small = z < 1e-3
    zs = np.where(small, 1.0, z)
    e1 = -np.expm1(-zs) / zs
    e2 = (-np.expm1(-zs) - zs * np.exp(-zs)) / zs ** 2
    e1s = 1 - z / 2 + z ** 2 / 6 - z ** 3 / 24
    e2s = 0.5 - z / 3 + z ** 2 / 8 - z ** 3 / 30
    return np.where(small, e1s, e1), np.where(small, e2s, e2)


def _transport(grid, u, h_coeffs, comps):
    """``(u . grad) h`` on the grid, returned as rfft coefficients."""
    k = grid.derivative_wavenumbers
    out = [sum(u[j] * grid.ifft(1j * k[j] * h_coeffs[i]) for j in range(grid.dim))
           for i in range(comps)]
    return grid.fft(np.stack(out))


@dataclass
class MildSolution:
    series: F.FieldSeries
    iterations: list
    growth: float

    @property
    def times(self):
        return self.series.times

    @property
    def fields(self):
        return self.series.fields


def mild_solve(prob, T, K, tol=1e-10, max_iter=200):
    """Deterministic solution of the mild equation on ``K`` uniform steps of ``[T, 0]``.

    ``h_t = T_t phi + int_t^0 T_{t-s}((u_s . grad) h_s + c_s h_s) ds`` is
    marched from ``t = 0``; on each step the integrand is taken linear in
    ``s`` and integrated exactly against the semigroup multiplier (a product
    trapezoidal rule), and the implicit end value is found by Picard
    iteration until the sup-norm change is at most ``tol``.

    Raises
    ------
    HorizonTooLongError
        When the iteration on some step stops contracting.
    """
    if T >= 0:
        raise ValueError("horizon must be negative")
    if K < 1:
        raise ValueError("need at least one time step")
    if not prob.u.covers(T):
        raise ValueError(f"drift undefined on [{T}, 0]")
    g = prob.grid
    comps = prob.phi.comps
    dt = -T / K
    times = -dt * np.arange(K + 1)
    psi = F.symbol_on_grid(g, prob.symbol, prob.viscosity)
    decay = np.exp(-dt * psi)
    E1, E2 = _phi_functions(dt * psi)
    wa, wb = dt * (E1 - E2), dt * E2
    phi_c = prob.phi.coeffs
    zero_drift = prob.u.is_zero() and prob.c is None

    def rhs(hc, t):
        if zero_drift:
            return np.zeros_like(hc)
        u = prob.u.at(t).values
        out = _transport(g, u, hc, comps)
        c = prob.potential(t)
        if c is not None:
            out = out + g.fft(c.values[0] * g.ifft(hc))
        return out

    fields_out = [prob.phi]
    iters = [0]
    growth = 0.0
    I = np.zeros_like(phi_c)
    hc_prev = np.array(phi_c)
    g_prev = rhs(hc_prev, 0.0)
    for i in range(1, K + 1):
        t = times[i]
        base = np.exp(t * psi) * phi_c
        carry = decay * I + wb * g_prev
        hc = hc_prev
        diffs = []
        for it in range(1, max_iter + 1):
            gi = rhs(hc, t)
            new = base + carry + wa * gi
            diff = float(np.max(np.abs(g.ifft(new - hc))))
            hc = new
            diffs.append(diff)
            if zero_drift or diff <= tol:
                break
            if it >= 3 and diffs[-1] > diffs[-2] > diffs[-3]:
                rate = diffs[-1] / diffs[-2]
                raise HorizonTooLongError(
                    f"mild iteration diverges at t = {t:.4g} (growth factor {rate:.3g})", rate)
        else:
            rate = diffs[-1] / diffs[-2] if len(diffs) > 1 and diffs[-2] > 0 else np.inf
            raise HorizonTooLongError(
                f"mild iteration did not converge at t = {t:.4g} (growth factor {rate:.3g})", rate)
        if len(diffs) > 1 and diffs[-2] > 0:
            growth = max(growth, diffs[-1] / diffs[-2])
        gi = rhs(hc, t)
        I = carry + wa * gi
        hc_prev, g_prev = hc, gi
        fields_out.append(F.PeriodicField.from_coeffs(g, hc))
        iters.append(len(diffs))
    return MildSolution(F.FieldSeries(times, fields_out), iters, growth)


@dataclass
class PideResidual:
    times: np.ndarray
    l2: np.ndarray
    linf: np.ndarray


def pide_residual(h, prob):
    """Residual of ``dh/dt + L_nu h + (u . grad) h + c h`` at interior slices.

    ``h`` is a :class:`~fnse.fields.FieldSeries` (or :class:`MildSolution`)
    with at least three slices; the time derivative is a central
    difference.
    """
    series = h.series if isinstance(h, MildSolution) else h
    if len(series) < 3:
        raise ValueError("the residual needs at least three time slices")
    g = series.grid
    ts = series.times
    gen = F.generator_multiplier(g, prob.symbol, prob.viscosity)
    out_t, l2, linf = [], [], []
    for i in range(1, len(series) - 1):
        t = ts[i]
        f = series.fields[i]
        dhdt = (series.fields[i - 1].values - series.fields[i + 1].values) / (ts[i - 1] - ts[i + 1])
        c = F.PeriodicField.from_coeffs(g, gen * f.coeffs).values
        if not prob.u.is_zero():
            c = c + g.ifft(_transport(g, prob.u.at(t).values, f.coeffs, f.comps))
        pot = prob.potential(t)
        if pot is not None:
            c = c + pot.values[0] * f.values
        r = dhdt + c
        out_t.append(t)
        l2.append(F.grid_norm(r, 2, g))
        linf.append(F.grid_norm(r, np.inf, g))
    return PideResidual(np.array(out_t), np.array(l2), np.array(linf))
