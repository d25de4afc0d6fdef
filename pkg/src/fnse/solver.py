"""Stochastic Lagrangian Picard solver for the backward fractal Navier-Stokes system.

Given divergence-free, mean-zero ``u0`` the iteration::

    u^{n+1}_t = P E[grad^T X^n_{t,0} . u0(X^n_{t,0})],   X^n driven by u^n

is run on ``K`` uniform slices of ``[T, 0]``.  Every iterate reuses the
same noise streams, so successive iterates differ only through the drift.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import fields as F
from .feynman_kac import PideProblem, flow_config, sample_field_moments
from .levy import LevySymbol

log = logging.getLogger(__name__)

EXP_GAMMA = 4.0
EXP_LIMIT = 2.0


class NoLocalSolutionError(RuntimeError):
    """Picard iteration failed to converge after all horizon halvings."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ViscosityTooSmallError(RuntimeError):
    """The restart condition of the continuation failed repeatedly."""


@dataclass(frozen=True)
class SolveConfig:
    """Parameters of the Picard solver.

    Attributes
    ----------
    grid : PeriodicGrid
    symbol : LevySymbol
    viscosity : float
        ``nu >= 1``.
    M : int
        Samples per grid node.
    dt : float
        Euler step of the particle flows.
    K : int
        Number of slices on ``[T, 0]`` besides ``t = 0``.
    C0 : float
        Horizon constant in ``T = -1 / (C0 |grad u0|_p)``.
    picard_tol, picard_max : float, int
        Fixed-point tolerance (in ``L^p``) and iteration cap.
    p : float
        Norm exponent, ``p > 2 d / alpha``.
    interpolation : str
        Drift interpolation for the particle flows.
    """

    grid: F.PeriodicGrid
    symbol: LevySymbol
    viscosity: float = 1.0
    M: int = 2000
    dt: float = 1e-3
    K: int = 2
    C0: float = 1.0
    picard_tol: float = 1e-3
    picard_max: int = 8
    p: float = 4.0
    seed: int = 0
    interpolation: str = "linear"
    workers: int = 1
    chunk_samples: int = 64
    max_halvings: int = 6
    scheme: str | None = None

    def __post_init__(self):
        a = self.symbol.alpha
        if not 1.0 < a < 2.0:
            raise ValueError(f"the solver needs alpha in (1, 2), got {a}")
        if self.p <= 2 * self.grid.dim / a:
            raise ValueError(f"p = {self.p} violates p > 2d/alpha = {2 * self.grid.dim / a:.4g}")
        if self.viscosity < 1.0:
            raise ValueError(f"viscosity must be >= 1, got {self.viscosity}")
        if self.M < 1 or self.K < 1 or self.picard_max < 1:
            raise ValueError("M, K and picard_max must be positive")
        if not self.dt > 0 or not self.C0 > 0:
            raise ValueError("dt and C0 must be positive")

    def slice_times(self, T):
        return np.linspace(0.0, T, self.K + 1)


@dataclass
class SolutionHistory:
    """Solver output on ``[T, 0]`` with convergence and norm diagnostics."""

    u: F.VelocityHistory
    diffs: list = field(default_factory=list)
    grad_norms: np.ndarray = None
    grad_norm_stderr: np.ndarray = None
    norms: np.ndarray = None
    stderr_fields: list = None
    aggregate_stderr: np.ndarray = None
    iterations: int = 0
    converged: bool = True
    C0: float = 1.0
    halvings: int = 0
    exp_moments: list = field(default_factory=list)
    bound: float = 0.0
    bound_ok: bool = True

    @property
    def times(self):
        return self.u.times

    @property
    def horizon(self):
        return self.u.horizon

    @property
    def slices(self):
        return self.u.slices


def _check_initial(u0):
    if u0.comps != u0.grid.dim or not u0.divergence_free:
        raise ValueError("u0 must be a divergence-free vector field")
    if np.max(np.abs(u0.mean())) > 1e-12 * max(1.0, u0.max_norm()):
        raise ValueError("u0 must have zero mean")


def local_horizon(u0, cfg):
    """``T = max(-1, -1 / (C0 |grad u0|_p))``; ``-1`` for a constant field."""
    g = F.sobolev_norm(u0, 1, cfg.p)
    if g == 0.0:
        return -1.0
    return max(-1.0, -1.0 / (cfg.C0 * g))


def aligned_horizon(T, cfg):
    """Largest ``|T'| <= |T|`` whose slices fall on the Euler step grid."""
    unit = cfg.K * cfg.dt
    n = max(1, int(math.floor(abs(T) / unit + 1e-9)))
    return -n * unit


@dataclass
class PicardStepInfo:
    stderr_fields: list
    aggregate_stderr: np.ndarray
    grad_norms: np.ndarray
    grad_norm_stderr: np.ndarray
    exp_moment: float


def _flow_cfg(cfg, u_hist, u0):
    prob = PideProblem(u_hist, u0, cfg.symbol, cfg.viscosity)
    fc = flow_config(prob, dt=cfg.dt, seed=cfg.seed, scheme=cfg.scheme,
                     interpolation=cfg.interpolation, workers=cfg.workers,
                     chunk_samples=cfg.chunk_samples)
    return prob, fc


def picard_step(u_n, u0, cfg, exp_gamma=EXP_GAMMA):
    """One Picard update: returns ``(u_{n+1}, PicardStepInfo)``.

    Slice ``t = 0`` is ``u0``; every other slice is the projected,
    mean-free Monte Carlo average under drift ``u_n``.
    """
    g = cfg.grid
    times = u_n.times
    d = g.dim
    slices = [u0]
    se_fields = [np.zeros_like(u0.values)]
    agg = [0.0]
    gnorm = [F.sobolev_norm(u0, 1, cfg.p)]
    gse = [0.0]
    exp_m = 1.0
    if not np.any(u0.values):
        for _ in times[1:]:
            slices.append(F.PeriodicField.zeros(g, d))
            se_fields.append(np.zeros_like(u0.values))
            agg.append(0.0)
            gnorm.append(0.0)
            gse.append(0.0)
        info = PicardStepInfo(se_fields, np.array(agg), np.array(gnorm), np.array(gse), 1.0)
        return F.VelocityHistory(times, slices), info
    prob, fc = _flow_cfg(cfg, u_n, u0)
    for j, t in enumerate(times[1:], start=1):
        res = sample_field_moments(prob, float(t), cfg.M, fc, g, project=True, want_w=True,
                                   want_grad_of_w=True, subtract_mean=True,
                                   exp_gamma=exp_gamma if j == len(times) - 1 else None)
        mean = F.remove_mean(F.leray_project(F.PeriodicField(g, res["w"].mean)))
        slices.append(mean)
        se = np.asarray(res["w"].stderr)
        se_fields.append(se)
        agg.append(F.grid_norm(se, cfg.p, g))
        gnorm.append(F.sobolev_norm(mean, 1, cfg.p))
        gse.append(F.grid_norm(np.asarray(res["grad_of_w"].stderr), cfg.p, g))
        if "exp_moment" in res:
            exp_m = float(np.max(res["exp_moment"].mean))
    info = PicardStepInfo(se_fields, np.array(agg), np.array(gnorm), np.array(gse), exp_m)
    return F.VelocityHistory(times, slices), info


def _norm_diffs(a, b, p):
    return np.array([F.grid_norm(x.values - y.values, p, x.grid)
                     for x, y in zip(a.slices, b.slices)])


def solve_local(u0, cfg, horizon=None, max_horizon=None):
    """Picard iteration from ``u^0 = u0`` on ``K`` slices of ``[T, 0]``.

    ``T`` comes from :func:`local_horizon` (or ``horizon``), is capped at
    ``max_horizon`` in magnitude and aligned to the step grid.  It is
    halved whenever the exponential-moment diagnostic exceeds 2 or the
    iteration fails to converge within ``picard_max`` steps.

    Raises
    ------
    NoLocalSolutionError
        If no horizon within ``max_halvings`` halvings converges.
    """
    _check_initial(u0)
    g = cfg.grid
    if u0.grid != g:
        raise ValueError("u0 is not on the configured grid")
    T = local_horizon(u0, cfg) if horizon is None else float(horizon)
    if max_horizon is not None:
        T = max(T, -abs(max_horizon))
    g0 = F.sobolev_norm(u0, 1, cfg.p)
    attempts = []
    for halving in range(cfg.max_halvings + 1):
        Ta = aligned_horizon(T, cfg)
        times = cfg.slice_times(Ta)
        u_n = F.VelocityHistory(times, [u0] * len(times))
        diffs, exp_ms = [], []
        status = "not-converged"
        info = None
        for it in range(1, cfg.picard_max + 1):
            u_next, info = picard_step(u_n, u0, cfg)
            exp_ms.append(info.exp_moment)
            if info.exp_moment > EXP_LIMIT:
                status = "exp-moment"
                log.info("exp moment %.3f > %.1f at T=%.4g, halving", info.exp_moment, EXP_LIMIT, Ta)
                break
            diff = _norm_diffs(u_next, u_n, cfg.p)
            diffs.append(diff)
            u_n = u_next
            log.info("T=%.4g iteration %d: max diff %.3e, stderr %.3e", Ta, it, diff.max(),
                     info.aggregate_stderr.max())
            if diff.max() <= cfg.picard_tol + 3.0 * info.aggregate_stderr.max():
                status = "converged"
                break
        attempts.append({"T": Ta, "status": status, "diffs": diffs, "exp_moments": exp_ms})
        if status == "converged":
            bound = 3.0 * cfg.C0 * g0
            ok = bool(np.all(info.grad_norms <= bound + 3.0 * info.grad_norm_stderr))
            if not ok:
                log.warning("norm bound sup |grad u_t|_p <= 3 C0 |grad u0|_p violated")
            return SolutionHistory(
                u=u_n, diffs=diffs, grad_norms=info.grad_norms,
                grad_norm_stderr=info.grad_norm_stderr,
                norms=np.array([F.sobolev_norm(s, 0, cfg.p) for s in u_n.slices]),
                stderr_fields=info.stderr_fields, aggregate_stderr=info.aggregate_stderr,
                iterations=len(diffs), converged=True, C0=cfg.C0, halvings=halving,
                exp_moments=exp_ms, bound=bound, bound_ok=ok)
        T = Ta / 2.0
        if abs(T) < cfg.K * cfg.dt:
            break
    raise NoLocalSolutionError("no local solution at this resolution", {"attempts": attempts})


def continue_global(u0, cfg, total_horizon, require_reentry=True, max_failures=3):
    """Chain local solves from ``t = 0`` back to ``total_horizon``.

    Each segment restarts from the last slice of the previous one.  Before
    a restart the re-entry condition ``|grad u_{T*}|_p <= |grad u0|_p`` is
    checked; ``max_failures`` consecutive failures raise
    :class:`ViscosityTooSmallError`.

    Returns a :class:`SolutionHistory` over ``[total_horizon, 0]`` whose
    ``segments`` attribute lists the per-segment solutions.
    """
    if total_horizon >= 0:
        raise ValueError("total horizon must be negative")
    _check_initial(u0)
    g0 = F.sobolev_norm(u0, 1, cfg.p)
    offset = 0.0
    start = u0
    times, slices, se_fields, agg, gn, gse, norms = [0.0], [u0], [np.zeros_like(u0.values)], [0.0], [g0], [0.0], [F.sobolev_norm(u0, 0, cfg.p)]
    segments = []
    failures = 0
    restarts = []
    while offset > total_horizon + 1e-12:
        remaining = total_horizon - offset
        sol = solve_local(start, cfg, max_horizon=abs(remaining))
        segments.append(sol)
        for j in range(1, len(sol.times)):
            times.append(offset + sol.times[j])
            slices.append(sol.slices[j])
            se_fields.append(sol.stderr_fields[j])
            agg.append(sol.aggregate_stderr[j])
            gn.append(sol.grad_norms[j])
            gse.append(sol.grad_norm_stderr[j])
            norms.append(sol.norms[j])
        offset += sol.horizon
        start = sol.slices[-1]
        if offset > total_horizon + 1e-12:
            ok = gn[-1] <= g0 + 3.0 * gse[-1]
            restarts.append({"t": offset, "grad_norm": gn[-1], "reentry_ok": bool(ok)})
            failures = 0 if ok else failures + 1
            if require_reentry and failures >= max_failures:
                raise ViscosityTooSmallError(
                    f"viscosity too small: re-entry condition failed {failures} consecutive times")
    hist = F.VelocityHistory(np.array(times), slices)
    out = SolutionHistory(
        u=hist, diffs=[s.diffs for s in segments], grad_norms=np.array(gn),
        grad_norm_stderr=np.array(gse), norms=np.array(norms), stderr_fields=se_fields,
        aggregate_stderr=np.array(agg), iterations=sum(s.iterations for s in segments),
        converged=all(s.converged for s in segments), C0=cfg.C0,
        halvings=sum(s.halvings for s in segments),
        exp_moments=[m for s in segments for m in s.exp_moments],
        bound=3.0 * cfg.C0 * g0, bound_ok=all(s.bound_ok for s in segments))
    out.segments = segments
    out.restarts = restarts
    return out


def _inner(a, b, grid):
    return float(np.sum(a * b) * grid.cell_volume)


def _nonlinear(u):
    g = u.grid
    G = F.spectral_gradient(u).values.reshape((g.dim, g.dim) + g.shape)
    return np.einsum("j...,ij...->i...", u.values, G)


@dataclass
class WeakFormReport:
    times: np.ndarray
    residuals: np.ndarray
    stderr: np.ndarray
    quadrature: np.ndarray

    def passed(self, n_sigma=3.0):
        return np.abs(self.residuals) <= n_sigma * self.stderr + self.quadrature


def weak_form_residual(sol, cfg, test_fields):
    """Residual of the weak form for each test field at every slice ``t < 0``.

    ``<u_t, phi> - <u0, phi> - int_t^0 [<u_s, L*_nu phi> + <(u_s . grad) u_s, phi>] ds``
    with the trapezoidal rule over the slices.

    Returns a :class:`WeakFormReport`; ``residuals[i, j]`` belongs to test
    field ``i`` and slice ``j + 1``.  ``stderr`` bounds the standard error
    propagated from the per-node errors (triangle inequality), and
    ``quadrature`` estimates the trapezoidal error from second differences
    of the integrand (zero with fewer than three slices).
    """
    hist = sol.u if isinstance(sol, SolutionHistory) else sol
    if len(hist.times) < 3:
        raise ValueError("the weak form needs at least three slices")
    g = hist.grid
    for phi in test_fields:
        if phi.comps != g.dim:
            raise ValueError("test fields must be vector fields")
        if np.max(np.abs(F.divergence(phi).values)) > F.DIV_FREE_TOL * max(1.0, phi.max_norm()):
            raise ValueError("test fields must be divergence-free")
    times = hist.times
    se = sol.stderr_fields if isinstance(sol, SolutionHistory) and sol.stderr_fields else \
        [np.zeros((g.dim,) + g.shape)] * len(times)
    gen = F.generator_multiplier(g, cfg.symbol, cfg.viscosity, adjoint=True)
    nl = [_nonlinear(s) for s in hist.slices]
    res = np.zeros((len(test_fields), len(times) - 1))
    err = np.zeros_like(res)
    quad = np.zeros_like(res)
    for i, phi in enumerate(test_fields):
        Lphi = F.PeriodicField.from_coeffs(g, gen * phi.coeffs).values
        f = np.array([_inner(s.values, Lphi, g) + _inner(n, phi.values, g)
                      for s, n in zip(hist.slices, nl)])
        # sensitivity of f to the slice values, used for error propagation
        grads = [np.abs(Lphi) + np.abs(phi.values) * F.spectral_gradient(s).max_norm()
                 + np.abs(_transport_adjoint(s, phi)) for s in hist.slices]
        base = _inner(hist.slices[0].values, phi.values, g)
        integral = 0.0
        ierr = 0.0
        for j in range(1, len(times)):
            h = times[j - 1] - times[j]
            integral += 0.5 * h * (f[j - 1] + f[j])
            ierr += 0.5 * h * (_inner(se[j - 1], grads[j - 1], g) + _inner(se[j], grads[j], g))
            val = _inner(hist.slices[j].values, phi.values, g)
            res[i, j - 1] = val - base - integral
            err[i, j - 1] = _inner(se[j], np.abs(phi.values), g) + ierr
            if len(times) >= 3:
                k = min(max(j - 1, 1), len(times) - 2)
                hk = times[k - 1] - times[k]
                second = abs(f[k - 1] - 2 * f[k] + f[k + 1]) / hk ** 2
                quad[i, j - 1] = abs(times[j]) * hk ** 2 / 12.0 * second
    return WeakFormReport(times[1:], res, err, quad)


def _transport_adjoint(u, phi):
    # (u . grad) phi, the adjoint partner of (u . grad) v against phi
    g = u.grid
    G = F.spectral_gradient(phi).values.reshape((g.dim, g.dim) + g.shape)
    return np.einsum("j...,ij...->i...", u.values, G)
