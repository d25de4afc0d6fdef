"""Empirical checks of the smoothing, kernel, gradient and Krylov estimates.

Each check measures a quantity over a parameter family and fits a
log-log slope against ``nu |t|`` (or ``|t|``), or reports a ratio whose
boundedness is the claim.  Constants are never asserted, only exponents
and boundedness.  Slopes are fitted on the small-time regime
``nu |t| <= 1``; beyond it the lowest lattice mode dominates and the
decay turns exponential.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import fields as F
from . import kernels
from .feynman_kac import PideProblem, flow_config, mild_solve
from .flow import iter_flow_chunks
from .levy import IncrementSampler, LevySymbol, sample_increments
from .stats import RunningMoments, fit_loglog

log = logging.getLogger(__name__)

FIT_REGIME = 1.0


@dataclass
class SlopeReport:
    """Measured values against a scale parameter with a fitted log-log slope.

    ``rows`` holds ``(params, value, stderr)`` triples; ``scale`` the
    abscissa of each row.
    """

    name: str
    target: float
    tolerance: float
    scale: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    params: list
    slope: float = float("nan")
    intercept: float = float("nan")
    ci: tuple = (float("nan"), float("nan"))
    fit_mask: np.ndarray = None
    extra: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def slope_ok(self):
        return bool(np.isfinite(self.slope) and abs(self.slope - self.target) <= self.tolerance)

    @property
    def passed(self):
        return self.slope_ok and all(self.extra.get(k, True) for k in ("collapse_ok", "lipschitz_ok"))

    def fit(self, mask=None):
        m = np.ones(len(self.scale), bool) if mask is None else np.asarray(mask, bool)
        m &= np.isfinite(self.values) & (self.values > 0)
        self.fit_mask = m
        if m.sum() >= 2:
            self.slope, self.intercept, self.ci = fit_loglog(self.scale[m], self.values[m])
        else:
            self.notes.append("fewer than two usable points")
        return self

    def csv_rows(self):
        rows = []
        for p, v, e in zip(self.params, self.values, self.stderr):
            rows.append([self.name, p, v, e, self.slope, self.ci[0], self.ci[1], int(self.passed)])
        return rows


def _fit_region(scale):
    return np.asarray(scale) <= FIT_REGIME * (1 + 1e-12)


def _mode_fields(grid, max_mode=None):
    """Single Fourier modes ``cos(m x_1)``, ``m = 1 .. N/2 - 1`` (the worst-case inputs)."""
    top = grid.n // 2 - 1 if max_mode is None else min(max_mode, grid.n // 2 - 1)
    return [(m, F.PeriodicField.from_function(grid, lambda *x, m=m: np.cos(m * x[0])))
            for m in range(1, top + 1)]


def _smoothing_ratio(f, t, symbol, nu, p):
    Tf = F.semigroup_apply(f, t, symbol, nu)
    return F.sobolev_norm(Tf, 1, p) / F.sobolev_norm(f, 0, p)


def _collapse(scale, values, nus):
    """Largest relative deviation of each viscosity's curve from the nu = nus[0] curve."""
    scale, values = np.asarray(scale), np.asarray(values)
    nu_of = np.asarray([s for s in nus for _ in range(len(scale) // len(nus))])
    base = nu_of == nus[0]
    bx, by = np.log(scale[base]), np.log(values[base])
    order = np.argsort(bx)
    bx, by = bx[order], by[order]
    spread = 0.0
    for nu in nus[1:]:
        sel = nu_of == nu
        x, y = np.log(scale[sel]), values[sel]
        inside = (x >= bx[0] - 1e-12) & (x <= bx[-1] + 1e-12)
        if inside.any():
            ref = np.exp(np.interp(x[inside], bx, by))
            spread = max(spread, float(np.max(np.abs(y[inside] / ref - 1))))
    return spread


def semigroup_smoothing_check(symbol, viscosities=(1, 2, 4, 8), times=None, grid=None, p=2.0,
                              f=None, tolerance=0.1):
    """Slope of ``|grad T_t f|_p / |f|_p`` against ``nu |t|``.

    With ``f=None`` the worst case over the single modes of ``grid`` is
    taken for every ``(nu, t)`` (the operator norm on the grid); otherwise
    the given field is used as is.
    """
    grid = grid or F.PeriodicGrid(2, 64)
    if times is None:
        # ratio sqrt(2) so that nu |t| coincides across power-of-two viscosities
        times = 0.01 * 2.0 ** (np.arange(14) / 2.0)
    times = np.abs(np.asarray(times, float))
    modes = _mode_fields(grid) if f is None else [(None, f)]
    scale, vals, params = [], [], []
    for nu in viscosities:
        for t in times:
            r = max(_smoothing_ratio(fm, -t, symbol, nu, p) for _, fm in modes)
            scale.append(nu * t)
            vals.append(r)
            params.append(f"nu={nu};t={-t:g}")
    rep = SlopeReport("semigroup_smoothing", -1.0 / symbol.alpha, tolerance, np.array(scale),
                      np.array(vals), np.zeros(len(vals)), params)
    rep.fit(_fit_region(rep.scale))
    spread = _collapse(rep.scale, rep.values, list(viscosities))
    rep.extra.update(collapse_spread=spread, collapse_ok=spread <= 0.10)
    return rep


def mild_gradient_bound_check(u, symbol, viscosities=(1, 4), times=None, p=2.0, steps_per_unit=400,
                              max_mode=None, tolerance=0.1):
    """Slope of ``|grad h_t|_p / |phi|_p`` for the mild solution against ``nu |t|``.

    ``u`` is a bounded :class:`VelocityHistory` (or a frozen
    :class:`PeriodicField`); the worst case is taken over single-mode
    terminal data ``phi``.
    """
    times = np.geomspace(0.01, 0.25, 6) if times is None else np.abs(np.asarray(times, float))
    tmax = float(times.max())
    if isinstance(u, F.PeriodicField):
        u = F.VelocityHistory.frozen(u, -tmax)
    grid = u.grid
    K = max(1, int(round(tmax * steps_per_unit)))
    modes = _mode_fields(grid, max_mode)
    best = {(nu, t): 0.0 for nu in viscosities for t in times}
    for nu in viscosities:
        for _, phi in modes:
            prob = PideProblem(u, phi, symbol, nu)
            sol = mild_solve(prob, -tmax, K)
            pn = F.sobolev_norm(phi, 0, p)
            for t in times:
                r = F.sobolev_norm(sol.series.at(-t), 1, p) / pn
                best[(nu, t)] = max(best[(nu, t)], r)
    scale = np.array([nu * t for nu in viscosities for t in times])
    vals = np.array([best[(nu, t)] for nu in viscosities for t in times])
    params = [f"nu={nu};t={-t:g}" for nu in viscosities for t in times]
    rep = SlopeReport("mild_gradient_bound", -1.0 / symbol.alpha, tolerance, scale, vals,
                      np.zeros(len(vals)), params)
    return rep.fit(_fit_region(scale))


def sde_gradient_check(u, symbol, viscosities=(1, 4), times=(0.05, 0.1, 0.2, 0.4), M=10000,
                       dt=5e-3, max_mode=8, seed=0, p=np.inf, noise_limit=0.1, workers=1,
                       tolerance=0.15, n_pairs=200):
    """Slope of ``sup |grad g_t| / sup |phi|`` with ``g_t(x) = E phi(X_{t,0}(x))`` by Monte Carlo.

    All single modes ``cos(m x_1)``, ``m <= max_mode``, are evaluated on
    the same flows; the worst mode is kept for each ``(nu, t)``.  Points
    whose Monte Carlo noise exceeds ``noise_limit`` of the signal are
    excluded from the fit and listed in ``extra["noisy"]``.  A Lipschitz
    check with the fitted constant is run on ``n_pairs`` node pairs.
    """
    times = np.abs(np.asarray(times, float))
    tmax = float(times.max())
    if isinstance(u, F.PeriodicField):
        u = F.VelocityHistory.frozen(u, -tmax)
    grid = u.grid
    d = grid.dim
    modes = _mode_fields(grid, max_mode)
    stack = kernels.FieldStack.from_fields([m for _, m in modes], "spectral")
    phi_sup = np.array([m.max_norm() for _, m in modes])
    pts = grid.points()
    scale, vals, errs, params, noisy = [], [], [], [], []
    fields_at = {}
    for nu in viscosities:
        prob = PideProblem(u, modes[0][1], symbol, nu)
        cfg = flow_config(prob, dt=dt, seed=seed, workers=workers)
        for t in times:
            acc_g, acc_grad = RunningMoments(), RunningMoments()
            for ch in iter_flow_chunks(pts, -t, u, cfg, np.arange(M), jacobian=False):
                S = ch.X.shape[0]
                vals_m = kernels.evaluate(stack, ch.X.reshape(-1, d)).reshape(S, grid.size, -1)
                gm = np.moveaxis(vals_m, 2, 1).reshape((S, len(modes)) + grid.shape)
                acc_g.add(gm)
                acc_grad.add(F.gradient_values(grid, gm))
            eg, egr = acc_g.estimate(), acc_grad.estimate()
            gmean = np.asarray(egr.mean).reshape((len(modes), d) + grid.shape)
            gerr = np.asarray(egr.stderr).reshape((len(modes), d) + grid.shape)
            sups = np.array([F.grid_norm(gmean[i], p, grid) for i in range(len(modes))]) / phi_sup
            errs_m = np.array([F.grid_norm(gerr[i], p, grid) for i in range(len(modes))]) / phi_sup
            i = int(np.argmax(sups))
            scale.append(nu * t)
            vals.append(sups[i])
            errs.append(errs_m[i])
            params.append(f"nu={nu};t={-t:g};mode={modes[i][0]}")
            noisy.append(bool(errs_m[i] > noise_limit * sups[i]))
            fields_at[(nu, t)] = (np.asarray(eg.mean)[i], np.asarray(eg.stderr)[i], phi_sup[i])
    rep = SlopeReport("sde_gradient", -1.0 / symbol.alpha, tolerance, np.array(scale),
                      np.array(vals), np.array(errs), params)
    rep.fit(_fit_region(rep.scale) & ~np.array(noisy))
    rep.extra["noisy"] = [pp for pp, nz in zip(params, noisy) if nz]
    rep.extra["usable"] = [pp for pp, nz in zip(params, noisy) if not nz]
    if np.isfinite(rep.intercept):
        C = float(np.exp(rep.intercept))
        rng = np.random.default_rng(seed)
        ok = True
        worst = 0.0
        for (nu, t), (g, se, sup) in fields_at.items():
            flat, flat_se = g.ravel(), se.ravel()
            a = rng.integers(0, grid.size, n_pairs)
            b = rng.integers(0, grid.size, n_pairs)
            dx = pts[a] - pts[b]
            dx = np.abs((dx + np.pi) % (2 * np.pi) - np.pi)
            dist = np.sqrt(np.sum(dx ** 2, axis=1))
            lhs = np.abs(flat[a] - flat[b])
            rhs = C * (nu * t) ** (-1.0 / symbol.alpha) * sup * dist + 3 * (flat_se[a] + flat_se[b])
            worst = max(worst, float(np.max(lhs - rhs)))
            ok &= bool(np.all(lhs <= rhs))
        rep.extra.update(lipschitz_constant=C, lipschitz_ok=ok, lipschitz_margin=worst)
    return rep


@dataclass
class KernelTailReport:
    t: float
    M: int
    bin_width: float
    weighted_max: float
    weighted_max_doubled: float
    central_density: float
    central_stderr: float
    symmetry_ok: bool
    warnings: list = field(default_factory=list)

    @property
    def stable(self):
        return bool(np.isfinite(self.weighted_max) and np.isfinite(self.weighted_max_doubled)
                    and abs(self.weighted_max_doubled / self.weighted_max - 1) < 0.2)

    @property
    def passed(self):
        return self.stable and self.symmetry_ok


def truncated_process_sampler(alpha, t, dim=1, sigma=1.0, seed=0):
    """Sampler for the process truncated at ``a = |t|^{1/alpha}``."""
    a = abs(t) ** (1.0 / alpha)
    sym = LevySymbol(alpha, sigma=sigma, kind="truncated-stable", truncation_a=a)
    return IncrementSampler(sym, dim=dim, scheme="compound-poisson-gaussian", seed=seed)


def _draw(sampler, t, M, first=0, chunk=200000):
    out = []
    for s in range(first, first + M, chunk):
        n = min(chunk, first + M - s)
        out.append(sample_increments(sampler, abs(t), np.arange(s, s + n), [0])[0])
    return np.concatenate(out)


def _weighted_max(r, M, t, d, alpha, width, min_count=10):
    edges = np.arange(0.0, r.max() + width, width)
    counts, _ = np.histogram(r, bins=edges)
    if d == 1:
        vol = 2 * width * np.ones(len(counts))
    else:
        vol = F_SPHERE[d] * (edges[1:] ** d - edges[:-1] ** d) / d
    dens = counts / (M * vol)
    mid = 0.5 * (edges[1:] + edges[:-1])
    w = dens * abs(t) ** (d / alpha) * (1 + abs(t) ** (-1 / alpha) * mid) ** (d + 1)
    ok = counts >= min_count
    return float(np.max(w[ok])) if ok.any() else float("nan"), int((~ok).sum())


F_SPHERE = {1: 2.0, 2: 2 * np.pi, 3: 4 * np.pi}


def kernel_tail_check(symbol, t, M, dim=1, seed=0, bin_width=None, samples=None):
    """Histogram estimate of the truncated-process density and its tail weight.

    ``symbol`` must be truncated-stable with ``a = |t|^{1/alpha}``.  Reports
    ``max_bins density * |t|^{d/alpha} * (1 + |t|^{-1/alpha} |x|)^{d+1}``
    for ``M`` and ``2M`` samples, the central density and a symmetry test.
    """
    if t >= 0:
        raise ValueError("t must be negative")
    alpha = symbol.alpha
    a = abs(t) ** (1.0 / alpha)
    if symbol.kind != "truncated-stable" or abs(symbol.truncation_a - a) > 1e-12 * a:
        raise ValueError("kernel_tail_check needs the truncated symbol with a = |t|^{1/alpha}")
    sampler = IncrementSampler(symbol, dim=dim, scheme="compound-poisson-gaussian", seed=seed)
    x = _draw(sampler, t, 2 * M) if samples is None else samples
    x1, x2 = x[:M], x
    r1, r2 = np.linalg.norm(x1, axis=1), np.linalg.norm(x2, axis=1)
    warnings = []
    if bin_width is None:
        q75, q25 = np.percentile(r1, [75, 25])
        bin_width = 2 * (q75 - q25) * M ** (-1 / 3)
    wm1, sparse1 = _weighted_max(r1, M, t, dim, alpha, bin_width)
    wm2, _ = _weighted_max(r2, 2 * M, t, dim, alpha, bin_width)
    if sparse1:
        warnings.append(f"{sparse1} tail bins with fewer than 10 samples ignored; widen bins")
    cd, cse = central_density(x2, t, alpha)
    sym_ok = True
    if dim == 1:
        counts, _ = np.histogram(x2[:, 0], bins=np.linspace(-5 * a, 5 * a, 41))
        rev = counts[::-1]
        se = np.sqrt(counts + rev + 1e-300)
        sym_ok = bool(np.all(np.abs(counts - rev) <= 3 * se + 1e-12))
    return KernelTailReport(t, M, bin_width, wm1, wm2, cd, cse, sym_ok, warnings)


def central_density(x, t, alpha, rel_width=0.1):
    """Density at the origin from samples ``x`` using a window of half-width ``rel_width |t|^{1/alpha}``."""
    x = np.atleast_2d(x)
    M, d = x.shape
    h = rel_width * abs(t) ** (1.0 / alpha)
    r = np.linalg.norm(x, axis=1)
    inside = r <= h
    vol = {1: 2 * h, 2: np.pi * h * h, 3: 4 / 3 * np.pi * h ** 3}[d]
    p_hat = inside.mean()
    return p_hat / vol, np.sqrt(p_hat * (1 - p_hat) / M) / vol


def kernel_scaling_check(alpha, times=(0.1, 0.2, 0.4), M=10 ** 6, dim=1, seed=0, tolerance=0.1):
    """Central-density slope across ``times`` for the truncated process, target ``-d/alpha``."""
    vals, errs, params = [], [], []
    for t in times:
        s = truncated_process_sampler(alpha, -t, dim=dim, seed=seed)
        x = _draw(s, -t, M)
        cd, se = central_density(x, -t, alpha)
        vals.append(cd)
        errs.append(se)
        params.append(f"t={-t:g}")
    rep = SlopeReport("kernel_scaling", -dim / alpha, tolerance, np.asarray(times, float),
                      np.array(vals), np.array(errs), params)
    return rep.fit()


@dataclass
class KrylovReport:
    radii: list
    ratios: np.ndarray
    ratios_doubled: np.ndarray
    lhs: np.ndarray
    lhs_stderr: np.ndarray
    rhs: np.ndarray

    @property
    def passed(self):
        r1, r2 = self.ratios, self.ratios_doubled
        return bool(np.all(np.isfinite(r1)) and np.all(np.isfinite(r2))
                    and np.all(np.abs(r2 / r1 - 1) < 0.2))

    @property
    def bounded(self):
        return bool(np.max(self.ratios) <= 3 * np.min(self.ratios))


def bump(grid, center, radius, p=2.0):
    """Periodized Gaussian bump of width ``radius`` scaled to unit ``L^p`` norm."""
    diff = [(c - center[j] + np.pi) % (2 * np.pi) - np.pi for j, c in enumerate(grid.coords)]
    vals = np.exp(-0.5 * sum(x * x for x in diff) / radius ** 2)
    f = F.PeriodicField(grid, vals)
    return f.scaled(1.0 / F.sobolev_norm(f, 0, p))


def krylov_check(u, fs, symbol, viscosity, t, M, p=2.0, q=4.0, dt=1e-3, starts=None, seed=0,
                 workers=1, interpolation="linear"):
    """Ratios ``sup_x E int_t^0 f(X_r) dr / (|t|^{1/q} |f|_p)`` for each field in ``fs``.

    Runs with ``M`` and ``2M`` samples; the check passes when every ratio
    is finite and changes by less than 20% under the doubling.
    """
    d = u.grid.dim
    alpha = symbol.alpha
    if p <= d / alpha:
        raise ValueError(f"need p > d/alpha = {d / alpha:.4g}")
    if q <= p * alpha / (p * alpha - d):
        raise ValueError(f"need q > p alpha / (p alpha - d) = {p * alpha / (p * alpha - d):.4g}")
    if isinstance(u, F.PeriodicField):
        u = F.VelocityHistory.frozen(u, t)
    grid = u.grid
    pts = grid.points() if starts is None else np.atleast_2d(starts)
    lhs, lse, lhs2, rhs = [], [], [], []
    for f in fs:
        if np.min(f.values) < 0:
            raise ValueError("Krylov test fields must be nonnegative")
        prob = PideProblem(u, f, symbol, viscosity, c=f)
        cfg = flow_config(prob, dt=dt, seed=seed, interpolation=interpolation, workers=workers)
        acc, acc_half = RunningMoments(), RunningMoments()
        for ch in iter_flow_chunks(pts, t, u, cfg, np.arange(2 * M), jacobian=False, potential=f):
            acc.add(ch.potential_integral)
            acc_half.add(ch.potential_integral[ch.samples < M])
        half, full = acc_half.estimate(), acc.estimate()
        i = int(np.argmax(full.mean))
        lhs.append(float(np.max(half.mean)))
        lhs2.append(float(full.mean[i]))
        lse.append(float(full.stderr[i]))
        rhs.append(abs(t) ** (1 / q) * F.sobolev_norm(f, 0, p))
    rhs = np.array(rhs)
    return KrylovReport([None] * len(fs), np.array(lhs) / rhs, np.array(lhs2) / rhs,
                        np.array(lhs2), np.array(lse), rhs)
