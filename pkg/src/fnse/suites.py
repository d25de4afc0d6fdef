"""Verification suites and solve actions shared by the CLI and the tests.

Every suite returns a list of :class:`Check` records.  A check carries a
pass flag, a one-line summary and the rows of its CSV report, so that the
caller decides where artifacts go.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checks as C
from . import fields as F
from . import io
from .feynman_kac import PideProblem, estimate_h, flow_config, mild_solve
from .flow import flow_ensemble
from .levy import IncrementSampler, LevySymbol, check_symbol_condition, empirical_cf, sample_increments, symbol_eval
from .solver import continue_global, local_horizon, aligned_horizon, solve_local, weak_form_residual
from .spectral_ref import compare_fields, solve_burgers_spectral, solve_fnse_spectral

log = logging.getLogger(__name__)


@dataclass
class Check:
    name: str
    passed: bool
    summary: str
    header: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    data: dict = field(default_factory=dict)

    def line(self):
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.summary}"


def write_checks(directory, checks):
    """Write one CSV per check; returns ``{file name: checksum}``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    out = {}
    for c in checks:
        if c.header:
            name = f"{c.name}.csv"
            out[name] = io.write_csv(d / name, c.header, c.rows)
    return out


def taylor_green(grid, amplitude=1.0):
    from .config import make_u0
    return make_u0("taylor-green", grid, amplitude)


# -- Levy sampler --------------------------------------------------------------

def cf_frequencies(alpha, dt, dim, count=8):
    """Frequencies with ``dt |xi|^alpha`` spread over ``[0.05, 2]``."""
    r = (np.geomspace(0.05, 2.0, count) / dt) ** (1.0 / alpha)
    if dim == 1:
        return r[:, None]
    ang = np.pi * np.arange(count) / count
    dirs = np.zeros((count, dim))
    dirs[:, 0], dirs[:, 1] = np.cos(ang), np.sin(ang)
    return r[:, None] * dirs


def sampler_fidelity(alphas=(1.2, 1.5, 1.8), dims=(1, 2), dts=(0.05, 0.2), M=100000, seed=0,
                     n_sigma=3.0):
    """Empirical characteristic function of increments against ``exp(-dt psi)``."""
    rows, worst, ok = [], 0.0, True
    for a in alphas:
        sym = LevySymbol(a)
        for d in dims:
            s = IncrementSampler(sym, dim=d, seed=seed)
            for dt in dts:
                x = sample_increments(s, dt, np.arange(M), [0])[0]
                for xi in cf_frequencies(a, dt, d):
                    est = empirical_cf(x, xi)
                    target = np.exp(-dt * symbol_eval(sym, xi).real)
                    dev = abs(est.mean - target)
                    good = bool(dev <= n_sigma * est.stderr)
                    ok &= good
                    worst = max(worst, dev / est.stderr)
                    rows.append([a, d, dt, float(np.linalg.norm(xi)), est.mean.real, est.mean.imag,
                                 target, est.stderr, int(good)])
    header = ["alpha", "dim", "dt", "xi_norm", "cf_re", "cf_im", "target", "stderr", "pass"]
    return Check("levy_cf", ok, f"{len(rows)} frequencies, worst |cf - target| = "
                 f"{worst:.2f} stderr (limit {n_sigma:g})", header, rows)


def symbol_condition(symbols, dim=2):
    rows, ok = [], True
    for sym in symbols:
        rep = check_symbol_condition(sym, (1.0, 1e3), dim=dim)
        ok &= rep.passed
        rows.append([sym.kind, sym.alpha, rep.ratio_min, rep.ratio_max, rep.bound, int(rep.passed)])
    return Check("symbol_condition", ok, f"{len(rows)} symbols, ratio bounded by 10",
                 ["kind", "alpha", "ratio_min", "ratio_max", "bound", "pass"], rows)


def verify_levy(cfg):
    trunc = LevySymbol(cfg.alpha, kind="truncated-stable", truncation_a=cfg.truncation_a)
    return [sampler_fidelity(cfg.levy_alphas, cfg.levy_dims, cfg.levy_dts, cfg.levy_samples,
                             cfg.master_seed),
            symbol_condition([LevySymbol(cfg.alpha), trunc], dim=2)]


# -- spectral calculus ---------------------------------------------------------

def random_field(grid, comps, rng, decay=1.0):
    """Smooth random field with mode amplitudes ``(1 + |k|)^(-decay - d/2)``."""
    c = rng.standard_normal((comps,) + grid.spectral_shape) \
        + 1j * rng.standard_normal((comps,) + grid.spectral_shape)
    c = c * (1.0 + grid.k_norm) ** (-decay - grid.dim / 2.0) * grid.size
    return F.PeriodicField.from_coeffs(grid, c)


def spectral_calculus(grids=((2, 32), (3, 16)), symbol=None, viscosity=1.0, seed=0):
    """Projection, gradient and semigroup identities on random fields."""
    symbol = symbol or LevySymbol(1.5)
    rng = np.random.default_rng(seed)
    rows = []
    for d, n in grids:
        g = F.PeriodicGrid(d, n)
        u = random_field(g, d, rng)
        f = random_field(g, 1, rng)
        pu = F.leray_project(u)
        scale = max(1.0, u.max_norm())
        idem = np.max(np.abs(F.leray_project(pu).values - pu.values)) / scale
        grad = F.spectral_gradient(f)
        annih = np.max(np.abs(F.leray_project(grad).values)) / max(1.0, grad.max_norm())
        div = np.max(np.abs(F.divergence(pu).values)) / scale
        s, t = -0.13, -0.29
        a = F.semigroup_apply(F.semigroup_apply(f, s, symbol, viscosity), t, symbol, viscosity)
        b = F.semigroup_apply(f, s + t, symbol, viscosity)
        semi = np.max(np.abs(a.values - b.values)) / max(1.0, f.max_norm())
        for name, v, tol in (("projection_idempotence", idem, 1e-10),
                             ("gradient_annihilation", annih, 1e-10),
                             ("projected_divergence", div, 1e-10),
                             ("semigroup_law", semi, 1e-12)):
            rows.append([name, d, n, v, tol, int(v <= tol)])
    ok = all(r[-1] for r in rows)
    worst = max(r[3] / r[4] for r in rows)
    return Check("spectral_calculus", ok, f"{len(rows)} identities, worst at {worst:.2g} of tolerance",
                 ["identity", "dim", "n", "error", "tolerance", "pass"], rows)


def verify_fields(cfg):
    return [spectral_calculus(symbol=cfg.symbol(), viscosity=cfg.viscosity, seed=cfg.master_seed)]


# -- Feynman-Kac ---------------------------------------------------------------

def fk_oracle(symbol, viscosity=2.0, t=-0.1, M=10000, points=20, n=32, dt=1e-3, seed=0,
              workers=1, mild_slices=200):
    """Monte Carlo ``h_t`` against the deterministic mild solution (frozen Taylor-Green drift)."""
    g = F.PeriodicGrid(2, n)
    u = taylor_green(g)
    phi = F.PeriodicField.from_function(g, lambda x, y: np.cos(x))
    prob = PideProblem(F.VelocityHistory.frozen(u, t), phi, symbol, viscosity=viscosity)
    ref = mild_solve(prob, t, mild_slices)
    pts = np.random.default_rng(seed).uniform(0, 2 * np.pi, (points, 2))
    est = estimate_h(prob, pts, t, M, dt=dt, seed=seed, workers=workers)
    exact = F.interpolate(ref.fields[-1], pts)[:, 0]
    budget = 3.0 * est.stderr + 5.0 * dt
    ratio = np.abs(est.mean - exact) / budget
    rows = [[i, pts[i, 0], pts[i, 1], est.mean[i], est.stderr[i], exact[i], int(ratio[i] <= 1)]
            for i in range(points)]
    return Check("feynman_kac_oracle", bool(np.all(ratio <= 1)),
                 f"{points} points, worst error at {ratio.max():.2f} of 3 stderr + 5 dt",
                 ["node", "x1", "x2", "mean", "stderr", "mild", "pass"], rows)


def volume_preservation(symbol, t=-0.2, dt=1e-3, M=10000, x0=(1.0, 0.5), n=32, seed=0,
                        workers=1, viscosity=1.0):
    """Mean Jacobian determinant of the flow under Taylor-Green drift at ``dt`` and ``dt/2``."""
    g = F.PeriodicGrid(2, n)
    hist = F.VelocityHistory.frozen(taylor_green(g), t)
    rows, devs = [], []
    for h in (dt, dt / 2):
        fc = flow_config(PideProblem(hist, F.PeriodicField.zeros(g), symbol, viscosity), dt=h,
                         seed=seed, workers=workers)
        _, summ = flow_ensemble(np.asarray(x0, float), t, hist, fc, M, grad_cache=False)
        m, se = float(summ.det_jacobian.mean), float(summ.det_jacobian.stderr)
        devs.append((abs(m - 1.0), se))
        rows.append([h, m, se, int(0.98 <= m <= 1.02)])
    (d1, s1), (d2, s2) = devs
    tighter = d2 <= d1 + 3.0 * np.hypot(s1, s2)
    ok = all(r[-1] for r in rows) and tighter
    return Check("volume_preservation", bool(ok),
                 f"mean det = {rows[0][1]:.6f} (dt), {rows[1][1]:.6f} (dt/2); "
                 f"|mean - 1| {'tightens' if tighter else 'does not tighten'} under halving",
                 ["dt", "mean_det", "stderr", "pass"], rows, {"tighter": bool(tighter)})


def verify_feynman_kac(cfg):
    sym = cfg.symbol()
    return [fk_oracle(sym, cfg.fk_viscosity, cfg.fk_t, cfg.fk_samples, cfg.fk_points,
                      seed=cfg.master_seed, workers=cfg.workers),
            volume_preservation(sym, cfg.volume_t, M=cfg.volume_samples, seed=cfg.master_seed,
                                workers=cfg.workers)]


# -- theory checks -------------------------------------------------------------

SLOPE_HEADER = ["check", "params", "value", "stderr", "slope", "ci_lo", "ci_hi", "pass"]


def slope_check(rep):
    extra = "".join(f", {k} = {v:.3g}" for k, v in rep.extra.items()
                    if isinstance(v, float) and k != "lipschitz_margin")
    return Check(rep.name, rep.passed, f"slope {rep.slope:.4f} vs {rep.target:.4f} "
                 f"+- {rep.tolerance:g}{extra}", SLOPE_HEADER, rep.csv_rows(), {"report": rep})


def kernel_tail(alpha, t=-0.5, M=10 ** 6, seed=0):
    sym = C.truncated_process_sampler(alpha, t).symbol
    rep = C.kernel_tail_check(sym, t, M, dim=1, seed=seed)
    rows = [[rep.t, rep.M, rep.bin_width, rep.weighted_max, rep.weighted_max_doubled,
             rep.central_density, rep.central_stderr, int(rep.symmetry_ok), int(rep.passed)]]
    return Check("kernel_tail", rep.passed,
                 f"weighted tail {rep.weighted_max:.3g} (bin) vs {rep.weighted_max_doubled:.3g} "
                 f"(doubled bin), symmetric = {rep.symmetry_ok}",
                 ["t", "M", "bin_width", "weighted_max", "weighted_max_doubled",
                  "central_density", "central_stderr", "symmetric", "pass"], rows, {"report": rep})


def krylov(symbol, viscosity=1.0, t=-0.2, M=2000, n=64, seed=0, workers=1):
    """Krylov ratios for shrinking bumps under zero and Taylor-Green drift."""
    g = F.PeriodicGrid(2, n)
    centre = (np.pi, np.pi)
    fs = [C.bump(g, centre, r) for r in (0.4, 0.2, 0.1)]
    starts = [centre, (np.pi + 0.05, np.pi), (0.5, 0.5)]
    rows, reps = [], []
    for name, u in (("zero", F.PeriodicField.zeros(g, 2)), ("taylor-green", taylor_green(g))):
        rep = C.krylov_check(u, fs, symbol, viscosity, t, M, starts=starts, seed=seed,
                             workers=workers)
        reps.append(rep)
        for r, a, b, lhs, se, rhs in zip((0.4, 0.2, 0.1), rep.ratios, rep.ratios_doubled,
                                         rep.lhs, rep.lhs_stderr, rep.rhs):
            rows.append([name, r, lhs, se, rhs, a, b, int(rep.passed and rep.bounded)])
    ratio = max(np.max(r.ratios) for r in reps) / min(np.min(r.ratios) for r in reps)
    ok = all(r.passed and r.bounded for r in reps) and ratio <= 3.0
    return Check("krylov", bool(ok), f"ratios within a factor {ratio:.2f} across bumps and drifts",
                 ["drift", "radius", "lhs", "lhs_stderr", "rhs", "ratio", "ratio_doubled", "pass"],
                 rows)


def verify_estimates(cfg):
    sym = cfg.symbol()
    seed = cfg.master_seed
    g = F.PeriodicGrid(2, 32)
    tg = taylor_green(g)
    out = [slope_check(C.semigroup_smoothing_check(sym)),
           slope_check(C.mild_gradient_bound_check(tg, sym)),
           slope_check(C.sde_gradient_check(tg, sym, M=cfg.sde_samples, dt=cfg.sde_dt, seed=seed,
                                            workers=cfg.workers)),
           slope_check(C.kernel_scaling_check(sym.alpha, M=cfg.kernel_samples, seed=seed)),
           kernel_tail(sym.alpha, M=cfg.kernel_samples, seed=seed),
           krylov(sym, M=cfg.krylov_samples, seed=seed, workers=cfg.workers)]
    return out


# -- solve, continue, compare --------------------------------------------------

def weak_test_fields(grid, count=4):
    """Divergence-free test fields ``e_i cos(x_j)`` and ``e_i sin(x_j)`` with ``i != j``."""
    out = []
    d = grid.dim
    for j in range(d):
        for i in range(d):
            if i == j:
                continue
            for fn in (np.cos, np.sin):
                v = np.zeros((d,) + grid.shape)
                v[i] = fn(grid.coords[j])
                out.append(F.PeriodicField(grid, v, divergence_free=True))
    return out[:count]


def solution_checks(sol, scfg, weak=True):
    """Convergence, norm bound and weak-form checks for a solver history."""
    gse = sol.grad_norm_stderr
    rows = [[i, float(t), sol.norms[i], sol.grad_norms[i], gse[i], sol.aggregate_stderr[i]]
            for i, t in enumerate(sol.times)]
    out = [Check("picard", bool(sol.converged),
                 f"converged in {sol.iterations} iterations on [{sol.horizon:.4g}, 0] "
                 f"after {sol.halvings} halvings",
                 ["slice", "t", "norm_p", "grad_norm_p", "grad_norm_stderr", "stderr_aggregate"],
                 rows),
           Check("norm_bound", bool(sol.bound_ok),
                 f"sup |grad u|_p = {np.max(sol.grad_norms):.4g} vs 3 C0 |grad u0|_p = "
                 f"{sol.bound:.4g} (C0 = {sol.C0:g})",
                 ["C0", "bound", "sup_grad_norm", "stderr", "pass"],
                 [[sol.C0, sol.bound, float(np.max(sol.grad_norms)),
                   float(gse[int(np.argmax(sol.grad_norms))]), int(sol.bound_ok)]])]
    if weak:
        rep = weak_form_residual(sol, scfg, weak_test_fields(scfg.grid))
        ok = rep.passed()
        rows = []
        for a, t in enumerate(rep.times):
            for b in range(rep.residuals.shape[1]):
                rows.append([float(t), b, rep.residuals[a, b], rep.stderr[a, b],
                             rep.quadrature[a, b], int(ok[a, b])])
        out.append(Check("weak_form", bool(np.all(ok)),
                         f"{ok.size} residuals within 3 stderr + quadrature budget: {int(ok.sum())}",
                         ["t", "test_field", "residual", "stderr", "quadrature", "pass"], rows))
    return out


def solve(cfg, out_dir=None):
    """Run the configured solver; writes the solution directory when ``out_dir`` is set."""
    u0 = cfg.initial_velocity()
    if cfg.method == "spectral":
        return _solve_spectral(cfg, u0, out_dir)
    scfg = cfg.solve_config()
    sol = solve_local(u0, scfg, horizon=cfg.horizon)
    if out_dir is not None:
        io.write_solution(Path(out_dir) / "solution", sol, p=scfg.p, iterations=sol.iterations,
                          stderr=sol.aggregate_stderr)
    return solution_checks(sol, scfg, cfg.weak_form == "on"), sol


def _solve_spectral(cfg, u0, out_dir):
    sym = cfg.symbol()
    if cfg.horizon is None:
        scfg = cfg.solve_config()
        T = aligned_horizon(local_horizon(u0, scfg), scfg)
    else:
        T = cfg.horizon
    save = np.linspace(0.0, T, cfg.K + 1)
    if cfg.dim == 1:
        ref = solve_burgers_spectral(u0, sym, cfg.viscosity, T, cfg.dt_ref, save)
    else:
        ref = solve_fnse_spectral(u0, sym, cfg.viscosity, T, cfg.dt_ref, save_times=save)
    if out_dir is not None:
        io.write_solution(Path(out_dir) / "solution", ref, p=cfg.p)
    rows = [[i, float(t), F.sobolev_norm(f, 0, cfg.p), F.sobolev_norm(f, 1, cfg.p)]
            for i, (t, f) in enumerate(zip(ref.times, ref.fields))]
    return [Check("spectral_reference", True, f"{len(rows)} slices on [{T:.4g}, 0]",
                  ["slice", "t", "norm_p", "grad_norm_p"], rows)], ref


def continue_solution(cfg, out_dir=None):
    u0 = cfg.initial_velocity()
    scfg = cfg.solve_config()
    sol = continue_global(u0, scfg, cfg.total_horizon)
    if out_dir is not None:
        io.write_solution(Path(out_dir) / "solution", sol, p=scfg.p, iterations=sol.iterations,
                          stderr=sol.aggregate_stderr)
    out = solution_checks(sol, scfg, weak=False)
    rows = [[r["t"], r["grad_norm"], int(r["reentry_ok"])] for r in sol.restarts]
    out.append(Check("reentry", all(r[-1] for r in rows),
                     f"{len(sol.segments)} segments, {len(rows)} restarts",
                     ["t", "grad_norm_p", "pass"], rows))
    return out, sol


def _solution_dir(path):
    p = Path(path)
    return p / "solution" if (p / "solution" / io.MANIFEST).exists() else p


def compare(cfg):
    """Relative L2 errors of a solution directory against a reference directory.

    The budget per slice is ``max(budget, 5 * aggregate stderr / |ref|)``.
    """
    sol, sol_rows = io.read_solution(_solution_dir(cfg.solution))
    ref, _ = io.read_solution(_solution_dir(cfg.reference))
    errs = compare_fields(sol, ref, p=2.0)
    rows, ok = [], True
    for i, (t, e) in enumerate(zip(sol.times, errs)):
        se = float(sol_rows[i][6])
        nref = F.grid_norm(ref.at(float(t)).values, 2.0, ref.grid)
        allowed = max(cfg.budget, 5.0 * se / nref if nref > 0 else 0.0)
        good = bool(e <= allowed)
        ok &= good
        rows.append([i, float(t), float(e), allowed, int(good)])
    worst = max(r[2] for r in rows)
    return [Check("compare", bool(ok), f"{len(rows)} slices, max relative L2 error {worst:.4g}",
                  ["slice", "t", "rel_l2_error", "allowed", "pass"], rows)]
