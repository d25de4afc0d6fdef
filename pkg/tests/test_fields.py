import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fnse import fields as F
from fnse.levy import LevySymbol
from fnse.suites import random_field

G2 = F.PeriodicGrid(2, 32)
SYM = LevySymbol(1.5)


def tg(grid):
    return F.PeriodicField.from_function(
        grid, lambda x, y: [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], divergence_free=True)


def grad_of_product(grid):
    return F.PeriodicField.from_function(
        grid, lambda x, y: [np.cos(x) * np.sin(y), np.sin(x) * np.cos(y)])


def fd8(values, h, axis):
    c = [4 / 5, -1 / 5, 4 / 105, -1 / 280]
    return sum(ck * (np.roll(values, -k - 1, axis) - np.roll(values, k + 1, axis))
               for k, ck in enumerate(c)) / h


def direct_fourier(f, pts):
    """Direct summation of the discrete Fourier series of a scalar field."""
    g = f.grid
    c = np.fft.fftn(f.values[0]) / g.size
    k = np.fft.fftfreq(g.n, 1.0 / g.n)
    ks = np.stack(np.meshgrid(*([k] * g.dim), indexing="ij")).reshape(g.dim, -1)
    cs = c.ravel().copy()
    # split the Nyquist modes symmetrically so the series is real
    nyq = np.any(np.abs(ks) == g.n // 2, axis=0)
    out = np.zeros(len(pts))
    for j, x in enumerate(pts):
        phase = np.exp(1j * (x @ ks))
        out[j] = np.real(np.sum(np.where(nyq, 0, cs * phase)))
    return out, nyq


def test_grid_requires_power_of_two():
    with pytest.raises(ValueError):
        F.PeriodicGrid(2, 24)


def test_gradient_single_mode_and_constant():
    f = F.PeriodicField.from_function(G2, lambda x, y: np.sin(x))
    gr = F.spectral_gradient(f).values
    assert np.max(np.abs(gr[0] - np.cos(G2.coords[0]))) <= 1e-12
    assert np.max(np.abs(gr[1])) <= 1e-12
    c = F.PeriodicField(G2, np.full(G2.shape, 3.0))
    assert np.max(np.abs(F.spectral_gradient(c).values)) <= 1e-12


def test_gradient_matches_finite_differences():
    # same band-limited field on two grids: the FD8 error must drop by ~2^8
    rng = np.random.default_rng(0)
    modes = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    errs = []
    for n in (64, 128):
        g = F.PeriodicGrid(2, n)
        c = np.zeros((1,) + g.spectral_shape, complex)
        c[0, :5, :5] = modes * g.size
        f = F.PeriodicField.from_coeffs(g, c)
        gr = F.spectral_gradient(f).values
        errs.append(max(np.max(np.abs(gr[j] - fd8(f.values[0], g.h, j))) for j in range(2)))
    assert errs[1] <= 1e-6 * np.abs(gr).max()
    assert np.log2(errs[0] / errs[1]) == pytest.approx(8, abs=0.5)


def test_divergence_examples():
    shear = F.PeriodicField.from_function(G2, lambda x, y: [np.sin(y), 0 * x])
    assert np.max(np.abs(F.divergence(shear).values)) <= 1e-12
    const = F.PeriodicField(G2, np.ones((2,) + G2.shape))
    assert np.max(np.abs(F.divergence(const).values)) <= 1e-12
    div = F.divergence(grad_of_product(G2)).values[0]
    x, y = G2.coords
    assert np.max(np.abs(div + 2 * np.sin(x) * np.sin(y))) <= 1e-12


def test_leray_examples():
    u = tg(G2)
    assert np.max(np.abs(F.leray_project(u).values - u.values)) <= 1e-12
    assert np.max(np.abs(F.leray_project(grad_of_product(G2)).values)) <= 1e-12


def test_leray_per_mode_formula():
    rng = np.random.default_rng(1)
    c = np.fft.fftn(random_field(G2, 2, rng).values, axes=(1, 2))
    k = np.stack(np.meshgrid(np.fft.fftfreq(32, 1 / 32), np.fft.fftfreq(32, 1 / 32), indexing="ij"))
    c[:, np.any(np.abs(k) == 16, axis=0)] = 0
    u = F.PeriodicField(G2, np.real(np.fft.ifftn(c, axes=(1, 2))))
    k2 = np.where((k ** 2).sum(0) == 0, 1, (k ** 2).sum(0))
    ref = np.real(np.fft.ifftn(c - k * (k * c).sum(0) / k2, axes=(1, 2)))
    pu = F.leray_project(u).values
    assert np.max(np.abs(ref - pu)) <= 1e-12 * max(1, u.max_norm())
    assert np.max(np.abs(F.divergence(F.leray_project(u)).values)) <= 1e-10


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([(2, 16), (3, 8), (2, 32)]))
def test_leray_idempotent_selfadjoint(seed, shape):
    g = F.PeriodicGrid(*shape)
    rng = np.random.default_rng(seed)
    u, v = random_field(g, g.dim, rng), random_field(g, g.dim, rng)
    pu, pv = F.leray_project(u), F.leray_project(v)
    assert np.max(np.abs(F.leray_project(pu).values - pu.values)) <= 1e-12 * max(1, u.max_norm())
    lhs = np.sum(pu.values * v.values) * g.cell_volume
    rhs = np.sum(u.values * pv.values) * g.cell_volume
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))
    assert np.max(np.abs(F.divergence(pu).values)) <= 1e-10 * max(1, u.max_norm())


def test_semigroup_examples():
    f = F.PeriodicField.from_function(G2, lambda x, y: np.cos(x))
    assert np.array_equal(F.semigroup_apply(f, 0.0, SYM).values, f.values)
    out = F.semigroup_apply(f, -1.0, SYM, 1.0)
    assert np.max(np.abs(out.values - np.exp(-1) * f.values)) <= 1e-12
    with pytest.raises(ValueError):
        F.semigroup_apply(f, 0.5, SYM)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(-2, 0), st.floats(-2, 0), st.floats(1, 8))
def test_semigroup_law_contraction_commutation(seed, s, t, nu):
    rng = np.random.default_rng(seed)
    f = random_field(G2, 1, rng)
    a = F.semigroup_apply(F.semigroup_apply(f, s, SYM, nu), t, SYM, nu)
    b = F.semigroup_apply(f, s + t, SYM, nu)
    assert np.max(np.abs(a.values - b.values)) <= 1e-12 * max(1, f.max_norm())
    assert F.sobolev_norm(b, 0, 2) <= F.sobolev_norm(f, 0, 2) * (1 + 1e-12)
    g1 = F.spectral_gradient(F.semigroup_apply(f, t, SYM, nu)).values
    g2 = np.stack([F.semigroup_apply(F.PeriodicField(G2, c), t, SYM, nu).values[0]
                   for c in F.spectral_gradient(f).values])
    assert np.max(np.abs(g1 - g2)) <= 1e-12 * max(1, np.abs(g1).max())


def test_generator_sign():
    # the semigroup is exp(t * (-generator multiplier)) for t <= 0
    m = F.generator_multiplier(G2, SYM, 2.0)
    assert np.all(m.real <= 1e-15)
    f = F.PeriodicField.from_function(G2, lambda x, y: np.cos(2 * y))
    out = F.semigroup_apply(f, -0.3, SYM, 2.0)
    assert np.allclose(out.values, np.exp(-0.3 * 2.0 * 2 ** 1.5) * f.values, atol=1e-13)


def test_interpolation_examples():
    f = F.PeriodicField.from_function(G2, lambda x, y: np.sin(x))
    assert F.interpolate(f, [np.pi / 2, 0.3])[0] == pytest.approx(1.0, abs=1e-12)
    rng = np.random.default_rng(2)
    r = random_field(G2, 1, rng)
    idx = [(3, 7), (0, 0), (31, 12)]
    for i, j in idx:
        x = np.array([G2.axes[i], G2.axes[j]])
        for mode in ("spectral", "linear"):
            assert F.interpolate(r, x, mode=mode)[0] == pytest.approx(r.values[0, i, j], abs=1e-12)


def test_spectral_interpolation_matches_direct_sum():
    g = F.PeriodicGrid(2, 32)
    rng = np.random.default_rng(3)
    c = np.zeros((1,) + g.spectral_shape, complex)
    c[0, :8, :8] = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
    c[0, -7:, :8] = rng.normal(size=(7, 8)) + 1j * rng.normal(size=(7, 8))
    f = F.PeriodicField.from_coeffs(g, c * g.size)
    pts = rng.uniform(0, 2 * np.pi, (100, 2))
    direct, nyq = direct_fourier(f, pts)
    assert not np.any(np.abs(np.fft.fftn(f.values[0]).ravel()[nyq]) > 1e-9)
    assert np.max(np.abs(F.interpolate(f, pts)[:, 0] - direct)) <= 1e-10


def test_sobolev_norms():
    c = F.PeriodicField(G2, np.full(G2.shape, -2.0))
    assert F.sobolev_norm(c, 0, 2) == pytest.approx(2 * 2 * np.pi, rel=1e-14)
    s = F.PeriodicField.from_function(G2, lambda x, y: np.sin(x))
    assert F.sobolev_norm(s, 0, 2) == pytest.approx(4.442883, abs=1e-6)


def test_taylor_green_gradient_norm_converged():
    fine = F.sobolev_norm(tg(F.PeriodicGrid(2, 512)), 1, 4)
    assert F.sobolev_norm(tg(G2), 1, 4) == pytest.approx(fine, rel=1e-3)
    # |grad u|_F^2 = 2 (cos^2 x cos^2 y + sin^2 x sin^2 y): int of its square over T^2
    x = np.linspace(0, 2 * np.pi, 2049)[:-1]
    X, Y = np.meshgrid(x, x, indexing="ij")
    dens = (2 * (np.cos(X) ** 2 * np.cos(Y) ** 2 + np.sin(X) ** 2 * np.sin(Y) ** 2)) ** 2
    assert fine == pytest.approx((dens.mean() * 4 * np.pi ** 2) ** 0.25, rel=1e-10)


def test_divergence_free_flag_checked():
    bad = grad_of_product(G2)
    with pytest.raises(ValueError):
        F.PeriodicField(G2, bad.values, divergence_free=True)


def test_fields_are_immutable():
    f = tg(G2)
    with pytest.raises(ValueError):
        f.values[0, 0, 0] = 1.0


def test_batched_projection_and_gradient_match_single():
    rng = np.random.default_rng(4)
    us = [random_field(G2, 2, rng) for _ in range(3)]
    stack = np.stack([u.values for u in us])
    P = F.project_values(G2, stack)
    Gv = F.gradient_values(G2, stack)
    for i, u in enumerate(us):
        assert np.allclose(P[i], F.leray_project(u).values, atol=1e-14)
        assert np.allclose(Gv[i], F.spectral_gradient(u).values, atol=1e-13)


def test_velocity_history_interpolates_linearly():
    u = tg(G2)
    h = F.VelocityHistory(np.array([0.0, -0.5, -1.0]), [u, u.scaled(0.5), u.scaled(0.0)])
    assert np.allclose(h.at(-0.25).values, 0.75 * u.values)
    assert h.covers(-1.0) and not h.covers(-1.1)


def test_field_series():
    u = tg(G2)
    s = F.FieldSeries([0.0, -1.0], [u, u.scaled(3.0)])
    assert np.allclose(s.at(-0.5).values, 2 * u.values)
    with pytest.raises(ValueError):
        F.FieldSeries([0.0, 0.5], [u, u])
