import numpy as np
import pytest
from scipy.linalg import expm

from fnse import fields as F
from fnse import kernels
from fnse.flow import (FlowConfig, exp_moment_diagnostic, flow_ensemble, integrate_flow,
                       iter_flow_chunks)
from fnse.levy import IncrementSampler, LevySymbol, sample_increments

G = F.PeriodicGrid(2, 32)
SYM = LevySymbol(1.5)


def tg(grid=G):
    return F.PeriodicField.from_function(
        grid, lambda x, y: [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], divergence_free=True)


def cfg(dt=1e-3, nu=1.0, seed=0, workers=1, chunk=64, interpolation="spectral"):
    return FlowConfig(dt=dt, sampler=IncrementSampler(SYM, dim=2, seed=seed), viscosity=nu,
                      interpolation=interpolation, workers=workers, chunk_samples=chunk)


def test_zero_drift_is_scaled_levy_path():
    t, c = -0.05, cfg(nu=4.0, seed=9)
    hist = F.VelocityHistory.frozen(F.PeriodicField.zeros(G, 2), t)
    x0 = np.array([1.0, 2.0])
    s = integrate_flow(x0, t, hist, c, stream=5)
    inc = sample_increments(c.sampler, c.dt, [5], np.arange(50))[:, 0]
    assert np.allclose(s.displacement, 4.0 ** (1 / 1.5) * inc.sum(axis=0), atol=1e-12)
    assert np.array_equal(s.jacobian, np.eye(2))


def test_zero_drift_jacobian_identity_every_sample():
    t = -0.02
    hist = F.VelocityHistory.frozen(F.PeriodicField.zeros(G, 2), t)
    samples, summ = flow_ensemble([0.3, 0.4], t, hist, cfg(), 100)
    assert all(np.array_equal(s.jacobian, np.eye(2)) for s in samples)


def test_linear_drift_jacobian_matrix_exponential():
    # constant gradient rows with noise off: J = (I + dt A)^n
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    n = 8
    rows = np.zeros((6, n * n))
    rows[2:] = A.ravel()[:, None]
    dt = 1e-3
    for mode in ("linear", "spectral"):
        stack = kernels.FieldStack.from_rows(rows, 2, n, mode)
        X = np.array([[0.5, 0.5]])
        J = np.eye(2)[None].copy()
        for _ in range(1000):
            kernels.euler_step(stack, X, J, None, None, np.zeros((1, 2)), 1, dt, grad_row=2)
        assert np.max(np.abs(J[0] - expm(A))) <= 2 * dt


def test_volume_preserved_first_order():
    t = -0.2
    hist = F.VelocityHistory.frozen(tg(), t)
    devs = []
    for dt in (2e-3, 1e-3):
        samples, summ = flow_ensemble([1.0, 0.5], t, hist, cfg(dt=dt), 200, grad_cache=False)
        det = np.array([np.linalg.det(s.jacobian) for s in samples])
        devs.append(np.mean(np.abs(det - 1)))
        assert 0.98 <= summ.det_jacobian.mean <= 1.02
        assert np.max(np.abs(det - 1)) <= 10 * dt
    assert 1.5 <= devs[0] / devs[1] <= 3


def test_single_sample_ensemble_equals_integrate_flow():
    t = -0.03
    hist = F.VelocityHistory.frozen(tg(), t)
    a = integrate_flow([2.0, 1.0], t, hist, cfg())
    samples, _ = flow_ensemble([2.0, 1.0], t, hist, cfg(), 1)
    b = samples[0]
    assert np.array_equal(a.terminal_position, b.terminal_position)
    assert np.array_equal(a.jacobian, b.jacobian)
    assert a.path_integral_cache == b.path_integral_cache


def test_worker_count_invariance():
    t = -0.05
    hist = F.VelocityHistory.frozen(tg(), t)
    out = []
    for w, ch in ((1, 64), (3, 64), (2, 64)):
        _, summ = flow_ensemble([2.0, 1.0], t, hist, cfg(workers=w, chunk=ch), 300)
        out.append(summ)
    for s in out[1:]:
        assert np.array_equal(s.displacement.mean, out[0].displacement.mean)
        assert np.array_equal(s.jacobian.stderr, out[0].jacobian.stderr)


def test_zero_drift_displacement_symmetric():
    t = -0.01
    hist = F.VelocityHistory.frozen(F.PeriodicField.zeros(G, 2), t)
    _, summ = flow_ensemble([1.0, 1.0], t, hist, cfg(), 100000, grad_cache=False)
    assert np.all(np.abs(summ.displacement.mean) <= 4 * summ.displacement.stderr)


def test_exp_moment_examples():
    t = -0.1
    zero = F.VelocityHistory.frozen(F.PeriodicField.zeros(G, 2), t)
    samples, _ = flow_ensemble([1.0, 1.0], t, zero, cfg(), 50)
    est, exceeded = exp_moment_diagnostic(samples, gamma=4.0)
    assert est.mean == 1.0 and est.stderr == 0.0 and not exceeded
    samples, _ = flow_ensemble([1.0, 1.0], t, F.VelocityHistory.frozen(tg(), t), cfg(), 200)
    est, _ = exp_moment_diagnostic(samples, gamma=0.0)
    assert est.mean == 1.0
    est, exceeded = exp_moment_diagnostic(samples, gamma=4.0)
    caches = np.array([s.path_integral_cache for s in samples])
    assert np.all(caches <= 0.1 + 1e-12)
    assert est.mean <= np.exp(0.4) and not exceeded


def test_chunks_cover_samples_in_order():
    t = -0.01
    hist = F.VelocityHistory.frozen(tg(), t)
    seen = []
    for ch in iter_flow_chunks(np.zeros((3, 2)), t, hist, cfg(chunk=7, workers=2), np.arange(30)):
        seen.extend(ch.samples)
        assert ch.X.shape[1:] == (3, 2)
    assert seen == list(range(30))


def test_start_time_validation():
    c = cfg()
    assert c.steps_to(-0.25) == 250
    with pytest.raises(ValueError):
        c.steps_to(0.1)
    with pytest.raises(ValueError):
        c.steps_to(-0.00025)


def test_linear_and_spectral_drift_agree():
    t = -0.05
    hist = F.VelocityHistory.frozen(tg(F.PeriodicGrid(2, 64)), t)
    a = integrate_flow([2.0, 1.0], t, hist, cfg(interpolation="spectral"))
    b = integrate_flow([2.0, 1.0], t, hist, cfg(interpolation="linear"))
    assert np.allclose(a.terminal_position, b.terminal_position, atol=1e-3)
