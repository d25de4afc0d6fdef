import os
import subprocess
import sys

import numpy as np
import pytest

from fnse import fields as F
from fnse import kernels

G = F.PeriodicGrid(2, 16)
needs_compiled = pytest.mark.skipif(not kernels.compiled_available(),
                                    reason="compiled extension not built")


def stacks():
    rng = np.random.default_rng(0)
    u = F.leray_project(F.PeriodicField(G, rng.normal(size=(2,) + G.shape)))
    c = F.PeriodicField(G, np.abs(rng.normal(size=G.shape)))
    fields = [u, F.spectral_gradient(u), c]
    return {m: kernels.FieldStack.from_fields(fields, m) for m in ("linear", "spectral")}


@pytest.fixture
def backend():
    prev = kernels.BACKEND
    yield kernels.use_backend
    kernels.use_backend(prev)


def run(stack, X0, noise, per_noise=1, steps=5):
    X = X0.copy()
    J = np.tile(np.eye(2), (len(X), 1, 1))
    ag, ap = np.zeros(len(X)), np.zeros(len(X))
    for _ in range(steps):
        kernels.euler_step(stack, X, J, ag, ap, noise, per_noise, 1e-2, grad_row=2, pot_row=6)
    return X, J, ag, ap


@needs_compiled
@pytest.mark.parametrize("mode", ["linear", "spectral"])
def test_backends_agree(mode, backend):
    rng = np.random.default_rng(1)
    X0 = rng.uniform(-10, 10, (40, 2))
    noise = 0.1 * rng.standard_normal((20, 2))
    st = stacks()[mode]
    out = {}
    for b in ("cython", "python"):
        backend(b)
        out[b] = (kernels.evaluate(st, X0),) + run(st, X0, noise, per_noise=2)
    for a, b in zip(out["cython"], out["python"]):
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


def test_evaluation_matches_field_interpolation(backend):
    rng = np.random.default_rng(2)
    X = rng.uniform(0, 2 * np.pi, (30, 2))
    u = F.PeriodicField.from_function(
        G, lambda x, y: [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], divergence_free=True)
    for b in ("python",) + (("cython",) if kernels.compiled_available() else ()):
        backend(b)
        for mode in ("linear", "spectral"):
            st = kernels.FieldStack.from_fields([u], mode)
            assert np.allclose(kernels.evaluate(st, X), F.interpolate(u, X, mode=mode),
                               atol=1e-12)
            # evaluation is periodic in the unwrapped coordinates
            assert np.allclose(kernels.evaluate(st, X + 2 * np.pi * np.array([3, -2])),
                               kernels.evaluate(st, X), atol=1e-11)


def test_step_requires_gradient_rows():
    st = stacks()["linear"]
    X = np.zeros((1, 2))
    with pytest.raises(ValueError):
        kernels.euler_step(st, X, np.eye(2)[None].copy(), None, None, np.zeros((1, 2)), 1, 1e-2)


def test_unknown_backend_and_mode():
    with pytest.raises(ValueError):
        kernels.use_backend("fortran")
    with pytest.raises(ValueError):
        kernels.FieldStack("cubic", 2, 8)


def test_zero_stack_keeps_one_mode():
    st = kernels.FieldStack.from_rows(np.zeros((2, 64)), 2, 8, "spectral")
    assert st.kvec.shape == (1, 2)
    assert not np.any(kernels.evaluate(st, np.ones((3, 2))))


def test_pure_python_fallback_selected_by_environment():
    env = dict(os.environ, FNSE_PURE_PYTHON="1")
    code = "from fnse import kernels; print(kernels.BACKEND)"
    r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.strip() == "python"
    if kernels.compiled_available():
        env.pop("FNSE_PURE_PYTHON")
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        assert r.stdout.strip() == "cython"


def test_benchmark_runs():
    root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
    r = subprocess.run([sys.executable, os.path.join(root, "benchmarks", "bench_kernels.py"),
                        "--particles", "200", "--steps", "2", "--repeat", "1"],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "speedup" in r.stdout
