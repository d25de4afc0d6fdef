"""Compiled versus pure-Python particle kernels.

Times point evaluation (linear and spectral) and the Euler step with
Jacobian transport on a Taylor-Green drift, and checks that both backends
agree.

    python benchmarks/bench_kernels.py --particles 20000 --steps 20
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from fnse import fields as F
from fnse import kernels


def drift_stack(n, mode):
    g = F.PeriodicGrid(2, n)
    u = F.PeriodicField.from_function(
        g, lambda x, y: [np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y)], divergence_free=True)
    return kernels.FieldStack.from_fields([u, F.spectral_gradient(u)], mode)


def run_steps(stack, X0, noise, steps, dt):
    X = X0.copy()
    P = X.shape[0]
    J = np.tile(np.eye(2), (P, 1, 1))
    acc = np.zeros(P)
    for _ in range(steps):
        kernels.euler_step(stack, X, J, acc, None, noise, 1, dt, grad_row=2)
    return X, J, acc


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=20000)
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--n", type=int, default=32, help="grid points per axis")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    if not kernels.compiled_available():
        print("compiled extension not built; only the Python backend is timed")
    backends = ["cython", "python"] if kernels.compiled_available() else ["python"]
    rng = np.random.default_rng(0)
    P = args.particles
    X0 = rng.uniform(0, 2 * np.pi, (P, 2))
    noise = 1e-2 * rng.standard_normal((P, 2))
    prev = kernels.BACKEND
    results = {}
    try:
        for mode in ("linear", "spectral"):
            stack = drift_stack(args.n, mode)
            for b in backends:
                kernels.use_backend(b)
                t_eval, vals = best_of(lambda: kernels.evaluate(stack, X0), args.repeat)
                t_step, state = best_of(lambda: run_steps(stack, X0, noise, args.steps, 1e-3),
                                        args.repeat)
                results[(mode, b)] = (t_eval, t_step, vals, state)
    finally:
        kernels.use_backend(prev)

    print(f"{'mode':<9}{'backend':<8}{'eval ns/pt':>12}{'step ns/pt':>12}{'speedup':>9}")
    for mode in ("linear", "spectral"):
        base = results[(mode, "python")][1]
        for b in backends:
            t_eval, t_step, _, _ = results[(mode, b)]
            print(f"{mode:<9}{b:<8}{1e9 * t_eval / P:>12.1f}"
                  f"{1e9 * t_step / (P * args.steps):>12.1f}{base / t_step:>9.1f}")
        if len(backends) == 2:
            a, c = results[(mode, "cython")], results[(mode, "python")]
            dev = max(np.max(np.abs(a[2] - c[2])),
                      max(np.max(np.abs(x - y)) for x, y in zip(a[3], c[3])))
            print(f"{mode:<9}max backend difference {dev:.2e}")


if __name__ == "__main__":
    main()
