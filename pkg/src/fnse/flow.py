"""Backward particle flow X_{t,s}(x) with its Jacobian, by Euler-Maruyama.

The flow is integrated forward in s from the start time t < 0 to 0 on a
fixed global step grid: step ``n`` covers ``[-(n+1) dt, -n dt]`` and its
increment for sample ``m`` is the counter-based draw ``(m, n)``.  Flows
started at different times or places but sharing a sample index therefore
see the same noise where their intervals overlap, which is what couples
successive Picard iterates and different grid nodes.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .levy import IncrementSampler, sample_increments
from .stats import McEstimate, mc_mean

TWO_PI = 2.0 * np.pi
EXP_MOMENT_GAMMA = 4.0
EXP_MOMENT_LIMIT = 2.0


@dataclass(frozen=True)
class FlowConfig:
    dt: float
    sampler: IncrementSampler
    viscosity: float = 1.0
    interpolation: str = "spectral"
    chunk_samples: int = 64
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.viscosity < 1.0:
            raise ValueError(f"viscosity must be >= 1, got {self.viscosity}")
        if self.interpolation not in ("spectral", "linear"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        if self.chunk_samples < 1 or self.workers < 1:
            raise ValueError("chunk_samples and workers must be positive")

    @property
    def noise_scale(self):
        return self.viscosity ** (1.0 / self.sampler.symbol.alpha)

    def steps_to(self, t):
        """Number of steps from ``t`` to 0; ``t`` must sit on the step grid."""
        if t > 0:
            raise ValueError(f"start time must be <= 0, got {t}")
        n = int(round(-t / self.dt))
        if abs(n * self.dt + t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"start time {t} is not a multiple of dt = {self.dt}")
        return n


@dataclass
class FlowSample:
    """One realization of (X_{t,0}(x), grad X_{t,0}(x))."""

    terminal_position: np.ndarray
    jacobian: np.ndarray
    displacement: np.ndarray = None
    path_integral_cache: float | None = None
    potential_integral: float | None = None


class Drift:
    """Per-step stacked node data for a velocity history (and optional potential).

    Rows are ``[u_1..u_d]``, then ``du_i/dx_j`` at ``grad_row`` when
    gradients are needed, then the potential at ``pot_row``.  Stacks are
    built at the left endpoint of each step and cached by step index.
    """

    def __init__(self, history, mode, need_grad=True, potential=None):
        self.history = history
        self.mode = mode
        self.need_grad = need_grad
        self.potential = potential
        g = history.grid
        self.dim, self.n = g.dim, g.n
        self.grad_row = g.dim if need_grad else -1
        self.pot_row = -1
        if potential is not None:
            self.pot_row = g.dim + (g.dim * g.dim if need_grad else 0)
        self._cache = {}
        self._modes = None
        if mode == "spectral":
            coeff_list = [kernels.spectral_coeffs(self._slice_rows(j), g.dim, g.n)
                          for j in range(len(history.slices))]
            if potential is not None:
                coeff_list.append(kernels.spectral_coeffs(self._potential_rows(0.0), g.dim, g.n))
                if callable(potential):
                    coeff_list.extend(kernels.spectral_coeffs(self._potential_rows(t), g.dim, g.n)
                                      for t in history.times[1:])
            self._modes = kernels.active_modes(coeff_list)

    def _slice_rows(self, j):
        parts = [self.history.slices[j].values.reshape(self.dim, -1)]
        if self.need_grad:
            parts.append(self.history.gradients[j].values.reshape(self.dim * self.dim, -1))
        return np.concatenate(parts)

    def _potential_rows(self, t):
        c = self.potential(t) if callable(self.potential) else self.potential
        return c.values.reshape(1, -1)

    def rows_at(self, t):
        rows = self.history.drift_stack(t, with_gradient=self.need_grad)
        if self.potential is not None:
            rows = np.concatenate([rows, self._potential_rows(t)])
        return rows

    def stack(self, step, dt):
        st = self._cache.get(step)
        if st is None:
            t = -(step + 1) * dt
            st = kernels.FieldStack.from_rows(self.rows_at(t), self.dim, self.n, self.mode,
                                              modes=self._modes)
            self._cache[step] = st
        return st


def _check_history(u, t, cfg):
    if not u.covers(t):
        raise ValueError(f"velocity history covers [{u.horizon}, 0], cannot start at {t}")
    for tj in u.times[1:]:
        cfg.steps_to(tj)


def _run_chunk(starts, n_steps, cfg, drift, samples, want_jac, want_grad_acc, want_pot):
    d = starts.shape[1]
    S, P0 = len(samples), starts.shape[0]
    P = S * P0
    X = np.ascontiguousarray(np.tile(starts, (S, 1)), dtype=float)
    J = None
    if want_jac:
        J = np.zeros((P, d, d))
        J[:, np.arange(d), np.arange(d)] = 1.0
    acc_grad = np.zeros(P) if want_grad_acc else None
    acc_pot = np.zeros(P) if want_pot else None
    if n_steps:
        steps = np.arange(n_steps)
        noise = sample_increments(cfg.sampler, cfg.dt, samples, steps) * cfg.noise_scale
        for n in range(n_steps - 1, -1, -1):
            kernels.euler_step(drift.stack(n, cfg.dt), X, J, acc_grad, acc_pot,
                               noise[n], P0, cfg.dt, drift.grad_row, drift.pot_row)
    shape = (S, P0)
    return (X.reshape(shape + (d,)),
            None if J is None else J.reshape(shape + (d, d)),
            None if acc_grad is None else acc_grad.reshape(shape),
            None if acc_pot is None else acc_pot.reshape(shape))


@dataclass
class FlowChunk:
    samples: np.ndarray
    X: np.ndarray
    J: np.ndarray | None
    grad_integral: np.ndarray | None
    potential_integral: np.ndarray | None


def iter_flow_chunks(starts, t, u, cfg, samples, jacobian=True, grad_cache=False,
                     potential=None, drift=None):
    """Yield :class:`FlowChunk` results for consecutive blocks of ``samples``.

    ``starts`` has shape ``(P0, d)``; every sample runs one particle from each
    start.  Chunks are fixed by ``cfg.chunk_samples`` and yielded in order,
    so reductions over them do not depend on ``cfg.workers``.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    samples = np.asarray(samples, dtype=np.int64)
    if starts.shape[1] != u.grid.dim:
        raise ValueError("start points and velocity field dimensions differ")
    _check_history(u, t, cfg)
    n_steps = cfg.steps_to(t)
    if drift is None:
        drift = Drift(u, cfg.interpolation, need_grad=jacobian or grad_cache, potential=potential)
    blocks = [samples[i:i + cfg.chunk_samples]
              for i in range(0, len(samples), cfg.chunk_samples)]
    if n_steps:
        # build every stack up front so worker threads only read the cache
        for n in range(n_steps):
            drift.stack(n, cfg.dt)

    def work(block):
        X, J, ag, ap = _run_chunk(starts, n_steps, cfg, drift, block, jacobian, grad_cache,
                                  potential is not None)
        return FlowChunk(block, X, J, ag, ap)

    if cfg.workers == 1 or len(blocks) == 1:
        for b in blocks:
            yield work(b)
    else:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            yield from pool.map(work, blocks)


def wrap(x):
    return np.mod(x, TWO_PI)


def integrate_flow(x0, t, u, cfg, stream=0, grad_cache=True):
    """Single realization of the flow from ``(t, x0)`` to time 0."""
    x0 = np.asarray(x0, dtype=float)
    chunk = next(iter_flow_chunks(x0[None], t, u, cfg, [stream], jacobian=True,
                                  grad_cache=grad_cache))
    X = chunk.X[0, 0]
    return FlowSample(terminal_position=wrap(X), jacobian=chunk.J[0, 0].copy(),
                      displacement=X - x0,
                      path_integral_cache=None if chunk.grad_integral is None
                      else float(chunk.grad_integral[0, 0]))


@dataclass
class EnsembleSummary:
    displacement: McEstimate
    jacobian: McEstimate
    det_jacobian: McEstimate
    n: int
    extra: dict = field(default_factory=dict)


def flow_ensemble(x0, t, u, cfg, M, grad_cache=True, first_sample=0):
    """``M`` independent flows from ``(t, x0)``; returns (samples, summary).

    Sample ``i`` uses stream ``first_sample + i``.  Summaries are reduced in
    sample order and are identical for any worker count.
    """
    if M < 1:
        raise ValueError("sample count must be at least 1")
    x0 = np.asarray(x0, dtype=float)
    samples = np.arange(first_sample, first_sample + M)
    out = []
    disp, jac, cache = [], [], []
    for ch in iter_flow_chunks(x0[None], t, u, cfg, samples, jacobian=True, grad_cache=grad_cache):
        X = ch.X[:, 0]
        J = ch.J[:, 0]
        disp.append(X - x0)
        jac.append(J)
        if ch.grad_integral is not None:
            cache.append(ch.grad_integral[:, 0])
    disp = np.concatenate(disp)
    jac = np.concatenate(jac)
    cache = np.concatenate(cache) if cache else None
    for i in range(M):
        out.append(FlowSample(terminal_position=wrap(x0 + disp[i]), jacobian=jac[i],
                              displacement=disp[i],
                              path_integral_cache=None if cache is None else float(cache[i])))
    summary = EnsembleSummary(mc_mean(disp), mc_mean(jac), mc_mean(np.linalg.det(jac)), M)
    return out, summary


def exp_moment_diagnostic(samples, gamma=EXP_MOMENT_GAMMA, limit=EXP_MOMENT_LIMIT):
    """Estimate E exp(gamma * int |grad u_r(X_r)| dr) from cached path integrals.

    ``samples`` is a list of :class:`FlowSample` or an array of cached
    integrals.  Returns ``(estimate, exceeded)`` where ``exceeded`` flags an
    estimate above ``limit``.
    """
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    if isinstance(samples, np.ndarray):
        cache = samples.ravel()
    else:
        vals = [s.path_integral_cache for s in samples]
        if any(v is None for v in vals):
            raise ValueError("flow samples carry no path-integral cache")
        cache = np.asarray(vals, dtype=float)
    if cache.size == 0:
        raise ValueError("no samples")
    if gamma == 0:
        return McEstimate(1.0, 0.0, cache.size), False
    est = mc_mean(np.exp(gamma * cache))
    return est, bool(est.mean > limit)
