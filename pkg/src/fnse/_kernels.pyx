# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled particle kernels: field evaluation and one Euler-Maruyama step.

Stacked fields hold rows ``[u_1..u_d, (du_i/dx_j)..., potential]``; a row
index of -1 disables the corresponding term.
"""
from libc.math cimport floor, cos, sin, sqrt, acos, fabs, M_PI
from libc.stdlib cimport malloc, free

import numpy as np

DEF MAXROWS = 16
DEF MAXK = 512

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _wrap(double x) noexcept nogil:
    return x - TWO_PI * floor(x / TWO_PI)


cdef inline int _cell(double x, double inv_h, int n, double* w) noexcept nogil:
    cdef double s = x * inv_h
    cdef double f = floor(s)
    cdef int i = <int>f
    w[0] = s - f
    i = i % n
    if i < 0:
        i += n
    return i


cdef inline double _opnorm(const double* g, int d) noexcept nogil:
    # largest singular value of the d x d matrix g
    cdef double a, b, c, fro, det, disc, p1, q, p2, r, phi, e
    cdef double B[9]
    cdef int i, j, k
    if d == 1:
        return fabs(g[0])
    if d == 2:
        fro = g[0] * g[0] + g[1] * g[1] + g[2] * g[2] + g[3] * g[3]
        det = g[0] * g[3] - g[1] * g[2]
        disc = fro * fro - 4.0 * det * det
        if disc < 0.0:
            disc = 0.0
        return sqrt(0.5 * (fro + sqrt(disc)))
    for i in range(3):
        for j in range(3):
            a = 0.0
            for k in range(3):
                a += g[k * 3 + i] * g[k * 3 + j]
            B[i * 3 + j] = a
    p1 = B[1] * B[1] + B[2] * B[2] + B[5] * B[5]
    q = (B[0] + B[4] + B[8]) / 3.0
    if p1 == 0.0:
        e = B[0]
        if B[4] > e:
            e = B[4]
        if B[8] > e:
            e = B[8]
        return sqrt(e)
    p2 = (B[0] - q) ** 2 + (B[4] - q) ** 2 + (B[8] - q) ** 2 + 2.0 * p1
    p2 = sqrt(p2 / 6.0)
    a = B[0] - q
    b = B[4] - q
    c = B[8] - q
    r = (a * (b * c - B[5] * B[7]) - B[1] * (B[3] * c - B[5] * B[6])
         + B[2] * (B[3] * B[7] - b * B[6])) / (2.0 * p2 * p2 * p2)
    if r <= -1.0:
        phi = M_PI / 3.0
    elif r >= 1.0:
        phi = 0.0
    else:
        phi = acos(r) / 3.0
    e = q + 2.0 * p2 * cos(phi)
    if e < 0.0:
        e = 0.0
    return sqrt(e)


cdef inline void _eval_linear(const double* F, Py_ssize_t npts, int nrows, int n, int d,
                              const double* x, double* out) noexcept nogil:
    cdef double inv_h = n / TWO_PI
    cdef int i0, i1, j0, j1, k0, k1, r
    cdef double wx, wy, wz, c00, c01, c10, c11
    cdef const double* f
    cdef const double* f00
    cdef const double* f01
    cdef const double* f10
    cdef const double* f11
    if d == 2:
        i0 = _cell(x[0], inv_h, n, &wx)
        j0 = _cell(x[1], inv_h, n, &wy)
        i1 = i0 + 1 if i0 + 1 < n else 0
        j1 = j0 + 1 if j0 + 1 < n else 0
        c00 = (1.0 - wx) * (1.0 - wy)
        c01 = (1.0 - wx) * wy
        c10 = wx * (1.0 - wy)
        c11 = wx * wy
        f00 = F + (i0 * n + j0) * nrows
        f01 = F + (i0 * n + j1) * nrows
        f10 = F + (i1 * n + j0) * nrows
        f11 = F + (i1 * n + j1) * nrows
        for r in range(nrows):
            out[r] = c00 * f00[r] + c01 * f01[r] + c10 * f10[r] + c11 * f11[r]
    elif d == 1:
        i0 = _cell(x[0], inv_h, n, &wx)
        i1 = i0 + 1 if i0 + 1 < n else 0
        f00 = F + i0 * nrows
        f01 = F + i1 * nrows
        for r in range(nrows):
            out[r] = (1.0 - wx) * f00[r] + wx * f01[r]
    else:
        i0 = _cell(x[0], inv_h, n, &wx)
        j0 = _cell(x[1], inv_h, n, &wy)
        k0 = _cell(x[2], inv_h, n, &wz)
        i1 = i0 + 1 if i0 + 1 < n else 0
        j1 = j0 + 1 if j0 + 1 < n else 0
        k1 = k0 + 1 if k0 + 1 < n else 0
        i0 *= n * n * nrows
        i1 *= n * n * nrows
        j0 *= n * nrows
        j1 *= n * nrows
        k0 *= nrows
        k1 *= nrows
        for r in range(nrows):
            f = F + r
            out[r] = ((1.0 - wx) * ((1.0 - wy) * ((1.0 - wz) * f[i0 + j0 + k0] + wz * f[i0 + j0 + k1])
                                    + wy * ((1.0 - wz) * f[i0 + j1 + k0] + wz * f[i0 + j1 + k1]))
                      + wx * ((1.0 - wy) * ((1.0 - wz) * f[i1 + j0 + k0] + wz * f[i1 + j0 + k1])
                              + wy * ((1.0 - wz) * f[i1 + j1 + k0] + wz * f[i1 + j1 + k1])))


cdef inline void _eval_spectral(const int* K, const double* CR, const double* CI,
                                Py_ssize_t nm, int kmax, int nrows, int d,
                                const double* x, double* out,
                                double* tre, double* tim) noexcept nogil:
    # tre/tim: (d, 2*kmax+1) tables of cos/sin(k x_a), k = -kmax..kmax
    cdef int a, r, k, w = 2 * kmax + 1
    cdef Py_ssize_t m
    cdef double c1, s1, cr, ci, tmp, pr, pi
    for r in range(nrows):
        out[r] = 0.0
    for a in range(d):
        c1 = cos(x[a])
        s1 = sin(x[a])
        tre[a * w + kmax] = 1.0
        tim[a * w + kmax] = 0.0
        cr = 1.0
        ci = 0.0
        for k in range(1, kmax + 1):
            tmp = cr * c1 - ci * s1
            ci = cr * s1 + ci * c1
            cr = tmp
            tre[a * w + kmax + k] = cr
            tim[a * w + kmax + k] = ci
            tre[a * w + kmax - k] = cr
            tim[a * w + kmax - k] = -ci
    for m in range(nm):
        pr = 1.0
        pi = 0.0
        for a in range(d):
            k = K[m * d + a] + kmax
            cr = tre[a * w + k]
            ci = tim[a * w + k]
            tmp = pr * cr - pi * ci
            pi = pr * ci + pi * cr
            pr = tmp
        for r in range(nrows):
            out[r] += CR[r * nm + m] * pr - CI[r * nm + m] * pi


cdef class _Spec:
    cdef int* K
    cdef const double* CR
    cdef const double* CI
    cdef Py_ssize_t nm
    cdef int kmax
    cdef object keep

    def __cinit__(self):
        self.K = NULL

    def __dealloc__(self):
        if self.K != NULL:
            free(self.K)


cdef _Spec _prepare_spectral(kvec, cre, cim, int d):
    cdef _Spec s = _Spec()
    cdef Py_ssize_t i, nm = kvec.shape[0]
    cdef double[:, ::1] kv = kvec
    cdef double[:, ::1] crv = cre
    cdef double[:, ::1] civ = cim
    s.nm = nm
    s.K = <int*>malloc(max(nm, 1) * d * sizeof(int))
    s.kmax = 0
    for i in range(nm * d):
        s.K[i] = <int>kv[i // d, i % d]
        if abs(s.K[i]) > s.kmax:
            s.kmax = abs(s.K[i])
    if s.kmax > MAXK:
        raise ValueError("wavenumber too large for spectral evaluation")
    s.CR = &crv[0, 0]
    s.CI = &civ[0, 0]
    s.keep = (cre, cim)
    return s


def evaluate_linear(double[:, ::1] F, int n, double[:, ::1] X, double[:, ::1] out):
    """``F`` is node-major: shape ``(n**d, rows)``."""
    cdef Py_ssize_t p, P = X.shape[0], npts = F.shape[0]
    cdef int d = X.shape[1], nrows = F.shape[1]
    if P == 0:
        return
    with nogil:
        for p in range(P):
            _eval_linear(&F[0, 0], npts, nrows, n, d, &X[p, 0], &out[p, 0])


def evaluate_spectral(kvec, cre, cim, double[:, ::1] X, double[:, ::1] out):
    cdef Py_ssize_t p, P = X.shape[0]
    cdef int d = X.shape[1]
    cdef int nrows = cre.shape[0]
    cdef _Spec s = _prepare_spectral(kvec, cre, cim, d)
    cdef double tre[3 * (2 * MAXK + 1)]
    cdef double tim[3 * (2 * MAXK + 1)]
    if P == 0:
        return
    with nogil:
        for p in range(P):
            _eval_spectral(s.K, s.CR, s.CI, s.nm, s.kmax, nrows, d, &X[p, 0], &out[p, 0],
                           tre, tim)


def euler_step(stack, double[:, ::1] X, J, acc_grad, acc_pot,
               double[:, ::1] noise, Py_ssize_t per_noise, double dt,
               int grad_row, int pot_row):
    """Advance particles ``X`` (and optionally Jacobians/accumulators) by one step."""
    cdef Py_ssize_t p, P = X.shape[0], q, npts = 0
    cdef int d = X.shape[1], i, j, k
    cdef int spectral = stack.mode == "spectral"
    cdef int n = stack.n
    cdef int nrows = stack.nrows
    cdef int with_jac = J is not None
    cdef int with_grad_acc = acc_grad is not None
    cdef int with_pot = acc_pot is not None and pot_row >= 0
    cdef double[:, ::1] Fv
    cdef double[:, :, ::1] Jv
    cdef double[::1] agv
    cdef double[::1] apv
    cdef const double* F = NULL
    cdef double* Jp = NULL
    cdef double* ag = NULL
    cdef double* ap = NULL
    cdef double* xp
    cdef double* jp
    cdef _Spec s = None
    cdef double vals[MAXROWS]
    cdef double JN[9]
    cdef double tre[3 * (2 * MAXK + 1)]
    cdef double tim[3 * (2 * MAXK + 1)]
    cdef double g2, acc, g00, g01, g10, g11, j00, j01, j10, j11
    if nrows > MAXROWS:
        raise ValueError("too many stacked rows")
    if P == 0:
        return
    if spectral:
        s = _prepare_spectral(stack.kvec, stack.cre, stack.cim, d)
    else:
        Fv = stack.nodes
        F = &Fv[0, 0]
        npts = Fv.shape[0]
    if with_jac:
        Jv = J
        Jp = &Jv[0, 0, 0]
    if with_grad_acc:
        agv = acc_grad
        ag = &agv[0]
    if with_pot:
        apv = acc_pot
        ap = &apv[0]
    with nogil:
        for p in range(P):
            xp = &X[p, 0]
            if spectral:
                _eval_spectral(s.K, s.CR, s.CI, s.nm, s.kmax, nrows, d, xp, vals, tre, tim)
            else:
                _eval_linear(F, npts, nrows, n, d, xp, vals)
            if with_pot:
                ap[p] += vals[pot_row] * dt
            if with_grad_acc:
                ag[p] += _opnorm(&vals[grad_row], d) * dt
            if with_jac:
                jp = Jp + p * d * d
                if d == 2:
                    g00 = vals[grad_row] * dt
                    g01 = vals[grad_row + 1] * dt
                    g10 = vals[grad_row + 2] * dt
                    g11 = vals[grad_row + 3] * dt
                    j00 = jp[0]
                    j01 = jp[1]
                    j10 = jp[2]
                    j11 = jp[3]
                    jp[0] = j00 + (g00 * j00 + g01 * j10)
                    jp[1] = j01 + (g00 * j01 + g01 * j11)
                    jp[2] = j10 + (g10 * j00 + g11 * j10)
                    jp[3] = j11 + (g10 * j01 + g11 * j11)
                else:
                    for i in range(d):
                        for j in range(d):
                            acc = 0.0
                            for k in range(d):
                                acc += vals[grad_row + i * d + k] * jp[k * d + j]
                            JN[i * d + j] = jp[i * d + j] + acc * dt
                    for i in range(d * d):
                        jp[i] = JN[i]
            q = p // per_noise
            for i in range(d):
                xp[i] += vals[i] * dt + noise[q, i]
