# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Euler-Maruyama loop for the closed-loop network.

Mirrors ``_em_py.integrate`` operation for operation; keep the two in sync.
Record rows are only written for valid states, so callers pre-fill ``rec`` with NaN.
"""
from libc.math cimport isfinite
from libc.stdlib cimport malloc, free

import numpy as np


def integrate(double[:, ::1] X, const double[:, :, ::1] dW, long step0, long nsteps,
              double dt, long stride, double[:, :, ::1] rec, long rec0,
              int[::1] status, long[::1] fail_step, object p):
    cdef int n = p.n, m = p.m
    cdef const double[::1] Lg_inv = p.Lg_inv, Cg_inv = p.Cg_inv, R = p.R, L_inv = p.L_inv
    cdef const long[::1] pos = p.pos, neg = p.neg
    cdef const double[::1] G = p.G, Ist = p.Ist, P = p.P, mu = p.mu, sig = p.sig
    cdef const double[:, ::1] Lc = p.Lc
    cdef const double[::1] Q = p.Q, K = p.K, txi_inv = p.txi_inv, teta_inv = p.teta_inv, Vstar = p.Vstar
    cdef double v_min = p.v_min
    cdef Py_ssize_t runs = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t r
    with nogil:
        for r in range(runs):
            _run(X, dW, r, step0, nsteps, dt, stride, rec, rec0, status, fail_step, n, m,
                 Lg_inv, Cg_inv, R, L_inv, pos, neg, G, Ist, P, mu, sig, Lc, Q, K,
                 txi_inv, teta_inv, Vstar, v_min)


cdef void _run(double[:, ::1] X, const double[:, :, ::1] dW, Py_ssize_t r, long step0, long nsteps,
               double dt, long stride, double[:, :, ::1] rec, long rec0,
               int[::1] status, long[::1] fail_step, int n, int m,
               const double[::1] Lg_inv, const double[::1] Cg_inv, const double[::1] R,
               const double[::1] L_inv, const long[::1] pos, const long[::1] neg,
               const double[::1] G, const double[::1] Ist, const double[::1] P,
               const double[::1] mu, const double[::1] sig, const double[:, ::1] Lc,
               const double[::1] Q, const double[::1] K, const double[::1] txi_inv,
               const double[::1] teta_inv, const double[::1] Vstar, double v_min) noexcept nogil:
    cdef Py_ssize_t D = X.shape[1]
    cdef Py_ssize_t oV = n, oI = 2 * n, oY = 2 * n + m, oXi = 5 * n + m, oEta = 6 * n + m
    cdef Py_ssize_t i, j, k, c, s, row
    cdef long step
    cdef double acc, Ih, Ph, Gh, V, load
    cdef double* u = <double*> malloc(n * sizeof(double))
    cdef double* qI = <double*> malloc(n * sizeof(double))
    cdef double* AI = <double*> malloc(n * sizeof(double))
    cdef double* f = <double*> malloc(D * sizeof(double))
    cdef bint ok
    for s in range(nsteps + 1):
        step = step0 + s
        if status[r] != 0:
            break
        if step % stride == 0:
            row = step // stride - rec0
            if 0 <= row < rec.shape[1]:
                _control(X, r, n, m, Lc, Q, K, Vstar, u)
                for c in range(D):
                    rec[r, row, c] = X[r, c]
                for i in range(n):
                    rec[r, row, D + i] = u[i]
        if s == nsteps:
            break
        for i in range(n):
            if not (X[r, oV + i] > v_min):
                status[r] = 1
                fail_step[r] = step
        if status[r] != 0:
            break
        _control(X, r, n, m, Lc, Q, K, Vstar, u)
        for i in range(n):
            qI[i] = Q[i] * X[r, i]
            AI[i] = 0.0
        for k in range(m):
            AI[pos[k]] = AI[pos[k]] + X[r, oI + k]
            AI[neg[k]] = AI[neg[k]] - X[r, oI + k]
        for i in range(n):
            V = X[r, oV + i]
            Ih = X[r, oY + i]
            Ph = X[r, oY + n + i]
            Gh = X[r, oY + 2 * n + i]
            f[i] = (u[i] - V) * Lg_inv[i]
            load = (G[i] + Gh) * V + Ist[i] + Ih + (P[i] + Ph) / V
            f[oV + i] = ((X[r, i] + AI[i]) - load) * Cg_inv[i]
            acc = 0.0
            for j in range(n):
                if Lc[i, j] != 0.0:
                    acc = acc + Lc[i, j] * qI[j]
            f[oXi + i] = -acc * txi_inv[i]
            f[oEta + i] = (X[r, i] - X[r, oEta + i]) * teta_inv[i]
        for k in range(m):
            f[oI + k] = (-(X[r, oV + pos[k]] - X[r, oV + neg[k]]) - R[k] * X[r, oI + k]) * L_inv[k]
        for c in range(3 * n):
            f[oY + c] = -mu[c] * X[r, oY + c]
        ok = True
        for c in range(3 * n):
            X[r, oY + c] = (X[r, oY + c] + f[oY + c] * dt) + (sig[c] * X[r, oY + c]) * dW[r, s, c]
        for c in range(oY):
            X[r, c] = X[r, c] + f[c] * dt
        for c in range(oXi, D):
            X[r, c] = X[r, c] + f[c] * dt
        for c in range(D):
            if not isfinite(X[r, c]):
                ok = False
        if not ok:
            status[r] = 2
            fail_step[r] = step + 1
    free(u)
    free(qI)
    free(AI)
    free(f)


cdef inline void _control(double[:, ::1] X, Py_ssize_t r, int n, int m, const double[:, ::1] Lc,
                          const double[::1] Q, const double[::1] K, const double[::1] Vstar,
                          double* u) noexcept nogil:
    cdef Py_ssize_t i, j, oXi = 5 * n + m, oEta = 6 * n + m
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            if Lc[i, j] != 0.0:
                acc = acc + Lc[i, j] * X[r, oXi + j]
        u[i] = (-K[i] * (X[r, i] - X[r, oEta + i]) + Q[i] * acc) + Vstar[i]
