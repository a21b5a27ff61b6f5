# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops; see ``_kernels_py`` for the reference semantics."""

import numpy as np
from libc.math cimport log, INFINITY


def coupling_sums(double[:, :, ::1] alpha, double[:, :, ::1] beta, double[:, :, ::1] lik,
                  Py_ssize_t[::1] inc_chain, double[:, ::1] inc_g, Py_ssize_t[:, ::1] inc_shift):
    cdef Py_ssize_t M = alpha.shape[0], T = alpha.shape[1] - 1, S = alpha.shape[2]
    cdef Py_ssize_t I = inc_chain.shape[0]
    cdef Py_ssize_t m, t, s, i, k
    cdef double acc_n, acc_h, a
    wnext_arr = np.empty((M, T, S))
    cdef double[:, :, ::1] wnext = wnext_arr
    D_arr = np.empty((M, T))
    N_arr = np.empty((I, T))
    H_arr = np.empty((I, T))
    cdef double[:, ::1] D = D_arr
    cdef double[:, ::1] N = N_arr
    cdef double[:, ::1] H = H_arr
    with nogil:
        for m in range(M):
            for t in range(T):
                a = 0.0
                for s in range(S):
                    wnext[m, t, s] = lik[m, t + 1, s] * beta[m, t + 1, s]
                    a = a + alpha[m, t, s] * wnext[m, t, s]
                D[m, t] = a
        for i in range(I):
            m = inc_chain[i]
            for t in range(T):
                acc_n = 0.0
                acc_h = 0.0
                for s in range(S):
                    if inc_g[i, s] == 0.0:
                        continue
                    a = alpha[m, t, s] * inc_g[i, s]
                    acc_h = acc_h + a * wnext[m, t, s]
                    k = inc_shift[i, s]
                    if k >= 0:
                        acc_n = acc_n + a * wnext[m, t, k]
                N[i, t] = acc_n
                H[i, t] = acc_h
    return N_arr, H_arr, D_arr


def forward_backward(double[:, :, :, ::1] K, double[:, :, ::1] lik, double[:, ::1] init):
    cdef Py_ssize_t M = lik.shape[0], T1 = lik.shape[1], S = lik.shape[2]
    cdef Py_ssize_t m, t, s, r
    cdef double zt, acc, scale
    alpha_arr = np.zeros((M, T1, S))
    beta_arr = np.zeros((M, T1, S))
    z_arr = np.empty((M, T1))
    cdef double[:, :, ::1] alpha = alpha_arr
    cdef double[:, :, ::1] beta = beta_arr
    cdef double[:, ::1] z = z_arr
    with nogil:
        for m in range(M):
            zt = 0.0
            for s in range(S):
                alpha[m, 0, s] = init[m, s] * lik[m, 0, s]
                zt = zt + alpha[m, 0, s]
            z[m, 0] = zt
            scale = zt if zt > 0 else 1.0
            for s in range(S):
                alpha[m, 0, s] = alpha[m, 0, s] / scale
            for t in range(1, T1):
                zt = 0.0
                for r in range(S):
                    acc = 0.0
                    for s in range(S):
                        acc = acc + alpha[m, t - 1, s] * K[m, t - 1, s, r]
                    alpha[m, t, r] = acc * lik[m, t, r]
                    zt = zt + alpha[m, t, r]
                z[m, t] = zt
                scale = zt if zt > 0 else 1.0
                for r in range(S):
                    alpha[m, t, r] = alpha[m, t, r] / scale
            for s in range(S):
                beta[m, T1 - 1, s] = 1.0
            for t in range(T1 - 1, 0, -1):
                scale = z[m, t] if z[m, t] > 0 else 1.0
                for s in range(S):
                    acc = 0.0
                    for r in range(S):
                        acc = acc + K[m, t - 1, s, r] * lik[m, t, r] * beta[m, t, r]
                    beta[m, t - 1, s] = acc / scale
    logz_arr = np.empty((M, T1))
    cdef double[:, ::1] logz = logz_arr
    for m in range(M):
        for t in range(T1):
            logz[m, t] = log(z[m, t]) if z[m, t] > 0 else -INFINITY
    return alpha_arr, beta_arr, logz_arr


def couplings(double[:, ::1] N, double[:, ::1] H, double[:, ::1] D, Py_ssize_t[::1] inc_chain,
              Py_ssize_t[:, ::1] event_inc, double floor):
    cdef Py_ssize_t I = inc_chain.shape[0], T = D.shape[1], V = event_inc.shape[0], Kmax = event_inc.shape[1]
    cdef Py_ssize_t i, t, v, k, j, ii
    cdef double d, at, ah
    gt_arr = np.empty((I, T))
    gh_arr = np.empty((I, T))
    pt_arr = np.ones((V, T))
    ph_arr = np.ones((V, T))
    lt_arr = np.ones((I, T))
    lh_arr = np.ones((I, T))
    cdef double[:, ::1] gt = gt_arr, gh = gh_arr, pt = pt_arr, ph = ph_arr, lt = lt_arr, lh = lh_arr
    with nogil:
        for i in range(I):
            for t in range(T):
                d = D[inc_chain[i], t]
                if d < floor:
                    d = floor
                gt[i, t] = N[i, t] / d
                gh[i, t] = H[i, t] / d
        for v in range(V):
            for k in range(Kmax):
                i = event_inc[v, k]
                if i < 0:
                    break
                for t in range(T):
                    pt[v, t] *= gt[i, t]
                    ph[v, t] *= gh[i, t]
                for j in range(Kmax):
                    ii = event_inc[v, j]
                    if ii < 0:
                        break
                    if j == k:
                        continue
                    for t in range(T):
                        lt[i, t] *= gt[ii, t]
                        lh[i, t] *= gh[ii, t]
    return gt_arr, gh_arr, pt_arr, ph_arr, lt_arr, lh_arr


def assemble_kernels(double[:, ::1] wT, double[:, ::1] prod_tilde, double[:, ::1] prod_hat,
                     double[:, ::1] loo_tilde, double[:, ::1] loo_hat, Py_ssize_t[::1] inc_event,
                     Py_ssize_t[::1] inc_chain, double[:, ::1] inc_g, Py_ssize_t[:, ::1] inc_shift, valid_in):
    cdef unsigned char[:, ::1] valid = np.ascontiguousarray(valid_in, dtype=np.uint8)
    cdef Py_ssize_t M = valid.shape[0], S = valid.shape[1], T = wT.shape[1], V = wT.shape[0]
    cdef Py_ssize_t I = inc_chain.shape[0]
    cdef Py_ssize_t m, t, s, i, k, v
    cdef Py_ssize_t wm = 0, ws = 0, wt = 0
    cdef double worst = INFINITY, x, g, w
    K_arr = np.zeros((M, T, S, S))
    null_arr = np.empty((M, T, S))
    qt_arr = np.zeros(T)
    qh_arr = np.zeros(T)
    diag_arr = np.empty((M, T))
    cdef double[:, :, :, ::1] K = K_arr
    cdef double[:, :, ::1] null = null_arr
    cdef double[::1] qt = qt_arr, qh = qh_arr
    cdef double[:, ::1] diag = diag_arr
    with nogil:
        for v in range(V):
            for t in range(T):
                qt[t] += wT[v, t] * prod_tilde[v, t]
                qh[t] += wT[v, t] * prod_hat[v, t]
        for m in range(M):
            for t in range(T):
                diag[m, t] = qt[t]
                for s in range(S):
                    null[m, t, s] = 1.0 - qh[t]
        for i in range(I):
            m = inc_chain[i]
            v = inc_event[i]
            for t in range(T):
                w = wT[v, t]
                diag[m, t] -= w * prod_tilde[v, t]
                x = w * prod_hat[v, t]
                for s in range(S):
                    null[m, t, s] += x
            for s in range(S):
                g = inc_g[i, s]
                if g == 0.0:
                    continue
                k = inc_shift[i, s]
                for t in range(T):
                    w = wT[v, t] * g
                    null[m, t, s] -= w * loo_hat[i, t]
                    K[m, t, s, k] += w * loo_tilde[i, t]
        for m in range(M):
            for s in range(S):
                if not valid[m, s]:
                    continue
                for t in range(T):
                    x = null[m, t, s]
                    if x < worst:
                        worst = x
                        wm = m
                        ws = s
                        wt = t
                    if x < 0.0:
                        x = 0.0
                    K[m, t, s, s] += x + diag[m, t]
    if worst == INFINITY:
        worst = 0.0
    return K_arr, worst, (wm, ws, wt)
