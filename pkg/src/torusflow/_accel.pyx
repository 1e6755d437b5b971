# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled time-stepping loops; see torusflow._fallback for the reference
semantics and full docstrings."""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef void _matvec(double[:, ::1] P, double[::1] x, double[::1] out) nogil:
    cdef Py_ssize_t i, j, n = P.shape[0]
    cdef double acc
    for i in range(n):
        acc = 0.0
        for j in range(n):
            acc += P[i, j] * x[j]
        out[i] = acc


def run_frozen_loop(object propagator, object g0, object beta_dt,
                    object forcing, object noise, bint projected,
                    double dt_over_eps, double spacing):
    cdef double[:, ::1] P = np.ascontiguousarray(propagator, dtype=np.float64)
    cdef double[:, ::1] bdt = np.ascontiguousarray(beta_dt, dtype=np.float64)
    cdef double[:, ::1] frc = np.ascontiguousarray(forcing, dtype=np.float64)
    cdef double[:, ::1] nse = np.ascontiguousarray(noise, dtype=np.float64)
    cdef Py_ssize_t n_steps = nse.shape[0]
    cdef Py_ssize_t n = P.shape[0]
    g_path_arr = np.empty((n_steps + 1, n))
    eta_arr = np.zeros((n_steps, n))
    cdef double[:, ::1] g_path = g_path_arr
    cdef double[:, ::1] eta = eta_arr
    cdef double[::1] g = np.ascontiguousarray(g0, dtype=np.float64).copy()
    cdef double[::1] p = np.empty(n)
    cdef Py_ssize_t s, i
    cdef double val
    for i in range(n):
        g_path[0, i] = g[i]
    with nogil:
        for s in range(n_steps):
            _matvec(P, g, p)
            for i in range(n):
                val = p[i] + bdt[s, i] * g[i] + frc[s, i] + nse[s, i]
                if projected:
                    if val < 0.0:
                        eta[s, i] = -val * spacing
                        val = 0.0
                else:
                    if val < 0.0:
                        val = val / (1.0 + dt_over_eps)
                g[i] = val
                g_path[s + 1, i] = val
    return g_path_arr, eta_arr


def run_bridged_loop(object propagator, object g_ref_path, object g0_tilde,
                     object beta_dt, object noise, object rho,
                     Py_ssize_t bridge_steps, double merge_threshold,
                     bint projected, double dt_over_eps, double spacing):
    cdef double[:, ::1] P = np.ascontiguousarray(propagator, dtype=np.float64)
    cdef double[:, ::1] gref = np.ascontiguousarray(g_ref_path, dtype=np.float64)
    cdef double[:, ::1] bdt = np.ascontiguousarray(beta_dt, dtype=np.float64)
    cdef double[:, ::1] nse = np.ascontiguousarray(noise, dtype=np.float64)
    cdef double[::1] rho_v = np.ascontiguousarray(rho, dtype=np.float64)
    cdef Py_ssize_t n_steps = nse.shape[0]
    cdef Py_ssize_t n = P.shape[0]
    g_path_arr = np.empty((n_steps + 1, n))
    eta_arr = np.zeros((n_steps, n))
    dist_arr = np.empty(n_steps + 1)
    cdef double[:, ::1] g_path = g_path_arr
    cdef double[:, ::1] eta = eta_arr
    cdef double[::1] dist = dist_arr
    cdef double[::1] g = np.ascontiguousarray(g0_tilde, dtype=np.float64).copy()
    cdef double[::1] p_ref = np.empty(n)
    cdef double[::1] p_til = np.empty(n)
    cdef bint merged = False
    cdef Py_ssize_t merge_step = -1
    cdef Py_ssize_t s, i
    cdef double shared, val, acc, d
    acc = 0.0
    for i in range(n):
        g_path[0, i] = g[i]
        acc += (g[i] - gref[0, i]) ** 2
    dist[0] = sqrt(acc / n)
    with nogil:
        for s in range(n_steps):
            if merged:
                for i in range(n):
                    g[i] = gref[s + 1, i]
                    g_path[s + 1, i] = g[i]
                dist[s + 1] = 0.0
                continue
            _matvec(P, gref[s], p_ref)
            _matvec(P, g, p_til)
            for i in range(n):
                shared = bdt[s, i] * gref[s, i] + nse[s, i]
                p_ref[i] += shared
                p_til[i] += shared
                if s < bridge_steps:
                    p_til[i] = p_ref[i] + rho_v[s] * (p_til[i] - p_ref[i])
                val = p_til[i]
                if projected:
                    if val < 0.0:
                        eta[s, i] = -val * spacing
                        val = 0.0
                else:
                    if val < 0.0:
                        val = val / (1.0 + dt_over_eps)
                g[i] = val
            acc = 0.0
            for i in range(n):
                acc += (g[i] - gref[s + 1, i]) ** 2
            d = sqrt(acc / n)
            if d < merge_threshold or s + 1 >= bridge_steps:
                merged = True
                if d < merge_threshold:
                    merge_step = s + 1
                for i in range(n):
                    g[i] = gref[s + 1, i]
                d = 0.0
            for i in range(n):
                g_path[s + 1, i] = g[i]
            dist[s + 1] = d
    return g_path_arr, eta_arr, dist_arr, merge_step
