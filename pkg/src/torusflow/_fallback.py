"""Pure-numpy reference implementation of the hot time-stepping loops.

Semantics match torusflow._accel exactly (same operation order); the
compiled extension is preferred at import time when available.
"""

from __future__ import annotations

import numpy as np


def run_frozen_loop(propagator, g0, beta_dt, forcing, noise, projected,
                    dt_over_eps, spacing):
    """Time loop for the linear reflected/penalised equation.

    Per step: p = P g + beta_dt[s] * g + forcing[s] + noise[s], then either
    projection onto >= 0 (eta increment recorded as correction * spacing) or
    the implicit pointwise penalty solve p/(1 + dt/eps) on the negative part.

    Returns (g_path, eta) with shapes (n_steps + 1, n) and (n_steps, n).
    """
    n_steps = noise.shape[0]
    n = g0.shape[0]
    g_path = np.empty((n_steps + 1, n))
    eta = np.zeros((n_steps, n))
    g_path[0] = g0
    g = g0.copy()
    for s in range(n_steps):
        p = propagator @ g + beta_dt[s] * g + forcing[s] + noise[s]
        if projected:
            g = np.maximum(p, 0.0)
            eta[s] = (g - p) * spacing
        else:
            g = np.where(p < 0.0, p / (1.0 + dt_over_eps), p)
        g_path[s + 1] = g
    return g_path, eta


def run_bridged_loop(propagator, g_ref_path, g0_tilde, beta_dt, noise, rho,
                     bridge_steps, merge_threshold, projected, dt_over_eps,
                     spacing):
    """Coupled companion path driven by the same noise plus a bridge drift.

    The reaction term is the reference one (beta_dt[s] * g_ref[s]) for both
    paths, so it cancels in the difference; the bridge is applied as the
    exact per-step integrating factor rho[s] on the predictor difference.
    Once the L2 distance falls below merge_threshold, or the bridge window
    (s < bridge_steps) ends, the companion is glued to the reference.

    Returns (g_tilde_path, eta_tilde, dist, merge_step); merge_step is the
    first glued step index, or -1 if gluing happened only at the window end.
    """
    n_steps = noise.shape[0]
    n = g0_tilde.shape[0]
    g_path = np.empty((n_steps + 1, n))
    eta = np.zeros((n_steps, n))
    dist = np.empty(n_steps + 1)
    g_path[0] = g0_tilde
    g = g0_tilde.copy()
    dist[0] = np.sqrt(np.mean((g - g_ref_path[0]) ** 2))
    merged = False
    merge_step = -1
    for s in range(n_steps):
        if merged:
            g = g_ref_path[s + 1].copy()
            g_path[s + 1] = g
            dist[s + 1] = 0.0
            continue
        g_ref = g_ref_path[s]
        shared = beta_dt[s] * g_ref + noise[s]
        p_ref = propagator @ g_ref + shared
        p_til = propagator @ g + shared
        if s < bridge_steps:
            p_til = p_ref + rho[s] * (p_til - p_ref)
        if projected:
            g = np.maximum(p_til, 0.0)
            eta[s] = (g - p_til) * spacing
        else:
            g = np.where(p_til < 0.0, p_til / (1.0 + dt_over_eps), p_til)
        d = np.sqrt(np.mean((g - g_ref_path[s + 1]) ** 2))
        if d < merge_threshold or s + 1 >= bridge_steps:
            merged = True
            if d < merge_threshold:
                merge_step = s + 1
            g = g_ref_path[s + 1].copy()
            d = 0.0
        g_path[s + 1] = g
        dist[s + 1] = d
    return g_path, eta, dist, merge_step
