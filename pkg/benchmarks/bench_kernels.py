"""Compare the compiled and pure-numpy time-stepping backends.

Runs the frozen and bridged loops on identical inputs with both backends,
checks that the outputs agree, and prints wall-clock timings.

Usage: python benchmarks/bench_kernels.py [n_cells] [n_steps]
"""

import sys
import time

import numpy as np

from torusflow import _fallback
from torusflow.heat import SpectralPlan
from torusflow.kernels import BACKEND
from torusflow.noise import SeedSpec, sample_white_noise
from torusflow.torus import GridSpec

try:
    from torusflow import _accel
except ImportError:
    _accel = None


def make_inputs(n, steps, dt=1e-4, seed=7):
    grid = GridSpec(n)
    P = SpectralPlan(grid).propagator_matrix(dt)
    rng = SeedSpec(seed).rng()
    g0 = 1.0 + 0.5 * np.cos(2 * np.pi * grid.nodes)
    beta_dt = dt * rng.normal(0.0, 1.0, size=(steps, n))
    forcing = np.zeros((steps, n))
    noise = (sample_white_noise(grid, dt, steps, SeedSpec(seed + 1)) / grid.spacing).T
    noise = np.ascontiguousarray(noise)
    rho = np.linspace(0.995, 0.5, steps)
    return grid, P, g0, beta_dt, forcing, noise, rho


def bench(fn, *args, repeats=3):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    n = int(sys.argv[1]) if len(sys.argv) > 1 else 128
    steps = int(sys.argv[2]) if len(sys.argv) > 2 else 400
    grid, P, g0, beta_dt, forcing, noise, rho = make_inputs(n, steps)
    dx = grid.spacing

    print(f"active backend: {BACKEND}; n={n}, steps={steps}")

    t_py, (gp_py, eta_py) = bench(
        _fallback.run_frozen_loop, P, g0, beta_dt, forcing, noise, True, 0.0, dx
    )
    print(f"frozen loop   fallback: {t_py * 1e3:8.2f} ms")
    if _accel is not None:
        t_cy, (gp_cy, eta_cy) = bench(
            _accel.run_frozen_loop, P, g0, beta_dt, forcing, noise, True, 0.0, dx
        )
        err = np.max(np.abs(gp_py - gp_cy))
        assert err < 1e-10, f"backend mismatch: {err}"
        print(f"frozen loop   accel:    {t_cy * 1e3:8.2f} ms  "
              f"(x{t_py / t_cy:.1f}, max diff {err:.2e})")

    g_ref = gp_py
    psi = np.maximum(g0 + 0.25 * np.sin(2 * np.pi * grid.nodes), 0.0)
    t_py, out_py = bench(
        _fallback.run_bridged_loop, P, g_ref, psi, beta_dt, noise, rho,
        steps - 10, 1e-6, True, 0.0, dx,
    )
    print(f"bridged loop  fallback: {t_py * 1e3:8.2f} ms")
    if _accel is not None:
        t_cy, out_cy = bench(
            _accel.run_bridged_loop, P, g_ref, psi, beta_dt, noise, rho,
            steps - 10, 1e-6, True, 0.0, dx,
        )
        err = np.max(np.abs(out_py[0] - out_cy[0]))
        assert err < 1e-10, f"backend mismatch: {err}"
        assert out_py[3] == out_cy[3], "merge step mismatch"
        print(f"bridged loop  accel:    {t_cy * 1e3:8.2f} ms  "
              f"(x{t_py / t_cy:.1f}, max diff {err:.2e})")
    if _accel is None:
        print("compiled extension not available; fallback only")


if __name__ == "__main__":
    main()
