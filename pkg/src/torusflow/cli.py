"""Batch experiment runner.

Reads a JSON config describing one experiment (simulate | picard | obstacle
| coupling | feller | markov | baseline), runs it with fully deterministic
seeding, and writes CSV bulk output plus a JSON summary into the output
directory.  Exit codes: 0 success, 1 runtime failure, 2 validation failure.
All numeric output is formatted with repr-faithful precision, so a rerun
with the same config and seed is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from .baseline import evolve_quantile
from .coupling import (
    CouplingConfig,
    markov_shift_test,
    run_coupled_pair,
    strong_feller_probe,
)
from .interaction import KernelSpec, load_kernel_csv
from .noise import SeedSpec
from .obstacle import ObstaclePath, solve_obstacle
from .spde import ConfigError, SolverConfig, picard_solve, simulate
from .torus import EquivariantMap, GridSpec, PeriodicField

__all__ = ["ExperimentConfig", "run", "emit_summary", "main"]

SCHEMA_VERSION = 1
KINDS = ("simulate", "picard", "obstacle", "coupling", "feller", "markov", "baseline")


class ValidationError(ValueError):
    """Config rejected before any computation."""


@dataclass
class ExperimentConfig:
    """Validated contents of an experiment config file."""

    kind: str
    n_cells: int
    dt: float
    T: float
    kernel: str
    mode: str = "projected"
    epsilon: float = 1e-6
    replicas: int = 1
    seed: int = 0
    out: str = "results"
    m_drift_variant: str = "unweighted"
    heat_scheme: str = "spectral"
    params: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValidationError(f"unknown config fields: {sorted(unknown)}")
        missing = {"kind", "n_cells", "dt", "T", "kernel"} - set(raw)
        if missing:
            raise ValidationError(f"missing config fields: {sorted(missing)}")
        return cls(**raw)

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(
                f"unknown experiment kind {self.kind!r}; expected one of {KINDS}"
            )
        if self.n_cells < 2:
            raise ValidationError("n_cells must be >= 2")
        if self.dt <= 0 or self.T <= 0:
            raise ValidationError("dt and T must be positive")
        if self.n_steps < 1:
            raise ValidationError("T must allow at least one step of size dt")
        if abs(self.n_steps * self.dt - self.T) > 1e-9 * max(1.0, self.T):
            raise ValidationError(f"T={self.T} is not a multiple of dt={self.dt}")
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1")
        if self.seed < 0:
            raise ValidationError("seed must be nonnegative")
        if self.heat_scheme == "explicit":
            limit = (1.0 / self.n_cells) ** 2 / 4.0
            if self.dt > limit * (1.0 + 1e-12):
                raise ValidationError(
                    "stability rule violated: explicit heat scheme requires "
                    f"dt <= spacing^2/4 = {limit:g}, got dt = {self.dt:g}"
                )
        if not self.kernel.startswith("builtin:") and not os.path.exists(self.kernel):
            raise ValidationError(f"kernel file does not exist: {self.kernel}")
        try:
            self.solver_config().validate(self.grid)
        except ConfigError as exc:
            raise ValidationError(str(exc)) from exc

    @property
    def n_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n_cells)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            dt=self.dt,
            n_steps=self.n_steps,
            mode=self.mode,
            epsilon=self.epsilon,
            m_drift_variant=self.m_drift_variant,
            heat_scheme=self.heat_scheme,
        )

    def load_kernel(self) -> KernelSpec:
        if self.kernel.startswith("builtin:"):
            parts = self.kernel.split(":")
            name = parts[1]
            arg = float(parts[2]) if len(parts) > 2 else None
            if name == "constant":
                return KernelSpec.constant(arg if arg is not None else 1.0)
            if name == "sine":
                return KernelSpec.sine(arg if arg is not None else 1.0)
            raise ValidationError(f"unknown builtin kernel {self.kernel!r}")
        return load_kernel_csv(self.kernel)

    def initial_profile(self) -> PeriodicField:
        kind = self.params.get("phi_kind", "uniform")
        u = self.grid.nodes
        if kind == "uniform":
            return PeriodicField(self.grid, np.ones(self.n_cells))
        if kind == "cosine":
            a = float(self.params.get("phi_amplitude", 0.5))
            if not 0.0 <= a <= 1.0:
                raise ValidationError("phi_amplitude must lie in [0, 1]")
            return PeriodicField(self.grid, 1.0 + a * np.cos(2.0 * np.pi * u))
        raise ValidationError(f"unknown phi_kind {kind!r}")

    def initial_level(self) -> float:
        return float(self.params.get("x0", 0.0))


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_manifest(cfg: ExperimentConfig, outdir, expected_rows):
    _write_json(
        os.path.join(outdir, "manifest.json"),
        {
            "schema_version": SCHEMA_VERSION,
            "kind": cfg.kind,
            "seed": cfg.seed,
            "replicas": cfg.replicas,
            "expected_rows": expected_rows,
            "n_cells": cfg.n_cells,
            "dt": cfg.dt,
            "T": cfg.T,
        },
    )


def _traj_rows(traj):
    mass = traj.ledger.mass_per_step()
    rows = []
    for s in range(traj.n_steps + 1):
        rows.append(
            (
                traj.times[s],
                traj.M_path[s],
                float(np.sqrt(np.mean(traj.g_path[s] ** 2))),
                float(mass[s - 1]) if s > 0 else 0.0,
            )
        )
    return rows


def _run_simulate(cfg: ExperimentConfig, outdir) -> dict:
    kernel = cfg.load_kernel()
    rows = []
    final = None
    for rep in range(cfg.replicas):
        traj = simulate(
            cfg.initial_profile(),
            cfg.initial_level(),
            kernel,
            cfg.solver_config(),
            seed=SeedSpec(cfg.seed, stream_id=rep),
        )
        st = traj.final_state
        rows.append(
            (rep, st.M, st.g.l2_norm(), traj.ledger.total_mass())
        )
        final = traj
    _write_csv(
        os.path.join(outdir, "replicas.csv"),
        ["replica", "final_M", "final_g_l2", "eta_mass"],
        rows,
    )
    _write_csv(
        os.path.join(outdir, "trajectory.csv"),
        ["t", "M", "g_l2", "eta_step_mass"],
        _traj_rows(final),
    )
    final.final_state.g.to_csv(os.path.join(outdir, "final_g.csv"))
    return {"replica_rows": len(rows)}


def _run_picard(cfg: ExperimentConfig, outdir) -> dict:
    kernel = cfg.load_kernel()
    n_iter = int(cfg.params.get("n_iter", 6))
    traj = picard_solve(
        cfg.initial_profile(),
        cfg.initial_level(),
        kernel,
        cfg.solver_config(),
        seed=SeedSpec(cfg.seed),
        n_iter=n_iter,
    )
    _write_csv(
        os.path.join(outdir, "trajectory.csv"),
        ["t", "M", "g_l2", "eta_step_mass"],
        _traj_rows(traj),
    )
    return {"picard_distances": traj.info["picard_distances"]}


def _run_obstacle(cfg: ExperimentConfig, outdir) -> dict:
    rng = SeedSpec(cfg.seed).rng()
    grid = cfg.grid
    steps = cfg.n_steps
    u = grid.nodes
    t = cfg.dt * np.arange(steps + 1)
    a, b, c = rng.uniform(0.5, 1.5), rng.uniform(-0.4, 0.4), rng.uniform(-2.0, 2.0)
    values = a + b * np.cos(2.0 * np.pi * u)[None, :] + c * t[:, None]
    path = ObstaclePath(grid=grid, dt=cfg.dt, values=values)
    sol = solve_obstacle(path)
    sol.to_csv(os.path.join(outdir, "obstacle.csv"))
    return {"eta_mass": sol.total_eta_mass()}


def _perturbed_pair(cfg: ExperimentConfig, scale: float):
    phi = cfg.initial_profile()
    u = cfg.grid.nodes
    bump = np.cos(2.0 * np.pi * u)
    psi_vals = np.maximum(phi.values + scale * bump, 0.0)
    psi = PeriodicField(cfg.grid, psi_vals)
    x = cfg.initial_level()
    return phi, x, psi, x + scale


def _run_coupling(cfg: ExperimentConfig, outdir) -> dict:
    kernel = cfg.load_kernel()
    scale = float(cfg.params.get("perturbation", 0.125))
    ccfg = CouplingConfig(
        T=cfg.T,
        delta_cap=float(cfg.params.get("delta_cap", cfg.T / 10.0)),
        merge_threshold=float(cfg.params.get("merge_threshold", 1e-3)),
        replicas=cfg.replicas,
    )
    phi, x, psi, y = _perturbed_pair(cfg, scale)
    rows = []
    for rep in range(cfg.replicas):
        res = run_coupled_pair(
            phi, x, psi, y, kernel, ccfg, cfg.solver_config(),
            seed=SeedSpec(cfg.seed, stream_id=rep),
        )
        rows.append(
            (
                rep,
                res.merge_time,
                float(res.distance_path[-1, 1]),
                float(res.distance_path[-1, 2]),
                res.ledger.log_density(),
            )
        )
    _write_csv(
        os.path.join(outdir, "replicas.csv"),
        ["replica", "merge_time", "final_g_dist", "final_M_dist", "log_density"],
        rows,
    )
    dens = np.exp([r[4] for r in rows])
    out = {"replica_rows": len(rows), "mean_density": float(dens.mean())}
    if len(rows) > 1:
        out["density_stderr"] = float(dens.std(ddof=1) / math.sqrt(len(rows)))
    return out


def _run_feller(cfg: ExperimentConfig, outdir) -> dict:
    kernel = cfg.load_kernel()
    scales = [2.0 ** (-k) for k in range(1, 7)]
    rows = []
    for i, scale in enumerate(scales):
        phi, x, psi, y = _perturbed_pair(cfg, scale)
        est = strong_feller_probe(
            lambda g, M: math.tanh(M),
            phi, x, psi, y, kernel,
            cfg.solver_config(),
            SeedSpec(cfg.seed + 7919 * (i + 1)),
            cfg.replicas,
            functional_id="tanh(M)",
        )
        rows.append((scale, est.estimate, est.mc_stderr, est.input_distance_d12))
    _write_csv(
        os.path.join(outdir, "feller.csv"),
        ["scale", "estimate", "stderr", "d12"],
        rows,
    )
    d = np.array([r[3] for r in rows])
    e = np.array([r[1] for r in rows])
    slope, intercept = np.polyfit(d, e, 1)
    pred = slope * d + intercept
    ss_res = float(np.sum((e - pred) ** 2))
    ss_tot = float(np.sum((e - e.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {
        "modulus_slope": float(slope),
        "modulus_intercept": float(intercept),
        "modulus_r2": r2,
    }


def _run_markov(cfg: ExperimentConfig, outdir) -> dict:
    kernel = cfg.load_kernel()
    s = float(cfg.params.get("shift", cfg.T))
    p_min, panel = markov_shift_test(
        cfg.initial_profile(),
        cfg.initial_level(),
        s,
        cfg.T,
        kernel,
        cfg.solver_config(),
        (SeedSpec(cfg.seed, substream=0), SeedSpec(cfg.seed + 1, substream=0)),
        cfg.replicas,
        return_panel=True,
    )
    return {"p_value": p_min, "panel": panel}


def _run_baseline(cfg: ExperimentConfig, outdir) -> dict:
    kernel = cfg.load_kernel()
    grid = cfg.grid
    F0 = EquivariantMap(grid, grid.nodes, 1.0)
    FT = evolve_quantile(F0, kernel, cfg.T, cfg.dt)
    FT.to_csv(os.path.join(outdir, "final_map.csv"))
    return {"final_mean": FT.mean()}


_RUNNERS = {
    "simulate": _run_simulate,
    "picard": _run_picard,
    "obstacle": _run_obstacle,
    "coupling": _run_coupling,
    "feller": _run_feller,
    "markov": _run_markov,
    "baseline": _run_baseline,
}


def run(config_path, replicas=None, seed=None, out=None, quiet=False) -> int:
    """Execute one experiment config; returns the process exit code."""
    cfg = None
    try:
        cfg = ExperimentConfig.from_json(config_path)
        if replicas is not None:
            cfg.replicas = replicas
        if seed is not None:
            cfg.seed = seed
        if out is not None:
            cfg.out = out
        cfg.validate()
    except (ValidationError, TypeError) as exc:
        _report_error(2, str(exc), cfg.out if cfg is not None else out, quiet)
        return 2
    try:
        os.makedirs(cfg.out, exist_ok=True)
        result = _RUNNERS[cfg.kind](cfg, cfg.out)
        expected = result.pop("replica_rows", None)
        _write_manifest(cfg, cfg.out, expected)
        summary = emit_summary(cfg.out)
        summary["experiment"] = result
        _write_json(os.path.join(cfg.out, "summary.json"), summary)
        if not quiet:
            print(f"{cfg.kind}: ok, outputs in {cfg.out}")
        return 0
    except Exception as exc:  # noqa: BLE001 - boundary of the CLI
        _report_error(1, f"{type(exc).__name__}: {exc}", cfg.out, quiet)
        return 1


def _report_error(code, message, outdir, quiet):
    if outdir:
        try:
            os.makedirs(outdir, exist_ok=True)
            _write_json(
                os.path.join(outdir, "error.json"),
                {"exit_code": code, "error": message},
            )
        except OSError:
            pass
    if not quiet:
        print(f"error: {message}", file=sys.stderr)


def emit_summary(results_dir) -> dict:
    """Aggregate per-replica CSV output into estimates with standard errors."""
    summary = {"schema_version": SCHEMA_VERSION}
    manifest_path = os.path.join(results_dir, "manifest.json")
    expected = None
    if os.path.exists(manifest_path):
        with open(manifest_path) as fh:
            manifest = json.load(fh)
        summary["manifest"] = manifest
        expected = manifest.get("expected_rows")
    rep_path = os.path.join(results_dir, "replicas.csv")
    if os.path.exists(rep_path):
        with open(rep_path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        cols = {}
        for j, name in enumerate(header):
            if name == "replica":
                continue
            try:
                vals = np.array([float(r[j]) for r in rows])
            except ValueError:
                continue
            entry = {"mean": float(vals.mean())}
            if len(vals) > 1:
                entry["stderr"] = float(vals.std(ddof=1) / math.sqrt(len(vals)))
            else:
                entry["stderr"] = None
            cols[name] = entry
        summary["estimates"] = cols
        summary["replica_count"] = len(rows)
        if expected is not None and len(rows) != expected:
            summary["partial"] = True
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="torusflow",
        description="Batch runner for circle-transport SPDE experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--replicas", type=int, default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--quiet", action="store_true")
    p_sum = sub.add_parser("summarize", help="re-aggregate a results directory")
    p_sum.add_argument("results_dir")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(
            args.config,
            replicas=args.replicas,
            seed=args.seed,
            out=args.out,
            quiet=args.quiet,
        )
    summary = emit_summary(args.results_dir)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
