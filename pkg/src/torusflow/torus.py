"""Grids, periodic fields, equivariant quantile maps and circular transport metrics.

Functions on the circle R/Z are represented by their samples at the uniform
nodes u_i = i/n.  Quantile-type objects carry an additional winding number so
that F(u + 1) = F(u) + winding.  All integrals over one period use the
trapezoid rule, which for periodic integrands reduces to the plain mean of
the node samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridSpec",
    "PeriodicField",
    "EquivariantMap",
    "TorusMeasure",
    "MeasureH1",
    "torus_distance",
    "equivariant_l2_distance",
    "reconstruct_A",
    "pushforward_measure",
    "circular_wasserstein",
    "d12_metric",
    "quantile_from_atoms",
]

_MASS_TOL = 1e-12
_EDGE_SNAP = 1e-12


class GridMismatchError(ValueError):
    """Two grid-based objects do not share the same grid."""


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the circle with nodes i/n_cells."""

    n_cells: int

    def __post_init__(self):
        if self.n_cells < 2:
            raise ValueError(f"n_cells must be >= 2, got {self.n_cells}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.n_cells

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_cells) / self.n_cells


class PeriodicField:
    """Samples of a 1-periodic real function at the grid nodes."""

    def __init__(self, grid: GridSpec, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_cells,):
            raise ValueError(
                f"expected {grid.n_cells} values, got shape {values.shape}"
            )
        self.grid = grid
        self.values = values

    def mean(self) -> float:
        return float(np.mean(self.values))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.mean(self.values**2)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __add__(self, other):
        _check_same_grid(self, other)
        return PeriodicField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return PeriodicField(self.grid, self.values - other.values)

    def to_csv(self, path) -> None:
        _write_node_csv(path, self.grid, self.values)

    @classmethod
    def from_csv(cls, path) -> "PeriodicField":
        nodes, values = _read_node_csv(path)
        return cls(GridSpec(len(nodes)), values)


class EquivariantMap:
    """Map F with F(u + 1) = F(u) + winding, sampled at the grid nodes.

    A winding-one monotone map is the circle analogue of a quantile
    function; general windings appear as intermediate solver states.
    """

    def __init__(self, grid: GridSpec, values, winding: float):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_cells,):
            raise ValueError(
                f"expected {grid.n_cells} values, got shape {values.shape}"
            )
        self.grid = grid
        self.values = values
        self.winding = float(winding)

    def is_monotone(self, tol: float = 1e-12) -> bool:
        ext = np.append(self.values, self.values[0] + self.winding)
        return bool(np.all(np.diff(ext) >= -tol))

    def mean(self) -> float:
        """Trapezoid mean over one period, using F(1) = F(0) + winding."""
        return float(
            (np.sum(self.values) + 0.5 * self.winding) * self.grid.spacing
        )

    def to_csv(self, path) -> None:
        _write_node_csv(path, self.grid, self.values)

    @classmethod
    def from_csv(cls, path, winding: float = 1.0) -> "EquivariantMap":
        nodes, values = _read_node_csv(path)
        return cls(GridSpec(len(nodes)), values, winding)


class TorusMeasure:
    """Probability measure on the circle: weighted atoms or a histogram."""

    def __init__(self, atoms=None, weights=None, histogram=None, grid=None):
        if histogram is not None:
            if grid is None:
                raise ValueError("histogram representation requires a grid")
            histogram = np.asarray(histogram, dtype=float)
            if histogram.shape != (grid.n_cells,):
                raise ValueError("histogram length must match grid")
            if np.any(histogram < 0):
                raise ValueError("histogram weights must be nonnegative")
            self.grid = grid
            self.histogram = histogram
            self.atoms = None
            self.weights = None
            total = histogram.sum()
        else:
            atoms = np.mod(np.asarray(atoms, dtype=float), 1.0)
            if atoms.size == 0:
                raise ValueError("measure needs at least one atom")
            if weights is None:
                weights = np.full(atoms.size, 1.0 / atoms.size)
            weights = np.asarray(weights, dtype=float)
            if np.any(weights < 0):
                raise ValueError("atom weights must be nonnegative")
            self.atoms = atoms
            self.weights = weights
            self.histogram = None
            self.grid = grid
            total = weights.sum()
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"total mass {total} deviates from 1")

    @property
    def is_atomic(self) -> bool:
        return self.atoms is not None

    def as_atoms(self):
        """Locations and weights; histogram mass sits at cell centres."""
        if self.is_atomic:
            return self.atoms, self.weights
        centres = (np.arange(self.grid.n_cells) + 0.5) * self.grid.spacing
        keep = self.histogram > 0
        return centres[keep], self.histogram[keep]


@dataclass
class MeasureH1:
    """Measure with H^1 quantile: mean of F plus its derivative samples."""

    mean: float
    derivative: PeriodicField

    def __post_init__(self):
        if np.any(self.derivative.values < -1e-12):
            raise ValueError("quantile derivative must be nonnegative")


def torus_distance(u, v):
    """Periodic distance min_k |u - v + k|, in [0, 1/2]."""
    d = np.mod(np.asarray(u) - np.asarray(v), 1.0)
    return np.minimum(d, 1.0 - d)


def equivariant_l2_distance(F: EquivariantMap, G: EquivariantMap) -> float:
    """Integer-shift minimised L2 distance (inf_s int |F - G + s|^2)^(1/2).

    Requires equal windings so that F - G is periodic; the optimal shift is
    searched on the integer window spanned by the pointwise difference.
    """
    _check_same_grid(F, G)
    if abs(F.winding - G.winding) > 1e-12:
        raise ValueError("windings must agree for the shift-minimised distance")
    diff = G.values - F.values
    lo = int(np.floor(diff.min())) - 1
    hi = int(np.ceil(diff.max())) + 1
    best = np.inf
    for s in range(lo, hi + 1):
        d2 = float(np.mean((F.values - G.values + s) ** 2))
        best = min(best, d2)
    return float(np.sqrt(best))


def reconstruct_A(g: PeriodicField, M: float) -> EquivariantMap:
    """Rebuild the quantile-type map from its derivative and mean level.

    A(u) = int_0^1 int_v^u g(r) dr dv + M, which equals the cumulative
    integral of g recentred to have trapezoid mean M over one period.  The
    winding is int_0^1 g.
    """
    n = g.grid.n_cells
    dx = g.grid.spacing
    v = g.values
    winding = float(np.mean(v))
    cum = np.empty(n)
    cum[0] = 0.0
    np.cumsum((v[:-1] + v[1:]) * 0.5 * dx, out=cum[1:])
    # trapezoid mean of the cumulative integral, endpoint value = winding
    cum_mean = (np.sum(cum) + 0.5 * winding) * dx
    values = cum - cum_mean + M
    return EquivariantMap(g.grid, values, winding)


def pushforward_measure(F: EquivariantMap) -> TorusMeasure:
    """Histogram of F's node values mod 1 with uniform weights.

    Discretises the image of Lebesgue measure under F; values within a
    relative 1e-12 of a cell's upper edge are snapped into the next cell so
    that exact grid maps bin cleanly.
    """
    n = F.grid.n_cells
    scaled = np.mod(F.values, 1.0) * n
    idx = np.floor(scaled).astype(int)
    idx += (scaled - idx) > 1.0 - n * _EDGE_SNAP
    idx %= n
    hist = np.bincount(idx, minlength=n).astype(float) / len(idx)
    return TorusMeasure(histogram=hist, grid=F.grid)


def quantile_from_atoms(
    atoms: TorusMeasure, grid: GridSpec, cut: float = 0.0
) -> EquivariantMap:
    """Right-continuous winding-one quantile, starting the sweep at `cut`."""
    locs, weights = atoms.as_atoms()
    if locs.size == 0:
        raise ValueError("empty atom list")
    lifted = cut + np.mod(locs - cut, 1.0)
    order = np.argsort(lifted, kind="stable")
    lifted = lifted[order]
    cumw = np.cumsum(weights[order])
    cumw[-1] = 1.0
    q = grid.nodes
    idx = np.searchsorted(cumw, q, side="right")
    idx = np.minimum(idx, len(lifted) - 1)
    return EquivariantMap(grid, lifted[idx], 1.0)


def _step_quantile(measure: TorusMeasure, cut: float = 0.0):
    """Exact step-function quantile: breakpoints in (0, 1] and level values."""
    locs, weights = measure.as_atoms()
    lifted = cut + np.mod(locs - cut, 1.0)
    order = np.argsort(lifted, kind="stable")
    lifted = lifted[order]
    w = weights[order]
    keep = w > 0
    lifted, w = lifted[keep], w[keep]
    breaks = np.cumsum(w)
    breaks[-1] = 1.0
    return breaks, lifted


def _shifted_levels(breaks, vals, alpha):
    """Representation of q -> F(q - alpha) on [0, 1) as a step function."""
    alpha = alpha % 1.0
    if alpha == 0.0:
        return breaks.copy(), vals.copy()
    # new breakpoints where the shifted quantile jumps
    nb = np.concatenate([(breaks + alpha) % 1.0, [1.0]])
    nb = np.unique(nb[nb > 1e-15])
    if nb[-1] != 1.0:
        nb = np.append(nb, 1.0)
    starts = np.concatenate([[0.0], nb[:-1]])
    mids = 0.5 * (starts + nb)
    arg = mids - alpha
    wrapped = arg < 0
    arg = np.mod(arg, 1.0)
    idx = np.searchsorted(breaks, arg, side="right")
    idx = np.minimum(idx, len(vals) - 1)
    return nb, vals[idx] - wrapped.astype(float)


def _quantile_gap_squared(breaks_f, vals_f, breaks_g, vals_g, alpha):
    """Exact int_0^1 |F(q) - G(q - alpha) + s|^2 dq minimised over s in Z."""
    bg, vg = _shifted_levels(breaks_g, vals_g, alpha)
    merged = np.union1d(breaks_f, bg)
    starts = np.concatenate([[0.0], merged[:-1]])
    lengths = merged - starts
    mids = 0.5 * (starts + merged)
    fi = np.minimum(np.searchsorted(breaks_f, mids, side="right"), len(vals_f) - 1)
    gi = np.minimum(np.searchsorted(bg, mids, side="right"), len(vg) - 1)
    d = vals_f[fi] - vg[gi]
    i0 = float(np.sum(lengths))
    i1 = float(np.sum(lengths * d))
    i2 = float(np.sum(lengths * d * d))
    # int (d + s)^2 = i2 + 2 s i1 + s^2 i0, quadratic in the integer shift
    best = np.inf
    centre = -i1 / i0
    for s in (np.floor(centre), np.ceil(centre)):
        best = min(best, i2 + 2.0 * s * i1 + s * s * i0)
    return best


def circular_wasserstein(
    mu: TorusMeasure,
    nu: TorusMeasure,
    minimize_cut: bool = True,
    n_scan: int = 256,
) -> float:
    """Quadratic Wasserstein distance on the circle via quantile functions.

    The fixed-cut value (minimize_cut=False) is the integer-shift L2
    distance of the cut-0 quantiles.  With minimize_cut=True the rotation
    parameter of the second quantile is optimised as well: a coarse scan
    over n_scan rotations followed by golden-section refinement of the
    piecewise-smooth objective.
    """
    bf, vf = _step_quantile(mu)
    bg, vg = _step_quantile(nu)

    def gap2(alpha):
        return _quantile_gap_squared(bf, vf, bg, vg, alpha)

    if not minimize_cut:
        return float(np.sqrt(gap2(0.0)))

    # candidate rotations: scan grid plus alignments of jump locations
    alphas = np.arange(n_scan) / n_scan
    vals = np.array([gap2(a) for a in alphas])
    j = int(np.argmin(vals))
    lo = alphas[j] - 1.0 / n_scan
    hi = alphas[j] + 1.0 / n_scan
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = gap2(c), gap2(d)
    for _ in range(60):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = gap2(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = gap2(d)
    best = min(vals[j], fc, fd)
    return float(np.sqrt(max(best, 0.0)))


def d12_metric(mu: MeasureH1, nu: MeasureH1) -> float:
    """|<F_mu> - <F_nu>| + L2 distance of the quantile derivatives."""
    _check_same_grid(mu.derivative, nu.derivative)
    dmean = abs(mu.mean - nu.mean)
    dderiv = float(
        np.sqrt(np.mean((mu.derivative.values - nu.derivative.values) ** 2))
    )
    return dmean + dderiv


def _check_same_grid(a, b):
    if a.grid.n_cells != b.grid.n_cells:
        raise GridMismatchError(
            f"grid mismatch: {a.grid.n_cells} vs {b.grid.n_cells}"
        )


def _write_node_csv(path, grid, values):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["u", "value"])
        for u, v in zip(grid.nodes, values):
            writer.writerow([f"{u:.17g}", f"{v:.17g}"])


def _read_node_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["u", "value"]:
            raise ValueError(f"unexpected CSV header {header}")
        rows = [(float(r[0]), float(r[1])) for r in reader]
    nodes = np.array([r[0] for r in rows])
    values = np.array([r[1] for r in rows])
    return nodes, values
