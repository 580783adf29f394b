"""Right-continuous inverses of the bracket and the induced substitutions.

The change of clock tau_s = inf{t : bracket(t) > s} turns a truncation into
one whose bracket grows at unit rate.  On the grid, tau maps an s-axis onto
grid points; transported quantities are right-constant between transported
knots.  Two s-axis discretizations are used:

* the exact mass breakpoints (prefix sums), for substitution identities that
  hold to round-off;
* a uniform s-grid with the source cell count, for transport experiments
  whose one-cell error is the object of interest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .integration import IntegrandProcess, integrate
from .martingales import BracketPaths, MartEnsemble
from .measures import GridMeasure, TimeGrid

__all__ = [
    "TimeChange",
    "build_time_change",
    "TimeChangedEnsemble",
    "apply_time_change",
    "substitute",
    "DdsReport",
    "dds_integral_check",
    "gamma_timechange_check",
    "TransportPair",
    "plateau_constancy_check",
]

SNAP_RTOL = 1e-12
PLATEAU_RTOL = 1e-14


def _prefix_rows(qv) -> tuple[TimeGrid, np.ndarray]:
    if isinstance(qv, GridMeasure):
        return qv.grid, qv.prefix()[None, :]
    if isinstance(qv, BracketPaths):
        return qv.grid, qv.prefix()
    raise TypeError(f"expected GridMeasure or BracketPaths, got {type(qv)!r}")


@dataclass(frozen=True)
class TimeChange:
    """Grid inverse of per-path bracket prefix sums.

    ``tau_idx[p, k]`` is the source grid-point index of tau at the k-th point
    of path p's uniform s-axis; ``infinite`` marks s at or above the total
    mass (tau = infinity there, transported values frozen at the horizon).
    """

    grid: TimeGrid
    prefix: np.ndarray  # (n, K+1)
    s_points: np.ndarray  # (n, K+1), uniform on [0, total mass]
    tau_idx: np.ndarray  # (n, K+1) ints
    infinite: np.ndarray  # (n, K+1) bools

    @property
    def n_paths(self) -> int:
        return self.prefix.shape[0]

    @property
    def totals(self) -> np.ndarray:
        return self.prefix[:, -1]

    def tau_times(self) -> np.ndarray:
        """tau in time units; inf where the s-point exceeds the total mass."""
        out = self.grid.points[self.tau_idx]
        return np.where(self.infinite, np.inf, out)

    def to_pairs(self, path: int = 0) -> np.ndarray:
        """(s, tau_s) rows for serialization."""
        return np.column_stack([self.s_points[path], self.tau_times()[path]])

    def source_cells(self, s_values: np.ndarray, path: int) -> np.ndarray:
        """Source cell whose mass interval contains each s value."""
        snap = SNAP_RTOL * max(self.totals[path], 1.0)
        raw = np.searchsorted(self.prefix[path], np.asarray(s_values) + snap, side="right")
        return np.clip(raw - 1, 0, self.grid.n_cells - 1)


def build_time_change(qv) -> TimeChange:
    """Invert bracket prefix sums on a uniform s-axis per path.

    tau(s) is the last grid point whose prefix mass does not exceed s (up to a
    relative snap of 1e-12, so that exactly aligned breakpoints resolve to the
    exact inverse); plateaus therefore collapse to their right endpoint, which
    is the discrete form of right-continuity.
    """
    grid, prefix = _prefix_rows(qv)
    n, kp1 = prefix.shape
    totals = prefix[:, -1]
    s_points = np.linspace(np.zeros(n), totals, kp1, axis=1)
    tau_idx = np.empty((n, kp1), dtype=int)
    infinite = np.empty((n, kp1), dtype=bool)
    for p in range(n):
        snap = SNAP_RTOL * max(totals[p], 1.0)
        raw = np.searchsorted(prefix[p], s_points[p] + snap, side="right")
        infinite[p] = raw == kp1
        tau_idx[p] = np.clip(raw - 1, 0, kp1 - 1)
    return TimeChange(grid, prefix, s_points, tau_idx, infinite)


@dataclass(frozen=True)
class TimeChangedEnsemble:
    """Evaluations and bracket of M composed with tau, on the s-axis."""

    tc: TimeChange
    values: np.ndarray  # (n, K+1, n_h): M_{tau_s} h
    bracket_values: np.ndarray  # (n, K+1): bracket at tau_s

    def bracket_gap(self) -> float:
        """Worst |bracket(tau_s) - min(s, total)| over paths and s-points."""
        target = np.minimum(self.tc.s_points, self.tc.totals[:, None])
        return float(np.abs(self.bracket_values - target).max())

    def max_cell_mass(self) -> float:
        return float(np.diff(self.tc.prefix, axis=1).max())


def apply_time_change(ens: MartEnsemble, tc: TimeChange) -> TimeChangedEnsemble:
    """Transport an ensemble through tau: N_s h = M_{tau_s} h per path.

    Beyond the total mass the transported paths are frozen at their terminal
    values.  The transported bracket satisfies bracket(s) = min(s, total)
    within one source-cell mass.
    """
    if tc.n_paths not in (1, ens.n_paths):
        raise ValueError("time change and ensemble have incompatible path counts")
    idx = tc.tau_idx
    if tc.n_paths == 1 and ens.n_paths > 1:
        idx = np.broadcast_to(idx, (ens.n_paths, idx.shape[1]))
    rows = np.arange(ens.n_paths)[:, None]
    values = ens.m_evals[rows, idx, :]
    prefix = tc.prefix if tc.n_paths == ens.n_paths else np.broadcast_to(
        tc.prefix, (ens.n_paths, tc.prefix.shape[1])
    )
    bracket_values = prefix[rows, idx]
    return TimeChangedEnsemble(tc, values, bracket_values)


def substitute(f_cells: np.ndarray, qv: GridMeasure) -> tuple[float, float]:
    """Both sides of the clock-change substitution for a cell function f.

    Left: integral of f against the bracket measure on the time axis.  Right:
    integral of f(tau(s)) ds over [0, total mass) using the exact mass
    breakpoints, where tau assigns each mass interval its source cell.  The
    two agree to round-off (exactly on zero-mass plateaus, which drop from
    both sides).
    """
    f_cells = np.asarray(f_cells, dtype=float)
    if f_cells.shape != (qv.grid.n_cells,):
        raise ValueError("f must supply one value per cell")
    lhs = float(f_cells @ qv.increments)
    widths_s = np.diff(qv.prefix())  # breakpoint s-cells, one per source cell
    rhs = float(f_cells @ widths_s)
    return lhs, rhs


@dataclass(frozen=True)
class DdsReport:
    """Pathwise gap between a source integral and its transported form."""

    gaps: np.ndarray  # (n,) sup-norm gap per path
    max_cell_mass: float

    @property
    def max_gap(self) -> float:
        return float(self.gaps.max())

    def normalized_gap(self) -> float:
        """max gap / sqrt(max cell mass); ladder-stable by design."""
        denom = np.sqrt(self.max_cell_mass) if self.max_cell_mass > 0 else 1.0
        return self.max_gap / denom


def dds_integral_check(phi: IntegrandProcess, ens: MartEnsemble, tc: TimeChange) -> DdsReport:
    """Pathwise identity between int phi dM and its unit-clock transport.

    The transported side integrates phi(tau(s)) against N = M o tau on the
    uniform s-grid, evaluated back at the source times through the bracket;
    the report carries the per-path sup gap, which is bounded by a multiple
    of sqrt(max cell mass) and vanishes to round-off when the clocks align.
    """
    if tc.n_paths not in (1, ens.n_paths):
        raise ValueError("time change and ensemble have incompatible path counts")
    source = integrate(phi, ens).values  # (n, K+1, m)
    vec = ens.vector_paths()  # (n, K+1, dc)
    k = ens.grid.n_cells
    m = phi.target_dim
    gaps = np.empty(ens.n_paths)
    for p in range(ens.n_paths):
        tp = 0 if tc.n_paths == 1 else p
        prefix = tc.prefix[tp]
        s_pts = tc.s_points[tp]
        idx = tc.tau_idx[tp]
        snap = SNAP_RTOL * max(prefix[-1], 1.0)
        cells = np.clip(
            np.searchsorted(prefix, s_pts[:-1] + snap, side="right") - 1, 0, k - 1
        )
        mats = phi.matrices if phi.matrices.ndim == 3 else phi.matrices[p]
        psi = mats[cells]  # (K, m, dc)
        dn = vec[p][idx[1:]] - vec[p][idx[:-1]]  # (K, dc)
        transported = np.zeros((k + 1, m))
        np.cumsum(np.einsum("kmc,kc->km", psi, dn), axis=0, out=transported[1:])
        back = np.clip(
            np.searchsorted(s_pts, prefix + snap, side="right") - 1, 0, k
        )
        gaps[p] = np.abs(source[p] - transported[back]).max()
    max_mass = float(np.diff(tc.prefix, axis=1).max())
    return DdsReport(gaps=gaps, max_cell_mass=max_mass)


@dataclass(frozen=True)
class TransportPair:
    """gamma-norms of a kernel before and after the clock change."""

    lhs: float
    rhs: float
    lhs_stderr: float
    rhs_stderr: float
    rebin_bound: float

    def agree(self, n_sigma: float = 3.0) -> bool:
        tol = self.rebin_bound + n_sigma * (self.lhs_stderr + self.rhs_stderr) + 1e-12 * (
            1.0 + abs(self.lhs)
        )
        return abs(self.lhs - self.rhs) <= tol


def gamma_timechange_check(kernel, n_samples: int = 4096, seed: int = 0) -> TransportPair:
    """Invariance of the gamma-norm under the clock change of the weight.

    The kernel's weight measure is replaced by the uniform s-grid of equal
    total mass, with cell values pulled back through tau.  Euclidean flavor
    compares weighted Hilbert-Schmidt sums exactly (up to the re-binning
    bound, the left-point error of a piecewise-constant integrand); p-norm
    flavors compare Monte-Carlo estimates.
    """
    from .gammanorm import GammaKernel, gamma_norm_exact_hilbert, gamma_norm_mc

    if not isinstance(kernel, GammaKernel):
        raise TypeError("expected a GammaKernel")
    qv = kernel.measure
    grid = kernel.grid
    k = grid.n_cells
    total = qv.total_mass
    prefix = qv.prefix()
    snap = SNAP_RTOL * max(total, 1.0)
    if total == 0:
        return TransportPair(0.0, 0.0, 0.0, 0.0, 0.0)
    s_pts = np.linspace(0.0, total, k + 1)
    cells = np.clip(np.searchsorted(prefix, s_pts[:-1] + snap, side="right") - 1, 0, k - 1)
    s_grid = TimeGrid(s_pts)
    transported = GammaKernel(
        grid=s_grid,
        measure=GridMeasure(s_grid, np.diff(s_pts)),
        matrices=kernel.matrices[cells],
        flavor=kernel.flavor,
    )
    hs_cells = np.sum(kernel.matrices**2, axis=(1, 2))
    support = qv.increments > 0
    hs_sup = hs_cells[support]
    tv = float(np.abs(np.diff(hs_sup)).sum()) + (float(hs_sup.max()) if hs_sup.size else 0.0)
    rebin = (total / k) * tv
    if kernel.flavor in ("hilbert", 2, 2.0):
        lhs = gamma_norm_exact_hilbert(kernel)
        rhs = gamma_norm_exact_hilbert(transported)
        # the bound controls squared norms; convert through the larger root
        denom = max(lhs + rhs, 1e-300)
        return TransportPair(lhs, rhs, 0.0, 0.0, rebin / denom)
    est_l = gamma_norm_mc(kernel, n_samples, seed)
    est_r = gamma_norm_mc(transported, n_samples, seed + 1)
    denom = max(est_l.value + est_r.value, 1e-300)
    return TransportPair(est_l.value, est_r.value, est_l.stderr, est_r.stderr, rebin / denom)


def plateau_constancy_check(ens: MartEnsemble, rel_threshold: float = PLATEAU_RTOL):
    """On cells where sigma vanishes identically, evaluations are constant.

    Plateau cells are those with bracket increment below ``rel_threshold``
    times the total; among them the check restricts to cells whose realized
    sigma is exactly zero (the simulable way plateaus arise) and asserts the
    per-cell evaluation increments are exactly zero there.
    """
    from .integration import CheckReport

    totals = ens.bracket.prefix()[:, -1]
    thresh = rel_threshold * np.maximum(totals, 1e-300)
    plateau = ens.bracket.increments <= thresh[:, None]  # (n, K)
    sig = ens.sigma_for_paths()
    sigma_zero = np.all(sig == 0.0, axis=(-2, -1))  # (n, K)
    target = plateau & sigma_zero
    m_inc = np.diff(ens.m_evals, axis=1)  # (n, K, n_h)
    worst = float(np.abs(m_inc[target]).max()) if target.any() else 0.0
    return CheckReport(
        check="plateau-constancy",
        n_paths=ens.n_paths,
        worst_slack=-worst,
        tolerance=0.0,
    )
