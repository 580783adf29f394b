"""Stochastic integrals against simulated cylindrical martingale truncations.

Integrals are accumulated through the driver (phi sigma dW per cell, left
endpoints) rather than by differencing evaluations of M, which keeps them
free of realized-variation bias.  Brackets of integrals, covariation
operators, the bilinear Cauchy-Schwarz check, optional stopping and the local
property live here too.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._util import flavor_norm
from .martingales import MartEnsemble, NoiseSpec, OperatorProcess, stop_ensemble
from .measures import GridMeasure, TimeGrid

__all__ = [
    "IntegrandProcess",
    "IntegralPaths",
    "ElementaryPiece",
    "ElementaryIntegrand",
    "elementary_integral",
    "integrate",
    "integrate_black_box",
    "bracket_of_integral",
    "realized_bracket",
    "covariation_operator",
    "covariation_norm_increments",
    "kunita_watanabe_check",
    "first_passage_time",
    "stop_integral",
    "StoppedIntegral",
    "local_property_check",
    "CheckReport",
]


@dataclass(frozen=True)
class IntegrandProcess:
    """Operator-valued integrand at cell left endpoints.

    ``matrices`` is (K, m, d_cyl) for deterministic integrands or
    (n_paths, K, m, d_cyl) per path; adapted integrands must only read
    information strictly before their cell.
    """

    grid: TimeGrid
    matrices: np.ndarray
    adapted: bool = False

    def __post_init__(self):
        m = np.asarray(self.matrices, dtype=float)
        if m.ndim not in (3, 4) or m.shape[-3] != self.grid.n_cells:
            raise ValueError(f"integrand shape {m.shape} does not fit the grid")
        object.__setattr__(self, "matrices", m)

    @property
    def target_dim(self) -> int:
        return self.matrices.shape[-2]

    @classmethod
    def constant(cls, grid: TimeGrid, matrix: np.ndarray) -> "IntegrandProcess":
        matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(grid, np.broadcast_to(matrix, (grid.n_cells,) + matrix.shape).copy())


@dataclass(frozen=True)
class IntegralPaths:
    """Vector-valued integral paths zeta(t_j), zeta(0) = 0."""

    grid: TimeGrid
    values: np.ndarray  # (n, K+1, m)
    flavor: object = "hilbert"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1] != self.grid.n_cells + 1:
            raise ValueError(f"path array shape {v.shape} does not fit the grid")
        object.__setattr__(self, "values", v)

    def norms(self) -> np.ndarray:
        return flavor_norm(self.values, self.flavor)

    def sup_norms(self) -> np.ndarray:
        return self.norms().max(axis=1)

    def terminal(self) -> np.ndarray:
        return self.values[:, -1, :]

    def save(self, directory: str | Path, name: str = "integral") -> Path:
        """One CSV per path (t plus target coordinates), next to an ensemble
        bundle in a run directory."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        m = self.values.shape[2]
        header = ["t"] + [f"x_{j}" for j in range(m)]
        for p in range(self.values.shape[0]):
            with open(directory / f"{name}_{p:05d}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(
                    np.column_stack([self.grid.points, self.values[p]]).tolist()
                )
        return directory


def _accumulate(increments: np.ndarray, grid: TimeGrid, flavor="hilbert") -> IntegralPaths:
    n, k, m = increments.shape
    out = np.zeros((n, k + 1, m))
    np.cumsum(increments, axis=1, out=out[:, 1:, :])
    return IntegralPaths(grid, out, flavor)


def integrate(phi: IntegrandProcess, ens: MartEnsemble, flavor="hilbert") -> IntegralPaths:
    """Left-point integral: zeta(t_j) = sum_{i<j} phi(t_i) sigma(t_i) dW_{i+1}."""
    if phi.grid != ens.grid:
        raise ValueError("integrand and ensemble grids differ")
    driven = ens.driven_increments()  # (n, K, d_cyl)
    return _contract_and_accumulate(phi, driven, ens, flavor)


def integrate_black_box(
    phi: IntegrandProcess, ens: MartEnsemble, flavor="hilbert"
) -> IntegralPaths:
    """Integral from finite differences of the coordinate evaluations.

    For ensembles where only evaluations are available (no driver).  On
    simulated ensembles this agrees with :func:`integrate` up to round-off;
    treat it as the O(sqrt(dt))-noisy route when evaluations themselves came
    from a coarser source.
    """
    if phi.grid != ens.grid:
        raise ValueError("integrand and ensemble grids differ")
    driven = np.diff(ens.vector_paths(), axis=1)
    return _contract_and_accumulate(phi, driven, ens, flavor)


def _contract_and_accumulate(phi, driven, ens, flavor) -> IntegralPaths:
    mats = phi.matrices
    if mats.ndim == 3:
        mats = np.broadcast_to(mats, (ens.n_paths,) + mats.shape)
    elif mats.shape[0] != ens.n_paths:
        raise ValueError("per-path integrand does not match path count")
    # single contraction spelling; see martingales._driven for why
    inc = np.einsum("nkmc,nkc->nkm", mats, driven)
    return _accumulate(inc, ens.grid, flavor)


@dataclass(frozen=True)
class ElementaryPiece:
    """One time slab (t_{i0}, t_{i1}] with an event mask and rank-one terms."""

    i0: int
    i1: int
    terms: tuple  # ((h, x), ...)
    mask: np.ndarray | None = None  # per-path bools; None = all paths


@dataclass(frozen=True)
class ElementaryIntegrand:
    """Normal form of a simple integrand: slabs x events x sum of h (x) x.

    The h vectors used within a slab must be pairwise orthogonal.
    """

    grid: TimeGrid
    pieces: tuple

    def __post_init__(self):
        for piece in self.pieces:
            if not 0 <= piece.i0 < piece.i1 <= self.grid.n_cells:
                raise ValueError(f"slab ({piece.i0}, {piece.i1}] is out of range")
            hs = [np.asarray(h, dtype=float) for h, _ in piece.terms]
            for a in range(len(hs)):
                for b in range(a + 1, len(hs)):
                    denom = np.linalg.norm(hs[a]) * np.linalg.norm(hs[b])
                    if denom > 0 and abs(hs[a] @ hs[b]) > 1e-10 * denom:
                        raise ValueError("h vectors within a slab must be orthogonal")

    def target_dim(self) -> int:
        for piece in self.pieces:
            for _, x in piece.terms:
                return np.asarray(x).size
        return 1

    def as_process(self, n_paths: int) -> IntegrandProcess:
        """Materialize the per-cell (per-path if events are used) matrices."""
        k = self.grid.n_cells
        m = self.target_dim()
        d = None
        for piece in self.pieces:
            for h, _ in piece.terms:
                d = np.asarray(h).size
        per_path = any(p.mask is not None for p in self.pieces)
        shape = (n_paths, k, m, d) if per_path else (k, m, d)
        mats = np.zeros(shape)
        for piece in self.pieces:
            block = sum(
                np.outer(np.asarray(x, dtype=float), np.asarray(h, dtype=float))
                for h, x in piece.terms
            )
            if per_path:
                sel = np.ones(n_paths, bool) if piece.mask is None else piece.mask
                mats[sel, piece.i0 : piece.i1] += block
            else:
                mats[piece.i0 : piece.i1] += block
        return IntegrandProcess(self.grid, mats, adapted=per_path)


def elementary_integral(
    elem: ElementaryIntegrand, ens: MartEnsemble, flavor="hilbert"
) -> IntegralPaths:
    """Evaluate a simple integrand from differences of M-evaluations.

    This is the defining formula: per slab and event, each rank-one term
    contributes (M(t_{i1} ^ t) h - M(t_{i0} ^ t) h) x.  It serves as the
    independent reference for :func:`integrate` on simple integrands.
    """
    if elem.grid != ens.grid:
        raise ValueError("integrand and ensemble grids differ")
    k = ens.grid.n_cells
    m = elem.target_dim()
    out = np.zeros((ens.n_paths, k + 1, m))
    idx = np.arange(k + 1)
    for piece in elem.pieces:
        lo = np.minimum(idx, piece.i0)
        hi = np.minimum(idx, piece.i1)
        sel = np.ones(ens.n_paths, bool) if piece.mask is None else piece.mask
        for h, x in piece.terms:
            evals = ens.m_eval(np.asarray(h, dtype=float))  # (n, K+1)
            contrib = evals[:, hi] - evals[:, lo]
            out[sel] += contrib[sel, :, None] * np.asarray(x, dtype=float)
    return IntegralPaths(ens.grid, out, flavor)


def bracket_of_integral(
    phi_row: np.ndarray, spec: NoiseSpec, grid: TimeGrid
) -> GridMeasure:
    """Exact bracket of the scalar integral of a row integrand.

    Increment = phi sigma Q sigma^T phi^T dt, i.e. the normalized operator
    density paired with the bracket measure of the truncation.
    """
    phi_row = np.asarray(phi_row, dtype=float)
    if phi_row.ndim == 1:
        phi_row = np.broadcast_to(phi_row, (grid.n_cells, phi_row.size))
    sig = spec.sigma_on_grid(grid)
    q = spec.q()
    rows = np.einsum("kc,kcd->kd", phi_row, sig)
    vals = np.einsum("kd,de,ke->k", rows, q, rows)
    return GridMeasure(grid, vals * grid.widths)


def realized_bracket(paths: IntegralPaths) -> np.ndarray:
    """Realized squared-increment estimate of a scalar integral's bracket.

    Noisy cross-check (relative error O(sqrt(dt)) per cell aggregate); the
    exact route is :func:`bracket_of_integral`.
    """
    if paths.values.shape[-1] != 1:
        raise ValueError("realized bracket applies to scalar integrals")
    inc = np.diff(paths.values[:, :, 0], axis=1)
    return inc**2


def covariation_operator(
    spec1: NoiseSpec, spec2: NoiseSpec, grid: TimeGrid
) -> OperatorProcess:
    """Cumulative covariation operator of two truncations on a shared driver.

    Entry (y, x) at t_j is sum_{i<j} (sigma_2 Q sigma_1^T)[y, x] dt; for
    spec1 == spec2 this is the operator bracket.
    """
    if spec1.d_drive != spec2.d_drive:
        raise ValueError("specs must share one driver")
    q1, q2 = spec1.q(), spec2.q()
    if not np.array_equal(q1, q2):
        raise ValueError("shared driver requires equal covariances")
    s1 = spec1.sigma_on_grid(grid)
    s2 = spec2.sigma_on_grid(grid)
    rate = np.einsum("kyd,de,kxe->kyx", s2, q1, s1)
    inc = rate * grid.widths[:, None, None]
    out = np.zeros((grid.n_cells + 1, spec2.d_cyl, spec1.d_cyl))
    np.cumsum(inc, axis=0, out=out[1:])
    return OperatorProcess(grid, out)


def covariation_norm_increments(
    spec1: NoiseSpec, spec2: NoiseSpec, grid: TimeGrid
) -> np.ndarray:
    """Per-cell increments of the scalar covariation ||dA_{12}|| (matrix 2-norm)."""
    s1 = spec1.sigma_on_grid(grid)
    s2 = spec2.sigma_on_grid(grid)
    rate = np.einsum("kyd,de,kxe->kyx", s2, spec1.q(), s1)
    norms = np.linalg.svd(rate, compute_uv=False)[..., 0]
    return norms * grid.widths


@dataclass(frozen=True)
class CheckReport:
    """Slack-style verdict, serializable to the run bundle."""

    check: str
    n_paths: int
    worst_slack: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.worst_slack >= -self.tolerance

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "n_paths": self.n_paths,
            "worst_slack": self.worst_slack,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }


def kunita_watanabe_check(
    f: np.ndarray,
    g: np.ndarray,
    spec1: NoiseSpec,
    spec2: NoiseSpec,
    grid: TimeGrid,
    tol_scale: float = 1e-9,
) -> CheckReport:
    """Bilinear Cauchy-Schwarz for covariation integrals.

    Evaluates |int <dA_{12} f, g>|^2 against the product of the two bracket
    integrals for per-path (or deterministic) grid functions ``f`` (..., K,
    d1) and ``g`` (..., K, d2), and reports the worst slack.
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if f.ndim == 2:
        f = f[None]
    if g.ndim == 2:
        g = g[None]
    s1 = spec1.sigma_on_grid(grid)
    s2 = spec2.sigma_on_grid(grid)
    q = spec1.q()
    if not np.array_equal(q, spec2.q()):
        raise ValueError("shared driver requires equal covariances")
    dt = grid.widths
    u = np.einsum("kcd,nkc->nkd", s1, f)  # sigma_1^T f
    v = np.einsum("kcd,nkc->nkd", s2, g)
    lhs = np.einsum("nkd,de,nke,k->n", u, q, v, dt) ** 2
    r1 = np.einsum("nkd,de,nke,k->n", u, q, u, dt)
    r2 = np.einsum("nkd,de,nke,k->n", v, q, v, dt)
    slack = r1 * r2 - lhs
    scale = max(float(np.max(r1 * r2)), 1e-300)
    worst = float(np.min(slack))
    return CheckReport(
        check="kunita-watanabe",
        n_paths=f.shape[0],
        worst_slack=worst / scale,
        tolerance=tol_scale,
    )


def first_passage_time(ens: MartEnsemble, level: float) -> np.ndarray:
    """First grid index where the per-path bracket exceeds ``level``; rounds
    up to the next grid point, K if never reached."""
    prefix = ens.bracket.prefix()
    hit = prefix > level
    idx = np.argmax(hit, axis=1)
    idx[~hit.any(axis=1)] = ens.grid.n_cells
    return idx


@dataclass(frozen=True)
class StoppedIntegral:
    """The three equal forms of a stopped integral."""

    stopped_path: IntegralPaths
    indicator_integrand: IntegralPaths
    stopped_driver: IntegralPaths

    def bit_identical(self) -> bool:
        return np.array_equal(
            self.stopped_path.values, self.indicator_integrand.values
        ) and np.array_equal(self.stopped_path.values, self.stopped_driver.values)


def stop_integral(
    phi: IntegrandProcess, ens: MartEnsemble, tau_idx: np.ndarray
) -> StoppedIntegral:
    """Optional stopping along grid stopping times, three ways.

    tau_idx holds per-path grid-point indices.  The stopped integral path,
    the integral of the indicator-cut integrand, and the integral against the
    frozen ensemble agree bit-exactly because all three accumulate the same
    per-cell products, zeroed beyond the stop.
    """
    tau_idx = np.broadcast_to(np.asarray(tau_idx, dtype=int), (ens.n_paths,))
    k = ens.grid.n_cells

    full = integrate(phi, ens)
    clamp = np.minimum(np.arange(k + 1)[None, :], tau_idx[:, None])
    stopped_path = IntegralPaths(
        ens.grid, np.take_along_axis(full.values, clamp[:, :, None], axis=1), full.flavor
    )

    keep = np.arange(k)[None, :] < tau_idx[:, None]
    mats = phi.matrices
    if mats.ndim == 3:
        mats = np.broadcast_to(mats, (ens.n_paths,) + mats.shape)
    cut = mats * keep[:, :, None, None]
    indicator = integrate(IntegrandProcess(ens.grid, cut, adapted=True), ens)

    frozen = integrate(phi, stop_ensemble(ens, tau_idx))
    return StoppedIntegral(stopped_path, indicator, frozen)


def local_property_check(
    phi: IntegrandProcess, ens: MartEnsemble, event_mask: np.ndarray
) -> CheckReport:
    """On paths where the integrand vanishes identically, so does the integral.

    ``event_mask`` selects the paths on which phi is claimed to vanish; the
    check first verifies the claim, then asserts the integral is exactly zero
    there.
    """
    event_mask = np.asarray(event_mask, dtype=bool)
    mats = phi.matrices
    if mats.ndim == 3:
        vanished = not np.any(mats) if event_mask.any() else True
    else:
        vanished = not np.any(mats[event_mask])
    if not vanished:
        raise ValueError("integrand does not vanish on the given event")
    zeta = integrate(phi, ens)
    worst = float(np.abs(zeta.values[event_mask]).max()) if event_mask.any() else 0.0
    return CheckReport(
        check="local-property",
        n_paths=int(event_mask.sum()),
        worst_slack=-worst,
        tolerance=0.0,
    )
