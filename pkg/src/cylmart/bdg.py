"""Moment checks for stochastic integrals: isometry, two-sided sup/kernel
moment ratios across instance panels, and a pathwise second-order chain-rule
(Ito-type) residual.

The two-sided comparison has no universal numeric constants; what is testable
at desk scale is that the ratio of E sup ||integral||^p to the p-th power of
the kernel's Gaussian-series norm stays inside a stable bracket per (p, norm
flavor), reproducible across master seeds.  That bracket is fitted and
recorded, never asserted a priori.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._util import flavor_norm, worker_count
from .gammanorm import GammaKernel, gamma_norm
from .integration import IntegrandProcess, integrate
from .martingales import MartEnsemble, NoiseSpec, qm_operator, qv_exact, simulate
from .measures import IncreasingPath, TimeGrid
from .operators import psd_sqrt

__all__ = [
    "IsometryReport",
    "ito_isometry",
    "integral_kernel",
    "BDGInstance",
    "BDGReport",
    "bdg_ratio_panel",
    "fit_bracket",
    "trace_term",
    "validate_derivatives",
    "ItoReport",
    "ito_residual",
]


@dataclass(frozen=True)
class IsometryReport:
    lhs: float
    rhs: float
    z: float
    n_paths: int

    def passed(self, z_max: float = 3.0) -> bool:
        return abs(self.z) <= z_max


def integral_kernel(phi: IntegrandProcess, spec: NoiseSpec, grid: TimeGrid, flavor="hilbert") -> GammaKernel:
    """Kernel phi * (operator density)^{1/2} against the bracket measure."""
    if phi.matrices.ndim != 3:
        raise ValueError("kernel construction needs a deterministic integrand")
    qm = qm_operator(spec, grid).matrices  # (K, dc, dc)
    roots = np.stack([psd_sqrt(q) for q in qm])
    mats = np.einsum("kmc,kcd->kmd", phi.matrices, roots)
    return GammaKernel(grid, qv_exact(spec, grid), mats, flavor)


def ito_isometry(phi: IntegrandProcess, ens: MartEnsemble) -> IsometryReport:
    """E ||integral(T)||^2 against the exact per-path kernel energy.

    The right side integrates the squared Hilbert-Schmidt size of
    phi (density)^{1/2} against the bracket, evaluated exactly per path; the
    z-score is the paired-difference mean over its standard error.
    """
    zeta = integrate(phi, ens)
    lhs_paths = np.sum(zeta.terminal() ** 2, axis=1)

    sig = ens.sigma_for_paths()  # (n, K, dc, dd)
    q = ens.spec.q()
    mats = phi.matrices
    if mats.ndim == 3:
        rows = np.einsum("kmc,nkcd->nkmd", mats, sig)
    else:
        rows = np.einsum("nkmc,nkcd->nkmd", mats, sig)
    energy = np.einsum("nkmd,de,nkme->nk", rows, q, rows)
    rhs_paths = energy @ ens.grid.widths

    diff = lhs_paths - rhs_paths
    se = float(np.std(diff, ddof=1) / np.sqrt(ens.n_paths))
    z = float(np.mean(diff) / se) if se > 0 else 0.0
    return IsometryReport(
        lhs=float(np.mean(lhs_paths)),
        rhs=float(np.mean(rhs_paths)),
        z=z,
        n_paths=ens.n_paths,
    )


@dataclass(frozen=True)
class BDGInstance:
    name: str
    spec: NoiseSpec
    phi: IntegrandProcess
    grid: TimeGrid


@dataclass(frozen=True)
class BDGReport:
    instance: str
    p: float
    flavor: object
    n_paths: int
    lhs: float
    lhs_stderr: float
    rhs: float
    rhs_stderr: float
    degenerate: bool = False

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs if self.rhs > 0 else np.nan

    CSV_HEADER = (
        "instance,p,flavor,n_paths,lhs,lhs_stderr,rhs,rhs_stderr,ratio,degenerate"
    )

    def to_csv_row(self) -> str:
        return (
            f"{self.instance},{self.p},{self.flavor},{self.n_paths},"
            f"{self.lhs!r},{self.lhs_stderr!r},{self.rhs!r},{self.rhs_stderr!r},"
            f"{self.ratio!r},{int(self.degenerate)}"
        )


def _panel_one(
    inst: BDGInstance,
    p_list: Sequence[float],
    flavors: Sequence,
    n_paths: int,
    seed: int,
    gamma_samples: int,
) -> list[BDGReport]:
    ens = simulate(inst.spec, inst.grid, n_paths, seed)
    zeta = integrate(inst.phi, ens)
    reports = []
    for flavor in flavors:
        sups = flavor_norm(zeta.values, flavor).max(axis=1)
        kernel = integral_kernel(inst.phi, inst.spec, inst.grid, flavor)
        est = gamma_norm(kernel, n_samples=gamma_samples, seed=seed + 101)
        degenerate = est.value <= 1e-12
        for p in p_list:
            lhs_samples = sups**p
            lhs = float(np.mean(lhs_samples))
            lhs_se = float(np.std(lhs_samples, ddof=1) / np.sqrt(n_paths))
            rhs = est.value**p
            rhs_se = p * est.value ** (p - 1) * est.stderr if est.value > 0 else 0.0
            reports.append(
                BDGReport(
                    instance=inst.name,
                    p=p,
                    flavor=flavor,
                    n_paths=n_paths,
                    lhs=lhs,
                    lhs_stderr=lhs_se,
                    rhs=rhs,
                    rhs_stderr=rhs_se,
                    degenerate=degenerate,
                )
            )
    return reports


def bdg_ratio_panel(
    instances: Sequence[BDGInstance],
    p_list: Sequence[float],
    flavors: Sequence,
    n_paths: int,
    seed: int,
    gamma_samples: int = 4096,
) -> list[BDGReport]:
    """Sup-moment versus kernel-norm moment across an instance panel.

    Per-instance seeds derive from (seed, instance index), so the panel is
    reproducible regardless of the worker count (CYLMART_THREADS only sets
    the thread pool size).
    """
    workers = worker_count()
    jobs = [
        (inst, p_list, flavors, n_paths, seed + 1000 * i, gamma_samples)
        for i, inst in enumerate(instances)
    ]
    if workers == 1:
        chunks = [_panel_one(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda j: _panel_one(*j), jobs))
    return [r for chunk in chunks for r in chunk]


def fit_bracket(reports: Sequence[BDGReport]) -> dict:
    """Per (p, flavor): the smallest symmetric bracket [1/C, C] holding every
    non-degenerate ratio, with the ratio extremes recorded."""
    out = {}
    for rep in reports:
        if rep.degenerate or not np.isfinite(rep.ratio):
            continue
        key = (rep.p, str(rep.flavor))
        lo, hi = out.get(key, (np.inf, 0.0))
        out[key] = (min(lo, rep.ratio), max(hi, rep.ratio))
    return {
        key: {"min_ratio": lo, "max_ratio": hi, "C": max(hi, 1.0 / lo)}
        for key, (lo, hi) in out.items()
    }


def trace_term(r: np.ndarray, hess) -> float:
    """Sum over input directions of the bilinear form at (R e_j, R e_j).

    ``hess`` may be a symmetric matrix or a callable bilinear form; the value
    is basis-invariant in the input space.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    if callable(hess):
        return float(sum(hess(r[:, j], r[:, j]) for j in range(r.shape[1])))
    hess = np.asarray(hess, dtype=float)
    return float(np.einsum("md,mf,fd->", r, hess, r))


def validate_derivatives(
    f: Callable,
    d1f: Callable,
    d2f: Callable,
    d22f: Callable,
    points: Sequence[tuple[float, np.ndarray]],
    step: float = 1e-5,
    rtol: float = 1e-4,
) -> None:
    """Cross-check supplied derivatives by central differences; raises on
    disagreement beyond ``rtol`` relative to the local scale."""
    for t, x in points:
        x = np.asarray(x, dtype=float)[None, :]
        m = x.shape[1]
        d1 = (np.asarray(f(t + step, x))[0] - np.asarray(f(t - step, x))[0]) / (2 * step)
        if abs(d1 - np.asarray(d1f(t, x))[0]) > rtol * (1.0 + abs(d1)):
            raise ValueError(f"time derivative mismatch at t={t}")
        grad = np.asarray(d2f(t, x))[0]
        hess = np.asarray(d22f(t, x))[0]
        for j in range(m):
            e = np.zeros((1, m))
            e[0, j] = step
            g_num = (np.asarray(f(t, x + e))[0] - np.asarray(f(t, x - e))[0]) / (2 * step)
            if abs(g_num - grad[j]) > rtol * (1.0 + abs(grad[j])):
                raise ValueError(f"gradient mismatch in coordinate {j}")
            h_num = (np.asarray(d2f(t, x + e))[0] - np.asarray(d2f(t, x - e))[0]) / (
                2 * step
            )
            if np.abs(h_num - hess[:, j]).max() > rtol * (1.0 + np.abs(hess[:, j]).max()):
                raise ValueError(f"hessian mismatch in coordinate {j}")


@dataclass(frozen=True)
class ItoReport:
    mean_terminal: float
    se_terminal: float
    max_abs: float
    n_paths: int

    @property
    def z(self) -> float:
        return self.mean_terminal / self.se_terminal if self.se_terminal > 0 else 0.0


def ito_residual(
    f: Callable,
    d1f: Callable,
    d2f: Callable,
    d22f: Callable,
    xi: np.ndarray,
    psi: np.ndarray | None,
    a_path: IncreasingPath | None,
    phi: IntegrandProcess,
    ens: MartEnsemble,
    validate: bool = True,
) -> ItoReport:
    """Residual of the second-order chain rule along simulated paths.

    The state is zeta = xi + int psi dA + int phi dM, built by left-point
    accumulation.  The residual subtracts the time term, the dA term, the
    stochastic term and half the trace correction (the bilinear form of the
    second derivative evaluated through phi (density)^{1/2}, against the
    bracket) from f(t, zeta(t)) - f(0, zeta(0)).  All derivative callables
    take (t, states) with states batched over paths.
    """
    grid = ens.grid
    k = grid.n_cells
    n = ens.n_paths
    m = phi.target_dim

    xi = np.asarray(xi, dtype=float)
    xi = np.broadcast_to(xi, (n, m))
    driven = ens.driven_increments()
    mats = phi.matrices
    if mats.ndim == 3:
        mats = np.broadcast_to(mats, (n,) + mats.shape)
    stoch_inc = np.einsum("nkmc,nkc->nkm", mats, driven)  # (n, K, m)
    driven_phi = np.zeros((n, k + 1, m))
    np.cumsum(stoch_inc, axis=1, out=driven_phi[:, 1:, :])

    if psi is None:
        psi_vals = np.zeros((k, m))
        da = np.zeros(k)
    else:
        psi_vals = np.asarray(psi, dtype=float)
        if psi_vals.shape != (k, m):
            raise ValueError("psi must supply one target vector per cell")
        if a_path is None:
            raise ValueError("psi needs its driving increasing path")
        da = np.diff(a_path.values)
    drift = np.zeros((k + 1, m))
    np.cumsum(psi_vals * da[:, None], axis=0, out=drift[1:])

    zeta = xi[:, None, :] + drift[None, :, :] + driven_phi  # (n, K+1, m)

    if validate:
        mid = k // 2
        pts = [(grid.points[0], zeta[0, 0]), (grid.points[mid], zeta[0, mid])]
        if n > 1:
            pts.append((grid.points[-1], zeta[-1, -1]))
        validate_derivatives(f, d1f, d2f, d22f, pts)

    qm = qm_operator(ens.spec, grid).matrices if not ens.spec.adapted else None
    if qm is None:
        raise ValueError("residual checking needs a deterministic spec")
    roots = np.stack([psd_sqrt(qmat) for qmat in qm])
    kernels = np.einsum("kmc,kcd->kmd", phi.matrices, roots)  # (K, m, dc)
    dqv = qv_exact(ens.spec, grid).increments

    residual = np.empty((n, k + 1))
    f0 = np.asarray(f(grid.points[0], zeta[:, 0, :]), dtype=float)
    residual[:, 0] = 0.0
    correction = np.zeros(n)
    for i in range(k):
        t = grid.points[i]
        state = zeta[:, i, :]
        grad = np.asarray(d2f(t, state), dtype=float)  # (n, m)
        hess = np.asarray(d22f(t, state), dtype=float)  # (n, m, m)
        tr = np.einsum("md,nmf,fd->n", kernels[i], hess, kernels[i])
        correction = correction + (
            np.asarray(d1f(t, state), dtype=float) * grid.widths[i]
            + grad @ (psi_vals[i] * da[i])
            + np.einsum("nm,nm->n", grad, stoch_inc[:, i, :])
            + 0.5 * tr * dqv[i]
        )
        f_next = np.asarray(f(grid.points[i + 1], zeta[:, i + 1, :]), dtype=float)
        residual[:, i + 1] = f_next - f0 - correction

    terminal = residual[:, -1]
    se = float(np.std(terminal, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return ItoReport(
        mean_terminal=float(np.mean(terminal)),
        se_terminal=se,
        max_abs=float(np.abs(residual).max()),
        n_paths=n,
    )
