"""Mild-solution solver for du = (Au + F(t,u)) dt + G(t,u) dM.

The generator is a symmetric negative-semidefinite matrix (possibly zero), so
the semigroup is contractive and self-adjoint and applies through a cached
eigendecomposition.  Solutions are produced by fixed-point iteration of the
variation-of-constants map on a dyadic block schedule, with distances
measured in the V norm (L2-in-time moment plus bracket-weighted kernel
moment).  Per-block stopping times cap the bracket mass a block can carry,
and localization checks compare runs against stopped drivers pathwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._util import single_rng
from .martingales import BracketPaths, MartEnsemble, NoiseSpec, stop_ensemble
from .measures import TimeGrid

__all__ = [
    "SEEProblem",
    "Semigroup",
    "semigroup_apply",
    "det_convolution",
    "stoch_convolution",
    "fixed_point_map",
    "vp_norm",
    "rho_stopping_times",
    "PicardDiagnostics",
    "PicardError",
    "picard_solve",
    "mild_residual",
    "ResidualStats",
    "lipschitz_quotient",
    "localization_consistency",
    "LocalizationReport",
    "DRIFT_REGISTRY",
    "NOISE_MAP_REGISTRY",
    "problem_from_config",
]

GENERATOR_EIG_RTOL = 1e-10
LIPSCHITZ_SLACK = 1e-9


@dataclass(frozen=True)
class SEEProblem:
    """Problem data with declared Lipschitz/growth constants.

    ``drift`` maps (t, states (n, m)) -> (n, m); ``noise_map`` maps
    (t, states) -> (n, m, d_cyl) (a constant (m, d_cyl) return broadcasts).
    Declared constants are validated by two-point sampling before solving.
    """

    generator: np.ndarray | None
    drift: Callable
    lip_drift: float
    growth_drift: float
    noise_map: Callable
    lip_noise: float
    u0: np.ndarray
    noise: NoiseSpec
    horizon: float
    name: str = ""

    @property
    def dim(self) -> int:
        return np.atleast_1d(np.asarray(self.u0)).shape[-1]

    def initial_states(self, n_paths: int) -> np.ndarray:
        u0 = np.asarray(self.u0, dtype=float)
        if u0.ndim == 1:
            return np.broadcast_to(u0, (n_paths, u0.size)).copy()
        if u0.shape[0] != n_paths:
            raise ValueError("per-path initial values do not match path count")
        return u0.copy()


class Semigroup:
    """exp(tA) for symmetric negative-semidefinite A, cached eigenbasis."""

    def __init__(self, generator: np.ndarray | None, dim: int):
        self.dim = dim
        if generator is None:
            self.identity = True
            return
        a = np.asarray(generator, dtype=float)
        if a.shape != (dim, dim):
            raise ValueError(f"generator shape {a.shape} does not match dim {dim}")
        scale = max(np.abs(a).max(), 1.0)
        if np.abs(a - a.T).max() > 1e-12 * scale:
            raise ValueError("generator must be symmetric")
        vals, vecs = np.linalg.eigh(a)
        if np.any(vals > GENERATOR_EIG_RTOL * scale):
            raise ValueError(f"generator has a positive eigenvalue ({vals.max():.3e})")
        self.identity = False
        self.vals = np.minimum(vals, 0.0)
        self.vecs = vecs

    def matrix(self, t: float) -> np.ndarray:
        if self.identity:
            return np.eye(self.dim)
        return (self.vecs * np.exp(t * self.vals)) @ self.vecs.T

    def apply(self, t: float, x: np.ndarray) -> np.ndarray:
        """exp(tA) x along the last axis; contraction for t >= 0."""
        if self.identity or t == 0.0:
            return x if self.identity else x @ self.matrix(0.0).T
        return x @ self.matrix(t).T


def semigroup_apply(generator: np.ndarray | None, t: float, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return Semigroup(generator, x.shape[-1]).apply(t, x)


def _eval_noise(problem: SEEProblem, t: float, states: np.ndarray) -> np.ndarray:
    g = np.asarray(problem.noise_map(t, states), dtype=float)
    if g.ndim == 2:
        g = np.broadcast_to(g, (states.shape[0],) + g.shape)
    return g


def det_convolution(problem: SEEProblem, grid: TimeGrid, u: np.ndarray) -> np.ndarray:
    """Left-point quadrature of int_0^t exp((t-s)A) F(s, u(s)) ds.

    Runs the stable recursion c_{j+1} = exp(dt A)(c_j + F_j dt), which is the
    exact left-point sum thanks to the semigroup property.
    """
    sg = Semigroup(problem.generator, problem.dim)
    n, kp1, m = u.shape
    out = np.zeros_like(u)
    acc = np.zeros((n, m))
    for j in range(kp1 - 1):
        inc = np.asarray(problem.drift(grid.points[j], u[:, j, :]), dtype=float)
        acc = sg.apply(grid.widths[j], acc + inc * grid.widths[j])
        out[:, j + 1, :] = acc
    return out


def stoch_convolution(
    problem: SEEProblem, ens: MartEnsemble, u: np.ndarray
) -> np.ndarray:
    """Left-point sum of int_0^t exp((t-s)A) G(s, u(s)) dM_s.

    With a zero generator this reduces to plain accumulation of G sigma dW,
    bit-identical to the integral of the same integrand.
    """
    grid = ens.grid
    driven = ens.driven_increments()  # (n, K, dc)
    n, kp1, m = u.shape
    out = np.zeros_like(u)
    if problem.generator is None:
        inc = np.empty((n, kp1 - 1, m))
        for j in range(kp1 - 1):
            g = _eval_noise(problem, grid.points[j], u[:, j, :])
            inc[:, j, :] = np.einsum("nmc,nc->nm", g, driven[:, j, :])
        np.cumsum(inc, axis=1, out=out[:, 1:, :])
        return out
    sg = Semigroup(problem.generator, m)
    acc = np.zeros((n, m))
    for j in range(kp1 - 1):
        g = _eval_noise(problem, grid.points[j], u[:, j, :])
        acc = sg.apply(grid.widths[j], acc + np.einsum("nmc,nc->nm", g, driven[:, j, :]))
        out[:, j + 1, :] = acc
    return out


def fixed_point_map(
    problem: SEEProblem,
    ens: MartEnsemble,
    u: np.ndarray,
    i0: int = 0,
    i1: int | None = None,
    base: np.ndarray | None = None,
) -> np.ndarray:
    """One application of the variation-of-constants map on [t_{i0}, t_{i1}].

    ``base`` is the state at t_{i0} (defaults to the problem's initial
    states); grid points outside the window are returned untouched from
    ``u``.
    """
    grid = ens.grid
    driven = ens.driven_increments()
    n, kp1, m = u.shape
    if i1 is None:
        i1 = kp1 - 1
    if base is None:
        base = problem.initial_states(n)
    sg = Semigroup(problem.generator, m)
    out = u.copy()
    acc = base.copy()
    out[:, i0, :] = acc
    for j in range(i0, i1):
        t = grid.points[j]
        inc = np.asarray(problem.drift(t, u[:, j, :]), dtype=float) * grid.widths[j]
        g = _eval_noise(problem, t, u[:, j, :])
        inc = inc + np.einsum("nmc,nc->nm", g, driven[:, j, :])
        acc = sg.apply(grid.widths[j], acc + inc)
        out[:, j + 1, :] = acc
    return out


def vp_norm(
    u: np.ndarray,
    ens: MartEnsemble,
    a: float = 0.0,
    b: float | None = None,
    p: float = 2.0,
    i0: int | None = None,
    i1: int | None = None,
) -> float:
    """Moment norm: (E ||u||_{L2(a,b)}^p)^{1/p} + (E ||u||_{bracket}^p)^{1/p}.

    The second summand weighs the path kernel by the per-path bracket (the
    Euclidean-flavor kernel norm, exact per path).  Cell values are the path
    values at left endpoints.
    """
    grid = ens.grid
    if i0 is None:
        i0 = int(np.searchsorted(grid.points, a - 1e-12 * max(grid.horizon, 1.0)))
    if i1 is None:
        i1 = grid.n_cells if b is None else int(
            np.searchsorted(grid.points, b - 1e-12 * max(grid.horizon, 1.0))
        )
    sq = np.sum(u[:, i0:i1, :] ** 2, axis=2)  # (n, cells)
    l2 = np.sqrt(sq @ grid.widths[i0:i1])
    gam = np.sqrt(np.sum(sq * ens.bracket.increments[:, i0:i1], axis=1))
    return float(np.mean(l2**p) ** (1.0 / p) + np.mean(gam**p) ** (1.0 / p))


def rho_stopping_times(
    bracket: BracketPaths, horizon: float, n: int
) -> np.ndarray:
    """Per dyadic block, the first grid time its bracket mass exceeds T/2^n.

    The search stays inside the block: a block whose own mass never exceeds
    the cap reports inf.  Stopped at these times, each block carries at most
    T/2^n plus one cell of mass.
    """
    grid = bracket.grid
    prefix = bracket.prefix()
    n_blocks = 2**n
    cap = horizon / n_blocks
    snap = 1e-9 * max(horizon, 1.0)
    out = np.full((prefix.shape[0], n_blocks), np.inf)
    for k in range(n_blocks):
        start = k * cap
        j0 = int(np.searchsorted(grid.points, start - snap))
        if abs(grid.points[j0] - start) > snap:
            raise ValueError(f"block start {start} is not a grid point")
        j1 = int(np.searchsorted(grid.points, start + cap - snap))
        excess = prefix[:, j0 + 1 : j1 + 1] - prefix[:, [j0]] > cap
        hit = excess.any(axis=1)
        first = np.argmax(excess, axis=1) + j0 + 1
        out[hit, k] = grid.points[first[hit]]
    return out


@dataclass
class PicardDiagnostics:
    blocks: list
    distances: list = field(default_factory=list)  # per block: list of V distances
    contractions: list = field(default_factory=list)  # per block: measured ratio
    block_mass: list = field(default_factory=list)  # per block: worst path mass
    converged: bool = False
    suggestion: str = ""

    def worst_contraction(self) -> float:
        vals = [c for c in self.contractions if np.isfinite(c)]
        return max(vals) if vals else 0.0


class PicardError(RuntimeError):
    def __init__(self, message: str, diagnostics: PicardDiagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


def _default_blocks(problem: SEEProblem, ens: MartEnsemble) -> list[tuple[int, int]]:
    """Dyadic split until (L_F + L_G) max(sqrt(len), sqrt(mass)) < 0.45."""
    grid = ens.grid
    lip = problem.lip_drift + problem.lip_noise
    prefix = ens.bracket.prefix()
    for n in range(0, int(np.log2(max(grid.n_cells, 2))) + 1):
        pieces = np.array_split(np.arange(grid.n_cells), 2**n)
        bounds = [(int(p[0]), int(p[-1]) + 1) for p in pieces if p.size]
        crit = 0.0
        for i0, i1 in bounds:
            span = grid.points[i1] - grid.points[i0]
            mass = float((prefix[:, i1] - prefix[:, i0]).max())
            crit = max(crit, lip * max(np.sqrt(span), np.sqrt(mass)))
        if crit < 0.45 or 2**n >= grid.n_cells:
            return bounds
    return bounds


def _validate_constants(problem: SEEProblem, seed: int, n_pairs: int = 1000) -> None:
    rng = single_rng(seed, stream=17)
    m = problem.dim
    xs = rng.standard_normal((n_pairs, m)) * 3.0
    ys = rng.standard_normal((n_pairs, m)) * 3.0
    ts = rng.uniform(0.0, problem.horizon, n_pairs)
    for t in np.unique(np.round(ts[:5], 3)):
        fx = np.asarray(problem.drift(t, xs), dtype=float)
        fy = np.asarray(problem.drift(t, ys), dtype=float)
        dx = np.linalg.norm(xs - ys, axis=1)
        df = np.linalg.norm(fx - fy, axis=1)
        if np.any(df > problem.lip_drift * dx * (1 + LIPSCHITZ_SLACK) + LIPSCHITZ_SLACK):
            raise ValueError("declared drift Lipschitz constant is violated")
        growth = np.linalg.norm(fx, axis=1)
        if np.any(
            growth
            > problem.growth_drift * (1 + np.linalg.norm(xs, axis=1)) * (1 + LIPSCHITZ_SLACK)
            + LIPSCHITZ_SLACK
        ):
            raise ValueError("declared drift growth constant is violated")
        gx = _eval_noise(problem, t, xs)
        gy = _eval_noise(problem, t, ys)
        dg = np.sqrt(np.sum((gx - gy) ** 2, axis=(1, 2)))
        if np.any(dg > problem.lip_noise * dx * (1 + LIPSCHITZ_SLACK) + LIPSCHITZ_SLACK):
            raise ValueError("declared noise Lipschitz constant is violated")


def picard_solve(
    problem: SEEProblem,
    ens: MartEnsemble,
    p: float = 2.0,
    tol: float = 1e-8,
    max_iter: int = 60,
    blocks: list[tuple[int, int]] | None = None,
    validate: bool = True,
    initial: np.ndarray | None = None,
) -> tuple[np.ndarray, PicardDiagnostics]:
    """Fixed-point iteration of the mild map over a dyadic block schedule.

    Starting from the frozen continuation exp(tA) u0 (or ``initial``), each
    block iterates until the successive V-distance drops below ``tol``.  A
    block that fails to contract raises :class:`PicardError` carrying the
    measured contraction and the advice to halve the block length.
    """
    grid = ens.grid
    if validate:
        _validate_constants(problem, ens.seed)
    if blocks is None:
        blocks = _default_blocks(problem, ens)
    diag = PicardDiagnostics(blocks=list(blocks))

    n, m = ens.n_paths, problem.dim
    sg = Semigroup(problem.generator, m)
    base = problem.initial_states(n)
    if initial is None:
        # recursion form, so a drift- and noise-free problem is an exact
        # fixed point of the discrete map
        u = np.zeros((n, grid.n_cells + 1, m))
        u[:, 0, :] = base
        for j in range(grid.n_cells):
            u[:, j + 1, :] = sg.apply(grid.widths[j], u[:, j, :])
    else:
        u = initial.copy()
        u[:, 0, :] = base  # iterates may start anywhere; the anchor may not

    prefix = ens.bracket.prefix()
    for i0, i1 in blocks:
        diag.block_mass.append(float((prefix[:, i1] - prefix[:, i0]).max()))
        block_base = u[:, i0, :].copy()
        dists = []
        ratio = np.nan
        for it in range(max_iter):
            u_next = fixed_point_map(problem, ens, u, i0=i0, i1=i1, base=block_base)
            dist = vp_norm(u_next - u, ens, p=p, i0=i0, i1=i1)
            dists.append(dist)
            if len(dists) >= 2 and dists[-2] > 0:
                ratio = dists[-1] / dists[-2]
            u = u_next
            if dist < tol:
                break
        diag.distances.append(dists)
        diag.contractions.append(ratio)
        if dists[-1] >= tol:
            diag.suggestion = (
                "block did not contract below tol; halve the block length "
                f"(measured contraction {ratio:.3g})"
            )
            raise PicardError(diag.suggestion, diag)
    diag.converged = True
    return u, diag


@dataclass(frozen=True)
class ResidualStats:
    sup_gaps: np.ndarray  # per path

    @property
    def max(self) -> float:
        return float(self.sup_gaps.max())

    @property
    def mean(self) -> float:
        return float(self.sup_gaps.mean())


def mild_residual(u: np.ndarray, problem: SEEProblem, ens: MartEnsemble) -> ResidualStats:
    """Pathwise sup distance between u and its variation-of-constants image."""
    grid = ens.grid
    n = ens.n_paths
    sg = Semigroup(problem.generator, problem.dim)
    base = problem.initial_states(n)
    rhs = np.empty_like(u)
    rhs[:, 0, :] = base
    for j in range(grid.n_cells):
        rhs[:, j + 1, :] = sg.apply(grid.points[j + 1], base)
    rhs += det_convolution(problem, grid, u)
    rhs += stoch_convolution(problem, ens, u)
    rhs[:, 0, :] = base
    gaps = np.linalg.norm(u - rhs, axis=2).max(axis=1)
    return ResidualStats(sup_gaps=gaps)


def lipschitz_quotient(
    problem: SEEProblem,
    ens: MartEnsemble,
    u_a: np.ndarray,
    u_b: np.ndarray,
    p: float = 2.0,
    i0: int = 0,
    i1: int | None = None,
) -> float:
    """Measured V-norm quotient of the mild map between two probe inputs."""
    if i1 is None:
        i1 = ens.grid.n_cells
    base = problem.initial_states(ens.n_paths)
    fa = fixed_point_map(problem, ens, u_a, i0=i0, i1=i1, base=base)
    fb = fixed_point_map(problem, ens, u_b, i0=i0, i1=i1, base=base)
    num = vp_norm(fa - fb, ens, p=p, i0=i0, i1=i1)
    den = vp_norm(u_a - u_b, ens, p=p, i0=i0, i1=i1)
    return num / den if den > 0 else np.nan


@dataclass(frozen=True)
class LocalizationReport:
    stop_gaps: np.ndarray | None  # per path, sup over [0, tau]
    event_gaps: np.ndarray | None  # per agreeing path, sup over [0, T]

    def max_stop_gap(self) -> float:
        return float(self.stop_gaps.max()) if self.stop_gaps is not None else 0.0

    def max_event_gap(self) -> float:
        return float(self.event_gaps.max()) if self.event_gaps is not None else 0.0


def localization_consistency(
    problem: SEEProblem,
    ens: MartEnsemble,
    tau_idx: np.ndarray | None = None,
    u0_alt: np.ndarray | None = None,
    agree_mask: np.ndarray | None = None,
    tol: float = 1e-8,
    p: float = 2.0,
) -> LocalizationReport:
    """Stopped-driver and agreeing-initial-value consistency of the solver.

    With ``tau_idx``: solving against the driver frozen at tau agrees with
    the full solve pathwise on [0, tau].  With ``u0_alt``/``agree_mask``:
    solutions from initial values that coincide on the masked paths coincide
    there for all times.
    """
    u_full, _ = picard_solve(problem, ens, p=p, tol=tol, validate=False)
    stop_gaps = None
    event_gaps = None
    if tau_idx is not None:
        tau_idx = np.broadcast_to(np.asarray(tau_idx, dtype=int), (ens.n_paths,))
        stopped = stop_ensemble(ens, tau_idx)
        u_stop, _ = picard_solve(problem, stopped, p=p, tol=tol, validate=False)
        diffs = np.linalg.norm(u_full - u_stop, axis=2)  # (n, K+1)
        mask = np.arange(ens.grid.n_cells + 1)[None, :] <= tau_idx[:, None]
        stop_gaps = np.where(mask, diffs, 0.0).max(axis=1)
    if u0_alt is not None:
        if agree_mask is None:
            raise ValueError("u0_alt needs the mask of agreeing paths")
        alt = SEEProblem(
            generator=problem.generator,
            drift=problem.drift,
            lip_drift=problem.lip_drift,
            growth_drift=problem.growth_drift,
            noise_map=problem.noise_map,
            lip_noise=problem.lip_noise,
            u0=u0_alt,
            noise=problem.noise,
            horizon=problem.horizon,
            name=problem.name + "-alt",
        )
        u_alt, _ = picard_solve(alt, ens, p=p, tol=tol, validate=False)
        diffs = np.linalg.norm(u_full - u_alt, axis=2).max(axis=1)
        event_gaps = diffs[np.asarray(agree_mask, dtype=bool)]
    return LocalizationReport(stop_gaps=stop_gaps, event_gaps=event_gaps)


def _drift_zero(t, x):
    return np.zeros_like(x)


def _make_linear_drift(scale: float):
    def drift(t, x):
        return scale * x

    return drift


def _make_affine_drift(scale: float, offset: np.ndarray):
    offset = np.asarray(offset, dtype=float)

    def drift(t, x):
        return scale * x + offset

    return drift


DRIFT_REGISTRY = {
    "zero": lambda params, m: (_drift_zero, 0.0, 0.0),
    "linear": lambda params, m: (
        _make_linear_drift(params["scale"]),
        abs(params["scale"]),
        abs(params["scale"]),
    ),
    "affine": lambda params, m: (
        _make_affine_drift(params["scale"], params["offset"]),
        abs(params["scale"]),
        abs(params["scale"]) + float(np.linalg.norm(params["offset"])),
    ),
}


def _make_constant_noise(matrix: np.ndarray):
    matrix = np.asarray(matrix, dtype=float)

    def noise(t, x):
        return matrix

    return noise


def _make_state_scalar_noise(scale: float):
    def noise(t, x):
        return scale * x[:, :, None]

    return noise


def _make_state_diag_noise(scale: float):
    def noise(t, x):
        n, m = x.shape
        out = np.zeros((n, m, m))
        idx = np.arange(m)
        out[:, idx, idx] = scale * x
        return out

    return noise


NOISE_MAP_REGISTRY = {
    "zero": lambda params, m, dc: (_make_constant_noise(np.zeros((m, dc))), 0.0),
    "constant": lambda params, m, dc: (
        _make_constant_noise(params["matrix"]),
        0.0,
    ),
    "state_scalar": lambda params, m, dc: (
        _make_state_scalar_noise(params["scale"]),
        abs(params["scale"]),
    ),
    "state_diag": lambda params, m, dc: (
        _make_state_diag_noise(params["scale"]),
        abs(params["scale"]),
    ),
}


def problem_from_config(cfg: dict) -> tuple[SEEProblem, TimeGrid]:
    """Build a problem from a JSON-style dict (generator spectrum, registry
    nonlinearities, noise spec, horizon, grid)."""
    horizon = float(cfg["horizon"])
    grid = TimeGrid.uniform(horizon, int(cfg["grid"]))
    u0 = np.asarray(cfg["u0"], dtype=float)
    m = u0.shape[-1]

    gen_cfg = cfg.get("generator")
    if gen_cfg is None:
        generator = None
    elif "spectrum" in gen_cfg:
        generator = np.diag(np.asarray(gen_cfg["spectrum"], dtype=float))
    else:
        generator = np.asarray(gen_cfg["matrix"], dtype=float)

    noise_cfg = cfg["noise"]
    spec = NoiseSpec(
        d_cyl=int(noise_cfg["d_cyl"]),
        d_drive=int(noise_cfg["d_drive"]),
        sigma=np.asarray(noise_cfg["sigma"], dtype=float),
        q_drive=None
        if noise_cfg.get("q_drive") is None
        else np.asarray(noise_cfg["q_drive"], dtype=float),
    )

    drift_cfg = cfg.get("drift", {"name": "zero"})
    if drift_cfg["name"] not in DRIFT_REGISTRY:
        raise ValueError(f"unknown drift {drift_cfg['name']!r}")
    drift, lip_f, growth_f = DRIFT_REGISTRY[drift_cfg["name"]](drift_cfg, m)

    nm_cfg = cfg.get("noise_map", {"name": "zero"})
    if nm_cfg["name"] not in NOISE_MAP_REGISTRY:
        raise ValueError(f"unknown noise map {nm_cfg['name']!r}")
    noise_map, lip_g = NOISE_MAP_REGISTRY[nm_cfg["name"]](nm_cfg, m, spec.d_cyl)

    problem = SEEProblem(
        generator=generator,
        drift=drift,
        lip_drift=lip_f,
        growth_drift=growth_f,
        noise_map=noise_map,
        lip_noise=lip_g,
        u0=u0,
        noise=spec,
        horizon=horizon,
        name=cfg.get("name", ""),
    )
    return problem, grid
