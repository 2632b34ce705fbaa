"""Distance machinery.

Three layers: the closed-form Wasserstein distance between two elliptical
laws, the matching-based approximate distance between mixtures, and the
sliced semi-discrete objective (projected model density vs. the empirical
measure on one direction) together with its Kantorovich potential.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import DegenerateGridError, MismatchError, UndefinedSecondMomentError
from .families import EllipticalComponent
from .mixture import Dataset, MixtureModel, sample_mixture

K_EXACT = 8  # permutations are enumerated exactly up to this many components
ASSIGNMENT_CUTOFF = 2048  # largest sample count for exact discrete matching
SLICED_FALLBACK_PROJECTIONS = 512


def _sqrtm_spd(sigma: np.ndarray) -> np.ndarray:
    lam, q = np.linalg.eigh(sigma)
    return (q * np.sqrt(np.clip(lam, 0.0, None))) @ q.T


def bures_gap(sigma1: np.ndarray, sigma2: np.ndarray) -> float:
    """tr(S1 + S2 - 2 (S1^(1/2) S2 S1^(1/2))^(1/2)), clipped at zero."""
    root = _sqrtm_spd(sigma1)
    inner = root @ sigma2 @ root
    lam = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.T)), 0.0, None)
    gap = float(np.trace(sigma1) + np.trace(sigma2) - 2.0 * np.sum(np.sqrt(lam)))
    return max(gap, 0.0)


def w2_elliptical(
    c1: EllipticalComponent, c2: EllipticalComponent, unit_weight: bool = False
) -> float:
    """Squared Wasserstein distance between two same-family elliptical laws.

    The scatter term carries the E[R^2]/m weight; for families without a
    second moment the caller must opt into ``unit_weight``.
    """
    if c1.family != c2.family:
        raise MismatchError("components must share one family (and dimension)")
    if unit_weight:
        weight = 1.0
    else:
        mean_r2 = c1.family.mean_r2()
        if mean_r2 is None:
            raise UndefinedSecondMomentError(
                f"{c1.family.name} has no finite E[R^2]; pass unit_weight=True"
            )
        weight = mean_r2 / c1.family.m
    # Canonical operand order makes the value bitwise symmetric despite the
    # asymmetric Bures evaluation.
    if (c2.mu.tobytes() + c2.sigma.tobytes()) < (c1.mu.tobytes() + c1.sigma.tobytes()):
        c1, c2 = c2, c1
    delta = c1.mu - c2.mu
    return float(delta @ delta) + weight * bures_gap(c1.sigma, c2.sigma)


@dataclass(frozen=True)
class TransportPlan:
    """A bijective component matching with its objective decomposition."""

    permutation: np.ndarray  # component i of the first mixture -> permutation[i]
    cost: float  # full objective value at this matching
    probability_term: float  # the arccos summand

    def __post_init__(self):
        perm = np.asarray(self.permutation, dtype=int)
        if sorted(perm.tolist()) != list(range(perm.size)):
            raise MismatchError("not a permutation")
        object.__setattr__(self, "permutation", perm)


def _pairwise_w2(model1: MixtureModel, model2: MixtureModel, unit_weight: bool) -> np.ndarray:
    k = model1.k
    cost = np.empty((k, k))
    for i in range(k):
        ci = model1.component(i)
        for j in range(k):
            cost[i, j] = w2_elliptical(ci, model2.component(j), unit_weight=unit_weight)
    return cost


def _matching_objective(cost: np.ndarray, sq1: np.ndarray, sq2: np.ndarray, perm) -> tuple[float, float]:
    k = cost.shape[0]
    idx = np.arange(k)
    transport = float(cost[idx, perm].sum()) / k
    # arccos(sum_i sqrt(pi_1i pi_2sigma(i))) evaluated as the great-circle
    # angle 2 arcsin(|s1 - s2 o sigma| / 2); near-1 overlaps would lose all
    # precision inside arccos and the identity axiom asks for exact zero.
    gap = float(np.linalg.norm(sq1 - sq2[perm]))
    angle = 2.0 * float(np.arcsin(0.5 * gap))
    return transport + angle, angle


def _solve_matching(cost: np.ndarray, sq1: np.ndarray, sq2: np.ndarray) -> tuple[float, np.ndarray, float]:
    k = cost.shape[0]
    if k <= K_EXACT:
        best = (np.inf, None, 0.0)
        for perm in itertools.permutations(range(k)):
            perm = np.array(perm)
            value, angle = _matching_objective(cost, sq1, sq2, perm)
            if value < best[0]:
                best = (value, perm, angle)
        return best
    # Stage 1: assignment on the transport matrix alone; stage 2: pairwise
    # swaps on the full objective (the arccos term couples the matching).
    _, perm = linear_sum_assignment(cost)
    perm = np.asarray(perm)
    value, angle = _matching_objective(cost, sq1, sq2, perm)
    improved = True
    while improved:
        improved = False
        for i in range(k):
            for j in range(i + 1, k):
                cand = perm.copy()
                cand[i], cand[j] = cand[j], cand[i]
                cand_value, cand_angle = _matching_objective(cost, sq1, sq2, cand)
                if cand_value < value - 1e-15:
                    value, perm, angle = cand_value, cand, cand_angle
                    improved = True
    return value, perm, angle


def _model_key(model: MixtureModel) -> bytes:
    return (
        model.weights.tobytes()
        + model.mus.tobytes()
        + model.sigmas.tobytes()
        + repr(model.family).encode()
    )


def d_u(
    model1: MixtureModel, model2: MixtureModel, unit_weight: bool = False
) -> tuple[float, TransportPlan]:
    """Approximate mixture distance: best bijective matching of components.

    Minimizes (1/k) sum of matched component W2 values plus
    arccos(sum of matched sqrt(pi_i pi_j)).  Exact by enumeration for
    k <= 8, two-stage heuristic beyond.  Symmetric bitwise: the operand
    pair is ordered canonically before solving.
    """
    if model1.k != model2.k or model1.m != model2.m or model1.family != model2.family:
        raise MismatchError("mixtures must agree in k, m and family")
    swapped = _model_key(model2) < _model_key(model1)
    lo, hi = (model2, model1) if swapped else (model1, model2)
    cost = _pairwise_w2(lo, hi, unit_weight)
    sq1 = np.sqrt(lo.weights)
    sq2 = np.sqrt(hi.weights)
    sq1 /= np.linalg.norm(sq1)
    sq2 /= np.linalg.norm(sq2)
    value, perm, angle = _solve_matching(cost, sq1, sq2)
    if swapped:
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        perm = inverse
    return value, TransportPlan(perm, value, angle)


@dataclass(frozen=True)
class ProjectionContext:
    """One random direction: sorted projected data and the quadrature grid."""

    p: np.ndarray
    projected_samples: np.ndarray
    grid: np.ndarray
    grid_weights: np.ndarray

    def __post_init__(self):
        if abs(np.linalg.norm(self.p) - 1.0) > 1e-12:
            raise MismatchError("projection direction must be unit norm")
        if np.any(np.diff(self.projected_samples) < 0.0):
            raise MismatchError("projected samples must be sorted")

    @property
    def quantile_levels(self) -> np.ndarray:
        n = self.projected_samples.size
        return (np.arange(n) + 0.5) / n

    @cached_property
    def _quantile_moments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        # Prefix integrals of the empirical quantile function and its square
        # at its breakpoints {0, (j-1/2)/n, 1}; with these, integrals of
        # (c - Q(q))^2 over any quantile slab are closed forms.
        levels = np.concatenate([[0.0], self.quantile_levels, [1.0]])
        values = np.concatenate(
            [[self.projected_samples[0]], self.projected_samples, [self.projected_samples[-1]]]
        )
        dq = np.diff(levels)
        left, right = values[:-1], values[1:]
        s1 = np.concatenate([[0.0], np.cumsum(dq * 0.5 * (left + right))])
        s2 = np.concatenate(
            [[0.0], np.cumsum(dq * (left * left + left * right + right * right) / 3.0)]
        )
        return levels, s1, s2

    def quantile_prefixes(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Q(q), S1(q), S2(q)) with S1 = int_0^q Q and S2 = int_0^q Q^2."""
        levels, s1, s2 = self._quantile_moments
        q = np.clip(q, 0.0, 1.0)
        idx = np.clip(np.searchsorted(levels, q, side="right") - 1, 0, levels.size - 2)
        q0 = levels[idx]
        values = np.concatenate(
            [[self.projected_samples[0]], self.projected_samples, [self.projected_samples[-1]]]
        )
        v0, v1 = values[idx], values[idx + 1]
        width = levels[idx + 1] - q0
        frac = np.where(width > 0.0, (q - q0) / np.where(width > 0.0, width, 1.0), 0.0)
        qv = v0 + (v1 - v0) * frac
        part = q - q0
        s1_q = s1[idx] + part * 0.5 * (v0 + qv)
        s2_q = s2[idx] + part * (v0 * v0 + v0 * qv + qv * qv) / 3.0
        return qv, s1_q, s2_q


def make_projection_context(
    p: np.ndarray, samples: np.ndarray, n_grid: int = 1024, margin_sigmas: float = 4.0
) -> ProjectionContext:
    """Project the data along p and lay a uniform trapezoid grid over it."""
    p = np.asarray(p, dtype=float)
    projected = np.sort(np.asarray(samples, dtype=float) @ p)
    spread = float(projected.std())
    if spread <= 0.0:
        spread = max(1.0, abs(float(projected[0])))
    lo = projected[0] - margin_sigmas * spread
    hi = projected[-1] + margin_sigmas * spread
    grid = np.linspace(lo, hi, n_grid)
    step = grid[1] - grid[0]
    weights = np.full(n_grid, step)
    weights[0] = weights[-1] = 0.5 * step
    return ProjectionContext(p, projected, grid, weights)


@dataclass(frozen=True)
class ProjectedMixture:
    """Per-component pieces of the projected model density on the grid.

    Node values are exact cell averages: the weight-free kernel
    (p' Sigma_i p)^(-1/2) c_m g(t_i) is integrated in closed form over
    each trapezoid cell through the family's cached primitive, so thin
    projected components (eccentric scatters) keep their mass even when
    narrower than the grid spacing.  Edge evaluations of the kernel and
    of its scale flux carry the exact cell integrals of the location and
    scatter derivatives.
    """

    proj_var: np.ndarray  # (k,)  p' Sigma_i p
    kernels: np.ndarray  # (k, G)  cell-averaged weight-free kernel
    edge_kernel: np.ndarray  # (k, G+1)  kernel at cell edges
    edge_scale_flux: np.ndarray  # (k, G+1)  c_m g(u^2) u / (2 v) at cell edges
    rho: np.ndarray  # (G,)
    mass: float

    @property
    def rho_hat(self) -> np.ndarray:
        return self.rho / self.mass


def cell_edges(grid: np.ndarray) -> np.ndarray:
    """Midpoint cell edges whose widths equal the trapezoid weights."""
    return np.concatenate([[grid[0]], 0.5 * (grid[1:] + grid[:-1]), [grid[-1]]])


def project_components(family, weights, mus, sigmas, ctx: ProjectionContext) -> ProjectedMixture:
    """Projected mixture pieces from raw parameter arrays.

    Weights need not sum to one here; renormalization by the grid mass is
    part of the objective, and finite-difference probes step off the
    simplex.
    """
    weights = np.asarray(weights, dtype=float)
    mus = np.asarray(mus, dtype=float)
    sigmas = np.asarray(sigmas, dtype=float)
    proj_var = np.einsum("i,kij,j->k", ctx.p, sigmas, ctx.p)
    if np.any(proj_var <= 0.0):
        raise DegenerateGridError("projected variance must be positive")
    root_v = np.sqrt(proj_var)
    edges = cell_edges(ctx.grid)
    edge_u = (edges[None, :] - (mus @ ctx.p)[:, None]) / root_v[:, None]
    # cell masses are mathematically nonnegative; the interpolated primitive
    # can wiggle by an ulp in saturated tails
    kernels = np.maximum(np.diff(family.gen_primitive(edge_u), axis=1), 0.0) / ctx.grid_weights[None, :]
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        gen_at_edges = family.gen_primitive_slope(edge_u)
        edge_kernel = gen_at_edges / root_v[:, None]
        edge_scale_flux = gen_at_edges * edge_u / (2.0 * proj_var[:, None])
    # Generator singularities (e.g. small-a Kotz at t=0) are dropped nodes.
    edge_kernel = np.where(np.isfinite(edge_kernel), edge_kernel, 0.0)
    edge_scale_flux = np.where(np.isfinite(edge_scale_flux), edge_scale_flux, 0.0)
    rho = weights @ kernels
    mass = float(ctx.grid_weights @ rho)
    if not np.isfinite(mass) or mass <= 1e-300:
        raise DegenerateGridError("projected model density has no mass on the grid")
    return ProjectedMixture(proj_var, kernels, edge_kernel, edge_scale_flux, rho, mass)


def project_model(model: MixtureModel, ctx: ProjectionContext) -> ProjectedMixture:
    """Projected mixture density along ctx.p, per the manifold's projected form.

    The m-dimensional generator and normalizer are used verbatim, so the
    raw density carries a family-dependent constant mass; every consumer
    renormalizes by the trapezoid mass.
    """
    return project_components(model.family, model.weights, model.mus, model.sigmas, ctx)


def projected_w2(ctx: ProjectionContext, projected: ProjectedMixture) -> float:
    """Exact semi-discrete cost of the cell-discretized projected model.

    Each cell's mass occupies a slab of quantile levels; its transport cost
    to the empirical quantile function is integral (y_cell - Q(q))^2 dq in
    closed form.  Unlike pointwise trapezoid evaluation this keeps the
    within-cell spread cost, so components thinner than a grid cell cannot
    shed their transport cost by collapsing further.
    """
    masses = (projected.rho * ctx.grid_weights) / projected.mass
    bounds = np.empty(masses.size + 1)
    bounds[0] = 0.0
    np.cumsum(masses, out=bounds[1:])
    bounds[-1] = 1.0
    _, s1, s2 = ctx.quantile_prefixes(bounds)
    d_s1 = np.diff(s1)
    d_s2 = np.diff(s2)
    y = ctx.grid
    return float(np.sum(y * y * masses - 2.0 * y * d_s1 + d_s2))


def _normalize_density(ctx: ProjectionContext, density: np.ndarray) -> np.ndarray:
    density = np.asarray(density, dtype=float)
    if density.shape != ctx.grid.shape or np.any(density < 0.0):
        raise DegenerateGridError("density must be nonnegative on the grid")
    mass = float(ctx.grid_weights @ density)
    if not np.isfinite(mass) or mass <= 1e-300:
        raise DegenerateGridError("density mass is degenerate")
    return density / mass


def _cumtrapz(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    out = np.empty_like(values)
    out[0] = 0.0
    np.cumsum((values[1:] + values[:-1]) * 0.5 * np.diff(grid), out=out[1:])
    return out


@dataclass(frozen=True)
class SemiDiscreteState:
    """Solved 1-D transport pieces shared by the cost, potential, gradients."""

    rho_hat: np.ndarray
    cdf: np.ndarray
    tmap: np.ndarray
    quantile_slope: np.ndarray  # dQ_emp/dq at cdf, zero in the clamped tails


def semidiscrete_state(ctx: ProjectionContext, density: np.ndarray) -> SemiDiscreteState:
    rho_hat = _normalize_density(ctx, density)
    cdf = _cumtrapz(rho_hat, ctx.grid)
    cdf /= cdf[-1]
    levels = ctx.quantile_levels
    samples = ctx.projected_samples
    tmap = np.interp(cdf, levels, samples)
    slopes = np.diff(samples) / np.diff(levels)
    idx = np.clip(np.searchsorted(levels, cdf) - 1, 0, slopes.size - 1)
    qslope = np.where((cdf <= levels[0]) | (cdf >= levels[-1]), 0.0, slopes[idx])
    return SemiDiscreteState(rho_hat, cdf, tmap, qslope)


def transport_map(ctx: ProjectionContext, density: np.ndarray) -> np.ndarray:
    """Monotone map T on the grid sending the model law to the empirical one.

    T = Q_emp o F_model with F the renormalized cumulative trapezoid of the
    density and Q_emp the piecewise-linear empirical quantile function
    through the midpoint levels (j - 1/2)/n.
    """
    return semidiscrete_state(ctx, density).tmap


def w2_1d_semidiscrete(ctx: ProjectionContext, density: np.ndarray) -> float:
    """integral |y - T(y)|^2 rho_hat(y) dy by the trapezoid rule."""
    rho_hat = _normalize_density(ctx, density)
    tmap = transport_map(ctx, density)
    return float(ctx.grid_weights @ ((ctx.grid - tmap) ** 2 * rho_hat))


def kantorovich_potential(ctx: ProjectionContext, density: np.ndarray) -> np.ndarray:
    """Potential with phi' = 2 (y - T(y)), pinned to zero at the left edge."""
    tmap = transport_map(ctx, density)
    return _cumtrapz(2.0 * (ctx.grid - tmap), ctx.grid)


def sliced_cost(
    model: MixtureModel,
    data,
    projections,
    n_grid: int = 1024,
    margin_sigmas: float = 4.0,
) -> float:
    """Average semi-discrete 1-D cost over the given unit projections."""
    samples = data.samples if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    total = 0.0
    count = 0
    for p in projections:
        ctx = make_projection_context(p, samples, n_grid=n_grid, margin_sigmas=margin_sigmas)
        total += projected_w2(ctx, project_model(model, ctx))
        count += 1
    if count == 0:
        raise MismatchError("need at least one projection")
    return total / count


def random_projections(m: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """count unit vectors in R^m (deterministic given the generator state)."""
    p = rng.standard_normal((count, m))
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def _materialize(side, rng: np.random.Generator, n: int) -> np.ndarray:
    if isinstance(side, MixtureModel):
        return sample_mixture(side, rng, n).samples
    samples = side.samples if isinstance(side, Dataset) else np.asarray(side, dtype=float)
    if samples.shape[0] > n:
        idx = np.sort(rng.choice(samples.shape[0], size=n, replace=False))
        return samples[idx]
    return samples


def w2_method(n: int, m: int) -> str:
    """Which estimator mc_mixture_w2 uses for a given size and dimension."""
    if m == 1:
        return "sorted"
    return "assignment" if n <= ASSIGNMENT_CUTOFF else "sliced"


def mc_mixture_w2(side1, side2, rng: np.random.Generator, n: int = 1024) -> float:
    """Empirical squared Wasserstein distance between two sample clouds.

    Each side is a MixtureModel (sampled at size n) or sample data
    (subsampled to size n).  1-D uses sorted matching; m > 1 solves the
    assignment problem exactly up to the cutoff, beyond which the sliced
    approximation with 512 projections is used (see ``w2_method``).
    """
    sides = [side1, side2]
    counts = [
        n if isinstance(s, MixtureModel) else min(n, np.asarray(getattr(s, "samples", s)).shape[0])
        for s in sides
    ]
    size = min(counts)
    if size < 2:
        raise MismatchError("need at least two samples per side")
    x = _materialize(side1, rng, size)
    y = _materialize(side2, rng, size)
    if x.shape != y.shape:
        raise MismatchError("sample clouds must have equal shape")
    m = x.shape[1]
    method = w2_method(size, m)
    if method == "sorted":
        diff = np.sort(x[:, 0]) - np.sort(y[:, 0])
        return float(np.mean(diff * diff))
    if method == "assignment":
        costs = cdist(x, y, metric="sqeuclidean")
        rows, cols = linear_sum_assignment(costs)
        return float(costs[rows, cols].mean())
    total = 0.0
    for p in random_projections(m, SLICED_FALLBACK_PROJECTIONS, rng):
        diff = np.sort(x @ p) - np.sort(y @ p)
        total += float(np.mean(diff * diff))
    return total / SLICED_FALLBACK_PROJECTIONS
