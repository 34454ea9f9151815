"""Weighted least-squares objective in the differentiated unknowns.

The inversion works in the time derivatives u = dv/dt and m = dp/dt.
Integrating them back from the known midpoint slices (a signed running
integral anchored at t = T/2) turns the coupled system into residual
operators acting on (u, m) alone:

- the value residual, in which the unknown coefficient is eliminated
  through the midpoint identity k = f * u(., T/2) + F, with f the
  reciprocal of the interaction integral of the midpoint density and F
  assembled from the midpoint data;
- the time-differentiated density residual, with its transport fluxes
  rebuilt from the running integrals.

Each residual is squared against an exponential weight that peaks at the
observation corner (x1 = b, t = T/2); the value residual carries an
extra lam^(3/2) factor balancing the running-integral bound.  A small H2
penalty on (u, m) makes the functional strictly convex on the affine
subspace of iterates sharing the boundary data.

Every operator involved is a dense matrix applied along one axis, so each
term of the gradient is an exact transpose scatter.  ``gradient`` is the
derivative of ``evaluate`` to rounding, not an approximation; the tests
hold it against central differences.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .carleman import CarlemanParams
from .forward import DerivativeBundle
from .grid import (
    SPACE_TIME,
    SPATIAL,
    Field,
    SpaceTimeGrid,
    apply_along_axis,
    first_diff_matrix,
    h2_norm_sq,
    h2_norm_sq_gradient,
    second_diff_matrix,
    volterra_matrix,
)
from .kernels import InteractionOperator, Kernel, denominator_field


@dataclass
class Iterate:
    """One point of the optimization: the pair (u, m) on the full grid."""

    u: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if self.u.shape != self.m.shape:
            raise ValueError(f"u and m must share a shape, got {self.u.shape} vs {self.m.shape}")

    def copy(self) -> "Iterate":
        return Iterate(self.u.copy(), self.m.copy())


def dot(x: Iterate, y: Iterate) -> float:
    """Plain node inner product pairing gradients with displacements."""
    return float(np.sum(x.u * y.u) + np.sum(x.m * y.m))


@dataclass
class ObjectiveParts:
    """Additive pieces of one objective evaluation."""

    first: float
    second: float
    smoothness: float

    @property
    def total(self) -> float:
        return self.first + self.second + self.smoothness


class ObjectiveContext:
    """Data, weights and discrete operators frozen for one inversion run.

    ``bundle`` carries the observation derivatives (stencil or spline
    route), ``cost``/``cost_rate`` the local cost s and its time
    derivative on the same grid.  ``residual_scale`` multiplies both
    residual sums; zero isolates the H2 penalty, which the solver tests
    use as an exactly solvable quadratic.
    """

    def __init__(
        self,
        grid: SpaceTimeGrid,
        kernel: Kernel,
        params: CarlemanParams,
        beta: float,
        bundle: DerivativeBundle,
        cost: np.ndarray,
        cost_rate: np.ndarray,
        mobility: Optional[np.ndarray] = None,
        residual_scale: float = 1.0,
    ) -> None:
        if params.b != grid.b or params.horizon != grid.horizon:
            raise ValueError(
                f"weight geometry (b={params.b}, horizon={params.horizon}) does not "
                f"match the grid (b={grid.b}, horizon={grid.horizon})"
            )
        if beta < 0:
            raise ValueError(f"beta must be nonnegative, got {beta}")
        if residual_scale < 0:
            raise ValueError(f"residual_scale must be nonnegative, got {residual_scale}")
        shape = grid.spacetime_shape()
        cost = np.asarray(cost, dtype=float)
        cost_rate = np.asarray(cost_rate, dtype=float)
        if cost.shape != shape or cost_rate.shape != shape:
            raise ValueError("cost and cost_rate must live on the inversion grid")
        if mobility is None:
            mobility = np.ones(grid.spatial_shape())
        else:
            mobility = np.asarray(mobility, dtype=float)
            if mobility.shape != grid.spatial_shape() or mobility.min() <= 0:
                raise ValueError("mobility must be strictly positive on the spatial grid")

        self.grid = grid
        self.params = params
        self.beta = float(beta)
        self.residual_scale = float(residual_scale)
        self.bundle = bundle
        self.cost = cost
        self.cost_rate = cost_rate
        self.mobility = mobility
        self.operator = InteractionOperator(grid, kernel)

        self.v0_x1 = np.asarray(bundle.v0_x1, dtype=float)
        self.v0_x2 = np.asarray(bundle.v0_x2, dtype=float)
        self.p0 = np.asarray(bundle.p0, dtype=float)
        for name, arr in (("v0_x1", self.v0_x1), ("v0_x2", self.v0_x2), ("p0", self.p0)):
            if arr.shape != grid.spatial_shape():
                raise ValueError(f"bundle field {name} must be spatial, got {arr.shape}")

        # coefficient elimination: k = f * u(., T/2) + F
        den = denominator_field(kernel, Field(grid, SPATIAL, self.p0))
        self.denominator = den.values
        self.f = 1.0 / den.values
        s_mid = cost[:, :, grid.mid_index]
        self.F = self.f * (
            np.asarray(bundle.v0_lap, dtype=float)
            - 0.5 * mobility * (self.v0_x1**2 + self.v0_x2**2)
            - s_mid * self.p0
        )

        # residual weights: balanced exponential times the cell volume,
        # lam^(3/2) on the first residual only
        log_w = params.balanced_log_weight(grid.x1[:, None], grid.t[None, :])
        core = np.exp(log_w)[:, None, :] * grid.cell_volume
        self.weight_first = params.lam**1.5 * core
        self.weight_second = core

        self._d1 = (
            first_diff_matrix(grid.n1, grid.h1),
            first_diff_matrix(grid.n2, grid.h2),
            first_diff_matrix(grid.nt, grid.ht),
        )
        self._d2 = (
            second_diff_matrix(grid.n1, grid.h1),
            second_diff_matrix(grid.n2, grid.h2),
            second_diff_matrix(grid.nt, grid.ht),
        )
        self._volt = volterra_matrix(grid.nt, grid.ht, grid.mid_index)

    def _check(self, it: Iterate) -> None:
        if it.u.shape != self.grid.spacetime_shape():
            raise ValueError(
                f"iterate shape {it.u.shape} does not match the grid "
                f"{self.grid.spacetime_shape()}"
            )


@dataclass
class _Parts:
    """Intermediates shared between the residuals and the gradient."""

    ux1: np.ndarray
    ux2: np.ndarray
    vx1: np.ndarray
    vx2: np.ndarray
    ptil: np.ndarray
    ksub: np.ndarray
    inter_m: np.ndarray
    first: np.ndarray
    second: np.ndarray


def _forward_parts(ctx: ObjectiveContext, it: Iterate) -> _Parts:
    ctx._check(it)
    g = ctx.grid
    u, m = it.u, it.m
    r = ctx.mobility[:, :, None]
    dx1, dx2, dt = ctx._d1
    dxx1, dxx2, _ = ctx._d2

    ux1 = apply_along_axis(dx1, u, 0)
    ux2 = apply_along_axis(dx2, u, 1)
    vx1 = apply_along_axis(ctx._volt, ux1, 2) + ctx.v0_x1[:, :, None]
    vx2 = apply_along_axis(ctx._volt, ux2, 2) + ctx.v0_x2[:, :, None]
    ptil = apply_along_axis(ctx._volt, m, 2) + ctx.p0[:, :, None]

    ksub = ctx.f * u[:, :, g.mid_index] + ctx.F
    inter_m = ctx.operator.apply(m)
    first = (
        apply_along_axis(dt, u, 2)
        + apply_along_axis(dxx1, u, 0)
        + apply_along_axis(dxx2, u, 1)
        - r * (ux1 * vx1 + ux2 * vx2)
        - ksub[:, :, None] * inter_m
        - ctx.cost * m
        - ctx.cost_rate * ptil
    )

    flux1 = r * (m * vx1 + ptil * ux1)
    flux2 = r * (m * vx2 + ptil * ux2)
    second = (
        apply_along_axis(dt, m, 2)
        - apply_along_axis(dxx1, m, 0)
        - apply_along_axis(dxx2, m, 1)
        - apply_along_axis(dx1, flux1, 0)
        - apply_along_axis(dx2, flux2, 1)
    )
    return _Parts(ux1, ux2, vx1, vx2, ptil, ksub, inter_m, first, second)


def residuals(ctx: ObjectiveContext, it: Iterate) -> Tuple[np.ndarray, np.ndarray]:
    """The two pointwise residual fields at one iterate."""
    p = _forward_parts(ctx, it)
    return p.first, p.second


def breakdown(ctx: ObjectiveContext, it: Iterate) -> ObjectiveParts:
    """Objective value split into its additive pieces."""
    p = _forward_parts(ctx, it)
    first = ctx.residual_scale * float(np.sum(ctx.weight_first * p.first**2))
    second = ctx.residual_scale * float(np.sum(ctx.weight_second * p.second**2))
    g = ctx.grid
    smooth = ctx.beta * (
        h2_norm_sq(Field(g, SPACE_TIME, it.u)) + h2_norm_sq(Field(g, SPACE_TIME, it.m))
    )
    return ObjectiveParts(first=first, second=second, smoothness=smooth)


def evaluate(ctx: ObjectiveContext, it: Iterate) -> float:
    return breakdown(ctx, it).total


def gradient(ctx: ObjectiveContext, it: Iterate) -> Iterate:
    """Exact gradient of ``evaluate``: every term is a transpose scatter."""
    g = ctx.grid
    p = _forward_parts(ctx, it)
    r = ctx.mobility[:, :, None]
    dx1, dx2, dt = ctx._d1
    dxx1, dxx2, _ = ctx._d2
    voltT = ctx._volt.T

    r1 = (2.0 * ctx.residual_scale) * ctx.weight_first * p.first
    r2 = (2.0 * ctx.residual_scale) * ctx.weight_second * p.second

    def ax0(mat, arr):
        return apply_along_axis(mat, arr, 0)

    def ax1(mat, arr):
        return apply_along_axis(mat, arr, 1)

    def axt(mat, arr):
        return apply_along_axis(mat, arr, 2)

    # first residual, u slots
    gu = axt(dt.T, r1) + ax0(dxx1.T, r1) + ax1(dxx2.T, r1)
    gu -= ax0(dx1.T, r * p.vx1 * r1) + ax1(dx2.T, r * p.vx2 * r1)
    gu -= ax0(dx1.T, axt(voltT, r * p.ux1 * r1)) + ax1(dx2.T, axt(voltT, r * p.ux2 * r1))
    gu[:, :, g.mid_index] -= ctx.f * np.sum(r1 * p.inter_m, axis=2)

    # first residual, m slots
    gm = -ctx.operator.apply_transpose(p.ksub[:, :, None] * r1)
    gm -= ctx.cost * r1
    gm -= axt(voltT, ctx.cost_rate * r1)

    # second residual; s1/s2 are the flux adjoints
    s1 = ax0(dx1.T, r2)
    s2 = ax1(dx2.T, r2)
    gm += axt(dt.T, r2) - ax0(dxx1.T, r2) - ax1(dxx2.T, r2)
    gm -= r * (p.vx1 * s1 + p.vx2 * s2)
    gm -= axt(voltT, r * (p.ux1 * s1 + p.ux2 * s2))
    gu -= ax0(dx1.T, axt(voltT, r * it.m * s1)) + ax1(dx2.T, axt(voltT, r * it.m * s2))
    gu -= ax0(dx1.T, r * p.ptil * s1) + ax1(dx2.T, r * p.ptil * s2)

    gu += ctx.beta * h2_norm_sq_gradient(Field(g, SPACE_TIME, it.u)).values
    gm += ctx.beta * h2_norm_sq_gradient(Field(g, SPACE_TIME, it.m)).values
    return Iterate(gu, gm)


def curvature_diagonal(ctx: ObjectiveContext) -> Iterate:
    """Per-node curvature estimate of ``evaluate``, for step scaling.

    Diagonal of the Gauss-Newton Hessian restricted to the stiff linear
    terms: the time derivative and Laplacian inside each residual with
    their weights, plus the full smoothness penalty.  The advection and
    coupling terms are dropped; the estimate only shapes descent
    directions and monotonicity comes from the line search, so it need
    not be exact.  Iterate-independent, so compute it once per solve.

    The carried Carleman weight spans many orders of magnitude across the
    slab, which makes the raw gradient direction useless in the weakly
    weighted region; dividing by this diagonal restores a uniform
    per-node step scale.
    """
    g = ctx.grid
    n1, n2, nt = g.spacetime_shape()
    dx1, dx2, dt = ctx._d1
    dxx1, dxx2, _ = ctx._d2

    def residual_part(weight: np.ndarray) -> np.ndarray:
        w = weight[:, 0, :]
        along_t = w @ (dt**2)
        along_x1 = (dxx1**2).T @ w
        per_x2 = np.sum(dxx2**2, axis=0)
        out = (
            along_t[:, None, :]
            + along_x1[:, None, :]
            + w[:, None, :] * per_x2[None, :, None]
        )
        return 2.0 * ctx.residual_scale * out

    smooth = np.ones((n1, n2, nt))
    d1_sq = [np.sum(m**2, axis=0) for m in (dx1, dx2, dt)]
    d2_sq = [np.sum(m**2, axis=0) for m in (dxx1, dxx2, ctx._d2[2])]
    for ax in range(3):
        shape = [1, 1, 1]
        shape[ax] = -1
        smooth = smooth + d1_sq[ax].reshape(shape) + d2_sq[ax].reshape(shape)
    for ax_a, ax_b in ((0, 1), (0, 2), (1, 2)):
        shape_a = [1, 1, 1]
        shape_a[ax_a] = -1
        shape_b = [1, 1, 1]
        shape_b[ax_b] = -1
        smooth = smooth + d1_sq[ax_a].reshape(shape_a) * d1_sq[ax_b].reshape(shape_b)
    smooth *= 2.0 * ctx.beta * g.node_weight

    return Iterate(
        residual_part(ctx.weight_first) + smooth,
        residual_part(ctx.weight_second) + smooth,
    )


def recover_coefficient(ctx: ObjectiveContext, it: Iterate) -> np.ndarray:
    """The coefficient a converged iterate implies: f * u(., T/2) + F."""
    ctx._check(it)
    return ctx.f * it.u[:, :, ctx.grid.mid_index] + ctx.F


def convexity_gap(ctx: ObjectiveContext, first: Iterate, second: Iterate) -> Tuple[float, float]:
    """Bregman gap J(second) - J(first) - <grad J(first), second - first>.

    Returns the gap together with the squared H2 norm of the difference.
    For iterates sharing the boundary data the gap dominates
    (beta / 2) * ||difference||_H2^2; with a weight strength large enough
    the residual terms only help.
    """
    diff = Iterate(second.u - first.u, second.m - first.m)
    gap = evaluate(ctx, second) - evaluate(ctx, first) - dot(gradient(ctx, first), diff)
    g = ctx.grid
    h2 = h2_norm_sq(Field(g, SPACE_TIME, diff.u)) + h2_norm_sq(Field(g, SPACE_TIME, diff.m))
    return float(gap), float(h2)
