import numpy as np
import pytest

from mfgcoef.forward import DerivativeBundle
from mfgcoef.grid import GAMMA_TRACE, Field, SpaceTimeGrid
from mfgcoef.inverse import (
    OUTFLOW_CLOSURES,
    ReconstructionResult,
    SolverConfig,
    StallError,
    descend,
    free_node_mask,
    initial_guess,
    invert,
    project_data_constraints,
    reduce_gradient,
)
from mfgcoef.objective import Iterate, dot, evaluate, gradient

from test_objective import grid, make_context, random_iterate


def hand_bundle(g, x1b_u=0.0, neumann_u=0.0):
    """Minimal bundle with constant data rates, for projection arithmetic."""
    zeros_x1 = np.zeros((g.n2, g.nt))
    zeros_x2 = np.zeros((g.n1, g.nt))
    trace_u = Field.from_faces(g, zeros_x1, np.full((g.n2, g.nt), x1b_u), zeros_x2, zeros_x2)
    trace_zero = Field.from_faces(g, zeros_x1, zeros_x1, zeros_x2, zeros_x2)
    gamma_u = Field(g, GAMMA_TRACE, np.full((g.n2, g.nt), neumann_u))
    gamma_zero = Field(g, GAMMA_TRACE, np.zeros((g.n2, g.nt)))
    return DerivativeBundle(
        v0_x1=np.zeros(g.spatial_shape()),
        v0_x2=np.zeros(g.spatial_shape()),
        v0_lap=np.zeros(g.spatial_shape()),
        p0=np.ones(g.spatial_shape()),
        dt_g01=trace_u,
        dt_g02=trace_zero,
        dt_g11=gamma_u,
        dt_g12=gamma_zero,
    )


def test_projection_scatters_data_and_is_idempotent():
    g = grid(9, 8, 5)
    ctx = make_context(g)
    rng = np.random.default_rng(0)
    z = random_iterate(g, rng)
    proj = project_data_constraints(g, ctx.bundle, z)
    b = ctx.bundle
    # the tied layer owns its whole row, so the x2 faces hold data elsewhere
    keep = np.arange(g.n1) != g.n1 - 2
    assert np.array_equal(proj.u[keep, 0, :], b.dt_g01.face("x2lo")[keep])
    assert np.array_equal(proj.u[0, 1:-1, :], b.dt_g01.face("x1a")[1:-1])
    assert np.array_equal(proj.u[-1, :, :], b.dt_g01.face("x1b"))
    assert np.array_equal(proj.m[-1, :, :], b.dt_g02.face("x1b"))
    # corners belong to the x1 faces
    assert proj.u[0, 0, 2] == b.dt_g01.face("x1a")[0, 2]
    # tied layer follows the default closure from the layer below
    expected = 0.25 * (
        3.0 * b.dt_g01.face("x1b") + proj.u[-3, :, :] - 2.0 * g.h1 * b.dt_g11.values
    )
    assert np.allclose(proj.u[-2, :, :], expected, atol=1e-14)
    again = project_data_constraints(g, ctx.bundle, proj)
    assert np.array_equal(again.u, proj.u)
    assert np.array_equal(again.m, proj.m)
    # interior nodes pass through untouched
    assert np.array_equal(proj.u[1:-3, 1:-1, :], z.u[1:-3, 1:-1, :])
    with pytest.raises(ValueError, match="closure"):
        project_data_constraints(g, ctx.bundle, z, closure="midpoint")


def test_outflow_closure_worked_values():
    # h = 1/20, Dirichlet rate 1, Neumann rate 0, layer below at 0
    g = grid(21, 6, 5)
    bundle = hand_bundle(g, x1b_u=1.0, neumann_u=0.0)
    z = Iterate(np.zeros(g.spacetime_shape()), np.zeros(g.spacetime_shape()))
    ref = project_data_constraints(g, bundle, z, closure="dirichlet_scaled")
    assert np.allclose(ref.u[-2, :, :], -0.025, atol=1e-15)
    assert np.allclose(ref.u[-1, :, :], 1.0, atol=1e-15)
    std = project_data_constraints(g, bundle, z, closure="neumann_scaled")
    assert np.allclose(std.u[-2, :, :], 0.75, atol=1e-15)


def test_reduced_gradient_is_the_constrained_derivative():
    g = grid(9, 8, 5)
    ctx = make_context(g)
    rng = np.random.default_rng(4)
    z = project_data_constraints(g, ctx.bundle, random_iterate(g, rng))
    red = reduce_gradient(g, gradient(ctx, z))
    eps = 1e-5

    def constrained_diff(node):
        e = np.zeros(g.spacetime_shape())
        e[node] = 1.0
        plus = project_data_constraints(g, ctx.bundle, Iterate(z.u + eps * e, z.m))
        minus = project_data_constraints(g, ctx.bundle, Iterate(z.u - eps * e, z.m))
        return (evaluate(ctx, plus) - evaluate(ctx, minus)) / (2.0 * eps)

    interior = (3, 4, 2)
    assert constrained_diff(interior) == pytest.approx(red.u[interior], rel=1e-4)
    # the layer feeding the closure carries the extra 1/4 chain term
    below = (g.n1 - 3, 4, 2)
    assert constrained_diff(below) == pytest.approx(red.u[below], rel=1e-4)
    for node in ((g.n1 - 2, 4, 2), (0, 4, 2), (3, 0, 2), (g.n1 - 1, 4, 2)):
        assert constrained_diff(node) == pytest.approx(0.0, abs=1e-9)
        assert red.u[node] == 0.0


def quadratic_setup(nt=5):
    g = grid(5, 5, nt)
    ctx = make_context(g, beta=1.0, residual_scale=0.0)
    mask = free_node_mask(g)
    nfree = int(mask.sum())
    base = project_data_constraints(
        g, ctx.bundle, Iterate(np.zeros(g.spacetime_shape()), np.zeros(g.spacetime_shape()))
    )

    def embed(w):
        z = base.copy()
        z.u[mask] = w[:nfree]
        z.m[mask] = w[nfree:]
        return project_data_constraints(g, ctx.bundle, z)

    def reduced(w):
        red = reduce_gradient(g, gradient(ctx, embed(w)))
        return np.concatenate([red.u[mask], red.m[mask]])

    return g, ctx, mask, nfree, embed, reduced


def test_quadratic_mode_minimizer_is_the_linear_solve():
    g, ctx, mask, nfree, embed, reduced = quadratic_setup()
    dim = 2 * nfree
    r0 = reduced(np.zeros(dim))
    hess = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        hess[:, i] = reduced(e) - r0
    assert np.allclose(hess, hess.T, atol=1e-10 * np.abs(hess).max())
    assert np.linalg.eigvalsh(hess).min() > 0
    w_star = np.linalg.solve(hess, -r0)
    assert np.max(np.abs(reduced(w_star))) < 1e-10 * np.max(np.abs(r0))
    # a true minimum: every probe raises the objective
    j_star = evaluate(ctx, embed(w_star))
    rng = np.random.default_rng(9)
    for _ in range(3):
        probe = w_star + 0.1 * rng.standard_normal(dim)
        assert evaluate(ctx, embed(probe)) > j_star


def test_quadratic_mode_contracts_along_an_eigenvector():
    # smoothness-only objective: the iteration map is linear, so a start
    # displaced along a Hessian eigenvector contracts with |1 - step * eig|
    g, ctx, mask, nfree, embed, reduced = quadratic_setup(nt=3)
    dim = 2 * nfree
    r0 = reduced(np.zeros(dim))
    hess = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        hess[:, i] = reduced(e) - r0
    eigvals, eigvecs = np.linalg.eigh(hess)
    w_star = np.linalg.solve(hess, -r0)
    sigma = eigvals[-1]
    mu = 0.5 / sigma
    start = embed(w_star + eigvecs[:, -1])
    result = descend(
        ctx, start, SolverConfig(step0=mu, grad_tol=0.0, max_iter=8, precondition=False)
    )
    ratios = result.gradient_history[1:] / result.gradient_history[:-1]
    assert np.allclose(ratios, abs(1.0 - mu * sigma), rtol=1e-8)
    assert result.final_step == mu


def test_descend_decreases_monotonically_and_stops():
    g, ctx, mask, nfree, embed, reduced = quadratic_setup()
    r0 = reduced(np.zeros(2 * nfree))
    tol = 0.2 * np.max(np.abs(r0))
    start = embed(np.zeros(2 * nfree))
    result = descend(ctx, start, SolverConfig(grad_tol=tol, max_iter=2000))
    assert result.converged
    assert result.gradient_history[-1] < tol
    assert np.all(np.diff(result.objective_history) < 0)
    # re-running from the result is an immediate stop
    again = descend(ctx, result.iterate, SolverConfig(grad_tol=tol, max_iter=10))
    assert again.iterations == 0 and again.converged


def test_descend_stalls_when_no_descent_exists():
    g, ctx, mask, nfree, embed, reduced = quadratic_setup()
    dim = 2 * nfree
    r0 = reduced(np.zeros(dim))
    hess = np.empty((dim, dim))
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        hess[:, i] = reduced(e) - r0
    w_star = np.linalg.solve(hess, -r0)
    with pytest.raises(StallError, match="stalled"):
        descend(ctx, embed(w_star), SolverConfig(grad_tol=0.0, max_iter=5))


def test_descend_respects_iteration_budget():
    g = grid(7, 7, 5)
    ctx = make_context(g)
    rng = np.random.default_rng(12)
    result = descend(ctx, random_iterate(g, rng), SolverConfig(grad_tol=1e-12, max_iter=3))
    assert result.iterations == 3
    assert not result.converged
    assert len(result.objective_history) == 4


def test_initial_guess_blends_faces():
    g = grid(9, 8, 5)
    ctx = make_context(g)
    start = initial_guess(g, ctx.bundle)
    b = ctx.bundle
    keep = np.arange(g.n1) != g.n1 - 2
    assert np.array_equal(start.u[keep, 0, :], b.dt_g01.face("x2lo")[keep])
    assert np.array_equal(start.u[-1, :, :], b.dt_g01.face("x1b"))
    # untied interior node carries the mean of the two face interpolations
    i1, i2, n = 2, 3, 1
    w1 = i1 / (g.n1 - 1)
    w2 = i2 / (g.n2 - 1)
    expected = 0.5 * (
        (1 - w1) * b.dt_g01.face("x1a")[i2, n]
        + w1 * b.dt_g01.face("x1b")[i2, n]
        + (1 - w2) * b.dt_g01.face("x2lo")[i1, n]
        + w2 * b.dt_g01.face("x2hi")[i1, n]
    )
    assert start.u[i1, i2, n] == pytest.approx(expected, rel=1e-14)


def test_invert_runs_end_to_end():
    g = grid(7, 7, 5)
    ctx = make_context(g)
    result = invert(ctx, SolverConfig(grad_tol=1e-12, max_iter=40))
    assert isinstance(result, ReconstructionResult)
    assert result.coefficient.shape == g.spatial_shape()
    assert result.objective_history[-1] < result.objective_history[0]


def test_solver_config_validation():
    with pytest.raises(ValueError, match="step0"):
        SolverConfig(step0=0.0)
    with pytest.raises(ValueError, match="grad_tol"):
        SolverConfig(grad_tol=-1.0)
    with pytest.raises(ValueError, match="max_iter"):
        SolverConfig(max_iter=0)
    with pytest.raises(ValueError, match="closure"):
        SolverConfig(outflow_closure="upwind")
    assert set(OUTFLOW_CLOSURES) == {"dirichlet_scaled", "neumann_scaled"}
