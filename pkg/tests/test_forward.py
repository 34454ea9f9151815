import numpy as np
import pytest
import sympy

from mfgcoef.forward import (
    ForwardSpec,
    extract_observations,
    generate,
    make_s,
    solve_density,
    stencil_bundle,
)
from mfgcoef.grid import SpaceTimeGrid
from mfgcoef.kernels import InteractionOperator, LineGaussianKernel


def grid(n1, n2, nt):
    return SpaceTimeGrid(a=1.0, b=2.0, half_width=0.5, horizon=1.0, n1=n1, n2=n2, nt=nt)


def manufactured(p_expr_str, v_expr_str):
    """Lambdified exact density, value function and matching source term."""
    x1, x2, t = sympy.symbols("x1 x2 t")
    loc = {"x1": x1, "x2": x2, "t": t, "pi": sympy.pi, "sin": sympy.sin,
           "cos": sympy.cos, "exp": sympy.exp}
    p = sympy.sympify(p_expr_str, locals=loc)
    v = sympy.sympify(v_expr_str, locals=loc)
    div = sympy.diff(p * sympy.diff(v, x1), x1) + sympy.diff(p * sympy.diff(v, x2), x2)
    src = sympy.diff(p, t) - sympy.diff(p, x1, 2) - sympy.diff(p, x2, 2) - div
    fp = sympy.lambdify((x1, x2, t), p, "numpy")
    fv = sympy.lambdify((x1, x2, t), v, "numpy")
    fsrc = sympy.lambdify((x1, x2, t), src, "numpy")

    def wrap(fn):
        def call(a1, a2, tt):
            return np.broadcast_to(fn(a1, a2, tt), np.broadcast_shapes(
                np.shape(a1), np.shape(a2), np.shape(tt))).astype(float)

        return call

    return wrap(fp), wrap(fv), wrap(fsrc)


def spec_for(g, fv, fp, k=None):
    return ForwardSpec(
        grid=g,
        value_fn=fv,
        density_init_fn=lambda a1, a2: fp(a1, a2, 0.0),
        density_boundary_fn=fp,
        coefficient=k if k is not None else np.ones(g.spatial_shape()),
        kernel=LineGaussianKernel(sigma=0.2),
    )


def solve_error(p_str, v_str, g):
    fp, fv, fsrc = manufactured(p_str, v_str)
    spec = spec_for(g, fv, fp)
    density, _ = solve_density(spec, source=fsrc)
    x1, x2 = g.meshgrid()
    exact = fp(x1, x2, g.horizon)
    return float(np.max(np.abs(density[:, :, -1] - exact)))


def convergence_orders():
    """(temporal, spatial) observed orders of the implicit density scheme."""
    p_curved = "exp(-t) * sin(pi*x1) * x2"
    v_str = "cos(pi*x1) * sin(pi*x2) / 10"
    # temporal: fine space so the O(ht) error dominates
    et = [solve_error(p_curved, v_str, grid(81, 81, nt)) for nt in (5, 9)]
    temporal = float(np.log2(et[0] / et[1]))
    # spatial: an in-time-linear solution makes the stepping exact, leaving O(h^2)
    p_linear = "(1 + t) * sin(pi*x1) * x2"
    es = [solve_error(p_linear, v_str, grid(n, n, 5)) for n in (11, 21)]
    spatial = float(np.log2(es[0] / es[1]))
    return temporal, spatial


def test_constant_density_is_preserved():
    g = grid(13, 11, 7)
    spec = spec_for(g, lambda a1, a2, t: np.zeros_like(a1 * a2), lambda a1, a2, t: np.ones_like(a1 * a2 + t))
    density, dmin = solve_density(spec)
    assert np.allclose(density, 1.0, atol=1e-11)
    assert dmin == pytest.approx(1.0, abs=1e-11)


def test_pure_diffusion_respects_bounds():
    # no drift: discrete maximum principle keeps p inside the data range
    g = grid(17, 17, 9)

    def init(a1, a2):
        return 2.0 + np.sin(np.pi * a1) * np.cos(np.pi * a2)

    spec = spec_for(g, lambda a1, a2, t: np.zeros_like(a1 * a2), lambda a1, a2, t: init(a1, a2))
    density, _ = solve_density(spec)
    assert density.min() >= 1.0 - 1e-10
    assert density.max() <= 3.0 + 1e-10


def test_scheme_orders():
    temporal, spatial = convergence_orders()
    assert temporal == pytest.approx(1.0, abs=0.2)
    assert spatial == pytest.approx(2.0, abs=0.3)


def test_make_s_satisfies_value_equation_identity():
    # s is constructed by division, so num - s*p vanishes to rounding
    g = grid(15, 15, 7)
    fp, fv, _ = manufactured("(t + 1) * (x1*x2 + 2)", "cos(pi*x1) * sin(pi*x2) * (t*t + 1) / 10")
    spec = spec_for(g, fv, fp)
    x1, x2 = g.meshgrid()
    density = np.stack([fp(x1, x2, t) for t in g.t], axis=2)
    s, st = make_s(spec, density)
    assert np.all(np.isfinite(s))
    assert st.shape == g.spacetime_shape()

    from mfgcoef.grid import SPACE_TIME, Field, ddt, ddx1, ddx2, laplacian

    v = Field(g, SPACE_TIME, spec.value_on_grid())
    op = InteractionOperator(g, spec.kernel)
    num = (
        ddt(v).values
        + laplacian(v).values
        - 0.5 * (ddx1(v).values ** 2 + ddx2(v).values ** 2)
        - spec.coefficient[:, :, None] * op.apply(density)
    )
    assert np.allclose(num - s * density, 0.0, atol=1e-12 * np.max(np.abs(num)))


def test_make_s_matches_symbolic_construction():
    # independent route: all derivatives symbolic, kernel integral by fine quadrature
    g = grid(21, 21, 5)
    x1s, x2s, ts = sympy.symbols("x1 x2 t")
    v_expr = sympy.cos(sympy.pi * x1s) * sympy.sin(sympy.pi * x2s) * (ts**2 + 1) / 10
    p_expr = (ts + 1) * (x1s * x2s + 2)
    num_sym = (
        sympy.diff(v_expr, ts)
        + sympy.diff(v_expr, x1s, 2)
        + sympy.diff(v_expr, x2s, 2)
        - (sympy.diff(v_expr, x1s) ** 2 + sympy.diff(v_expr, x2s) ** 2) / 2
    )
    f_num = sympy.lambdify((x1s, x2s, ts), num_sym, "numpy")
    f_p = sympy.lambdify((x1s, x2s, ts), p_expr, "numpy")

    fp, fv, _ = manufactured(str(p_expr), str(v_expr))
    spec = spec_for(g, fv, fp)
    x1, x2 = g.meshgrid()
    density = np.stack([fp(x1, x2, t) for t in g.t], axis=2)
    s, _ = make_s(spec, density)

    sigma = 0.2
    yfine = np.linspace(-g.half_width, g.half_width, 4001)
    i1, i2, it = 10, 7, 2
    tval = g.t[it]
    kern = np.exp(-((g.x2[i2] - yfine) ** 2) / sigma**2)
    inter = np.trapezoid(kern * f_p(g.x1[i1], yfine, tval), yfine)
    s_oracle = (f_num(g.x1[i1], g.x2[i2], tval) - 1.0 * inter) / f_p(g.x1[i1], g.x2[i2], tval)
    # stencil truncation in lap(v) dominates the difference
    assert s[i1, i2, it] == pytest.approx(s_oracle, rel=5e-3)


def test_make_s_rejects_vanishing_density():
    g = grid(9, 9, 5)
    fp, fv, _ = manufactured("(t + 1) * x1 * x2", "cos(pi*x1) * sin(pi*x2) / 10")
    spec = spec_for(g, fv, fp)
    x1, x2 = g.meshgrid()
    density = np.stack([fp(x1, x2, t) for t in g.t], axis=2)
    with pytest.raises(ValueError, match="floor"):
        make_s(spec, density)


def test_extract_observations_values_and_shapes():
    fine = grid(41, 41, 21)
    coarse = grid(21, 21, 11)
    fp, fv, _ = manufactured("(t + 1) * (x1*x2 + 2)", "cos(pi*x1) * sin(pi*x2) * (t*t + 1) / 10")
    spec = spec_for(fine, fv, fp)
    x1f, x2f = fine.meshgrid()
    density = np.stack([fp(x1f, x2f, t) for t in fine.t], axis=2)
    obs = extract_observations(spec, density, coarse)

    x1c, x2c = coarse.meshgrid()
    # midpoint value slice: 0.1 * 1.25 * cos(pi x1) sin(pi x2)
    assert np.allclose(obs.v0.values, 0.125 * np.cos(np.pi * x1c) * np.sin(np.pi * x2c), atol=1e-13)
    assert np.allclose(obs.p0.values, 1.5 * (x1c * x2c + 2.0), atol=1e-13)
    assert np.allclose(
        obs.g02.face("x1b"), (coarse.t[None, :] + 1.0) * (2.0 * coarse.x2[:, None] + 2.0), atol=1e-13
    )
    # one-sided Neumann at the outflow face, formed on the fine grid
    dv_exact = -0.1 * np.pi * np.sin(np.pi * 2.0) * np.sin(np.pi * coarse.x2[:, None]) * (
        coarse.t[None, :] ** 2 + 1.0
    )
    assert np.allclose(obs.g11.values, dv_exact, atol=5e-4)
    dp_exact = (coarse.t[None, :] + 1.0) * coarse.x2[:, None]
    assert np.allclose(obs.g12.values, dp_exact, atol=1e-10)


def test_generate_end_to_end_records_minimum():
    fine = grid(21, 21, 11)
    coarse = grid(11, 11, 11)  # strides (2, 2, 1)
    fp, fv, _ = manufactured("(t + 1) * (x1*x2 + 2)", "cos(pi*x1) * sin(pi*x2) * (t*t + 1) / 10")
    spec = spec_for(fine, fv, fp)
    data = generate(spec, coarse)
    assert data.min_density > 0.5
    assert data.cost_coarse.shape == coarse.spacetime_shape()
    assert data.observations.grid == coarse
    b = stencil_bundle(data.observations)
    assert b.v0_lap.shape == coarse.spatial_shape()


def test_forward_spec_validation():
    g = grid(9, 9, 5)
    with pytest.raises(ValueError, match="coefficient"):
        ForwardSpec(
            grid=g,
            value_fn=lambda a1, a2, t: a1,
            density_init_fn=lambda a1, a2: a1,
            density_boundary_fn=lambda a1, a2, t: a1,
            coefficient=np.ones((3, 3)),
            kernel=LineGaussianKernel(),
        )
    with pytest.raises(ValueError, match="mobility"):
        ForwardSpec(
            grid=g,
            value_fn=lambda a1, a2, t: a1,
            density_init_fn=lambda a1, a2: a1,
            density_boundary_fn=lambda a1, a2, t: a1,
            coefficient=np.ones(g.spatial_shape()),
            kernel=LineGaussianKernel(),
            mobility=np.zeros(g.spatial_shape()),
        )
