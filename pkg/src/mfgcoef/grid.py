"""Uniform tensor grids on the space-time slab and the discrete calculus on them.

The computational domain is the box (a, b) x (-half_width, half_width) in
space crossed with (0, horizon) in time.  Everything downstream (kernel
quadrature, residual stencils, the objective gradient) is built from the
small dense difference matrices defined here, so that transposing a matrix
is all it takes to get an exact adjoint.

Array layout is row-major (x1, x2) for spatial fields and (x1, x2, t) for
space-time fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from typing import Tuple

import numpy as np

SPATIAL = "spatial"
SPACE_TIME = "space-time"
BOUNDARY_TRACE = "boundary-trace"
GAMMA_TRACE = "gamma-trace"

RANKS = (SPATIAL, SPACE_TIME, BOUNDARY_TRACE, GAMMA_TRACE)

# Fixed face order for boundary-trace storage.  Corners are stored twice
# (once per adjacent face); consumers that scatter a trace onto the grid
# apply the x2 faces first so the x1 faces win the corners.
FACES = ("x1a", "x1b", "x2lo", "x2hi")


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Uniform node grid on [a, b] x [-half_width, half_width] x [0, horizon].

    Parameters
    ----------
    a, b : float
        Extent of the first spatial axis, a < b.
    half_width : float
        The second spatial axis spans [-half_width, half_width].
    horizon : float
        Final time.
    n1, n2, nt : int
        Node counts per axis, at least 3 each.  (nt - 1) must be even so
        that the temporal midpoint horizon/2 is a grid node; the Volterra
        operator and the coefficient recovery are anchored there.
    """

    a: float
    b: float
    half_width: float
    horizon: float
    n1: int
    n2: int
    nt: int

    def __post_init__(self) -> None:
        if not (self.b > self.a):
            raise ValueError(f"need b > a, got a={self.a}, b={self.b}")
        if self.half_width <= 0:
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        for name, n in (("n1", self.n1), ("n2", self.n2), ("nt", self.nt)):
            if n < 3:
                raise ValueError(f"{name} must be at least 3, got {n}")
        if (self.nt - 1) % 2 != 0:
            raise ValueError(
                f"nt - 1 must be even so the temporal midpoint is a node, got nt={self.nt}"
            )

    @property
    def h1(self) -> float:
        return (self.b - self.a) / (self.n1 - 1)

    @property
    def h2(self) -> float:
        return 2.0 * self.half_width / (self.n2 - 1)

    @property
    def ht(self) -> float:
        return self.horizon / (self.nt - 1)

    @property
    def mid_index(self) -> int:
        """Index of the t = horizon/2 slice."""
        return (self.nt - 1) // 2

    @property
    def x1(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.n1)

    @property
    def x2(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.n2)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.nt)

    @property
    def volume(self) -> float:
        """Measure of the closed space-time slab."""
        return (self.b - self.a) * 2.0 * self.half_width * self.horizon

    @property
    def cell_volume(self) -> float:
        return self.h1 * self.h2 * self.ht

    @property
    def node_weight(self) -> float:
        """Uniform node weight summing to the slab volume (mean cell volume)."""
        return self.volume / (self.n1 * self.n2 * self.nt)

    def spatial_shape(self) -> Tuple[int, int]:
        return (self.n1, self.n2)

    def spacetime_shape(self) -> Tuple[int, int, int]:
        return (self.n1, self.n2, self.nt)

    def meshgrid(self):
        """Node coordinates X1, X2 as (n1, n2) arrays."""
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def trace_length(self) -> int:
        """Stored sample count of a boundary trace (faces keep their corners)."""
        return 2 * self.n2 * self.nt + 2 * self.n1 * self.nt


def first_diff_matrix(n: int, h: float) -> np.ndarray:
    """Dense first-derivative matrix: centered interior, 3-point one-sided ends.

    Both closures are second order; the whole matrix is exact on quadratics.
    """
    if n < 3:
        raise ValueError(f"need at least 3 nodes, got {n}")
    d = np.zeros((n, n))
    for i in range(1, n - 1):
        d[i, i - 1] = -0.5
        d[i, i + 1] = 0.5
    d[0, 0:3] = (-1.5, 2.0, -0.5)
    d[n - 1, n - 3 : n] = (0.5, -2.0, 1.5)
    return d / h


def second_diff_matrix(n: int, h: float) -> np.ndarray:
    """Dense second-derivative matrix: centered interior, one-sided 3-point ends.

    The end rows reuse the symmetric stencil shifted inward; they are exact
    on quadratics but only first-order accurate in general (low-order
    closure, which is all the boundary rows of the Laplacian promise).
    """
    if n < 3:
        raise ValueError(f"need at least 3 nodes, got {n}")
    d = np.zeros((n, n))
    for i in range(1, n - 1):
        d[i, i - 1 : i + 2] = (1.0, -2.0, 1.0)
    d[0, 0:3] = (1.0, -2.0, 1.0)
    d[n - 1, n - 3 : n] = (1.0, -2.0, 1.0)
    return d / (h * h)


def volterra_matrix(nt: int, ht: float, mid: int) -> np.ndarray:
    """Signed cumulative trapezoid from the midpoint slice.

    Row j holds the weights of the trapezoid rule for the integral from
    t_mid to t_j; rows below the midpoint carry the negative orientation.
    The rows telescope exactly, so differences of the output reproduce the
    plain trapezoid rule over [t_i, t_j] to machine precision.
    """
    if not (0 <= mid < nt):
        raise ValueError(f"mid index {mid} outside 0..{nt - 1}")
    v = np.zeros((nt, nt))
    for j in range(mid + 1, nt):
        v[j] = v[j - 1]
        v[j, j - 1] += 0.5 * ht
        v[j, j] += 0.5 * ht
    for j in range(mid - 1, -1, -1):
        v[j] = v[j + 1]
        v[j, j + 1] -= 0.5 * ht
        v[j, j] -= 0.5 * ht
    return v


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = 0.5 * h
    w[-1] = 0.5 * h
    return w


def apply_along_axis(mat: np.ndarray, values: np.ndarray, axis: int) -> np.ndarray:
    """Apply a dense (n, n) matrix along one axis of an nd-array."""
    moved = np.moveaxis(values, axis, 0)
    out = mat @ moved.reshape(mat.shape[1], -1)
    return np.moveaxis(out.reshape((mat.shape[0],) + moved.shape[1:]), 0, axis)


@dataclass
class Field:
    """Values attached to a grid with a rank tag.

    Ranks and value shapes:

    - spatial:        (n1, n2)
    - space-time:     (n1, n2, nt)
    - boundary-trace: flat, the four faces concatenated in FACES order,
                      x1 faces shaped (n2, nt) and x2 faces (n1, nt)
    - gamma-trace:    (n2, nt), samples on the x1 = b face
    """

    grid: SpaceTimeGrid
    rank: str
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.rank not in RANKS:
            raise ValueError(f"unknown rank {self.rank!r}, expected one of {RANKS}")
        self.values = np.asarray(self.values, dtype=float)
        expected = self.expected_shape(self.grid, self.rank)
        if self.values.shape != expected:
            raise ValueError(
                f"rank {self.rank!r} expects shape {expected}, got {self.values.shape}"
            )

    @staticmethod
    def expected_shape(grid: SpaceTimeGrid, rank: str) -> Tuple[int, ...]:
        if rank == SPATIAL:
            return grid.spatial_shape()
        if rank == SPACE_TIME:
            return grid.spacetime_shape()
        if rank == GAMMA_TRACE:
            return (grid.n2, grid.nt)
        if rank == BOUNDARY_TRACE:
            return (grid.trace_length(),)
        raise ValueError(f"unknown rank {rank!r}")

    @classmethod
    def from_faces(
        cls,
        grid: SpaceTimeGrid,
        x1a: np.ndarray,
        x1b: np.ndarray,
        x2lo: np.ndarray,
        x2hi: np.ndarray,
    ) -> "Field":
        parts = []
        for name, arr, shape in (
            ("x1a", x1a, (grid.n2, grid.nt)),
            ("x1b", x1b, (grid.n2, grid.nt)),
            ("x2lo", x2lo, (grid.n1, grid.nt)),
            ("x2hi", x2hi, (grid.n1, grid.nt)),
        ):
            arr = np.asarray(arr, dtype=float)
            if arr.shape != shape:
                raise ValueError(f"face {name} expects shape {shape}, got {arr.shape}")
            parts.append(arr.ravel())
        return cls(grid, BOUNDARY_TRACE, np.concatenate(parts))

    def face(self, name: str) -> np.ndarray:
        """View of one stored face of a boundary trace, shaped (n, nt)."""
        if self.rank != BOUNDARY_TRACE:
            raise ValueError(f"face() needs a boundary-trace field, got {self.rank!r}")
        g = self.grid
        sizes = {
            "x1a": (0, g.n2),
            "x1b": (g.n2 * g.nt, g.n2),
            "x2lo": (2 * g.n2 * g.nt, g.n1),
            "x2hi": (2 * g.n2 * g.nt + g.n1 * g.nt, g.n1),
        }
        if name not in sizes:
            raise ValueError(f"unknown face {name!r}, expected one of {FACES}")
        start, rows = sizes[name]
        return self.values[start : start + rows * g.nt].reshape(rows, g.nt)

    def copy(self) -> "Field":
        return Field(self.grid, self.rank, self.values.copy())


def _require_rank(f: Field, *ranks: str) -> None:
    if f.rank not in ranks:
        raise ValueError(f"operation needs rank in {ranks}, got {f.rank!r}")


def ddx1(f: Field) -> Field:
    """First derivative along x1, second order everywhere."""
    _require_rank(f, SPATIAL, SPACE_TIME)
    d = first_diff_matrix(f.grid.n1, f.grid.h1)
    return Field(f.grid, f.rank, apply_along_axis(d, f.values, 0))


def ddx2(f: Field) -> Field:
    """First derivative along x2, second order everywhere."""
    _require_rank(f, SPATIAL, SPACE_TIME)
    d = first_diff_matrix(f.grid.n2, f.grid.h2)
    return Field(f.grid, f.rank, apply_along_axis(d, f.values, 1))


def ddt(f: Field) -> Field:
    """Time derivative; works on space-time fields and on traces."""
    _require_rank(f, SPACE_TIME, BOUNDARY_TRACE, GAMMA_TRACE)
    d = first_diff_matrix(f.grid.nt, f.grid.ht)
    if f.rank == SPACE_TIME:
        return Field(f.grid, f.rank, apply_along_axis(d, f.values, 2))
    if f.rank == GAMMA_TRACE:
        return Field(f.grid, f.rank, apply_along_axis(d, f.values, 1))
    out = Field.from_faces(
        f.grid,
        *(apply_along_axis(d, f.face(name), 1) for name in FACES),
    )
    return out


def laplacian(f: Field) -> Field:
    """Five-point Laplacian; boundary rows use the one-sided low-order closure."""
    _require_rank(f, SPATIAL, SPACE_TIME)
    d1 = second_diff_matrix(f.grid.n1, f.grid.h1)
    d2 = second_diff_matrix(f.grid.n2, f.grid.h2)
    out = apply_along_axis(d1, f.values, 0) + apply_along_axis(d2, f.values, 1)
    return Field(f.grid, f.rank, out)


def volterra(f: Field) -> Field:
    """Signed running time integral anchored at t = horizon/2.

    Output slice j holds the trapezoid integral of f from the midpoint to
    t_j (negative for j below the midpoint).  The midpoint slice is zero.
    """
    _require_rank(f, SPACE_TIME)
    g = f.grid
    v = volterra_matrix(g.nt, g.ht, g.mid_index)
    return Field(g, SPACE_TIME, apply_along_axis(v, f.values, 2))


def integrate_y2(f: Field) -> np.ndarray:
    """Trapezoid integral over the x2 axis.

    Returns an (n1,) array for spatial input and (n1, nt) for space-time.
    """
    _require_rank(f, SPATIAL, SPACE_TIME)
    w = trapezoid_weights(f.grid.n2, f.grid.h2)
    return np.tensordot(f.values, w, axes=([1], [0]))


def _h2_matrices(g: SpaceTimeGrid):
    d1 = [
        first_diff_matrix(g.n1, g.h1),
        first_diff_matrix(g.n2, g.h2),
        first_diff_matrix(g.nt, g.ht),
    ]
    d2 = [
        second_diff_matrix(g.n1, g.h1),
        second_diff_matrix(g.n2, g.h2),
        second_diff_matrix(g.nt, g.ht),
    ]
    return d1, d2


def h2_norm_sq(f: Field) -> float:
    """Squared discrete H2 norm over the space-time slab.

    Sum over every node of the squared value, the three squared first
    differences and all six distinct squared second differences (pure
    seconds from the symmetric stencil, mixed ones as nested first
    differences), each term carrying the uniform node weight.  Exact on
    the closed slab: a constant c gives c^2 * volume.
    """
    _require_rank(f, SPACE_TIME)
    g = f.grid
    d1, d2 = _h2_matrices(g)
    vals = f.values
    total = np.sum(vals * vals)
    firsts = [apply_along_axis(d1[ax], vals, ax) for ax in range(3)]
    for arr in firsts:
        total += np.sum(arr * arr)
    for ax in range(3):
        arr = apply_along_axis(d2[ax], vals, ax)
        total += np.sum(arr * arr)
    for ax_a, ax_b in ((0, 1), (0, 2), (1, 2)):
        arr = apply_along_axis(d1[ax_b], firsts[ax_a], ax_b)
        total += np.sum(arr * arr)
    return float(g.node_weight * total)


def h2_norm_sq_gradient(f: Field) -> Field:
    """Gradient of ``h2_norm_sq`` with respect to the node values.

    Every squared-operator term contributes 2 * Op^T (Op z); defined next
    to the norm so the operator lists cannot drift apart.
    """
    _require_rank(f, SPACE_TIME)
    g = f.grid
    d1, d2 = _h2_matrices(g)
    vals = f.values
    out = vals.copy()
    firsts = [apply_along_axis(d1[ax], vals, ax) for ax in range(3)]
    for ax in range(3):
        out += apply_along_axis(d1[ax].T, firsts[ax], ax)
    for ax in range(3):
        arr = apply_along_axis(d2[ax], vals, ax)
        out += apply_along_axis(d2[ax].T, arr, ax)
    for ax_a, ax_b in ((0, 1), (0, 2), (1, 2)):
        arr = apply_along_axis(d1[ax_b], firsts[ax_a], ax_b)
        arr = apply_along_axis(d1[ax_b].T, arr, ax_b)
        out += apply_along_axis(d1[ax_a].T, arr, ax_a)
    return Field(g, SPACE_TIME, 2.0 * g.node_weight * out)


def restriction_strides(fine: SpaceTimeGrid, coarse: SpaceTimeGrid) -> Tuple[int, int, int]:
    """Subsampling strides mapping fine nodes onto coarse nodes exactly.

    The two grids must share extents and the fine node counts must nest the
    coarse ones; otherwise restriction would not land on nodes.
    """
    same_box = (
        fine.a == coarse.a
        and fine.b == coarse.b
        and fine.half_width == coarse.half_width
        and fine.horizon == coarse.horizon
    )
    if not same_box:
        raise ValueError("grids cover different boxes")
    strides = []
    for nf, nc, name in (
        (fine.n1, coarse.n1, "n1"),
        (fine.n2, coarse.n2, "n2"),
        (fine.nt, coarse.nt, "nt"),
    ):
        if (nf - 1) % (nc - 1) != 0:
            raise ValueError(f"fine {name}-1={nf - 1} does not nest coarse {nc - 1}")
        strides.append((nf - 1) // (nc - 1))
    return tuple(strides)
