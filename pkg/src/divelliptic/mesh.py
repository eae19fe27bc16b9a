"""Structured Q1 finite element spaces on boxes.

Tensor-product grids on U = prod (lo_i, hi_i) in R^d, d >= 3, with
multilinear (Q1) nodal hat functions, homogeneous Dirichlet constraints,
tensor Gauss quadrature, and sparse assembly of the convection-diffusion
bilinear form

    B(u, v) = int <A grad u, grad v> + <H, grad u> v + c u v dx.

Node and cell ordering is lexicographic (C order, last axis fastest) and
all reductions run in a fixed order, so assembled operators are
bit-reproducible for identical inputs.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class MeshError(ValueError):
    """Invalid grid or space construction."""


class QuadratureError(RuntimeError):
    """A field could not be evaluated at quadrature points."""


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned box domain with a uniform tensor grid.

    extents: per-axis (lo, hi) intervals, d = len(extents) >= 3.
    cells: cells per axis, each >= 2.
    quadrature_order: Gauss points per axis, >= 2.
    """

    extents: tuple[tuple[float, float], ...]
    cells: tuple[int, ...]
    quadrature_order: int = 2

    def __post_init__(self):
        extents = tuple((float(lo), float(hi)) for lo, hi in self.extents)
        cells = tuple(int(n) for n in self.cells)
        object.__setattr__(self, "extents", extents)
        object.__setattr__(self, "cells", cells)
        if len(extents) < 3:
            raise MeshError(f"dimension must be >= 3, got {len(extents)}")
        if len(cells) != len(extents):
            raise MeshError("cells and extents must have equal length")
        for lo, hi in extents:
            if not hi > lo:
                raise MeshError(f"degenerate extent ({lo}, {hi})")
        for n in cells:
            if n < 2:
                raise MeshError(f"need >= 2 cells per axis, got {n}")
        if self.quadrature_order < 2:
            raise MeshError("quadrature_order must be >= 2")

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def lows(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.extents])

    @property
    def highs(self) -> np.ndarray:
        return np.array([hi for _, hi in self.extents])

    @property
    def spacing(self) -> np.ndarray:
        return (self.highs - self.lows) / np.array(self.cells)

    @property
    def volume(self) -> float:
        return float(np.prod(self.highs - self.lows))

    @property
    def n_nodes(self) -> int:
        return int(np.prod([n + 1 for n in self.cells]))

    @property
    def n_interior(self) -> int:
        return int(np.prod([n - 1 for n in self.cells]))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cells))

    @classmethod
    def unit_cube(cls, n: int, d: int = 3, quadrature_order: int = 2) -> "GridSpec":
        return cls(tuple((0.0, 1.0) for _ in range(d)), tuple(n for _ in range(d)),
                   quadrature_order)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.extents, tuple(factor * n for n in self.cells),
                        self.quadrature_order)


def gauss_rule_01(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre points and weights on (0, 1)."""
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


def _c_strides(shape) -> np.ndarray:
    """Flattening strides for C-order (last axis fastest) multi-indices."""
    shape = np.asarray(shape, dtype=np.int64)
    strides = np.ones_like(shape)
    for a in range(len(shape) - 2, -1, -1):
        strides[a] = strides[a + 1] * shape[a + 1]
    return strides


class FemSpace:
    """Q1 nodal space on a GridSpec with zero boundary trace.

    Unknowns are the interior nodes in lexicographic order; boundary
    values are implicitly zero.  Precomputes cell connectivity and the
    reference basis/gradient tables at tensor Gauss points.
    """

    def __init__(self, grid: GridSpec):
        self.grid = grid
        d = grid.dim
        cells = np.array(grid.cells)
        nodes_per_axis = cells + 1
        self.dim = d
        self.n_nodes = grid.n_nodes
        self.n_cells = grid.n_cells

        # interior numbering: node is interior iff 0 < i_a < cells_a on every axis
        node_multi = np.indices(nodes_per_axis).reshape(d, -1)
        interior_mask = np.all((node_multi > 0) & (node_multi < cells[:, None]), axis=0)
        self.interior_mask = interior_mask
        self.interior_ids = np.flatnonzero(interior_mask)
        self.n_interior = self.interior_ids.size
        lookup = -np.ones(self.n_nodes, dtype=np.int64)
        lookup[self.interior_ids] = np.arange(self.n_interior)
        self.interior_index_of = lookup

        # physical node coordinates, row i = node i (lexicographic)
        h = grid.spacing
        self.node_coords = grid.lows + node_multi.T * h

        # cell -> corner node ids; corner order = lexicographic over offset bits
        cell_multi = np.indices(cells).reshape(d, -1).T        # (n_cells, d)
        offsets = np.array(list(itertools.product((0, 1), repeat=d)))  # (2^d, d)
        corner_multi = cell_multi[:, None, :] + offsets[None, :, :]
        self.cell_nodes = corner_multi @ _c_strides(nodes_per_axis)  # (n_cells, 2^d)
        self.cell_lows = grid.lows + cell_multi * h            # (n_cells, d)
        self.n_local = 2 ** d

        # tensor Gauss rule on the reference cell (0,1)^d
        q, w = gauss_rule_01(grid.quadrature_order)
        ref_pts = np.array(list(itertools.product(q, repeat=d)))      # (n_q, d)
        ref_w = np.prod(np.array(list(itertools.product(w, repeat=d))), axis=1)
        self.ref_points = ref_pts
        self.quad_weights = ref_w * np.prod(h)                 # physical weights
        self.n_quad = ref_pts.shape[0]

        # basis values / physical gradients at the reference points
        t = ref_pts                                            # (n_q, d)
        shape_1d = np.stack([1.0 - t, t])                      # (2, n_q, d)
        dshape_1d = np.stack([-np.ones_like(t), np.ones_like(t)])
        phi = np.ones((self.n_local, self.n_quad))
        dphi = np.zeros((self.n_local, self.n_quad, d))
        for loc, bits in enumerate(offsets):
            for a in range(d):
                phi[loc] *= shape_1d[bits[a], :, a]
            for a in range(d):
                g = dshape_1d[bits[a], :, a] / h[a]
                for b in range(d):
                    if b != a:
                        g = g * shape_1d[bits[b], :, b]
                dphi[loc, :, a] = g
        self.phi = phi                                          # (2^d, n_q)
        self.dphi = dphi                                        # (2^d, n_q, d)

    def quad_points(self) -> np.ndarray:
        """Physical quadrature points, shape (n_cells, n_quad, dim)."""
        h = self.grid.spacing
        return self.cell_lows[:, None, :] + self.ref_points[None, :, :] * h

    def cell_of_points(self, x: np.ndarray) -> np.ndarray:
        """Flat cell index containing each point (clipped to the box)."""
        h = self.grid.spacing
        idx = np.floor((x - self.grid.lows) / h).astype(np.int64)
        idx = np.clip(idx, 0, np.array(self.grid.cells) - 1)
        return idx @ _c_strides(self.grid.cells)

    def node_nearest(self, point) -> int:
        """Flat id of the grid node nearest to `point` (first on ties)."""
        dist2 = np.sum((self.node_coords - np.asarray(point, dtype=float)) ** 2, axis=1)
        return int(np.argmin(dist2))


@dataclass
class DiscreteFunction:
    """Nodal coefficients on the interior nodes of a FemSpace."""

    space: FemSpace
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.space.n_interior,):
            raise MeshError(
                f"expected {self.space.n_interior} interior values, "
                f"got shape {self.values.shape}")

    def full_values(self) -> np.ndarray:
        """Nodal vector over all nodes, zero on the boundary."""
        out = np.zeros(self.space.n_nodes)
        out[self.space.interior_ids] = self.values
        return out

    def at_quad(self) -> np.ndarray:
        """(n_cells, n_quad) values at the quadrature points."""
        nodal = self.full_values()[self.space.cell_nodes]
        return np.einsum("cl,lq->cq", nodal, self.space.phi)

    def grad_at_quad(self) -> np.ndarray:
        """(n_cells, n_quad, dim) gradients at the quadrature points."""
        nodal = self.full_values()[self.space.cell_nodes]
        return np.einsum("cl,lqa->cqa", nodal, self.space.dphi)


@dataclass
class SparseOperator:
    """CSR operator over the interior (or full) node index set."""

    matrix: sp.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def __matmul__(self, other):
        return self.matrix @ other


def build_space(grid: GridSpec) -> FemSpace:
    """Build the Q1 space; rejects invalid grids via GridSpec validation."""
    if grid.n_interior <= 0:
        raise MeshError("grid has no interior nodes")
    return FemSpace(grid)


def _evaluate_field(fn, points: np.ndarray, name: str, space: FemSpace,
                    expect_shape: tuple) -> np.ndarray:
    vals = np.asarray(fn(points), dtype=float)
    if vals.shape != expect_shape:
        raise QuadratureError(
            f"field '{name}' returned shape {vals.shape}, expected {expect_shape}")
    if not np.all(np.isfinite(vals)):
        flat_bad = np.flatnonzero(~np.isfinite(vals.reshape(points.shape[0], -1)).all(axis=1))
        cell = int(flat_bad[0] // space.n_quad)
        multi = np.unravel_index(cell, space.grid.cells)
        raise QuadratureError(
            f"non-finite value of field '{name}' in cell {tuple(int(m) for m in multi)}")
    return vals


def assemble(space: FemSpace, A=None, H=None, c=None, *, full: bool = False) -> SparseOperator:
    """Assemble the bilinear form matrix; entry (i, j) = B(phi_j, phi_i).

    A: matrix field (n, d, d), H: vector field (n, d), c: scalar field (n,);
    any of them may be None (term omitted).  With full=True the matrix runs
    over all nodes (no Dirichlet constraint), as used for zero-flux adjoint
    problems.
    """
    d = space.dim
    pts = space.quad_points().reshape(-1, d)
    npts = pts.shape[0]
    w = space.quad_weights
    phi, dphi = space.phi, space.dphi
    nc, nl = space.n_cells, space.n_local

    local = np.zeros((nc, nl, nl))
    if A is not None:
        av = _evaluate_field(A, pts, "A", space, (npts, d, d)).reshape(nc, space.n_quad, d, d)
        local += np.einsum("cqab,iqa,jqb,q->cij", av, dphi, dphi, w, optimize=True)
    if H is not None:
        hv = _evaluate_field(H, pts, "H", space, (npts, d)).reshape(nc, space.n_quad, d)
        local += np.einsum("cqa,jqa,iq,q->cij", hv, dphi, phi, w, optimize=True)
    if c is not None:
        cv = _evaluate_field(c, pts, "c", space, (npts,)).reshape(nc, space.n_quad)
        local += np.einsum("cq,iq,jq,q->cij", cv, phi, phi, w, optimize=True)

    rows = np.broadcast_to(space.cell_nodes[:, :, None], (nc, nl, nl)).ravel()
    cols = np.broadcast_to(space.cell_nodes[:, None, :], (nc, nl, nl)).ravel()
    vals = local.ravel()
    if full:
        n = space.n_nodes
    else:
        rows = space.interior_index_of[rows]
        cols = space.interior_index_of[cols]
        keep = (rows >= 0) & (cols >= 0)
        rows, cols, vals = rows[keep], cols[keep], vals[keep]
        n = space.n_interior
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.eliminate_zeros()
    mat.sort_indices()

    scale = np.max(np.abs(mat.data)) if mat.nnz else 0.0
    asym = abs(mat - mat.T)
    symmetric = (asym.nnz == 0) or (np.max(asym.data) <= 1e-13 * max(scale, 1e-300))
    return SparseOperator(matrix=mat, symmetric=bool(symmetric))


def assemble_load(space: FemSpace, g, *, full: bool = False) -> np.ndarray:
    """Load vector with entries int g phi_i dx (tensor Gauss quadrature)."""
    d = space.dim
    pts = space.quad_points().reshape(-1, d)
    gv = _evaluate_field(g, pts, "load", space, (pts.shape[0],)).reshape(
        space.n_cells, space.n_quad)
    cell_loads = np.einsum("cq,iq,q->ci", gv, space.phi, space.quad_weights)
    out = np.bincount(space.cell_nodes.ravel(), weights=cell_loads.ravel(),
                      minlength=space.n_nodes)
    if full:
        return out
    return out[space.interior_ids]


_NORM_KINDS = ("L2", "Lq", "Linf", "H1semi")


def norm(u: DiscreteFunction, kind: str = "L2", q: float | None = None) -> float:
    """Quadrature norm of a discrete function (boundary extension by zero)."""
    space = u.space
    if kind == "L2":
        vals = u.at_quad()
        return float(np.sqrt(np.einsum("cq,q->", vals ** 2, space.quad_weights)))
    if kind == "Lq":
        if q is None or q < 1:
            raise MeshError(f"Lq norm requires q >= 1, got {q}")
        vals = np.abs(u.at_quad()) ** q
        return float(np.einsum("cq,q->", vals, space.quad_weights) ** (1.0 / q))
    if kind == "Linf":
        nodal = np.max(np.abs(u.values)) if u.values.size else 0.0
        at_q = np.max(np.abs(u.at_quad()))
        return float(max(nodal, at_q))
    if kind == "H1semi":
        grads = u.grad_at_quad()
        return float(np.sqrt(np.einsum("cqa,cqa,q->", grads, grads, space.quad_weights)))
    raise MeshError(f"unknown norm kind {kind!r}; expected one of {_NORM_KINDS}")


def q1_interpolate(space: FemSpace, nodal: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of full nodal values at arbitrary points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cells = space.cell_of_points(x)
    corners = nodal[space.cell_nodes[cells]]                   # (n, 2^d)
    t = (x - space.cell_lows[cells]) / space.grid.spacing      # (n, d)
    d = space.dim
    offsets = np.array(list(itertools.product((0, 1), repeat=d)))
    weights = np.ones((x.shape[0], space.n_local))
    for loc, bits in enumerate(offsets):
        for a in range(d):
            weights[:, loc] *= t[:, a] if bits[a] else (1.0 - t[:, a])
    return np.einsum("nl,nl->n", corners, weights)


def q1_gradient(space: FemSpace, nodal: np.ndarray, x: np.ndarray,
                absolute: bool = False) -> np.ndarray:
    """Elementwise gradient of the multilinear interpolant at points.

    With absolute=True all corner values and shape weights enter by
    absolute value, giving the rounding-cancellation scale of the
    gradient rather than the gradient itself.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    cells = space.cell_of_points(x)
    corners = nodal[space.cell_nodes[cells]]
    if absolute:
        corners = np.abs(corners)
    h = space.grid.spacing
    t = (x - space.cell_lows[cells]) / h
    d = space.dim
    offsets = np.array(list(itertools.product((0, 1), repeat=d)))
    grad = np.zeros((x.shape[0], d))
    for loc, bits in enumerate(offsets):
        for a in range(d):
            w = (1.0 if (bits[a] or absolute) else -1.0) / h[a]
            part = np.full(x.shape[0], w)
            for b in range(d):
                if b != a:
                    part = part * (t[:, b] if bits[b] else (1.0 - t[:, b]))
            grad[:, a] += corners[:, loc] * part
    return grad


def norm_against(u: DiscreteFunction, exact_fn, kind: str = "L2") -> float:
    """Quadrature norm of (u - exact_fn), for convergence studies."""
    space = u.space
    pts = space.quad_points().reshape(-1, space.dim)
    diff = u.at_quad() - np.asarray(exact_fn(pts), dtype=float).reshape(
        space.n_cells, space.n_quad)
    if kind == "L2":
        return float(np.sqrt(np.einsum("cq,q->", diff ** 2, space.quad_weights)))
    if kind == "Linf":
        return float(np.max(np.abs(diff)))
    raise MeshError(f"unsupported difference norm {kind!r}")
