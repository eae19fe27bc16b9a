import math

import numpy as np
import pytest

from divelliptic.mesh import (DiscreteFunction, GridSpec, MeshError,
                              QuadratureError, assemble, assemble_load,
                              build_space, norm, norm_against, q1_gradient,
                              q1_interpolate)
from divelliptic.fields import constant_scalar, identity_matrix
from divelliptic.solver import build_problem, direct_solve


def test_interior_counts():
    assert build_space(GridSpec.unit_cube(2)).n_interior == 1
    assert build_space(GridSpec.unit_cube(4)).n_interior == 27
    assert build_space(GridSpec.unit_cube(3, d=4)).n_interior == 16


def test_grid_validation():
    with pytest.raises(MeshError):
        GridSpec(((0.0, 1.0), (0.0, 1.0)), (4, 4))          # d < 3
    with pytest.raises(MeshError):
        GridSpec(((0.0, 1.0), (0.0, 1.0), (1.0, 1.0)), (4, 4, 4))
    with pytest.raises(MeshError):
        GridSpec.unit_cube(1)
    with pytest.raises(MeshError):
        GridSpec.unit_cube(4, quadrature_order=1)


def test_partition_of_unity(space4):
    # Q1 hats sum to one at every quadrature point of every cell
    assert np.max(np.abs(space4.phi.sum(axis=0) - 1.0)) < 1e-14
    assert np.max(np.abs(space4.dphi.sum(axis=0))) < 1e-12


def test_laplacian_stiffness_properties(space4, identity3):
    op = assemble(space4, A=identity3)
    assert op.symmetric
    # image of the interpolant of 1 has nonnegative entries (boundary
    # columns of the full stiffness are nonpositive)
    ones = np.ones(space4.n_interior)
    assert np.min(op.matrix @ ones) >= -1e-12


def test_mass_matrix_total_against_quadrature(space4):
    """Oracle: direct quadrature of (sum of interior hats)^2."""
    mass = assemble(space4, c=constant_scalar(1.0)).matrix
    total = float(mass.sum())

    # independent evaluation of the interior partition sum at quadrature
    # points: product of 1D hats, no reuse of the assembly tables
    grid = space4.grid
    h = grid.spacing
    oracle = 0.0
    pts = space4.quad_points().reshape(-1, 3)
    interior_nodes = space4.node_coords[space4.interior_ids]
    s = np.zeros(pts.shape[0])
    for node in interior_nodes:
        w = np.ones(pts.shape[0])
        for a in range(3):
            t = 1.0 - np.abs(pts[:, a] - node[a]) / h[a]
            w *= np.clip(t, 0.0, None)
        s += w
    weights = np.tile(space4.quad_weights, space4.n_cells)
    oracle = float(np.sum(weights * s ** 2))
    assert total == pytest.approx(oracle, rel=1e-12)


def test_assembly_linear_in_coefficients(space4, identity3):
    two = assemble(space4, A=lambda x: 2 * identity3(x))
    one = assemble(space4, A=identity3)
    assert abs((two.matrix - 2 * one.matrix).toarray()).max() < 1e-13

    c1 = assemble(space4, c=constant_scalar(1.0)).matrix
    c2 = assemble(space4, c=constant_scalar(2.0)).matrix
    assert abs((c2 - 2 * c1).toarray()).max() < 1e-13

    h1 = assemble(space4, H=lambda x: np.tile([1.0, 0, 0], (x.shape[0], 1)))
    h2 = assemble(space4, H=lambda x: np.tile([2.0, 0, 0], (x.shape[0], 1)))
    assert abs((h2.matrix - 2 * h1.matrix).toarray()).max() < 1e-13
    assert not h1.symmetric


def test_load_vector(space4):
    zero = assemble_load(space4, constant_scalar(0.0))
    assert np.all(zero == 0.0)

    # sum of int phi_i -> |U| = 1 under refinement
    sums = []
    for n in (4, 8, 16):
        sp = build_space(GridSpec.unit_cube(n))
        sums.append(float(np.sum(assemble_load(sp, constant_scalar(1.0)))))
    assert abs(sums[-1] - 1.0) < abs(sums[0] - 1.0)
    assert sums[-1] == pytest.approx(1.0, abs=0.2)

    # load from a basis hat equals the matching mass-matrix column
    mass = assemble(space4, c=constant_scalar(1.0)).matrix
    k = space4.n_interior // 2
    node = space4.node_coords[space4.interior_ids[k]]
    h = space4.grid.spacing

    def hat(x):
        w = np.ones(x.shape[0])
        for a in range(3):
            w *= np.clip(1.0 - np.abs(x[:, a] - node[a]) / h[a], 0.0, None)
        return w

    load = assemble_load(space4, hat)
    assert np.max(np.abs(load - mass[:, k].toarray().ravel())) < 1e-13


def test_nonfinite_field_reports_cell(space4):
    def broken(x):
        out = np.ones(x.shape[0])
        out[0] = np.nan
        return out

    with pytest.raises(QuadratureError, match="cell"):
        assemble_load(space4, broken)


def test_norms(space16, space4):
    zero = DiscreteFunction(space4, np.zeros(space4.n_interior))
    for kind in ("L2", "Linf", "H1semi"):
        assert norm(zero, kind) == 0.0
    assert norm(zero, "Lq", q=3.0) == 0.0
    with pytest.raises(MeshError):
        norm(zero, "Lq", q=0.5)

    one_node = build_space(GridSpec.unit_cube(2))
    u1 = DiscreteFunction(one_node, np.ones(1))
    assert norm(u1, "Linf") == 1.0

    vals = np.prod(np.sin(np.pi * space16.node_coords[space16.interior_ids]), axis=1)
    u = DiscreteFunction(space16, vals)
    assert norm(u, "L2") == pytest.approx(1.0 / math.sqrt(8.0), rel=0.01)


def test_galerkin_convergence(identity3, sine_exact, sine_load):
    errs = []
    for n in (4, 8):
        sp = build_space(GridSpec.unit_cube(n))
        rep = direct_solve(build_problem(sp, A=identity3, f=sine_load))
        errs.append(norm_against(rep.solution, sine_exact, "L2"))
    assert math.log2(errs[0] / errs[1]) >= 1.8


def test_q1_interpolation_exact_on_linears(space4):
    lin = space4.node_coords @ np.array([1.0, -2.0, 0.5]) + 0.25
    pts = np.array([[0.31, 0.62, 0.13], [0.05, 0.99, 0.47]])
    vals = q1_interpolate(space4, lin, pts)
    assert vals == pytest.approx(pts @ np.array([1.0, -2.0, 0.5]) + 0.25, abs=1e-13)
    grads = q1_gradient(space4, lin, pts)
    assert grads == pytest.approx(np.tile([1.0, -2.0, 0.5], (2, 1)), abs=1e-12)


def test_grid_refinement():
    g = GridSpec.unit_cube(4)
    fine = g.refined()
    assert fine.cells == (8, 8, 8)
    assert fine.extents == g.extents
    assert np.allclose(fine.spacing, g.spacing / 2)


def test_d4_assembly_and_solve():
    space = build_space(GridSpec.unit_cube(3, d=4))
    ident = identity_matrix(4)
    op = assemble(space, A=ident)
    assert op.symmetric and op.shape == (16, 16)
    rep = direct_solve(build_problem(space, A=ident, f=constant_scalar(1.0)))
    assert np.all(rep.solution.values > 0.0)
    assert rep.residual <= 1e-10


def test_determinism(space4, identity3):
    a = assemble(space4, A=identity3).matrix
    b = assemble(space4, A=identity3).matrix
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.data, b.data)
