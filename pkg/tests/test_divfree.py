import math

import numpy as np
import pytest

from divelliptic.mesh import DiscreteFunction, GridSpec, build_space, norm
from divelliptic.fields import (constant_scalar, constant_vector,
                                identity_matrix, trig_gradient, trig_scalar)
from divelliptic.divfree import (DensityError, InvariantDensity,
                                 TransformationError, compute_rho,
                                 divergence_residual, equivalence_gap,
                                 make_drift, recover_original,
                                 rho_weighted_drift,
                                 substitution_identity_gap, transform)
from divelliptic.solver import build_problem, direct_solve

I3 = identity_matrix(3)
H1 = constant_vector((1.0, 0.0, 0.0))
UNIT = ((0.0, 1.0),) * 3


def exp_profile():
    value = lambda x: np.exp(-x[:, 0])
    grad = lambda x: np.stack([-np.exp(-x[:, 0]),
                               np.zeros(x.shape[0]),
                               np.zeros(x.shape[0])], axis=1)
    return value, grad


@pytest.fixture(scope="module")
def rho_const_drift(space8):
    return compute_rho(I3, H1, space8)


def test_rho_without_drift_is_one(space8):
    rho = compute_rho(I3, None, space8)
    assert np.max(np.abs(rho.values - 1.0)) < 1e-12
    assert rho.k1 == pytest.approx(1.0, abs=1e-12)
    assert rho.residual_normalized < 1e-10


def test_rho_constant_drift(rho_const_drift):
    rho = rho_const_drift
    assert rho.min > 0
    assert rho.values[rho.x1] == 1.0
    assert rho.k1 == pytest.approx(math.e, rel=0.01)
    assert rho.residual_normalized <= 1e-10


def test_rho_gradient_drift(space16):
    grad_v = trig_gradient(UNIT, (2, 2, 2))
    v = trig_scalar(UNIT, (2, 2, 2))
    rho = compute_rho(I3, grad_v, space16)
    exact = np.exp(-v(space16.node_coords))
    exact /= exact[rho.x1]
    rel = np.max(np.abs(rho.values - exact)) / np.max(np.abs(exact))
    assert rel <= 0.05
    assert rho.residual_normalized <= 1e-10


def test_rho_positivity_failure_is_detected(space4):
    # strong trig drift on a coarse grid produces an indefinite density
    strong = trig_gradient(UNIT, (2, 2, 2), amplitude=1.0)
    with pytest.raises(DensityError, match="positivity"):
        compute_rho(I3, strong, build_space(GridSpec.unit_cube(4)))


def test_make_drift(space8, rho_const_drift):
    pts = space8.quad_points().reshape(-1, 3)

    ones = InvariantDensity.from_nodal(space8, np.ones(space8.n_nodes))
    b = make_drift(ones, I3, H1)
    assert np.max(np.abs(b(pts) - H1(pts))) < 1e-12

    exact = InvariantDensity.from_exact(space8, *exp_profile())
    b0 = make_drift(exact, I3, H1)
    assert np.max(np.abs(b0(pts))) < 1e-13
    rb = rho_weighted_drift(exact, I3, H1)
    assert np.max(np.abs(rb(pts))) < 1e-13

    # computed density: rho B need not vanish pointwise, but its assembled
    # divergence does
    res, _ = divergence_residual(space8, rho_weighted_drift(rho_const_drift, I3, H1))
    assert res <= 1e-10


def test_transform_identity_when_rho_is_one(space8, sine_load):
    ones = InvariantDensity.from_nodal(space8, np.ones(space8.n_nodes))
    c = constant_scalar(1.0)
    t = transform(I3, None, c, sine_load, ones)
    pts = space8.quad_points().reshape(-1, 3)[::7]
    assert np.max(np.abs(t.rho_A(pts) - I3(pts))) < 1e-12
    assert np.max(np.abs(t.rho_c(pts) - c(pts))) < 1e-12
    assert np.max(np.abs(t.rho_f(pts) - sine_load(pts))) < 1e-12
    assert t.div_residual < 1e-10
    assert t.warning is None


def test_transform_gradient_drift_is_divergence_form(space8, sine_load):
    grad_v = trig_gradient(UNIT, (2, 2, 2))
    exact_rho = InvariantDensity.from_exact(
        space8,
        lambda x: np.exp(-trig_scalar(UNIT, (2, 2, 2))(x)),
        lambda x: -np.exp(-trig_scalar(UNIT, (2, 2, 2))(x))[:, None]
        * trig_gradient(UNIT, (2, 2, 2))(x))
    t = transform(I3, grad_v, constant_scalar(1.0), sine_load, exact_rho)
    pts = space8.quad_points().reshape(-1, 3)[::11]
    assert np.max(np.abs(t.drift(pts))) < 1e-12     # pure divergence form
    assert t.div_residual == 0.0


def test_transform_scales_reaction_multiplicatively(space8, sine_load,
                                                    rho_const_drift):
    """Mass-type entries of the transformed problem are the rho-weighted
    entries of the original to quadrature tolerance."""
    from divelliptic.mesh import assemble
    c = constant_scalar(2.0)
    t = transform(I3, H1, c, sine_load, rho_const_drift)
    transformed_mass = assemble(space8, c=t.rho_c).matrix

    rho = rho_const_drift
    weighted = assemble(space8, c=lambda x: rho.evaluate(x) * c(x)).matrix
    assert abs((transformed_mass - weighted).toarray()).max() <= 1e-14


def test_substitution_identity(space8, sine_load):
    c = constant_scalar(1.0)
    rho = compute_rho(I3, H1, space8)
    u = direct_solve(build_problem(space8, A=I3, H=H1, c=c, f=sine_load)).solution
    gap, scale = substitution_identity_gap(space8, I3, H1, c, sine_load, rho, u)
    assert gap <= 1e-12 * scale


def test_equivalence_gap_trivial_and_decreasing(sine_load):
    grids = [GridSpec.unit_cube(n) for n in (4, 8)]
    c = constant_scalar(1.0)

    # rho == 1: transformed problem is the original, gap at solver noise
    gaps0 = equivalence_gap(I3, None, c, sine_load, grids)
    assert max(gaps0) <= 1e-10

    gaps = equivalence_gap(I3, H1, c, sine_load, grids)
    assert gaps[1] < gaps[0]


def test_equivalence_gap_inconsistency_detection(sine_load):
    grids = [GridSpec.unit_cube(4)] * 3       # no refinement: gaps stagnate
    with pytest.raises(TransformationError, match="transformation inconsistency"):
        equivalence_gap(I3, H1, constant_scalar(1.0), sine_load, grids)


def test_round_trip_recovers_original(space8, sine_load):
    c = constant_scalar(1.0)
    exact = InvariantDensity.from_exact(space8, *exp_profile())
    t = transform(I3, H1, c, sine_load, exact)
    a2, h2, c2, f2 = recover_original(t)
    u1 = direct_solve(build_problem(space8, A=I3, H=H1, c=c, f=sine_load)).solution
    u2 = direct_solve(build_problem(space8, A=a2, H=h2, c=c2, f=f2)).solution
    gap = norm(DiscreteFunction(space8, u1.values - u2.values), "H1semi")
    assert gap <= 1e-9 * norm(u1, "H1semi")


def test_density_csv_roundtrip(tmp_path, space8, rho_const_drift):
    path = tmp_path / "rho.csv"
    rho_const_drift.to_csv(path)
    back = InvariantDensity.from_csv(path, space8)
    assert np.max(np.abs(back.values - rho_const_drift.values)) < 1e-15
    assert back.k1 == pytest.approx(rho_const_drift.k1, rel=1e-12)

    bad = np.ones(space8.n_nodes)
    bad[7] = -0.5
    with pytest.raises(DensityError, match="positivity"):
        InvariantDensity.from_nodal(space8, bad)
