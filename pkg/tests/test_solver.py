import numpy as np
import pytest

from divelliptic.mesh import DiscreteFunction, norm, norm_against
from divelliptic.fields import (constant_scalar, constant_vector,
                                identity_matrix, lp_norm, radial_power,
                                sobolev_factor, split_constant, FieldError)
from divelliptic.solver import (TruncationUnstableError, build_problem,
                                direct_solve, duality_probe, fredholm_solve,
                                lax_milgram_solve, rough_c_solve,
                                tensor_sine_probes)

I3 = identity_matrix(3)
H1 = constant_vector((1.0, 0.0, 0.0))
UNIT = ((0.0, 1.0),) * 3


@pytest.fixture(scope="module")
def drift_problem(space8, sine_load):
    grid = space8.grid
    split = split_constant(H1, 1.0, grid)
    assert split.gamma > 0
    return build_problem(space8, A=I3, H=H1, c=constant_scalar(1.0),
                         f=sine_load, split=split)


def test_zero_load_solves(space8, drift_problem):
    zero = np.zeros(space8.n_interior)
    assert np.all(lax_milgram_solve(drift_problem, zero).solution.values == 0.0)
    assert np.all(direct_solve(drift_problem, zero).solution.values == 0.0)
    assert np.all(fredholm_solve(drift_problem, zero).solution.values == 0.0)


def test_linearity(drift_problem):
    u1 = lax_milgram_solve(drift_problem, drift_problem.load, rtol=1e-12)
    u2 = lax_milgram_solve(drift_problem, 2.0 * drift_problem.load, rtol=1e-12)
    dev = np.max(np.abs(u2.solution.values - 2.0 * u1.solution.values))
    assert dev <= 1e-10 * np.max(np.abs(u2.solution.values))


def test_manufactured_solution(space8, identity3, sine_exact, sine_load):
    prob = build_problem(space8, A=identity3, f=sine_load)
    rep = lax_milgram_solve(prob)
    err = norm_against(rep.solution, sine_exact, "L2")
    assert err < 0.01
    assert rep.residual <= 1e-10


def test_fredholm_collapse_gamma_zero(space8, identity3, sine_load):
    prob = build_problem(space8, A=identity3, f=sine_load)
    assert prob.gamma == 0.0
    a = fredholm_solve(prob)
    b = lax_milgram_solve(prob, rtol=1e-12)
    diff = norm(DiscreteFunction(space8, a.solution.values - b.solution.values),
                "H1semi")
    assert diff <= 1e-12 * max(norm(b.solution, "H1semi"), 1.0)
    assert a.method == "fredholm[collapsed]"


def test_fredholm_matches_direct(drift_problem, space8):
    fred = fredholm_solve(drift_problem)
    direct = direct_solve(drift_problem)
    diff = norm(DiscreteFunction(space8, fred.solution.values
                                 - direct.solution.values), "H1semi")
    assert diff <= 1e-8 * norm(direct.solution, "H1semi")


def test_weak_identity_equivalence_both_directions(drift_problem, space8):
    """Fixed-point output solves the weak identity and conversely."""
    psi = drift_problem.load
    fred = fredholm_solve(drift_problem)
    b = drift_problem.operator.matrix
    res = np.linalg.norm(b @ fred.solution.values - psi) / np.linalg.norm(psi)
    assert res <= 1e-8

    direct = direct_solve(drift_problem)
    gamma = drift_problem.gamma
    shifted = (b + gamma * drift_problem.mass.matrix).tocsr()
    import scipy.sparse.linalg as spla
    lu = spla.splu(shifted.tocsc())
    u = direct.solution.values
    fixed_point = u - gamma * lu.solve(drift_problem.mass.matrix @ u) - lu.solve(psi)
    assert (np.linalg.norm(fixed_point)
            <= 1e-8 * max(np.linalg.norm(u), 1.0))


def test_shifted_energy_bound(drift_problem, space8, sine_load):
    """|grad u_gamma| <= (2/lam) * S * |f|_{2d/(d+2)} via the Sobolev chain."""
    rep = lax_milgram_solve(drift_problem)
    lhs = norm(rep.solution, "H1semi")
    rhs = 2.0 * sobolev_factor(3) * lp_norm(sine_load, 1.2, space8.grid)
    assert lhs <= rhs


def test_direct_positivity_and_energy_certificate(space8, identity3, sine_load):
    # f >= 0, A = I, H = 0, c = 0: structured stiffness gives u >= 0
    prob = build_problem(space8, A=identity3, f=sine_load)
    u = direct_solve(prob).solution
    assert np.min(u.values) >= -1e-8 * norm(u, "Linf")

    # symmetric case: the solution minimizes the discrete energy
    b = prob.operator.matrix
    rng = np.random.default_rng(11)
    energy = lambda v: 0.5 * v @ (b @ v) - prob.load @ v
    e0 = energy(u.values)
    for _ in range(5):
        pert = rng.standard_normal(space8.n_interior)
        assert energy(u.values + 1e-3 * pert) > e0


def test_rough_ladder_inactive_truncation(space8, identity3, sine_load):
    # bounded c: every cap above its sup gives the identical solution
    c = constant_scalar(5.0)
    ladder = rough_c_solve(space8, identity3, None, c, sine_load,
                           levels=(8, 16, 32))
    base = ladder.levels[0].report.solution.values
    for lv in ladder.levels[1:]:
        assert np.array_equal(lv.report.solution.values, base)
    assert all(d == 0.0 for d in ladder.diffs)


def test_rough_ladder_requires_sign(space8, identity3, sine_load):
    c = radial_power((0.5, 0.5, 0.5), 2.5, scale=-1.0)
    with pytest.raises(FieldError, match="sign"):
        rough_c_solve(space8, identity3, None, c, sine_load, levels=(1, 2))


def test_rough_ladder_unstable_detection(space8, identity3, sine_load):
    # the guard fires when a level's energy exceeds its predecessor by more
    # than the slack; a negative slack turns the plateau of a healthy ladder
    # into a violation, exercising the error path
    c = radial_power((0.5, 0.5, 0.5), 2.5)
    with pytest.raises(TruncationUnstableError, match="unstable"):
        rough_c_solve(space8, identity3, None, c, sine_load,
                      levels=(64, 128, 256, 512, 1024), energy_slack=-0.5)


def test_duality_probe(space8, identity3, sine_load):
    c = constant_scalar(1.0)
    prob = build_problem(space8, A=identity3, H=H1, c=c, f=sine_load,
                         split=split_constant(H1, 1.0, space8.grid))
    u1 = direct_solve(prob).solution
    u2 = fredholm_solve(prob).solution

    vals = duality_probe(identity3, H1, c, u1, u1)
    assert all(v == 0.0 for v in vals)

    probes = tensor_sine_probes(space8)
    assert len(probes) == 8
    assert probes[0].frequency == (1, 1, 1)
    vals = duality_probe(identity3, H1, c, u1, u2, probes)
    u_scale = norm(u1, "L2")
    for phi, v in zip(probes, vals):
        phi_l2 = norm(DiscreteFunction(
            space8, phi(space8.node_coords[space8.interior_ids])), "L2")
        assert abs(v) <= 1e-8 * phi_l2 * u_scale

    # planted non-solution perturbation must be detected
    pert = probes[0](space8.node_coords[space8.interior_ids])
    pert_l2 = norm(DiscreteFunction(space8, pert), "L2")
    planted = DiscreteFunction(space8, u1.values + 0.01 * u_scale * pert / pert_l2)
    vals = duality_probe(identity3, H1, c, u1, planted, probes)
    normalized = []
    for phi, v in zip(probes, vals):
        phi_l2 = norm(DiscreteFunction(
            space8, phi(space8.node_coords[space8.interior_ids])), "L2")
        normalized.append(abs(v) / (phi_l2 * u_scale))
    assert max(normalized) >= 1e-3


def test_duality_probe_space_mismatch(space4, space8, identity3):
    u4 = DiscreteFunction(space4, np.zeros(space4.n_interior))
    u8 = DiscreteFunction(space8, np.zeros(space8.n_interior))
    with pytest.raises(FieldError):
        duality_probe(identity3, None, None, u4, u8)
