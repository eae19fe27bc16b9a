import math

import numpy as np
import pytest

from divelliptic.mesh import GridSpec, build_space
from divelliptic.fields import (FieldError, NormDivergenceError,
                                boundedness_constant, constant_matrix,
                                constant_scalar, constant_vector,
                                identity_matrix, lp_norm, lp_norm_info,
                                polynomial_scalar, radial_power,
                                read_nodal_csv, split_constant,
                                tabulated_scalar, trig_gradient, trig_scalar,
                                truncate, write_nodal_csv)

GRID = GridSpec.unit_cube(16)
CENTER = (0.5, 0.5, 0.5)


def radial_l1_oracle():
    """Independent oracle: analytic ball + midpoint rule outside it."""
    r0 = 0.45
    inner = 8.0 * math.pi * math.sqrt(r0)        # int_{r<r0} r^-2.5 dx
    n = 120
    h = 1.0 / n
    xs = (np.arange(n) + 0.5) * h
    X = np.stack(np.meshgrid(xs, xs, xs, indexing="ij"), axis=-1).reshape(-1, 3)
    r = np.linalg.norm(X - 0.5, axis=1)
    outer = float(np.sum(np.where(r >= r0, r ** -2.5, 0.0)) * h ** 3)
    return inner + outer


def test_lp_norm_constants():
    assert lp_norm(constant_scalar(1.0), 1.0, GRID) == pytest.approx(1.0, rel=1e-9)
    assert lp_norm(constant_scalar(1.0), 17.0, GRID) == pytest.approx(1.0, rel=1e-9)
    assert lp_norm(constant_vector((1.0, 0.0, 0.0)), 3.0, GRID) == pytest.approx(1.0, rel=1e-9)
    with pytest.raises(FieldError):
        lp_norm(constant_scalar(1.0), 0.5, GRID)


def test_lp_norm_singular_radial():
    c = radial_power(CENTER, 2.5)
    value, depth = lp_norm_info(c, 1.0, GRID)
    # core exclusion at the depth cap biases the value slightly low
    assert value == pytest.approx(radial_l1_oracle(), rel=2e-2)
    assert depth == 12
    for p in (6.0 / 5.0, 2.0):
        with pytest.raises(NormDivergenceError, match="norm infinite"):
            lp_norm(c, p, GRID)


def test_split_constant_cases():
    thr = (1.0 / 16.0) * 0.25            # lam=1, d=3
    sc0 = split_constant(None, 1.0, GRID)
    assert sc0.n_split == 0.0 and sc0.gamma == 0.0
    assert sc0.threshold == pytest.approx(thr)

    small = split_constant(constant_vector((0.1, 0.0, 0.0)), 1.0, GRID)
    assert small.n_split == 0.0          # whole-domain tail already small

    big = split_constant(constant_vector((1.0, 0.0, 0.0)), 1.0, GRID)
    # the tail set empties just above |h| = 1: lattice-minimal N
    assert 1.0 < big.n_split <= 1.0 + big.lattice_step + 1e-12
    assert big.gamma == pytest.approx(big.n_split ** 2)
    assert big.tail_value <= thr

    with pytest.raises(FieldError):
        split_constant(constant_vector((1.0, 0.0, 0.0)), 0.0, GRID)


def test_split_constant_rejects_non_integrable_drift():
    from divelliptic.fields import TailTooHeavyError, VectorField
    sing = radial_power(CENTER, 1.2)          # |H|^3 ~ r^-3.6, not integrable

    def fn(x):
        out = np.zeros_like(x)
        out[:, 0] = sing(x)
        return out

    heavy = VectorField(fn=fn, exponent=2.0, singularities=sing.singularities)
    with pytest.raises(TailTooHeavyError, match="tail too heavy"):
        split_constant(heavy, 1.0, GridSpec.unit_cube(8))


def test_tail_functional_monotone():
    from divelliptic.fields import _tail_functional
    H = trig_gradient(((0.0, 1.0),) * 3, (1, 1, 1))
    levels = [0.0, 1.0, 2.0, 3.0, 4.0]
    tails = [_tail_functional(H, n, 3, GridSpec.unit_cube(8)) for n in levels]
    assert all(b <= a + 1e-9 for a, b in zip(tails, tails[1:]))
    assert tails[-1] == 0.0              # beyond the ess sup


def test_truncate():
    pts = np.array([[0.3, 0.3, 0.3]])
    assert truncate(constant_scalar(5.0), 3.0, "upper")(pts) == pytest.approx([3.0])
    assert truncate(constant_scalar(-5.0), 3.0, "symmetric")(pts) == pytest.approx([-3.0])
    with pytest.raises(FieldError):
        truncate(constant_scalar(1.0), -1.0)
    with pytest.raises(FieldError):
        truncate(constant_scalar(1.0), 1.0, "sideways")

    c = radial_power(CENTER, 2.5)
    cap = truncate(c, 10.0, "upper")
    r_star = 10.0 ** (-1.0 / 2.5)        # cap active inside this radius
    inside = np.array([CENTER]) + [[0.5 * r_star, 0.0, 0.0]]
    outside = np.array([CENTER]) + [[1.5 * r_star, 0.0, 0.0]]
    assert cap(inside) == pytest.approx([10.0])
    assert cap(outside) == pytest.approx(c(outside))
    assert cap.exponent == math.inf


def test_truncation_monotone_convergence():
    c = radial_power(CENTER, 2.5)
    norms = [lp_norm(truncate(c, n, "upper"), 1.0, GridSpec.unit_cube(8))
             for n in (10.0, 100.0, 1000.0)]
    assert norms[0] < norms[1] < norms[2]
    full = lp_norm(c, 1.0, GridSpec.unit_cube(8))
    assert norms[-1] < full * 1.001


def test_boundedness_constant():
    I3 = identity_matrix(3)
    H1 = constant_vector((1.0, 0.0, 0.0))
    c1 = constant_scalar(1.0)
    assert boundedness_constant(I3, None, None, GRID) == pytest.approx(3.0)
    assert boundedness_constant(I3, H1, None, GRID) == pytest.approx(7.0, rel=1e-9)
    assert boundedness_constant(I3, None, c1, GRID) == pytest.approx(19.0, rel=1e-9)
    # monotone in each argument
    big_m = constant_matrix(2.0, d=3)
    assert boundedness_constant(big_m, H1, c1, GRID) > boundedness_constant(I3, H1, c1, GRID)
    h2 = constant_vector((2.0, 0.0, 0.0))
    assert boundedness_constant(I3, h2, c1, GRID) > boundedness_constant(I3, H1, c1, GRID)
    c2 = constant_scalar(2.0)
    assert boundedness_constant(I3, H1, c2, GRID) > boundedness_constant(I3, H1, c1, GRID)


def test_matrix_spot_check():
    good = constant_matrix([[2.0, 0.5, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]])
    good.spot_check(GridSpec.unit_cube(4))
    lying = constant_matrix(1.0, d=3, lam=5.0)
    with pytest.raises(FieldError, match="ellipticity"):
        lying.spot_check(GridSpec.unit_cube(4))
    with pytest.raises(FieldError):
        constant_matrix([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def test_trig_gradient_consistency():
    ext = ((0.0, 1.0),) * 3
    v = trig_scalar(ext, (2, 2, 2))
    g = trig_gradient(ext, (2, 2, 2))
    rng = np.random.default_rng(3)
    x = rng.uniform(0.05, 0.95, size=(40, 3))
    eps = 1e-6
    for a in range(3):
        dx = np.zeros(3)
        dx[a] = eps
        fd = (v(x + dx) - v(x - dx)) / (2 * eps)
        assert np.max(np.abs(fd - g(x)[:, a])) < 1e-7


def test_polynomial_scalar():
    p = polynomial_scalar([(2.0, (1, 0, 0)), (1.0, (0, 2, 0))])
    pts = np.array([[0.5, 0.5, 0.0], [1.0, 2.0, 3.0]])
    assert p(pts) == pytest.approx([1.25, 6.0])


def test_nodal_csv_roundtrip(tmp_path):
    space = build_space(GridSpec.unit_cube(2))
    values = np.linspace(0.5, 2.0, space.n_nodes)
    path = tmp_path / "field.csv"
    write_nodal_csv(path, values)
    back = read_nodal_csv(path, 1)[:, 0]
    assert np.array_equal(back, values)
    field = tabulated_scalar(space, back)
    assert field(space.node_coords[:5]) == pytest.approx(values[:5], abs=1e-12)
