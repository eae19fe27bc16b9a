import numpy as np
import pytest

from divelliptic.mesh import GridSpec, build_space


@pytest.fixture(scope="session")
def space4():
    return build_space(GridSpec.unit_cube(4))


@pytest.fixture(scope="session")
def space8():
    return build_space(GridSpec.unit_cube(8))


@pytest.fixture(scope="session")
def space16():
    return build_space(GridSpec.unit_cube(16))


@pytest.fixture(scope="session")
def identity3():
    from divelliptic.fields import identity_matrix
    return identity_matrix(3)


@pytest.fixture(scope="session")
def sine_exact():
    return lambda x: np.prod(np.sin(np.pi * x), axis=1)


@pytest.fixture(scope="session")
def sine_load():
    from divelliptic.fields import trig_scalar
    return trig_scalar(((0.0, 1.0),) * 3, (1, 1, 1), amplitude=3 * np.pi ** 2)
