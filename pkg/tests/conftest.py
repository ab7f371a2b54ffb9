import numpy as np
import pytest

from boltzlab.boltzmann import pick_smallness
from boltzlab.collision import (
    CollisionOperator,
    CollisionQuadrature,
    admissibility_norm,
    make_kernel,
)
from boltzlab.geometry import Domain
from boltzlab.transport import Grid


@pytest.fixture(scope="session")
def domain():
    return Domain(d=1.0, T=1.0)


@pytest.fixture(scope="session")
def quad():
    return CollisionQuadrature.build(r_u=4.0)


@pytest.fixture(scope="session")
def kernel():
    return make_kernel("psi_mollified", "phi_gaussian_bump", r_u=4.0)


@pytest.fixture(scope="session")
def small_grid(domain):
    return Grid(domain, nt=32, nx=12, nv=8, rv=4.0)


@pytest.fixture(scope="session")
def desk_grid(domain):
    return Grid(domain, nt=64, nx=16, nv=8, rv=4.0)


@pytest.fixture(scope="session")
def op_small(kernel, quad, small_grid):
    return CollisionOperator(kernel, quad, small_grid)


@pytest.fixture(scope="session")
def op_desk(kernel, quad, desk_grid):
    return CollisionOperator(kernel, quad, desk_grid)


@pytest.fixture(scope="session")
def smallness(kernel, quad, small_grid):
    x, v = small_grid.phase_nodes()
    xs = x.reshape(-1, 2)[::5]
    vs = v.reshape(-1, 2)[::5]
    k = min(len(xs), len(vs))
    ts = np.resize(small_grid.t_nodes, k)
    M = admissibility_norm(kernel, quad, ts, xs[:k], vs[:k])
    return pick_smallness(M, small_grid.domain.T)
