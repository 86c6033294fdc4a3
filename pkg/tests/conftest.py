import numpy as np
import pytest

from boltzmann_nsf.collision_core import CollisionKernel
from boltzmann_nsf.hypocoercive_metric import search_hypo_params
from boltzmann_nsf.lattice import FourierLattice
from boltzmann_nsf.model import KineticModel
from boltzmann_nsf.velocity_space import build_grid


# Small grids keep the dense operators cheap: n=4 for the time-dependent
# solvers, n=6 where the structure of L and its spectrum is checked.
@pytest.fixture(scope="session")
def kernel():
    return CollisionKernel(theta_nodes=8, azimuth_nodes=4)


@pytest.fixture(scope="session")
def grid():
    return build_grid(4, 3.0)


@pytest.fixture(scope="session")
def model(grid, kernel):
    return KineticModel.build(grid, kernel)


@pytest.fixture(scope="session")
def grid6():
    return build_grid(6, 4.5)


@pytest.fixture(scope="session")
def model6(grid6, kernel):
    return KineticModel.build(grid6, kernel)


@pytest.fixture(scope="session")
def lattice():
    return FourierLattice(max_mode=2, reduced_axis=True, axis=0)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def make_fields(rng):
    """Real-valued mode fields with Maxwellian-weighted random velocity profiles, scaled to an L2 size."""

    def build(lattice, model, amplitude=0.01):
        shape = (lattice.size, model.node_count)
        weight = np.sqrt(model.grid.sqrt_mu)
        fields = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * weight
        fields = lattice.enforce_reality(fields)
        fields[lattice.zero_index] = model.basis.complement(fields[lattice.zero_index].real)
        return amplitude * fields / np.sqrt(model.grid.weight * np.sum(np.abs(fields) ** 2))

    return build


@pytest.fixture(scope="session")
def hypo_search(model6):
    """Modified-norm parameters for model6 on the first lattice shells, eps in [0.1, 1]."""
    xi_list = [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0), (2.0, 0.0, 0.0), (1.0, 1.0, 0.0)]
    return search_hypo_params(model6.L, model6.grid, model6.gram, xi_list, [1.0, 0.5, 0.1], samples=4, rng=np.random.default_rng(0))
