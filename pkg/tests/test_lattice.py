import numpy as np
import pytest

from boltzmann_nsf.lattice import FourierLattice


@pytest.mark.parametrize("kwargs", [{"max_mode": 0}, {"axis": 3}])
def test_invalid_lattices(kwargs):
    with pytest.raises(ValueError):
        FourierLattice(**kwargs)


@pytest.mark.parametrize("reduced_axis, size", [(True, 5), (False, 125)])
def test_modes_are_closed_under_negation(reduced_axis, size):
    lattice = FourierLattice(max_mode=2, reduced_axis=reduced_axis)
    assert lattice.size == size
    assert np.array_equal(lattice.modes[lattice.negation], -lattice.modes)
    assert tuple(lattice.modes[lattice.zero_index]) == (0, 0, 0)


def test_reduced_axis_modes_follow_the_axis():
    lattice = FourierLattice(max_mode=3, axis=2)
    assert np.all(lattice.modes[:, :2] == 0)
    assert lattice.collocation_points == 10


@pytest.mark.parametrize("reduced_axis", [True, False])
def test_transforms_are_inverse(reduced_axis, rng):
    lattice = FourierLattice(max_mode=1, reduced_axis=reduced_axis)
    fields = rng.standard_normal((lattice.size, 4)) + 1j * rng.standard_normal((lattice.size, 4))
    values = lattice.to_physical(fields)
    assert values.shape == (lattice.collocation_points ** lattice.dims, 4)
    assert np.allclose(lattice.from_physical(values), fields)


def test_products_of_single_modes_are_exact():
    lattice = FourierLattice(max_mode=2)
    a = np.zeros((lattice.size, 1), dtype=complex)
    b = np.zeros((lattice.size, 1), dtype=complex)
    a[lattice.index[(2, 0, 0)]] = 1.0
    b[lattice.index[(-1, 0, 0)]] = 2.0
    product = lattice.from_physical(lattice.to_physical(a) * lattice.to_physical(b))
    expected = np.zeros_like(a)
    expected[lattice.index[(1, 0, 0)]] = 2.0
    assert np.allclose(product, expected)


def test_products_are_truncated_without_aliasing():
    lattice = FourierLattice(max_mode=2)
    a = np.zeros((lattice.size, 1), dtype=complex)
    a[lattice.index[(2, 0, 0)]] = 1.0
    product = lattice.from_physical(lattice.to_physical(a) ** 2)
    assert np.allclose(product, 0.0)


def test_reality_helpers(rng):
    lattice = FourierLattice(max_mode=2, reduced_axis=False)
    fields = rng.standard_normal((lattice.size, 3)) + 1j * rng.standard_normal((lattice.size, 3))
    assert lattice.reality_defect(fields) > 0
    real = lattice.enforce_reality(fields)
    assert lattice.reality_defect(real) <= 1e-15
    assert np.allclose(lattice.to_physical(real).imag, 0.0, atol=1e-12)
