import numpy as np
import pytest

from boltzmann_nsf.macro_projection import (
    MacroTriple,
    aux_moments,
    lift_fluid,
    macro_basis,
    moments,
    project_P,
    project_Pperp,
)


def test_moments_invert_the_lift(grid6, rng):
    m = rng.standard_normal((7, 5))
    lifted = lift_fluid(m, grid6)
    back = moments(lifted, grid6).as_vector()
    assert np.allclose(back, m, atol=1e-10)


def test_lift_accepts_macro_triples(grid6):
    triple = MacroTriple(rho=0.3, u=np.array([0.0, 1.0, -2.0]), theta=-0.5)
    assert np.allclose(lift_fluid(triple, grid6), lift_fluid(triple.as_vector(), grid6))
    back = MacroTriple.from_vector(triple.as_vector())
    assert back.rho == pytest.approx(0.3) and back.theta == pytest.approx(-0.5)


def test_lift_is_close_to_the_bracketed_field(grid6):
    v, sqrt_mu = grid6.nodes, grid6.sqrt_mu
    exact = (0.2 + v @ np.array([0.1, 0.0, 0.3]) + 0.4 * (grid6.maxwellian.speed_sq - 3.0) / 2.0) * sqrt_mu
    lifted = lift_fluid(np.array([0.2, 0.1, 0.0, 0.3, 0.4]), grid6)
    assert np.linalg.norm(lifted - exact) <= 0.1 * np.linalg.norm(exact)


def test_projector_is_idempotent_and_orthogonal(grid6, rng):
    f = rng.standard_normal(grid6.node_count)
    p = project_P(f, grid6)
    assert np.allclose(project_P(p, grid6), p, atol=1e-10)
    perp = project_Pperp(f, grid6)
    assert np.allclose(p + perp, f)
    assert abs(grid6.weight * np.dot(p, perp)) <= 1e-12 * np.dot(f, f)
    assert np.allclose(moments(perp, grid6).as_vector(), 0.0, atol=1e-10)


def test_projector_matrix_is_symmetric_rank_five(grid6):
    P = macro_basis(grid6).matrix()
    assert np.allclose(P, P.T)
    assert np.allclose(P @ P, P, atol=1e-12)
    assert np.trace(P) == pytest.approx(5.0)


def test_boussinesq_lift_has_opposite_density_and_temperature(grid6):
    lifted = lift_fluid(np.array([-1.0, 0.0, 0.0, 0.0, 1.0]), grid6)
    m = moments(lifted, grid6)
    assert float(m.rho + m.theta) == pytest.approx(0.0, abs=1e-12)


def test_auxiliary_moments_vanish_on_the_maxwellian(grid6):
    M, Theta = aux_moments(grid6.sqrt_mu, grid6)
    assert np.allclose(M, 0.0, atol=1e-12)
    off_diagonal = Theta - np.diag(np.diag(Theta))
    assert np.allclose(off_diagonal, 0.0, atol=1e-12)
    assert Theta.shape == (3, 3)


def test_auxiliary_moments_of_batches(grid6, rng):
    fields = rng.standard_normal((3, grid6.node_count))
    M, Theta = aux_moments(fields, grid6)
    assert M.shape == (3, 3) and Theta.shape == (3, 3, 3)
