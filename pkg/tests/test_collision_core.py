from itertools import combinations_with_replacement

import numpy as np
import pytest

from boltzmann_nsf.collision_core import (
    CONSERVATION_TOLERANCE,
    ENERGY_DEFECT_TOLERANCE,
    CollisionKernel,
    assemble_L,
    coercivity_report,
    collision_q,
    cubic_permutations,
    gamma_bilinear,
    moment_defects,
    post_collision,
    reference_perturbation,
)
from boltzmann_nsf.exceptions import DenseBudgetError, KernelError
from boltzmann_nsf.macro_projection import macro_basis
from boltzmann_nsf.model import KineticModel
from boltzmann_nsf.velocity_space import build_grid, norm_sandwich_constant


@pytest.mark.parametrize(
    "params",
    [
        {"s": 0.0},
        {"s": 1.0},
        {"theta_min": 0.0},
        {"theta_min": np.pi / 2},
        {"gamma": -2.0, "s": 0.25},
        {"azimuth_nodes": 3},
        {"angular_range": "quarter"},
    ],
)
def test_kernel_rejects_invalid_parameters(params):
    with pytest.raises(KernelError):
        CollisionKernel(**params)


def test_soft_potentials_need_explicit_opt_in():
    kernel = CollisionKernel(gamma=-2.0, s=0.25, allow_soft=True)
    assert kernel.gamma + 2 * kernel.s < 0


@pytest.mark.parametrize("angular_range", ["half", "full"])
def test_sigma_quadrature_covers_the_sphere(angular_range):
    quad = CollisionKernel(theta_nodes=8, azimuth_nodes=4, angular_range=angular_range).sigma_quadrature
    assert np.sum(quad.weights) == pytest.approx(4 * np.pi, rel=1e-10)
    assert np.allclose(np.linalg.norm(quad.local_vectors, axis=1), 1.0)


def test_angular_kernel_is_cut_off_outside_the_band():
    kernel = CollisionKernel(theta_min=0.1)
    assert kernel.b(0.05) == 0.0
    assert kernel.b(2.0) == 0.0
    assert kernel.b(0.5) == pytest.approx(kernel.b_amplitude * 0.5 ** -1.5)


def test_post_collision_conserves_momentum_and_energy(rng):
    v, v_star = rng.standard_normal(3), rng.standard_normal(3)
    sigma = rng.standard_normal(3)
    sigma /= np.linalg.norm(sigma)
    v_p, v_sp = post_collision(v, v_star, sigma)
    assert np.allclose(v_p + v_sp, v + v_star)
    assert np.dot(v_p, v_p) + np.dot(v_sp, v_sp) == pytest.approx(np.dot(v, v) + np.dot(v_star, v_star))


def test_gamma_vanishes_on_the_maxwellian(grid, kernel):
    out = gamma_bilinear(grid.sqrt_mu, grid.sqrt_mu, grid, kernel, conservative=False)
    assert np.max(np.abs(out)) <= 1e-12


def test_gamma_output_is_microscopic(grid, kernel, rng):
    f = rng.standard_normal(grid.node_count) * np.sqrt(grid.sqrt_mu)
    g = rng.standard_normal(grid.node_count) * np.sqrt(grid.sqrt_mu)
    out = gamma_bilinear(f, g, grid, kernel)
    projected = macro_basis(grid).project(out)
    assert np.linalg.norm(projected) <= 1e-12 * max(np.linalg.norm(out), 1.0)


def test_gamma_accepts_complex_batches(grid, kernel, rng):
    f = rng.standard_normal((3, grid.node_count)) + 1j * rng.standard_normal((3, grid.node_count))
    g = rng.standard_normal((3, grid.node_count))
    batch = gamma_bilinear(f, g, grid, kernel)
    assert batch.shape == (3, grid.node_count)
    single = gamma_bilinear(f[1], g[1], grid, kernel)
    assert np.allclose(batch[1], single)
    split = gamma_bilinear(f[1].real, g[1], grid, kernel) + 1j * gamma_bilinear(f[1].imag, g[1], grid, kernel)
    assert np.allclose(batch[1], split)


def test_collision_operator_conserves_invariants(grid, kernel, rng):
    F = grid.maxwellian.mu + 0.1 * grid.sqrt_mu * rng.standard_normal(grid.node_count)
    Q = collision_q(F, F, grid, kernel)
    invariants = np.column_stack([np.ones(grid.node_count), grid.nodes, grid.maxwellian.speed_sq])
    l1 = grid.weight * np.sum(np.abs(Q))
    assert np.max(np.abs(grid.weight * Q @ invariants)) <= 1e-6 * l1


def test_half_and_full_angular_range_agree(grid, rng):
    half = CollisionKernel(theta_nodes=8, azimuth_nodes=4)
    full = CollisionKernel(theta_nodes=8, azimuth_nodes=4, angular_range="full")
    f = rng.standard_normal(grid.node_count) * np.sqrt(grid.sqrt_mu)
    a = gamma_bilinear(f, f, grid, half)
    b = gamma_bilinear(f, f, grid, full)
    assert np.linalg.norm(a - b) <= 1e-8 * np.linalg.norm(a)


def test_assembled_operator_structure(model6):
    L = model6.L
    assert np.allclose(L.matrix, L.matrix.T, atol=1e-12 * np.abs(L.matrix).max())
    assert L.kernel_dimension == 5
    assert L.spectral_gap_estimate > 0
    assert np.max(L.eigenvalues) <= 1e-10 * np.abs(L.eigenvalues).max()
    kernel_fields = macro_basis(model6.grid).orthonormal.T
    assert np.max(np.abs(L.apply(kernel_fields))) <= 1e-10 * np.abs(L.matrix).max()


def test_operator_is_the_linearization_of_gamma(grid6, kernel, rng):
    L = assemble_L(grid6, kernel, cubic_symmetrize=False)
    f = macro_basis(grid6).complement(rng.standard_normal(grid6.node_count) * np.sqrt(grid6.sqrt_mu))
    expected = gamma_bilinear(grid6.sqrt_mu, f, grid6, kernel) + gamma_bilinear(f, grid6.sqrt_mu, grid6, kernel)
    assert np.linalg.norm(L.apply(f) - expected) <= 1e-8 * np.linalg.norm(expected)


def test_operator_respects_dense_budget(grid6, kernel):
    with pytest.raises(DenseBudgetError):
        assemble_L(grid6, kernel, budget=100)


def test_coercivity_fit_is_positive(model6, rng):
    report = coercivity_report(model6.L, model6.gram, samples=50, rng=rng)
    assert report.lambda_fit > 0
    assert report.ratios.shape == (50,)
    with pytest.raises(ValueError):
        coercivity_report(model6.L, model6.gram, samples=5)


def test_cubic_permutations_are_bijections(grid):
    perms = cubic_permutations(grid)
    assert len(perms) == 48
    for perm in perms:
        assert np.array_equal(np.sort(perm), np.arange(grid.node_count))


def test_cubic_symmetry_of_the_operator(model6):
    matrix = model6.L.matrix
    for perm in cubic_permutations(model6.grid)[:8]:
        assert np.allclose(matrix[np.ix_(perm, perm)], matrix, atol=1e-12 * np.abs(matrix).max())


@pytest.mark.slow
def test_halving_the_angular_cutoff_changes_little(rng):
    grid = build_grid(8, 6.0)
    coarse = CollisionKernel(theta_min=0.05)
    fine = CollisionKernel(theta_min=0.025)
    f = rng.standard_normal(grid.node_count) * np.sqrt(grid.sqrt_mu)
    a = gamma_bilinear(f, f, grid, coarse)
    b = gamma_bilinear(f, f, grid, fine)
    assert np.linalg.norm(a - b) <= 0.02 * np.linalg.norm(a)
    gap_coarse = assemble_L(grid, coarse).spectral_gap_estimate
    gap_fine = assemble_L(grid, fine).spectral_gap_estimate
    assert abs(gap_fine - gap_coarse) <= 0.1 * gap_coarse


def test_symmetric_gamma_conserves_mass_and_momentum_without_correction(grid, kernel):
    defects = moment_defects(reference_perturbation(grid), grid, kernel)
    assert defects["mass"] <= CONSERVATION_TOLERANCE
    assert defects["momentum"] <= CONSERVATION_TOLERANCE
    assert defects["energy"] <= ENERGY_DEFECT_TOLERANCE


def test_energy_defect_shrinks_with_the_cell_spacing(kernel):
    coarse = build_grid(4, 3.0)
    fine = build_grid(6, 3.0)
    e_coarse = moment_defects(reference_perturbation(coarse), coarse, kernel)["energy"]
    e_fine = moment_defects(reference_perturbation(fine), fine, kernel)["energy"]
    assert e_fine < e_coarse


@pytest.mark.slow
def test_energy_defect_decreases_along_a_refinement_sequence(kernel):
    energies = []
    for n in (4, 6, 8):
        grid = build_grid(n, 3.0)
        defects = moment_defects(reference_perturbation(grid), grid, kernel)
        assert defects["momentum"] <= CONSERVATION_TOLERANCE
        energies.append(defects["energy"])
    assert energies[0] > energies[1] > energies[2]


def test_uncompressed_operator_annihilates_mass_and_momentum(grid, kernel):
    L = assemble_L(grid, kernel, compress=False)
    fields = np.vstack([grid.sqrt_mu, (grid.nodes * grid.sqrt_mu[:, None]).T])
    scale = np.abs(L.matrix).max() * np.abs(fields).max() * grid.node_count
    assert np.max(np.abs(L.apply(fields))) <= 1e-12 * scale
    assert L.kernel_dimension >= 4


def _polynomial_fields(grid, coefficients):
    """Rows of coefficients over the monomials of degree <= 3, times sqrt(mu)."""
    v = grid.nodes
    monomials = [np.ones(grid.node_count)]
    for degree in (1, 2, 3):
        monomials += [np.prod(v[:, list(axes)], axis=1) for axes in combinations_with_replacement(range(3), degree)]
    return coefficients @ np.array(monomials) * grid.sqrt_mu


@pytest.mark.slow
def test_coercivity_and_norm_sandwich_are_stable_under_refinement(kernel):
    coefficients = np.random.default_rng(7).standard_normal((100, 20))
    lambdas, sandwiches = [], []
    for n in (8, 12):
        model = KineticModel.build(build_grid(n, 4.5), kernel)
        fields = _polynomial_fields(model.grid, coefficients)
        lambdas.append(coercivity_report(model.L, model.gram, fields=fields).lambda_fit)
        sandwiches.append(norm_sandwich_constant(model.grid, kernel, gram=model.gram, fields=fields))
    assert lambdas[1] == pytest.approx(lambdas[0], rel=0.2)
    assert sandwiches[1] == pytest.approx(sandwiches[0], rel=0.2)


def test_coercivity_accepts_a_fixed_sample_set(model6):
    fields = _polynomial_fields(model6.grid, np.random.default_rng(7).standard_normal((12, 20)))
    report = coercivity_report(model6.L, model6.gram, fields=fields)
    assert report.ratios.shape == (12,)
    assert np.linalg.norm(model6.basis.project(report.witness)) <= 1e-10 * np.linalg.norm(report.witness)
