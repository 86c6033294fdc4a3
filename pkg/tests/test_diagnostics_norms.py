import numpy as np
import pytest

from boltzmann_nsf.diagnostics_norms import (
    ALTERNATIVES,
    NormRecorder,
    base_trilinear_ratios,
    energy_functional,
    fit_decay_rate,
    hs_double_star_norm,
    hs_star_norms,
    l2_norms,
    norm_frame,
    time_l2,
    time_sup,
    trilinear_constant_report,
    xi_aggregate,
)
from boltzmann_nsf.kinetic_solver import KineticState, PropagatorCache, linear_trajectory
from boltzmann_nsf.lattice import FourierLattice
from boltzmann_nsf.macro_projection import lift_fluid


def _recorder(model, lattice, **kwargs):
    return NormRecorder(model.grid, model.gram, lattice.size, **kwargs)


def test_xi_aggregate():
    values = np.array([3.0, -4.0])
    assert xi_aggregate(values, 1) == pytest.approx(7.0)
    assert xi_aggregate(values, 2) == pytest.approx(5.0)
    assert xi_aggregate(values, np.inf) == pytest.approx(4.0)
    assert xi_aggregate(values, 2, cell_volume=4.0) == pytest.approx(10.0)


def test_time_norms():
    values = np.array([[1.0], [-3.0], [2.0]])
    assert time_sup(values)[0] == 3.0
    assert time_l2(values, 0.5)[0] == pytest.approx(np.sqrt(0.5 * (0.5 + 9.0 + 2.0)))
    assert time_l2(values[:1], 0.5)[0] == 0.0


def test_recorder_of_zero_stream(model, lattice):
    recorder = _recorder(model, lattice)
    state = KineticState.zeros(0.5, lattice, model.node_count)
    for _ in range(4):
        recorder.record(state, 0.1)
    assert recorder.linf_l2() == 0.0
    assert recorder.l2_l2() == 0.0
    assert energy_functional(recorder, 0.5) == 0.0


def test_recorder_integrates_a_constant_stream(model, lattice, make_fields):
    fields = make_fields(lattice, model, amplitude=0.2)
    state = KineticState(0.5, 0.0, lattice, fields)
    recorder = _recorder(model, lattice, p=2.0)
    for _ in range(11):
        recorder.record(state, 0.1)
    assert recorder.time == pytest.approx(1.0)
    per_mode = l2_norms(fields, model.grid)
    assert np.allclose(recorder.sup_l2, per_mode)
    assert np.allclose(recorder.int_l2_sq, per_mode ** 2)
    assert recorder.l2_l2() == pytest.approx(0.2)
    assert recorder.to_frame().shape == (lattice.size, 5)


def test_exponential_weight_grows_the_sup(model, lattice, make_fields):
    fields = make_fields(lattice, model)
    state = KineticState(0.5, 0.0, lattice, fields)
    plain = _recorder(model, lattice)
    weighted = _recorder(model, lattice, weight="exp", rate=1.0)
    for _ in range(3):
        plain.record(state, 0.5)
        weighted.record(state, 0.5)
    assert weighted.linf_l2() == pytest.approx(np.e * plain.linf_l2())
    with pytest.raises(ValueError):
        _recorder(model, lattice, weight="linear")


def test_recorder_is_deterministic(model, lattice, make_fields):
    fields = make_fields(lattice, model)
    results = []
    for _ in range(2):
        recorder = _recorder(model, lattice)
        for t in range(3):
            recorder.record(KineticState(0.5, 0.0, lattice, fields * (1 + t)), 0.1)
        results.append(norm_frame(recorder, 0.5))
    assert results[0].equals(results[1])
    assert list(results[0].columns) == ["eps", "T", "linf_l2", "l2_micro_hs", "l2_macro_l2", "energy", "weight", "rate"]


def test_recorder_rejects_nonpositive_steps(model, lattice):
    recorder = _recorder(model, lattice)
    state = KineticState.zeros(0.5, lattice, model.node_count)
    recorder.record(state, 0.1)
    with pytest.raises(ValueError):
        recorder.record(state, 0.0)


def test_double_star_norm_splits_micro_and_macro(model, rng):
    grid = model.grid
    micro = model.basis.complement(rng.standard_normal(grid.node_count) * np.sqrt(grid.sqrt_mu))
    expected = hs_star_norms(micro, model.gram)
    assert hs_double_star_norm(micro, (0.0, 0.0, 0.0), model.gram, grid) == pytest.approx(expected, rel=1e-10)
    macro = lift_fluid(np.array([1.0, 0.0, 0.5, 0.0, -1.0]), grid)
    assert hs_double_star_norm(macro, (0.0, 0.0, 0.0), model.gram, grid) <= 1e-10 * l2_norms(macro, grid)
    far = hs_double_star_norm(macro, (1e4, 0.0, 0.0), model.gram, grid)
    assert far == pytest.approx(l2_norms(macro, grid), rel=1e-6)


def test_fit_decay_rate():
    times = np.linspace(0.0, 3.0, 31)
    assert fit_decay_rate(times, 5.0 * np.exp(-2.0 * times)) == pytest.approx(2.0)
    assert fit_decay_rate(times, np.exp(-times) + np.exp(-10 * times), skip=2.0) == pytest.approx(1.0, rel=1e-3)
    with pytest.raises(ValueError):
        fit_decay_rate(times[:1], np.ones(1))


def test_trilinear_report(model, rng):
    lattice = FourierLattice(max_mode=1)
    steps = 3
    shape = (steps, lattice.size, model.node_count)
    weight = np.sqrt(model.grid.sqrt_mu)

    def trajectory():
        fields = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * weight
        return 0.1 * np.stack([lattice.enforce_reality(step) for step in fields])

    samples = [(np.zeros(shape), trajectory()), (trajectory(), trajectory())]
    triples = [
        tuple(model.basis.complement(rng.standard_normal(model.node_count) * weight) for _ in range(3))
        for _ in range(2)
    ]
    report = trilinear_constant_report(samples, model, lattice, 0.1, triples=triples)
    assert report.skipped == 1
    assert set(report.alternatives) == set(ALTERNATIVES)
    assert report.finite
    assert all(value > 0 for value in report.alternatives.values())
    assert report.base == pytest.approx(base_trilinear_ratios(triples, model).max())


def test_trilinear_report_with_only_zero_samples(model):
    lattice = FourierLattice(max_mode=1)
    zeros = np.zeros((2, lattice.size, model.node_count))
    report = trilinear_constant_report([(zeros, zeros)], model, lattice, 0.1)
    assert report.skipped == 1
    assert np.isnan(report.base)
    assert all(np.isnan(value) for value in report.alternatives.values())


def test_energy_functional_is_bounded_uniformly_in_eps(model6, lattice, make_fields, hypo_search):
    f0 = make_fields(lattice, model6, amplitude=0.01)
    data = xi_aggregate(l2_norms(f0, model6.grid))
    rate = hypo_search.report.lambda0 / 4.0
    dt, steps = 0.01, 100
    plain, weighted = [], []
    for eps in (1.0, 0.5, 0.25):
        trajectory = linear_trajectory(f0, steps, dt, PropagatorCache(model6, lattice, eps))
        recorders = (_recorder(model6, lattice), _recorder(model6, lattice, weight="exp", rate=rate))
        for n in range(steps + 1):
            for recorder in recorders:
                recorder.record(trajectory.state(n), dt)
        plain.append(energy_functional(recorders[0], eps) / data)
        weighted.append(energy_functional(recorders[1], eps) / data)
    assert min(plain) >= 1.0
    assert max(plain) <= 4.0 * min(plain)
    assert np.all(np.isfinite(weighted))
    assert max(weighted) <= 4.0 * min(weighted)
