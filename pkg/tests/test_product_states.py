from itertools import combinations
from math import comb

import numpy as np
import pytest

from services.hamiltonian_model import DisorderSample, DisorderSpec, ModelConfig
from services.product_states import BlochProductState, OverlapProfile, ProductStateService
from utils.errors import CapacityError, DimensionError, ParameterError, StateValidationError


def test_random_product_state_is_unit_and_reproducible(products):
    a = products.random_product_state(5, seed=1)
    b = products.random_product_state(5, seed=1)
    np.testing.assert_allclose(np.linalg.norm(a.vectors, axis=1), 1.0)
    np.testing.assert_array_equal(a.vectors, b.vectors)


def test_bloch_state_rejects_non_unit_vectors():
    with pytest.raises(StateValidationError):
        BlochProductState(np.array([[1.0, 1.0, 0.0]]))
    with pytest.raises(DimensionError):
        BlochProductState(np.array([1.0, 0.0, 0.0]))


def test_bloch_overlap_matches_state_fidelity(products):
    a = products.random_product_state(1, seed=2)
    b = products.random_product_state(1, seed=3)
    fidelity = abs(np.vdot(products.product_state_vector(a).amplitudes,
                           products.product_state_vector(b).amplitudes)) ** 2
    assert products.bloch_overlap(a.vectors[0], b.vectors[0]) == pytest.approx(2 * fidelity - 1, abs=1e-12)


def test_covariance_is_normalized_elementary_symmetric_polynomial(products):
    R = np.random.default_rng(4).uniform(-1, 1, size=6)
    brute = sum(np.prod(R[list(s)]) for s in combinations(range(6), 3)) / comb(6, 3)
    assert products.covariance(3, OverlapProfile(R)) == pytest.approx(brute, abs=1e-12)
    assert products.covariance(3, OverlapProfile(np.ones(6))) == pytest.approx(1.0)


def test_covariance_matches_monte_carlo(products):
    a = products.random_product_state(4, seed=10)
    b = products.random_product_state(4, seed=11)
    result = products.covariance_matches_monte_carlo(2, a, b, samples=20000, seed=12)
    assert abs(result["empirical"] - result["analytic"]) <= 4 * result["stderr"]


def test_subadditivity_holds_for_even_p(products):
    result = products.subadditivity_check(4, trials=500, seed=1)
    assert result["violations"] == 0
    with pytest.raises(ParameterError):
        products.subadditivity_check(3, trials=10, seed=1)


@pytest.mark.parametrize("epsilon", [0.1, 0.05])
def test_packing_net_is_separated_and_large(products, epsilon):
    net = products.build_packing_net(epsilon)
    gram = np.abs(net.points @ net.points.T)
    np.fill_diagonal(gram, 0.0)
    assert gram.max() <= 1 - epsilon
    assert np.all(net.points[:, 2] >= 0.01)
    assert net.size >= 0.5 / epsilon
    assert net.signed_points().shape == (2 * net.size, 3)


def test_packing_net_rejects_bad_epsilon(products):
    with pytest.raises(ParameterError):
        products.build_packing_net(0.0)
    with pytest.raises(ParameterError):
        products.build_packing_net(0.7)


def test_covering_net_covers_probes(products):
    net = products.build_covering_net(0.2)
    assert net.worst_alignment >= 0.8
    assert net.size >= 5
    assert len(net.rows()) == net.size


def test_net_exceedances_match_direct_enumeration(model, products, sample_factory):
    sample = sample_factory(2, 2, seed=6)
    net = products.build_packing_net(0.3)
    points = net.signed_points()
    direct = sum(
        model.product_energy(sample, np.vstack([a, b])) >= 0.0
        for a in points for b in points
    )
    assert products.count_net_exceedances(sample, net, 0.0) == direct
    assert products.count_net_exceedances(sample, net, float("-inf")) == len(points) ** 2
    assert products.expected_exceedance_count(2, len(points), 0.0) == pytest.approx(len(points) ** 2 / 2)


def test_axis_grid_best_energy_is_consistent(model, products, sample_factory, zz_toy):
    sample = sample_factory(4, 2, seed=13)
    best = products.axis_grid_best(sample)
    assert model.product_energy(sample, best["state"]) == pytest.approx(best["energy"], abs=1e-12)
    assert products.axis_grid_best(zz_toy)["energy"] == pytest.approx(1.0)


def test_enumeration_limit(model, products, sample_factory):
    limited = ProductStateService(model, dict(products.params, enumeration_limit=10))
    with pytest.raises(CapacityError):
        limited.axis_grid_best(sample_factory(4, 2))


def test_coordinate_ascent_is_monotone_and_bounded(model, products, spectral, sample_factory):
    sample = sample_factory(5, 2, seed=21)
    init = products.random_product_state(5, seed=22)
    result = products.optimize_product_state(sample, init)
    trace = np.asarray(result["update_trace"])
    assert np.all(np.diff(trace) >= -1e-12)
    assert result["energy"] >= model.product_energy(sample, init) - 1e-12
    lam = spectral.dense_spectrum(model.materialize_hamiltonian(sample))[-1]
    assert result["energy"] <= lam + 1e-9
    assert result["converged"]


def test_coordinate_ascent_leaves_the_zero_field_saddle(products, zz_toy):
    init = BlochProductState.uniform(2, [1.0, 0.0, 0.0])
    result = products.optimize_product_state(zz_toy, init)
    assert result["energy"] == pytest.approx(1.0)


def test_coordinate_ascent_rejects_mismatched_state(products, sample_factory):
    with pytest.raises(DimensionError):
        products.optimize_product_state(sample_factory(4, 2), products.random_product_state(3, seed=0))


def test_multistart_is_deterministic(products, sample_factory):
    sample = sample_factory(5, 3, seed=30)
    a = products.optimize_multistart(sample, restarts=4, seed=1)
    b = products.optimize_multistart(sample, restarts=4, seed=1)
    assert a["restart_energies"] == b["restart_energies"]
    assert a["energy"] == max(a["restart_energies"])
    assert a["energy"] >= a["best_initial_energy"] - 1e-12


def test_zero_disorder_leaves_state_unchanged(products):
    config = ModelConfig(n=3, p=2)
    sample = DisorderSample(config=config, spec=DisorderSpec(), coefficients=np.zeros(config.term_count))
    init = products.random_product_state(3, seed=5)
    result = products.optimize_product_state(sample, init)
    assert result["energy"] == 0.0
    assert result["converged"]
    np.testing.assert_array_equal(result["state"].vectors, init.vectors)


def test_untouched_qubit_keeps_its_vector(products, model):
    config = ModelConfig(n=3, p=2)
    coefficients = np.zeros(config.term_count)
    coefficients[model.term_table(config).index_of("Z0 Z1")] = 1.0
    sample = DisorderSample(config=config, spec=DisorderSpec(), coefficients=coefficients)
    init = products.random_product_state(3, seed=6)
    result = products.optimize_product_state(sample, init)
    np.testing.assert_array_equal(result["state"].vectors[2], init.vectors[2])
    assert result["energy"] == pytest.approx(1.0 / np.sqrt(3))


def test_multistart_rejects_zero_restarts(products, sample_factory):
    with pytest.raises(ParameterError):
        products.optimize_multistart(sample_factory(3, 2), restarts=0)
