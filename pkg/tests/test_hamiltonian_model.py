from functools import reduce

import numpy as np
import pytest
from pydantic import ValidationError

from services.hamiltonian_model import DisorderKind, DisorderSample, DisorderSpec, HamiltonianModel, ModelConfig
from services.pauli_algebra import LETTER_MATRICES, PauliLetter, materialize_word, term_to_word
from utils.errors import CapacityError, DimensionError, DomainError, ParameterError


def test_term_counts_and_canonical_order(model):
    config = ModelConfig(n=4, p=2)
    terms = model.enumerate_terms(config)
    assert config.term_count == 54
    assert len(terms) == 54
    assert terms[0].label() == "X0 X1"
    assert terms[1].label() == "X0 Y1"
    assert terms[9].label() == "X0 X2"
    assert terms[-1].label() == "Z2 Z3"
    assert ModelConfig(n=4, p=2, include_identity_letters=True).term_count == 96
    assert model.term_table(ModelConfig(n=2, p=2)).index_of("Z0 Z1") == 8


def test_unknown_label_is_rejected(model):
    with pytest.raises(ParameterError):
        model.term_table(ModelConfig(n=3, p=2)).index_of("X0 X0")


def test_locality_larger_than_qubits_is_domain_error(model):
    with pytest.raises(DomainError):
        model.term_table(ModelConfig(n=2, p=3))
    with pytest.raises(DomainError):
        model.sample_disorder(ModelConfig(n=2, p=3), DisorderSpec())


def test_normalization():
    assert ModelConfig(n=4, p=2).normalization == pytest.approx(1 / np.sqrt(6))
    assert ModelConfig(n=4, p=2, include_identity_letters=True).normalization == pytest.approx(1 / np.sqrt(24))


def test_sampling_is_deterministic_per_seed(sample_factory):
    a = sample_factory(5, 2, seed=42)
    b = sample_factory(5, 2, seed=42)
    c = sample_factory(5, 2, seed=43)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)
    assert not np.array_equal(a.coefficients, c.coefficients)


def test_gaussian_moments_are_standard(model, sample_factory):
    stats = model.coefficient_moments(sample_factory(8, 3, seed=9))
    assert stats["count"] == 27 * 56
    assert abs(stats["mean"]) <= 4 * stats["mean_stderr"]
    assert abs(stats["second_moment"] - 1.0) <= 4 * stats["second_moment_stderr"]


def test_rademacher_values_are_signs(sample_factory):
    sample = sample_factory(5, 2, seed=1, kind=DisorderKind.RADEMACHER)
    assert set(np.unique(sample.coefficients).tolist()) <= {-1.0, 1.0}


def test_sparse_sampling_shares_the_uniform_stream(model, sample_factory):
    config = ModelConfig(n=10, p=2)
    q = model.sparse_probability(config, 3.0)
    assert q == pytest.approx(3.0 / 90)
    assert model.sparse_pair_probability(config, 3.0) == pytest.approx(q / 2)

    sparse = sample_factory(10, 2, seed=5, kind=DisorderKind.SPARSE_RADEMACHER, average_degree=3.0)
    signs = sample_factory(10, 2, seed=5, kind=DisorderKind.RADEMACHER)
    assert sparse.is_sparse
    np.testing.assert_allclose(np.abs(sparse.values), 1 / np.sqrt(q))
    # u < q < 1/2 时 Rademacher 同一项必为 +1
    assert np.all(signs.coefficients[sparse.indices] == 1.0)
    assert np.all(np.diff(sparse.indices) > 0)


def test_sparse_degree_above_limit_is_rejected(model):
    spec = DisorderSpec(kind=DisorderKind.SPARSE_RADEMACHER, average_degree=1000.0)
    with pytest.raises(ParameterError):
        model.sample_disorder(ModelConfig(n=3, p=2), spec)


def test_sparse_spec_requires_degree():
    with pytest.raises(ValidationError):
        DisorderSpec(kind=DisorderKind.SPARSE_RADEMACHER)


def test_dense_hamiltonian_matches_explicit_pauli_sum(model, sample_factory):
    sample = sample_factory(3, 2, seed=11)
    H = model.materialize_hamiltonian(sample)
    expected = np.zeros((8, 8), dtype=complex)
    for term, value in sample.entries():
        expected += value * materialize_word(term_to_word(term)).entries
    expected *= sample.config.normalization
    assert H.is_hermitian()
    np.testing.assert_allclose(H.entries, expected, atol=1e-12)


def test_adjusted_hamiltonian_matches_explicit_pauli_sum(model, sample_factory):
    sample = sample_factory(3, 2, seed=4, adjusted=True)
    H = model.materialize_hamiltonian(sample)
    expected = sum(value * materialize_word(term_to_word(term)).entries for term, value in sample.entries())
    np.testing.assert_allclose(H.entries, sample.config.normalization * expected, atol=1e-12)


def test_matrix_free_apply_matches_dense(model, sample_factory):
    sample = sample_factory(5, 3, seed=2)
    vector = np.random.default_rng(0).normal(size=32) + 1j * np.random.default_rng(1).normal(size=32)
    dense = model.materialize_hamiltonian(sample).entries @ vector
    np.testing.assert_allclose(model.apply_hamiltonian(sample, vector), dense, atol=1e-10)
    with pytest.raises(DimensionError):
        model.apply_hamiltonian(sample, vector[:16])


@pytest.mark.parametrize("adjusted", [False, True])
def test_product_energy_matches_quadratic_form(model, products, sample_factory, adjusted):
    sample = sample_factory(4, 2, seed=7, adjusted=adjusted)
    state = products.random_product_state(4, seed=3)
    H = model.materialize_hamiltonian(sample)
    expected = H.quadratic_form(products.product_state_vector(state))
    assert model.product_energy(sample, state) == pytest.approx(expected, abs=1e-10)
    assert model.product_energy(sample, state.vectors) == pytest.approx(expected, abs=1e-10)


def test_product_energy_rejects_wrong_shape(model, sample_factory):
    with pytest.raises(DimensionError):
        model.product_energy(sample_factory(4, 2), np.ones((3, 3)))


def test_json_preserves_sparse_sample(sample_factory):
    sample = sample_factory(6, 2, seed=8, kind=DisorderKind.SPARSE_RADEMACHER, average_degree=4.0)
    restored = DisorderSample.from_json(sample.to_json())
    assert restored.is_sparse
    np.testing.assert_array_equal(restored.indices, sample.indices)
    np.testing.assert_array_equal(restored.values, sample.values)


def test_binary_coefficients(sample_factory):
    sample = sample_factory(4, 2, seed=3)
    data = sample.to_bytes()
    assert len(data) == 54 * 8
    restored = DisorderSample.from_bytes(data, sample.config, sample.spec)
    np.testing.assert_array_equal(restored.coefficients, sample.coefficients)
    with pytest.raises(DimensionError):
        DisorderSample.from_bytes(data[:-8], sample.config, sample.spec)


def test_capacity_limits(sample_factory):
    limited = HamiltonianModel(params={'dense_limit': 3, 'matrix_free_limit': 4})
    sample = sample_factory(5, 2)
    with pytest.raises(CapacityError):
        limited.materialize_hamiltonian(sample)
    with pytest.raises(CapacityError):
        limited.matrix_free(sample)


def test_z_sign_diagonal_is_plus_minus_one(model, zz_toy):
    H = model.materialize_hamiltonian(zz_toy)
    np.testing.assert_allclose(H.entries, np.diag([1.0, -1.0, -1.0, 1.0]), atol=1e-15)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("adjusted", [False, True])
def test_hamiltonian_is_hermitian_and_matches_kronecker_build(model, sample_factory, n, adjusted):
    sample = sample_factory(n, 2, seed=3, adjusted=adjusted)
    H = model.materialize_hamiltonian(sample).entries
    np.testing.assert_allclose(H, H.conj().T, atol=1e-12)
    expected = np.zeros((2 ** n, 2 ** n), dtype=complex)
    for term, value in sample.entries():
        letters = dict(zip(term.qubits, term.letters))
        mats = [LETTER_MATRICES[letters.get(q, PauliLetter.I)] for q in range(n)]
        expected += value * reduce(np.kron, mats)
    np.testing.assert_allclose(H, sample.config.normalization * expected, atol=1e-12)
    if not adjusted:
        assert abs(np.trace(H)) <= 1e-12
