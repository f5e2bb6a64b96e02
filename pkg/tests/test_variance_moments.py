import numpy as np
import pytest

from services.hamiltonian_model import ModelConfig
from services.spectral_solver import StateVector
from services.variance_moments import PurityProfile, ghz_state
from utils.errors import DimensionError, DomainError, StateValidationError


def _basis_state(n, index=0):
    amps = np.zeros(2 ** n, dtype=complex)
    amps[index] = 1.0
    return StateVector(n=n, amplitudes=amps)


def test_bell_state_variance(moments, bell):
    assert moments.state_variance(bell, ModelConfig(n=2, p=2)) == pytest.approx(3.0, abs=1e-12)
    assert moments.purity_variance(bell, 2, 2) == pytest.approx(3.0, abs=1e-12)
    profile = moments.purity_profile(bell, 2)
    assert profile.A == pytest.approx((1.0, 0.5, 1.0))


def test_product_state_variance_is_one(moments):
    state = _basis_state(5)
    assert moments.state_variance(state, ModelConfig(n=5, p=3)) == pytest.approx(1.0)
    assert moments.purity_variance(state, 5, 3) == pytest.approx(1.0)


def test_pauli_expectations_of_basis_state(moments):
    values = moments.pauli_expectations(_basis_state(4), ModelConfig(n=4, p=2))
    assert len(values) == 54
    assert np.sum(np.isclose(values, 1.0)) == 6
    assert np.sum(np.isclose(values, 0.0)) == 48


def test_purity_expansion_matches_direct_sum(moments, spectral):
    for seed in range(3):
        state = spectral.haar_state(4, seed=seed)
        direct = moments.state_variance(state, ModelConfig(n=4, p=2))
        assert moments.purity_variance(state, 4, 2) == pytest.approx(direct, abs=1e-10)


def test_adjusted_model_variance_is_average_purity(moments, spectral):
    state = spectral.haar_state(4, seed=5)
    for p in (1, 2, 3):
        result = moments.variance_additivity_check(state, ModelConfig(n=4, p=p))
        assert result["adjusted_from_terms"] == pytest.approx(result["adjusted_variance"], abs=1e-10)
        assert result["adjusted_variance"] <= 1.0 + 1e-12


def test_adjusted_variance_of_bell_state(moments, bell):
    result = moments.variance_additivity_check(bell, ModelConfig(n=2, p=2))
    assert result["adjusted_variance"] == pytest.approx(1.0)
    assert result["adjusted_from_terms"] == pytest.approx(1.0)


def test_haar_average_matches_target(moments):
    result = moments.haar_variance_check(4, 2, samples=1000, seed=1)
    assert result["target"] == pytest.approx(9 / 17)
    assert abs(result["empirical_mean"] - result["target"]) <= 4 * result["stderr"]


def test_variance_table_rows(moments):
    rows = moments.variance_table(3, 2, samples=4, seed=2)
    assert len(rows) == 4
    assert list(rows[0]) == ["n", "p", "seed", "state_variance", "purity_variance", "adjusted_variance"]
    for row in rows:
        assert row["purity_variance"] == pytest.approx(row["state_variance"], abs=1e-10)


def test_ghz_state():
    state = ghz_state(3)
    assert state.amplitudes[0] == pytest.approx(1 / np.sqrt(2))
    assert state.amplitudes[-1] == pytest.approx(1 / np.sqrt(2))
    with pytest.raises(DomainError):
        ghz_state(0)


def test_validation(moments, bell):
    with pytest.raises(DimensionError):
        moments.state_variance(bell, ModelConfig(n=3, p=2))
    with pytest.raises(DomainError):
        moments.purity_profile(bell, 3)
    with pytest.raises(StateValidationError):
        PurityProfile(n=2, p=1, A=(0.9, 0.5))


def test_odd_parity_expectation_is_minus_one(moments, model):
    config = ModelConfig(n=2, p=2)
    state = StateVector.from_amplitudes([0.0, 1.0, 0.0, 0.0])
    values = moments.pauli_expectations(state, config)
    assert values[model.term_table(config).index_of("Z0 Z1")] == -1.0
    assert set(np.round(values, 12).tolist()) == {-1.0, 0.0}
    assert moments.state_variance(state, config) == pytest.approx(1.0)
