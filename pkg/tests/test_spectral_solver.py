import numpy as np
import pytest

from services.hamiltonian_model import DisorderSample, DisorderSpec, ModelConfig
from services.spectral_solver import DenseOperator, SpectralSolver, StateVector
from utils.errors import CapacityError, ConvergenceError, DimensionError, DomainError, StateValidationError


def test_dense_spectrum_is_sorted_and_hermitian(model, spectral, sample_factory):
    H = model.materialize_hamiltonian(sample_factory(4, 2, seed=1))
    spectrum = spectral.dense_spectrum(H)
    assert len(spectrum) == 16
    assert np.all(np.diff(spectrum) >= 0)
    assert spectral.lambda_max(H) == pytest.approx(spectrum[-1], abs=1e-12)
    assert len(spectral.spectrum_rows(H)) == 16


def test_lanczos_agrees_with_dense(model, spectral, sample_factory):
    sample = sample_factory(7, 2, seed=3)
    dense = spectral.dense_spectrum(model.materialize_hamiltonian(sample))[-1]
    assert spectral.lambda_max(model.matrix_free(sample)) == pytest.approx(dense, abs=1e-8)


def test_zero_operator_has_zero_lambda_max(model, spectral):
    config = ModelConfig(n=7, p=2)
    sample = DisorderSample(config=config, spec=DisorderSpec(), coefficients=np.zeros(config.term_count))
    assert spectral.lambda_max(model.matrix_free(sample)) == 0.0


def test_unreachable_residual_raises_convergence_error(model, spectral, sample_factory):
    operator = model.matrix_free(sample_factory(7, 2, seed=4))
    with pytest.raises(ConvergenceError) as info:
        spectral.lambda_max(operator, tol=1e-30)
    assert info.value.residual > 0


@pytest.mark.parametrize("beta", [1.0, 10.0, 100.0])
def test_free_energy_is_sandwiched(model, spectral, sample_factory, beta):
    H = model.materialize_hamiltonian(sample_factory(4, 3, seed=5))
    lam = spectral.dense_spectrum(H)[-1]
    F = spectral.log_partition(H, beta)
    assert lam - 1e-12 <= F <= lam + 4 * np.log(2) / beta + 1e-12


def test_free_energy_requires_positive_beta(model, spectral, sample_factory):
    H = model.materialize_hamiltonian(sample_factory(3, 2))
    with pytest.raises(DomainError):
        spectral.log_partition(H, 0.0)


def test_bell_marginal_is_maximally_mixed(spectral, bell):
    rho = spectral.partial_trace(bell, [0])
    np.testing.assert_allclose(rho.entries, np.eye(2) / 2, atol=1e-12)
    assert spectral.purity(rho) == pytest.approx(0.5)


def test_partial_trace_paths_agree(spectral):
    state = spectral.haar_state(4, seed=7)
    from_state = spectral.partial_trace(state, [1, 3])
    from_rho = spectral.partial_trace(state.density_matrix(), [3, 1])
    np.testing.assert_allclose(from_state.entries, from_rho.entries, atol=1e-12)
    assert np.trace(from_state.entries).real == pytest.approx(1.0)


def test_partial_trace_rejects_bad_subsets(spectral):
    state = spectral.haar_state(3, seed=0)
    with pytest.raises(DomainError):
        spectral.partial_trace(state, [0, 0])
    with pytest.raises(DomainError):
        spectral.partial_trace(state, [3])


def test_haar_state_is_normalized_and_seeded(spectral):
    a = spectral.haar_state(5, seed=11)
    b = spectral.haar_state(5, seed=11)
    assert np.linalg.norm(a.amplitudes) == pytest.approx(1.0)
    np.testing.assert_array_equal(a.amplitudes, b.amplitudes)
    with pytest.raises(CapacityError):
        spectral.haar_state(spectral.dense_limit + 1, seed=0)


def test_state_vector_validation():
    with pytest.raises(StateValidationError):
        StateVector(n=1, amplitudes=np.array([1.0, 1.0], dtype=complex))
    with pytest.raises(DimensionError):
        StateVector(n=2, amplitudes=np.array([1.0, 0.0], dtype=complex))
    with pytest.raises(DimensionError):
        DenseOperator(n=2, entries=np.eye(2, dtype=complex))
    assert StateVector.from_amplitudes([1, 1j]).n == 1


def test_concentration_summary():
    summary = SpectralSolver.concentration_summary([1.0, 2.0, 3.0], n=4, p=2)
    assert summary["std_sqrt_n"] == pytest.approx(2.0)
    assert summary["t"] == pytest.approx(0.5)
    assert summary["tail_bound"] == 1.0


def test_small_matrix_free_operator_uses_dense_path(model, spectral, sample_factory):
    sample = sample_factory(1, 1, seed=2)
    dense = spectral.dense_spectrum(model.materialize_hamiltonian(sample))[-1]
    assert spectral.lambda_max(model.matrix_free(sample)) == pytest.approx(dense, abs=1e-12)


def test_apply_only_operator_is_supported(spectral):
    matrix = np.diag([0.5, -2.0, 1.5, 0.0]).astype(complex)

    class Operator:
        n = 2
        apply = staticmethod(lambda v: matrix @ v)

    assert spectral.lambda_max(Operator()) == pytest.approx(1.5)
