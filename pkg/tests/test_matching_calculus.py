from fractions import Fraction

import numpy as np
import pytest
from pydantic import ValidationError

from services.matching_calculus import BoundConfig, Matching, MatchingCalculus
from utils.errors import CapacityError, DomainError, ParameterError


def _double_factorial(d):
    value = 1
    for k in range(1, 2 * d, 2):
        value *= k
    return value


@pytest.mark.parametrize("d", range(0, 6))
def test_matching_counts(matchings, d):
    found = matchings.enumerate_matchings(d)
    assert len(found) == _double_factorial(d)
    assert len({m.pairs for m in found}) == len(found)


def test_enumeration_capacity(matchings):
    with pytest.raises(CapacityError):
        matchings.enumerate_matchings(8)


def test_matching_validation_and_label():
    m = Matching(((3, 1), (0, 2)))
    assert m.pairs == ((0, 2), (1, 3))
    assert m.label() == "(1,3)(2,4)"
    assert m.partner_map() == {0: 2, 2: 0, 1: 3, 3: 1}
    with pytest.raises(ParameterError):
        Matching(((0, 1), (1, 2)))


def test_known_trace_sums(matchings):
    nested = Matching(((0, 1), (2, 3)))
    crossing = Matching(((0, 2), (1, 3)))
    assert matchings.trace_sum(Matching(((0, 1),))) == 3
    assert matchings.trace_sum(nested) == 9
    assert matchings.trace_sum(crossing) == -3
    assert matchings.trace_sum_recursive(nested) == 9
    assert matchings.trace_sum_recursive(crossing) == -3


def test_recursion_matches_brute_force(matchings):
    for d in range(1, 5):
        for m in matchings.enumerate_matchings(d):
            assert matchings.trace_sum_recursive(m) == matchings.trace_sum(m), m.label()


@pytest.mark.parametrize("d", range(1, 6))
def test_expected_trace_sum_is_two_d_plus_one(matchings, d):
    assert matchings.expected_trace_sum(d) == Fraction(2 * d + 1)


def test_hypergraph_degrees_and_induced_matchings(matchings):
    h = matchings.sample_hypergraph(8, 3, 4, seed=1)
    assert sum(h.degrees) == 12
    assert len(set(h.tuples)) == 4
    for delta, matching in zip(h.degrees, h.induced_matchings):
        if delta == 0:
            assert matching is None
        else:
            assert matching.d == delta


def test_hypergraph_rejects_too_many_tuples(matchings):
    with pytest.raises(DomainError):
        matchings.sample_hypergraph(4, 2, 7, seed=0)


def test_gamma_ratio_is_one_for_single_tuple(matchings):
    estimate = matchings.estimate_gamma_ratio(10, 3, 1, samples=50, seed=2)
    assert estimate.ratio == 1.0
    assert estimate.per_r_ratio == 1.0
    assert estimate.ratio_stderr == 0.0


def test_gamma_estimate_is_reproducible(matchings):
    a = matchings.estimate_gamma_ratio(12, 2, 6, samples=100, seed=9)
    b = matchings.estimate_gamma_ratio(12, 2, 6, samples=100, seed=9)
    assert a == b


def test_monte_carlo_matches_exhaustive_average(matchings):
    exact = matchings.exhaustive_gamma_ratio(4, 2, 2)
    assert exact["configurations"] == 90
    estimate = matchings.estimate_gamma_ratio(4, 2, 2, samples=3000, seed=5)
    assert estimate.ratio_stderr > 0
    assert abs(estimate.ratio - exact["ratio"]) <= 4 * estimate.ratio_stderr


def test_exhaustive_capacity(matchings):
    with pytest.raises(CapacityError):
        matchings.exhaustive_gamma_ratio(10, 2, 6)


def test_gamma_sweep_rows(matchings):
    rows = matchings.gamma_sweep(10, [2, 3], [1, 2], samples=20, seed=0)
    assert [(row["p"], row["r"]) for row in rows] == [(2, 1), (2, 2), (3, 1), (3, 2)]


def test_poisson_degree_distribution(matchings):
    result = matchings.poisson_degree_check(60, 2, 30, samples=2000, seed=3)
    assert result["lambda"] == pytest.approx(1.0)
    assert abs(result["mean"] - 1.0) <= 4 * result["mean_stderr"] + 0.05
    assert result["tv_distance"] <= 0.08
    assert sum(result["empirical_pmf"]) == pytest.approx(1.0)


@pytest.mark.slow
def test_poisson_degree_distribution_full(matchings):
    assert matchings.poisson_degree_check(60, 2, 30, samples=10000, seed=0)["tv_distance"] <= 0.05


def test_poisson_with_no_tuples(matchings):
    result = matchings.poisson_degree_check(10, 2, 0, samples=10, seed=0)
    assert result["tv_distance"] == 0.0
    assert result["empirical_pmf"] == [1.0]


def test_witness_terms_sum_to_g(matchings):
    config = BoundConfig(p=1e6, gamma=1.5, C=1.0)
    terms = matchings.witness_terms(config)
    assert terms["total"] == pytest.approx(matchings.g_value(config.witness_beta, config), abs=1e-12)


def test_minimized_g_approaches_square_root_growth(matchings):
    ratios = [matchings.minimize_g(BoundConfig(p=p, C=1.0))["ratio_to_sqrt"] for p in (1e2, 1e4, 1e6, 1e8)]
    assert ratios[2] <= 1.25
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    result = matchings.minimize_g(BoundConfig(p=1e6))
    assert result["g_min"] <= result["bound_value"] + 1e-12
    betas = np.geomspace(0.01, 100.0, 4000)
    assert result["g_min"] <= float(np.min(matchings.g_value(betas, BoundConfig(p=1e6)))) + 1e-12


def test_bound_config_validation(matchings):
    with pytest.raises(ValidationError):
        BoundConfig(p=1e6, C=0.5)
    with pytest.raises(ValidationError):
        BoundConfig(p=0.5)
    with pytest.raises(ParameterError):
        matchings.minimize_g(BoundConfig(p=1e6, beta_min=10.0, beta_max=100.0))


def test_bootstrap_count_is_configurable():
    calc = MatchingCalculus(params={'bootstrap': 10})
    assert calc.estimate_gamma_ratio(8, 2, 3, samples=30, seed=1).ratio_stderr >= 0
