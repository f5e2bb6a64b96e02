from math import comb, sqrt

import numpy as np
import pytest

from services.lovasz_theta import (
    LovaszThetaService, PAIRWISE_ANTICOMMUTING_WORDS, PauliGraph, complete_graph, cycle_graph, empty_graph,
)
from services.pauli_algebra import anticommutes
from utils.errors import CapacityError, DomainError


def test_anticommutativity_graph_structure(lovasz):
    graph = lovasz.build_anticommutativity_graph(3)
    assert graph.node_count == 27
    assert np.array_equal(graph.adjacency, graph.adjacency.T)
    # 同一对比特上 4 个邻居，共享一个比特的两对上各 6 个
    assert set(graph.adjacency.sum(axis=1).tolist()) == {16}
    for a in range(27):
        for b in range(a + 1, 27):
            assert graph.adjacency[a, b] == anticommutes(graph.terms[a], graph.terms[b])


def test_complement_and_edge_rows(lovasz):
    graph = lovasz.build_anticommutativity_graph(3)
    complement = graph.complement()
    assert len(graph.edges()) + len(complement.edges()) == 27 * 26 // 2
    row = graph.edge_rows()[0]
    assert list(row) == ["i", "j", "label_i", "label_j"]
    assert row["label_i"] == graph.labels[row["i"]]


def test_graph_validation():
    with pytest.raises(DomainError):
        PauliGraph(adjacency=np.array([[False, True], [False, False]]), labels=("0", "1"))
    with pytest.raises(DomainError):
        PauliGraph(adjacency=np.eye(2, dtype=bool), labels=("0", "1"))
    with pytest.raises(DomainError):
        cycle_graph(2)


def test_theta_of_extreme_graphs(lovasz):
    assert lovasz.lovasz_theta(empty_graph(5)).value == pytest.approx(5.0, abs=1e-3)
    assert lovasz.lovasz_theta(complete_graph(5)).value == pytest.approx(1.0, abs=1e-3)
    assert lovasz.lovasz_theta(cycle_graph(5)).value == pytest.approx(sqrt(5), abs=1e-2)
    assert lovasz.lovasz_theta(empty_graph(1)).value == 1.0


def test_theta_result_bounds_and_certificate(lovasz):
    result = lovasz.lovasz_theta(cycle_graph(5))
    assert result.lower_bound <= result.value <= result.upper_bound
    assert result.upper_bound - result.lower_bound <= 1e-3
    np.testing.assert_allclose(np.diag(result.certificate), 1.0)
    payload = result.to_dict(include_certificate=True)
    assert payload["nodes"] == 5
    assert len(payload["certificate"]) == 5


def test_solver_node_limit(model):
    small = LovaszThetaService(model, params={'tol': 1e-3, 'node_limit': 10, 'max_iterations': 100})
    with pytest.raises(CapacityError):
        small.lovasz_theta(empty_graph(11))


def test_pairwise_anticommuting_family(lovasz):
    assert len(PAIRWISE_ANTICOMMUTING_WORDS) == 9
    assert lovasz.verify_independent_set()
    assert not lovasz.verify_independent_set(list(PAIRWISE_ANTICOMMUTING_WORDS[:-1]) + ["XXII"])
    assert lovasz.verify_independent_set(["XX", "XY", "XZ"], n=5)
    with pytest.raises(DomainError):
        lovasz.verify_independent_set(n=3)


def test_ghz_exceeds_product_variance(moments):
    result = LovaszThetaService.ghz_variance_exploration(moments)
    assert result["ghz_variance"] == pytest.approx(3.0)
    assert result["product_variance"] == pytest.approx(1.0)
    assert result["exceeds"]


def test_edge_deletion_never_lowers_theta(lovasz):
    trials = lovasz.edge_deletion_monotonicity(cycle_graph(7), trials=2, seed=1, fraction=0.3)
    assert len(trials) == 2
    assert all(t["monotone"] and t["removed"] == 2 for t in trials)


@pytest.mark.slow
def test_theta_of_three_qubit_graph(lovasz):
    theta = lovasz.lovasz_theta(lovasz.build_anticommutativity_graph(3)).value
    assert 3 - 1e-2 <= theta <= 3 + 1e-2
    bound = lovasz.variance_bound(3)
    assert bound["bound"] == pytest.approx(theta / 3, abs=1e-6)


@pytest.mark.slow
def test_vertex_symmetric_product(lovasz):
    result = lovasz.vertex_symmetric_product_check(3)
    assert result["target"] == 27.0
    assert result["relative_error"] <= 0.01


def test_certificate_lambda_max_is_reported(lovasz):
    empty = lovasz.lovasz_theta(empty_graph(5))
    assert empty.certificate_lambda_max == pytest.approx(5.0, abs=1e-2)
    complete = lovasz.lovasz_theta(complete_graph(4))
    assert complete.to_dict()["certificate_lambda_max"] == pytest.approx(1.0, abs=1e-9)


@pytest.mark.slow
def test_four_qubit_graph(lovasz):
    result = lovasz.vertex_symmetric_product_check(4)
    assert result["target"] == 54.0
    assert result["relative_error"] <= 0.05
    assert result["theta_G"] <= comb(4, 2) + 1e-2
