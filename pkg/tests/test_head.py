"""Clustering-head oracles: memberships, centroids, scores, and the three
objective terms, including the degenerate configurations that have closed
forms."""

import math

import numpy as np
import pytest

from adamm.autodiff import Value, backward
from adamm.head import (COV_RIDGE, anomaly_scores, centroids, diversity_term,
                        entropy_term, membership, objective,
                        pairwise_sq_dists, scores_against_frozen)
from adamm.params import MLP, ParamStore, grad_check


def make_men(d, k, hidden=8, seed=0):
    store = ParamStore(seed)
    return MLP(store, "men", [d, hidden, k]), store


def test_membership_rows_sum_to_one():
    men, _ = make_men(4, 3)
    z = Value(np.random.default_rng(0).normal(size=(10, 4)))
    gamma = membership(men, z).data
    assert gamma.shape == (10, 3)
    assert np.allclose(gamma.sum(1), 1.0, atol=1e-12)
    assert np.all(gamma >= 0)


def test_centroid_of_single_cluster_is_mean():
    z = Value(np.array([[1.0], [3.0], [5.0]]))
    gamma = Value(np.ones((3, 1)))
    c = centroids(gamma, z).data
    assert c == pytest.approx(np.array([[3.0]]), abs=1e-9)


def test_centroids_stay_in_convex_hull():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(20, 5))
    logits = rng.normal(size=(20, 3))
    gamma = np.exp(logits)
    gamma /= gamma.sum(1, keepdims=True)
    c = centroids(Value(gamma), Value(z)).data
    lo, hi = z.min(0), z.max(0)
    assert np.all(c >= lo - 1e-9) and np.all(c <= hi + 1e-9)


def test_anomaly_score_hand_example():
    # one sample split between centroids at distance^2 4 and 16
    z = Value(np.array([[0.0]]))
    cents = Value(np.array([[2.0], [-4.0]]))
    gamma = Value(np.array([[0.75, 0.25]]))
    sq = pairwise_sq_dists(z, cents)
    assert np.allclose(sq.data, [[4.0, 16.0]])
    s = anomaly_scores(gamma, sq).data
    assert s == pytest.approx([0.75 * 4 + 0.25 * 16])


def test_score_invariant_under_joint_permutation():
    rng = np.random.default_rng(2)
    z = Value(rng.normal(size=(6, 3)))
    cents = rng.normal(size=(4, 3))
    gamma = rng.dirichlet(np.ones(4), size=6)
    perm = rng.permutation(4)
    base = anomaly_scores(Value(gamma), pairwise_sq_dists(z, Value(cents))).data
    permed = anomaly_scores(Value(gamma[:, perm]),
                            pairwise_sq_dists(z, Value(cents[perm]))).data
    assert np.allclose(base, permed, atol=1e-12)


def test_uniform_membership_entropy_is_ln_k():
    for k in (2, 3, 4, 7):
        gamma = Value(np.full((5, k), 1.0 / k))
        assert entropy_term(gamma).data == pytest.approx(math.log(k), abs=1e-9)


def test_one_hot_membership_entropy_is_zero():
    gamma = Value(np.eye(4)[[0, 1, 2, 3, 0]])
    assert entropy_term(gamma).data == pytest.approx(0.0, abs=1e-9)


def test_identical_centroids_diversity_closed_form():
    for d in (1, 3, 8):
        cents = Value(np.tile(np.linspace(0, 1, d), (2, 1)))
        val = diversity_term(cents).data
        assert val == pytest.approx(-d * math.log(COV_RIDGE), abs=1e-6)


def test_single_centroid_diversity_is_zero():
    assert diversity_term(Value(np.ones((1, 4)))).data == 0.0


def test_diversity_decreases_as_centroids_spread():
    # moving one centroid radially away from the common mean must lower D
    rng = np.random.default_rng(3)
    for _ in range(50):
        cents = rng.normal(size=(4, 4))
        mean = cents.mean(0)
        moved = cents.copy()
        moved[0] = mean + 1.5 * (cents[0] - mean)
        base = diversity_term(Value(cents)).data
        spread = diversity_term(Value(moved)).data
        assert spread < base


def test_k1_objective_is_mean_distance_to_batch_mean():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(16, 6))
    men, _ = make_men(6, 1)
    parts = objective(Value(z), men, lambda1=0.1, lambda2=0.0)
    expected = ((z - z.mean(0)) ** 2).sum(1).mean()
    # K=1: gamma is identically 1, so the distance term is exactly that mean
    assert parts.breakdown.distance_term == pytest.approx(expected, abs=1e-9)
    assert parts.breakdown.entropy_term == pytest.approx(0.0, abs=1e-9)
    assert parts.breakdown.diversity_term == 0.0


def test_objective_total_combines_terms():
    rng = np.random.default_rng(5)
    z = rng.normal(size=(12, 5))
    men, _ = make_men(5, 3)
    parts = objective(Value(z), men, lambda1=0.1, lambda2=0.1)
    b = parts.breakdown
    assert b.total == pytest.approx(b.distance_term + 0.1 * b.entropy_term + 0.1 * b.diversity_term)
    assert float(parts.total.data) == pytest.approx(b.total, abs=1e-12)


def test_objective_rejects_singleton_batch():
    men, _ = make_men(3, 2)
    with pytest.raises(ValueError):
        objective(Value(np.ones((1, 3))), men, 0.1, 0.0)


def test_full_objective_gradient_check():
    rng = np.random.default_rng(6)
    z_data = rng.normal(size=(8, 4))
    store = ParamStore(seed=7)
    men = MLP(store, "men", [4, 8, 2])
    z_leaf = store.tensor("z", (8, 4), init="zeros")
    z_leaf.data = z_data

    def loss():
        return objective(z_leaf, men, lambda1=0.1, lambda2=0.1).total

    report = grad_check(loss, store, tolerance=1e-4)
    assert report.passed, report.per_tensor


def test_frozen_scoring_matches_graph_scoring():
    rng = np.random.default_rng(8)
    z = rng.normal(size=(9, 4))
    cents = rng.normal(size=(3, 4))
    gamma = rng.dirichlet(np.ones(3), size=9)
    via_graph = anomaly_scores(Value(gamma), pairwise_sq_dists(Value(z), Value(cents))).data
    via_numpy = scores_against_frozen(z, gamma, cents)
    assert np.allclose(via_graph, via_numpy, atol=1e-12)


def test_gradients_flow_through_memberships_and_centroids():
    rng = np.random.default_rng(9)
    store = ParamStore(seed=10)
    men = MLP(store, "men", [3, 6, 2])
    z = store.tensor("z", (6, 3), init="zeros")
    z.data = rng.normal(size=(6, 3))
    parts = objective(z, men, 0.1, 0.1)
    backward(parts.total)
    for name, tensor in store.tensors.items():
        assert tensor.grad is not None, name
        assert np.any(tensor.grad != 0), name
