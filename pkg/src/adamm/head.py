"""Membership estimation, centroids, anomaly scores, and the training objective.

The objective is distance + lambda1 * entropy + lambda2 * diversity:
  - distance: mean over the batch of the membership-weighted squared
    distances to the batch-local centroids (this per-sample quantity is
    also the anomaly score),
  - entropy: mean row entropy of the memberships, rewarding confident
    assignments,
  - diversity: negative log-determinant of the centroid covariance
    (ridge-stabilized), penalizing centroid collapse.
Gradients flow through memberships and centroids alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (Value, add, div, log_clamped, logdet_ridge, matmul, mul,
                       softmax_rows, transpose, vmean, vsum)
from .params import MLP

COV_RIDGE = 1e-4


@dataclass
class LossBreakdown:
    distance_term: float
    entropy_term: float
    diversity_term: float
    total: float
    lambda1: float
    lambda2: float


def membership(men: MLP, z: Value) -> Value:
    """Soft cluster assignments: softmax over MEN logits, rows sum to 1."""
    return softmax_rows(men(z))


def centroids(gamma: Value, z: Value) -> Value:
    """Membership-weighted means; ridge on the mass keeps empty clusters finite."""
    weighted = matmul(transpose(gamma), z)                      # (K, d)
    mass = transpose(vsum(gamma, axis=0, keepdims=True))        # (K, 1)
    return div(weighted, add(mass, 1e-12))


def pairwise_sq_dists(z: Value, cents: Value) -> Value:
    zz = vsum(mul(z, z), axis=1, keepdims=True)                 # (N, 1)
    cc = transpose(vsum(mul(cents, cents), axis=1, keepdims=True))  # (1, K)
    cross = matmul(z, transpose(cents))                         # (N, K)
    return add(add(zz, cc), mul(cross, -2.0))


def anomaly_scores(gamma: Value, sq_dists: Value) -> Value:
    """Per-sample membership-weighted squared distance; higher = more anomalous."""
    return vsum(mul(gamma, sq_dists), axis=1)


def entropy_term(gamma: Value) -> Value:
    per_row = vsum(mul(gamma, log_clamped(gamma, 1e-12)), axis=1)
    return mul(vmean(per_row), -1.0)


def diversity_term(cents: Value, ridge: float = COV_RIDGE) -> Value:
    k = cents.shape[0]
    if k < 2:
        return Value(0.0)  # covariance of a single centroid is degenerate
    centered = add(cents, mul(vmean(cents, axis=0, keepdims=True), -1.0))
    cov = mul(matmul(transpose(centered), centered), 1.0 / (k - 1))
    return mul(logdet_ridge(cov, ridge), -1.0)


@dataclass
class ObjectiveParts:
    total: Value
    gamma: Value
    cents: Value
    scores: Value
    breakdown: LossBreakdown


def objective(z: Value, men: MLP, lambda1: float, lambda2: float,
              ridge: float = COV_RIDGE) -> ObjectiveParts:
    if z.shape[0] < 2:
        raise ValueError("objective needs a batch of at least 2 samples")
    gamma = membership(men, z)
    cents = centroids(gamma, z)
    scores = anomaly_scores(gamma, pairwise_sq_dists(z, cents))
    distance = vmean(scores)
    entropy = entropy_term(gamma)
    diversity = diversity_term(cents, ridge)
    total = add(distance, mul(entropy, lambda1))
    if lambda2 != 0.0:
        total = add(total, mul(diversity, lambda2))
    bd = LossBreakdown(
        distance_term=float(distance.data),
        entropy_term=float(entropy.data),
        diversity_term=float(diversity.data),
        total=float(distance.data) + lambda1 * float(entropy.data) + lambda2 * float(diversity.data),
        lambda1=lambda1,
        lambda2=lambda2,
    )
    return ObjectiveParts(total, gamma, cents, scores, bd)


def scores_against_frozen(z: np.ndarray, gamma: np.ndarray, cents: np.ndarray) -> np.ndarray:
    """Numpy-only scoring path used at inference with frozen centroids."""
    d2 = (z * z).sum(1, keepdims=True) + (cents * cents).sum(1)[None, :] - 2.0 * z @ cents.T
    return (gamma * d2).sum(1)
