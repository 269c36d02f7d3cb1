"""Scikit-learn-style detector wrapping the training loop and scoring path.

AdammDetector.fit learns the embedding network and membership net by
minimizing the clustering objective over shuffled mini-batches; it then
freezes centroids computed over the full training set. score_samples
returns the per-sample anomaly score (higher = more anomalous; note this is
the opposite sign convention from sklearn's outlier detectors, kept because
the score is a distance). Nothing in fit/score reads evaluation labels.
"""

from __future__ import annotations

import math
from dataclasses import asdict

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import head
from .data import Database, Sample, Schema, derive_schema
from .encoder import NetworkConfig
from .head import LossBreakdown, objective, scores_against_frozen
from .model import JointModel
from .params import Adam, load_checkpoint, save_checkpoint

INFERENCE_CHUNK = 512


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, history: list[LossBreakdown]):
        self.epoch = epoch
        self.history = history
        last = history[-1].total if history else float("nan")
        super().__init__(f"non-finite loss at epoch {epoch}; last finite epoch total={last!r}")


def _as_samples(x) -> tuple[list[Sample], Schema | None]:
    if isinstance(x, Database):
        return list(x.samples), x.schema
    return list(x), None


class AdammDetector(BaseEstimator):
    """Multi-centroid one-class detector over attributed multi-graphs with metadata.

    Parameters mirror the training configuration: n_centroids (K),
    learning_rate, weight_decay, entropy_weight (lambda1), diversity_weight
    (lambda2), epochs, batch_size, and architecture switches. Same inputs and
    seed give byte-identical fitted state.
    """

    def __init__(self, n_centroids: int = 2, learning_rate: float = 1e-3,
                 weight_decay: float = 1e-5, entropy_weight: float = 0.1,
                 diversity_weight: float = 0.1, epochs: int = 100,
                 batch_size: int = 128, hidden: int = 64, edge_dim: int = 64,
                 gin_layers: int = 3, graph_dim: int = 64, proj_dim: int = 32,
                 joint_dim: int = 32, cat_dim: int = 8, meta_hidden: int = 64,
                 meta_dim: int = 32, men_hidden: int = 64, flatten: str = "deepset",
                 use_metadata: bool = True, inference_centroids: str = "frozen",
                 seed: int = 0):
        self.n_centroids = n_centroids
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.entropy_weight = entropy_weight
        self.diversity_weight = diversity_weight
        self.epochs = epochs
        self.batch_size = batch_size
        self.hidden = hidden
        self.edge_dim = edge_dim
        self.gin_layers = gin_layers
        self.graph_dim = graph_dim
        self.proj_dim = proj_dim
        self.joint_dim = joint_dim
        self.cat_dim = cat_dim
        self.meta_hidden = meta_hidden
        self.meta_dim = meta_dim
        self.men_hidden = men_hidden
        self.flatten = flatten
        self.use_metadata = use_metadata
        self.inference_centroids = inference_centroids
        self.seed = seed

    # ------------------------------------------------------------------

    def _network_config(self) -> NetworkConfig:
        return NetworkConfig(
            hidden=self.hidden, edge_dim=self.edge_dim, gin_layers=self.gin_layers,
            graph_dim=self.graph_dim, proj_dim=self.proj_dim, joint_dim=self.joint_dim,
            cat_dim=self.cat_dim, meta_hidden=self.meta_hidden, meta_dim=self.meta_dim,
            men_hidden=self.men_hidden, flatten=self.flatten, use_metadata=self.use_metadata,
        )

    def _check_params(self) -> None:
        if self.n_centroids < 1:
            raise ValueError("n_centroids must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be nonnegative")
        if self.entropy_weight < 0 or self.diversity_weight < 0:
            raise ValueError("regularizer weights must be nonnegative")
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("epochs must be >= 1 and batch_size >= 2")
        if self.inference_centroids not in ("frozen", "batch"):
            raise ValueError("inference_centroids must be 'frozen' or 'batch'")

    def fit(self, X, y=None):
        self._check_params()
        samples, schema = _as_samples(X)
        if not samples:
            raise ValueError("cannot fit on an empty database")
        self.schema_ = schema if schema is not None else derive_schema(samples)
        model = JointModel(self.schema_, self._network_config(), self.n_centroids, self.seed)
        encoded = model.encode_samples(samples)
        opt = Adam(model.store, self.learning_rate, self.weight_decay)
        shuffle_rng = np.random.default_rng([self.seed, 1])

        n = len(encoded)
        lam1, lam2 = self.entropy_weight, self.diversity_weight
        if self.n_centroids == 1:
            lam2 = 0.0  # diversity is defined as 0 for a single centroid
        history: list[LossBreakdown] = []
        for epoch in range(self.epochs):
            order = shuffle_rng.permutation(n)
            sums = np.zeros(3)
            weight = 0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                if len(idx) < 2:
                    continue  # objective is undefined on singleton batches
                batch = model.pack(encoded, idx)
                z = model.embed(batch)
                parts = objective(z, model.men, lam1, lam2)
                if not math.isfinite(parts.breakdown.total):
                    raise DivergenceError(epoch, history)
                model.store.zero_grad()
                from .autodiff import backward

                backward(parts.total)
                opt.step()
                b = parts.breakdown
                sums += len(idx) * np.array([b.distance_term, b.entropy_term, b.diversity_term])
                weight += len(idx)
            if weight:
                d, e, v = sums / weight
                history.append(LossBreakdown(d, e, v, d + lam1 * e + lam2 * v, lam1, lam2))

        self.model_ = model
        self.history_ = history
        self.encoded_train_ = encoded
        z, gamma = self._embed_encoded(model, encoded)
        mass = gamma.sum(axis=0)
        self.centroids_ = (gamma.T @ z) / (mass[:, None] + 1e-12)
        train_scores = scores_against_frozen(z, gamma, self.centroids_)
        self.selection_score_ = float(train_scores.sum())
        return self

    def _embed_encoded(self, model: JointModel, encoded) -> tuple[np.ndarray, np.ndarray]:
        zs, gs = [], []
        for start in range(0, len(encoded), INFERENCE_CHUNK):
            idx = range(start, min(start + INFERENCE_CHUNK, len(encoded)))
            batch = model.pack(encoded, idx)
            z = model.embed(batch)
            gamma = head.membership(model.men, z)
            zs.append(z.data)
            gs.append(gamma.data)
        return np.concatenate(zs), np.concatenate(gs)

    def score_samples(self, X) -> np.ndarray:
        """Anomaly score per sample; larger means more anomalous."""
        check_is_fitted(self, "model_")
        samples, _ = _as_samples(X)
        encoded = self.model_.encode_samples(samples)
        z, gamma = self._embed_encoded(self.model_, encoded)
        if self.inference_centroids == "batch":
            cents = (gamma.T @ z) / (gamma.sum(axis=0)[:, None] + 1e-12)
        else:
            cents = self.centroids_
        return scores_against_frozen(z, gamma, cents)

    def decision_function(self, X) -> np.ndarray:
        # sklearn sign convention: larger = more normal
        return -self.score_samples(X)

    # ------------------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "model_")
        arrays = self.model_.store.state_arrays()
        arrays["__centroids__"] = self.centroids_
        extra = {
            "estimator_params": self.get_params(),
            "schema": self.schema_.to_json_dict(),
            "schema_digest": self.schema_.digest(),
            "selection_score": self.selection_score_,
            "history": [asdict(h) for h in self.history_],
        }
        save_checkpoint(path, arrays, extra)

    @classmethod
    def load(cls, path) -> "AdammDetector":
        arrays, extra = load_checkpoint(path)
        est = cls(**extra["estimator_params"])
        est.schema_ = Schema.from_json_dict(extra["schema"])
        est.model_ = JointModel(est.schema_, est._network_config(), est.n_centroids, est.seed)
        cents = arrays.pop("__centroids__")
        est.model_.store.load_arrays(arrays)
        est.centroids_ = cents
        est.selection_score_ = extra["selection_score"]
        est.history_ = [LossBreakdown(**h) for h in extra["history"]]
        return est
