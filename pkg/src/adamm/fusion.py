"""Metadata vectorization and fusion of graph and metadata embeddings.

Metadata records become fixed-width vectors: standardized numerics, date
fields as a standardized day index plus standardized day gaps between date
field pairs, and learned embeddings for categoricals. Single-record
metadata is used directly as Z_M; record multisets go through a DeepSet.
Fusion projects Z_G and Z_M into a shared space, normalizes each to unit
length, concatenates, and applies the joint MLP that produces the embedding
the anomaly head scores.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .autodiff import (Value, add, concat_cols, div, gather_rows, matmul, mul,
                       pow_const, segment_matrix, sparse_matmul, vsum)
from .data import Sample, Schema, days_since_epoch, _canon_value, _is_date_string
from .encoder import NetworkConfig
from .params import MLP, ParamStore


class MetaFeaturizer:
    """Maps metadata records onto numeric feature rows plus categorical ids."""

    def __init__(self, schema: Schema):
        self.schema = schema
        self.cat_fields = [f for f in schema.fields if f.kind == "categorical"]
        self._warned: set[tuple[str, str]] = set()
        self.n_numeric = 0
        for f in schema.fields:
            if f.kind in ("numeric", "date"):
                self.n_numeric += 1
        self.n_numeric += len(schema.gap_stats)

    def record_numeric(self, rec: dict) -> np.ndarray:
        out = np.zeros(self.n_numeric)
        j = 0
        days: dict[str, int] = {}
        for f in self.schema.fields:
            if f.kind == "numeric":
                v = _canon_value(rec.get(f.name))
                if isinstance(v, (int, float)):
                    out[j] = (float(v) - f.mean) / f.std
                j += 1
            elif f.kind == "date":
                v = rec.get(f.name)
                if _is_date_string(v):
                    days[f.name] = days_since_epoch(v)
                    out[j] = (days[f.name] - f.mean) / f.std
                j += 1
        for a, b, m, sd in self.schema.gap_stats:
            if a in days and b in days:
                out[j] = ((days[a] - days[b]) - m) / sd
            j += 1
        return out

    def record_cat_ids(self, rec: dict) -> list[int]:
        ids = []
        for f in self.cat_fields:
            v = _canon_value(rec.get(f.name))
            if isinstance(v, str) and v in f.vocab:
                ids.append(f.vocab.index(v))
            else:
                if isinstance(v, str) and (f.name, v) not in self._warned:
                    self._warned.add((f.name, v))
                    warnings.warn(f"metadata field {f.name!r}: unseen value {v!r} mapped to OOV")
                ids.append(len(f.vocab))  # reserved OOV slot
        return ids

    def encode_sample(self, sample: Sample) -> "EncodedMeta":
        recs = sample.meta_records
        num = np.stack([self.record_numeric(r) for r in recs]) if recs else np.zeros((0, self.n_numeric))
        cats = np.array([self.record_cat_ids(r) for r in recs], dtype=np.int64).reshape(len(recs), len(self.cat_fields))
        return EncodedMeta(num, cats)

    def onehot_matrix(self, samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
        """Record-level design matrix with one-hot categoricals (for baselines).

        Returns (X, sample_index) where sample_index maps rows to samples.
        """
        rows = []
        owner = []
        widths = [len(f.vocab) + 1 for f in self.cat_fields]
        for i, s in enumerate(samples):
            for rec in s.meta_records:
                num = self.record_numeric(rec)
                oh = np.zeros(sum(widths))
                off = 0
                for w, cid in zip(widths, self.record_cat_ids(rec)):
                    oh[off + cid] = 1.0
                    off += w
                rows.append(np.concatenate([num, oh]))
                owner.append(i)
        return np.stack(rows), np.array(owner, dtype=np.int64)


@dataclass
class EncodedMeta:
    num: np.ndarray       # (R, p) numeric features per record
    cat_ids: np.ndarray   # (R, c) int64


@dataclass
class PackedMetaBatch:
    n_samples: int
    num: np.ndarray
    cat_ids: np.ndarray
    m_sum: sp.csr_matrix | None   # (B, R) per-sample record sum; None in single mode


def pack_meta(metas: list[EncodedMeta], mode: str) -> PackedMetaBatch:
    b = len(metas)
    num = np.concatenate([m.num for m in metas], axis=0)
    cat_ids = np.concatenate([m.cat_ids for m in metas], axis=0)
    if mode == "single":
        return PackedMetaBatch(b, num, cat_ids, None)
    counts = np.array([m.num.shape[0] for m in metas])
    owner = np.repeat(np.arange(b), counts)
    m_sum = segment_matrix(owner, b, int(counts.sum()))
    return PackedMetaBatch(b, num, cat_ids, m_sum)


class MetadataEncoder:
    """Produces Z_M from packed metadata; DeepSet over records in multiset mode."""

    def __init__(self, store: ParamStore, schema: Schema, config: NetworkConfig,
                 featurizer: MetaFeaturizer):
        self.schema = schema
        self.config = config
        self.featurizer = featurizer
        self.cat_tables = []
        for f in featurizer.cat_fields:
            self.cat_tables.append(store.tensor(f"meta.{f.name}.embed", (len(f.vocab) + 1, config.cat_dim), init="glorot"))
        rec_dim = featurizer.n_numeric + config.cat_dim * len(featurizer.cat_fields)
        if schema.meta_mode == "records":
            self.phi = MLP(store, "meta.phi", [rec_dim, config.meta_hidden, config.meta_hidden])
            self.rho = MLP(store, "meta.rho", [config.meta_hidden, config.meta_hidden, config.meta_dim])
            self.out_dim = config.meta_dim
        else:
            self.phi = None
            self.rho = None
            self.out_dim = rec_dim

    def record_vectors(self, pm: PackedMetaBatch) -> Value:
        parts = [Value(pm.num)]
        for j, table in enumerate(self.cat_tables):
            parts.append(gather_rows(table, pm.cat_ids[:, j]))
        return concat_cols(parts) if len(parts) > 1 else parts[0]

    def forward(self, pm: PackedMetaBatch) -> Value:
        x = self.record_vectors(pm)
        if self.schema.meta_mode == "single":
            return x
        return self.rho(sparse_matmul(pm.m_sum, self.phi(x)))


def normalize_rows(x: Value) -> Value:
    norm = pow_const(vsum(mul(x, x), axis=1, keepdims=True), 0.5)
    return div(x, add(norm, 1e-12))


class FusionHead:
    """Dual projections into a shared space, unit-normalization, joint MLP."""

    def __init__(self, store: ParamStore, config: NetworkConfig, meta_dim: int | None):
        self.config = config
        p = config.proj_dim
        self.proj_g = store.tensor("proj_g.w", (config.graph_dim, p))
        self.proj_m = None
        joint_in = p
        if config.use_metadata:
            self.proj_m = store.tensor("proj_m.w", (meta_dim, p))
            joint_in = 2 * p
        self.joint = MLP(store, "joint", [joint_in, 2 * p, config.joint_dim])

    def forward(self, z_g: Value, z_m: Value | None) -> Value:
        zg = normalize_rows(matmul(z_g, self.proj_g))
        if self.proj_m is None:
            return self.joint(zg)
        zm = normalize_rows(matmul(z_m, self.proj_m))
        return self.joint(concat_cols([zg, zm]))
