"""Joint model: graph encoder + metadata encoder + fusion + membership net."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Value
from .data import Sample, Schema
from .encoder import (EncodedGraph, GraphEncoder, NetworkConfig, PackedGraphBatch,
                      encode_graph, pack_graphs)
from .fusion import (EncodedMeta, FusionHead, MetadataEncoder, MetaFeaturizer,
                     PackedMetaBatch, pack_meta)
from .params import MLP, ParamStore


@dataclass
class EncodedSample:
    graph: EncodedGraph
    meta: EncodedMeta | None


@dataclass
class Batch:
    n: int
    graph: PackedGraphBatch
    meta: PackedMetaBatch | None


class JointModel:
    def __init__(self, schema: Schema, config: NetworkConfig, n_centroids: int, seed: int):
        if n_centroids < 1:
            raise ValueError("n_centroids must be >= 1")
        self.schema = schema
        self.config = config
        self.n_centroids = n_centroids
        self.store = ParamStore(seed)
        self.graph_enc = GraphEncoder(self.store, schema, config)
        self.featurizer = MetaFeaturizer(schema)
        if config.use_metadata:
            self.meta_enc = MetadataEncoder(self.store, schema, config, self.featurizer)
            meta_dim = self.meta_enc.out_dim
        else:
            self.meta_enc = None
            meta_dim = None
        self.fusion = FusionHead(self.store, config, meta_dim)
        self.men = MLP(self.store, "men", [config.joint_dim, config.men_hidden, n_centroids])

    def encode_samples(self, samples: list[Sample]) -> list[EncodedSample]:
        out = []
        for s in samples:
            g = encode_graph(s.graph, self.schema)
            m = self.featurizer.encode_sample(s) if self.meta_enc is not None else None
            out.append(EncodedSample(g, m))
        return out

    def pack(self, encoded: list[EncodedSample], idx) -> Batch:
        chosen = [encoded[i] for i in idx]
        pb = pack_graphs([e.graph for e in chosen])
        pm = None
        if self.meta_enc is not None:
            pm = pack_meta([e.meta for e in chosen], self.schema.meta_mode)
        return Batch(len(chosen), pb, pm)

    def embed(self, batch: Batch) -> Value:
        z_g = self.graph_enc.forward(batch.graph)
        z_m = self.meta_enc.forward(batch.meta) if self.meta_enc is not None else None
        return self.fusion.forward(z_g, z_m)
