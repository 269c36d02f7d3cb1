"""Graph side of the model: direction encoding, multi-edge flattening,
GIN message passing, and mean-pool readout to a graph embedding.

Every directed edge (u,v,f) is kept as a forward record (label 1) plus an
augmented reverse record (v,u,f) with label 2; self-loops get a single
record with label 0. Records are grouped by ordered endpoint pair and each
group is flattened by a DeepSet into one edge vector. Grouping by ordered
pair (rather than collapsing both directions into one multiset) is what
lets orientation survive flattening: the unordered multiset {f+d1, f+d2}
would be identical for either orientation of the edge. The adjacency is
still symmetric, because augmentation guarantees both ordered pairs exist
whenever any edge connects two nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autodiff import (Value, add, affine, gather_rows, matmul, mul, relu,
                       segment_matrix, sparse_matmul)
from .data import MultiGraph, Sample, Schema
from .params import MLP, ParamStore

SELF_LOOP, FORWARD, REVERSE = 0, 1, 2


@dataclass
class NetworkConfig:
    hidden: int = 64          # node state width
    edge_dim: int = 64        # flattened edge vector width (DeepSet output)
    gin_layers: int = 3
    graph_dim: int = 64       # Z_G width
    proj_dim: int = 32        # shared projection space for fusion
    joint_dim: int = 32       # Z width
    cat_dim: int = 8          # categorical embedding width
    meta_hidden: int = 64     # DeepSet hidden width for record multisets
    meta_dim: int = 32        # Z_M width in record-multiset mode
    men_hidden: int = 64
    flatten: str = "deepset"  # "deepset" | "mean"
    use_metadata: bool = True


def encode_directions(g: MultiGraph) -> list[tuple[int, int, tuple[float, ...], int]]:
    """Expand edges into direction-labelled records.

    Non-loop (u,v,f) -> (u,v,f,1) and (v,u,f,2); self-loop -> (u,u,f,0).
    """
    recs = []
    for e in g.edges:
        if e.src == e.dst:
            recs.append((e.src, e.dst, e.attrs, SELF_LOOP))
        else:
            recs.append((e.src, e.dst, e.attrs, FORWARD))
            recs.append((e.dst, e.src, e.attrs, REVERSE))
    return recs


@dataclass
class EncodedGraph:
    """Per-sample integer/float arrays, computed once and reused across epochs."""

    n_nodes: int
    label_ids: np.ndarray | None      # (n,) int64
    node_attrs: np.ndarray | None     # (n, d_attr) float64
    rec_attrs: np.ndarray             # (R, k) standardized float64
    rec_dir: np.ndarray               # (R,) int64
    rec_group: np.ndarray             # (R,) int64, local group ids
    group_src: np.ndarray             # (G,) int64, message source node
    group_dst: np.ndarray             # (G,) int64, aggregation target node
    n_groups: int = 0


def standardize_edge_attrs(attrs: np.ndarray, schema: Schema) -> np.ndarray:
    x = np.asarray(attrs, dtype=np.float64)
    if x.size == 0:
        return x.reshape(0, schema.edge_attr_dim)
    for j in range(schema.edge_attr_dim):
        if schema.edge_log1p[j]:
            x[:, j] = np.log1p(x[:, j])
        x[:, j] = (x[:, j] - schema.edge_mean[j]) / schema.edge_std[j]
    return x


def encode_graph(g: MultiGraph, schema: Schema) -> EncodedGraph:
    recs = encode_directions(g)
    k = schema.edge_attr_dim
    raw = np.array([r[2] for r in recs], dtype=np.float64).reshape(len(recs), k)
    rec_attrs = standardize_edge_attrs(raw, schema)
    rec_dir = np.array([r[3] for r in recs], dtype=np.int64)

    group_of: dict[tuple[int, int], int] = {}
    rec_group = np.empty(len(recs), dtype=np.int64)
    group_src: list[int] = []
    group_dst: list[int] = []
    for i, (u, v, _, _) in enumerate(recs):
        gid = group_of.get((u, v))
        if gid is None:
            gid = len(group_of)
            group_of[(u, v)] = gid
            group_src.append(u)
            group_dst.append(v)
        rec_group[i] = gid

    if schema.node_mode == "label":
        vocab_index = {lab: i for i, lab in enumerate(schema.node_vocab)}
        oov = len(schema.node_vocab)
        label_ids = np.array([vocab_index.get(lab, oov) for lab in g.node_labels], dtype=np.int64)
        node_attrs = None
    else:
        label_ids = None
        node_attrs = np.asarray(g.node_attrs, dtype=np.float64)

    return EncodedGraph(
        n_nodes=g.n_nodes,
        label_ids=label_ids,
        node_attrs=node_attrs,
        rec_attrs=rec_attrs,
        rec_dir=rec_dir,
        rec_group=rec_group,
        group_src=np.array(group_src, dtype=np.int64),
        group_dst=np.array(group_dst, dtype=np.int64),
        n_groups=len(group_of),
    )


@dataclass
class PackedGraphBatch:
    n_graphs: int
    n_nodes: int
    n_groups: int
    label_ids: np.ndarray | None
    node_attrs: np.ndarray | None
    node_graph: np.ndarray
    rec_attrs: np.ndarray
    rec_dir: np.ndarray
    group_src: np.ndarray
    group_dst: np.ndarray
    m_flat: sp.csr_matrix        # (G, R) group sum
    m_flat_mean: sp.csr_matrix   # (G, R) group mean
    m_agg: sp.csr_matrix         # (N_nodes, G) neighborhood sum by target
    m_read: sp.csr_matrix        # (B, N_nodes) per-graph mean


def pack_graphs(graphs: list[EncodedGraph]) -> PackedGraphBatch:
    b = len(graphs)
    node_counts = np.array([g.n_nodes for g in graphs])
    group_counts = np.array([g.n_groups for g in graphs])
    node_off = np.concatenate([[0], np.cumsum(node_counts)])
    group_off = np.concatenate([[0], np.cumsum(group_counts)])
    n_nodes = int(node_off[-1])
    n_groups = int(group_off[-1])

    label_ids = None
    node_attrs = None
    if graphs[0].label_ids is not None:
        label_ids = np.concatenate([g.label_ids for g in graphs])
    else:
        node_attrs = np.concatenate([g.node_attrs for g in graphs], axis=0)
    node_graph = np.repeat(np.arange(b), node_counts)

    rec_attrs = np.concatenate([g.rec_attrs for g in graphs], axis=0)
    rec_dir = np.concatenate([g.rec_dir for g in graphs])
    rec_group = np.concatenate([g.rec_group + group_off[i] for i, g in enumerate(graphs)])
    group_src = np.concatenate([g.group_src + node_off[i] for i, g in enumerate(graphs)])
    group_dst = np.concatenate([g.group_dst + node_off[i] for i, g in enumerate(graphs)])

    n_recs = len(rec_dir)
    m_flat = segment_matrix(rec_group, n_groups, n_recs)
    m_flat_mean = segment_matrix(rec_group, n_groups, n_recs, mean=True)
    m_agg = segment_matrix(group_dst, n_nodes, n_groups)
    m_read = segment_matrix(node_graph, b, n_nodes, mean=True)
    return PackedGraphBatch(
        n_graphs=b, n_nodes=n_nodes, n_groups=n_groups,
        label_ids=label_ids, node_attrs=node_attrs, node_graph=node_graph,
        rec_attrs=rec_attrs, rec_dir=rec_dir,
        group_src=group_src, group_dst=group_dst,
        m_flat=m_flat, m_flat_mean=m_flat_mean, m_agg=m_agg, m_read=m_read,
    )


class GraphEncoder:
    """Owns the graph-side parameters and computes Z_G for packed batches."""

    def __init__(self, store: ParamStore, schema: Schema, config: NetworkConfig):
        self.schema = schema
        self.config = config
        k = schema.edge_attr_dim
        h = config.hidden
        if schema.node_mode == "label":
            # +1 row reserved for labels unseen at fit time
            self.node_table = store.tensor("node_embed", (len(schema.node_vocab) + 1, h), init="glorot")
            self.node_proj_w = None
            self.node_proj_b = None
        else:
            self.node_table = None
            self.node_proj_w = store.tensor("node_proj.w", (schema.node_attr_dim, h))
            self.node_proj_b = store.tensor("node_proj.b", (h,))
        self.dir_table = store.tensor("dir_embed", (3, max(k, 1)), init="glorot")
        if config.flatten == "deepset":
            self.phi = MLP(store, "flat.phi", [k, h, h])
            self.rho = MLP(store, "flat.rho", [h, h, config.edge_dim])
            flat_dim = config.edge_dim
        elif config.flatten == "mean":
            self.phi = None
            self.rho = None
            flat_dim = k
        else:
            raise ValueError(f"unknown flatten mode {config.flatten!r}")
        # edge vectors must match node width inside the message ReLU
        self.edge_proj = store.tensor("edge_proj.w", (flat_dim, h)) if flat_dim != h else None
        self.gin_mlps = [MLP(store, f"gin{l}.mlp", [h, h, h]) for l in range(config.gin_layers)]
        self.gin_eps = [store.tensor(f"gin{l}.eps", ()) for l in range(config.gin_layers)]
        self.readout = MLP(store, "readout", [h, h, config.graph_dim])

    def flat_edge_vectors(self, pb: PackedGraphBatch) -> Value | None:
        if pb.n_groups == 0:
            return None
        f = add(Value(pb.rec_attrs), gather_rows(self.dir_table, pb.rec_dir))
        if self.config.flatten == "deepset":
            e = self.rho(sparse_matmul(pb.m_flat, self.phi(f)))
        else:
            e = sparse_matmul(pb.m_flat_mean, f)
        if self.edge_proj is not None:
            e = matmul(e, self.edge_proj)
        return e

    def forward(self, pb: PackedGraphBatch) -> Value:
        if pb.label_ids is not None:
            x = gather_rows(self.node_table, pb.label_ids)
        else:
            x = affine(Value(pb.node_attrs), self.node_proj_w, self.node_proj_b)
        e = self.flat_edge_vectors(pb)
        for mlp, eps in zip(self.gin_mlps, self.gin_eps):
            scaled = mul(x, add(eps, 1.0))
            if e is not None:
                msgs = relu(add(gather_rows(x, pb.group_src), e))
                agg = sparse_matmul(pb.m_agg, msgs)
                x = mlp(add(scaled, agg))
            else:
                x = mlp(scaled)
        pooled = sparse_matmul(pb.m_read, x)
        return self.readout(pooled)

    def embed_graphs(self, graphs: list[MultiGraph]) -> Value:
        """Convenience for tests: encode, pack, and run one forward pass."""
        encoded = [encode_graph(g, self.schema) for g in graphs]
        return self.forward(pack_graphs(encoded))
