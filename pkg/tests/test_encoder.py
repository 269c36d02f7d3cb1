"""Graph encoder: direction records, ordered-pair flattening, and the
permutation invariances the embedding must satisfy."""

import numpy as np
import pytest

from adamm.data import Edge, MultiGraph, derive_schema
from adamm.encoder import (FORWARD, REVERSE, SELF_LOOP, GraphEncoder,
                           NetworkConfig, encode_directions, encode_graph,
                           pack_graphs, standardize_edge_attrs)
from adamm.params import ParamStore
from adamm.synth import generate


def small_config(**kw):
    base = dict(hidden=10, edge_dim=10, gin_layers=2, graph_dim=6,
                proj_dim=4, joint_dim=4, use_metadata=False)
    base.update(kw)
    return NetworkConfig(**base)


def graph_schema(graphs):
    from adamm.data import Database, Sample

    samples = [Sample(f"g{i}", g, {"f": 1.0}) for i, g in enumerate(graphs)]
    return derive_schema(samples)


def permute_graph(g: MultiGraph, perm: np.ndarray) -> MultiGraph:
    """Relabel node ids by perm (node perm[i] takes node i's content)."""
    inv = np.argsort(perm)
    labels = [g.node_labels[i] for i in perm]
    edges = [Edge(int(inv[e.src]), int(inv[e.dst]), e.attrs) for e in g.edges]
    return MultiGraph(node_labels=labels, edges=edges)


def random_graph(rng, vocab=("a", "b", "c", "d")):
    n = int(rng.integers(2, 7))
    labels = [vocab[int(rng.integers(len(vocab)))] for _ in range(n)]
    m = int(rng.integers(1, 10))
    edges = [Edge(int(rng.integers(n)), int(rng.integers(n)),
                  (round(float(rng.uniform(0, 9)), 2),)) for _ in range(m)]
    return MultiGraph(node_labels=labels, edges=edges)


def test_direction_records_forward_reverse_pair():
    g = MultiGraph(node_labels=["a", "b"], edges=[Edge(0, 1, (2.0,))])
    recs = encode_directions(g)
    assert recs == [(0, 1, (2.0,), FORWARD), (1, 0, (2.0,), REVERSE)]


def test_direction_records_self_loop_single():
    g = MultiGraph(node_labels=["a"], edges=[Edge(0, 0, (1.5,))])
    assert encode_directions(g) == [(0, 0, (1.5,), SELF_LOOP)]


def test_encode_graph_groups_by_ordered_pair():
    g = MultiGraph(node_labels=["a", "b"],
                   edges=[Edge(0, 1, (1.0,)), Edge(0, 1, (2.0,)), Edge(1, 0, (3.0,))])
    schema = graph_schema([g])
    enc = encode_graph(g, schema)
    # records: (0,1)x2 fwd, (1,0)x2 rev, (1,0) fwd, (0,1) rev -> 2 groups
    assert enc.n_groups == 2
    assert len(enc.rec_dir) == 6
    pair_of = {(int(s), int(d)) for s, d in zip(enc.group_src, enc.group_dst)}
    assert pair_of == {(0, 1), (1, 0)}


def test_standardize_applies_log1p_for_nonnegative():
    g = MultiGraph(node_labels=["a", "b"], edges=[Edge(0, 1, (10.0,))])
    schema = graph_schema([g])
    assert schema.edge_log1p == [True]
    x = standardize_edge_attrs(np.array([[10.0]]), schema)
    expect = (np.log1p(10.0) - schema.edge_mean[0]) / schema.edge_std[0]
    assert x[0, 0] == pytest.approx(expect)


def test_unseen_label_maps_to_reserved_row():
    g = MultiGraph(node_labels=["a", "b"], edges=[Edge(0, 1, (1.0,))])
    schema = graph_schema([g])
    foreign = MultiGraph(node_labels=["zz", "b"], edges=[Edge(0, 1, (1.0,))])
    enc = encode_graph(foreign, schema)
    assert enc.label_ids[0] == len(schema.node_vocab)


@pytest.mark.parametrize("flatten", ["deepset", "mean"])
def test_node_permutation_invariance(flatten):
    rng = np.random.default_rng(0)
    graphs = [random_graph(rng) for _ in range(30)]
    schema = graph_schema(graphs)
    enc = GraphEncoder(ParamStore(seed=1), schema, small_config(flatten=flatten))
    base = enc.embed_graphs(graphs).data
    for trial in range(3):
        permed = []
        for g in graphs:
            perm = rng.permutation(g.n_nodes)
            permed.append(permute_graph(g, perm))
        out = enc.embed_graphs(permed).data
        assert np.max(np.abs(out - base)) <= 1e-9


@pytest.mark.parametrize("flatten", ["deepset", "mean"])
def test_edge_reorder_invariance(flatten):
    rng = np.random.default_rng(2)
    graphs = [random_graph(rng) for _ in range(30)]
    schema = graph_schema(graphs)
    enc = GraphEncoder(ParamStore(seed=3), schema, small_config(flatten=flatten))
    base = enc.embed_graphs(graphs).data
    shuffled = []
    for g in graphs:
        order = rng.permutation(g.n_edges)
        shuffled.append(MultiGraph(node_labels=list(g.node_labels),
                                   edges=[g.edges[i] for i in order]))
    out = enc.embed_graphs(shuffled).data
    assert np.max(np.abs(out - base)) <= 1e-9


def test_orientation_changes_embedding():
    # flipping one edge's direction must move the embedding: the ordered-pair
    # grouping exists precisely so direction survives the flattening step
    g_fwd = MultiGraph(node_labels=["a", "b", "c"],
                       edges=[Edge(0, 1, (4.0,)), Edge(1, 2, (2.0,))])
    g_rev = MultiGraph(node_labels=["a", "b", "c"],
                       edges=[Edge(1, 0, (4.0,)), Edge(1, 2, (2.0,))])
    schema = graph_schema([g_fwd, g_rev])
    enc = GraphEncoder(ParamStore(seed=4), schema, small_config())
    out = enc.embed_graphs([g_fwd, g_rev]).data
    assert np.max(np.abs(out[0] - out[1])) > 1e-6


def test_multiplicity_changes_embedding():
    g1 = MultiGraph(node_labels=["a", "b"], edges=[Edge(0, 1, (3.0,))])
    g2 = MultiGraph(node_labels=["a", "b"], edges=[Edge(0, 1, (3.0,)), Edge(0, 1, (3.0,))])
    schema = graph_schema([g1, g2])
    enc = GraphEncoder(ParamStore(seed=5), schema, small_config())
    out = enc.embed_graphs([g1, g2]).data
    assert np.max(np.abs(out[0] - out[1])) > 1e-8


def test_batch_composition_does_not_change_embeddings():
    rng = np.random.default_rng(6)
    graphs = [random_graph(rng) for _ in range(8)]
    schema = graph_schema(graphs)
    enc = GraphEncoder(ParamStore(seed=7), schema, small_config())
    whole = enc.embed_graphs(graphs).data
    for i, g in enumerate(graphs):
        alone = enc.embed_graphs([g]).data[0]
        assert np.allclose(alone, whole[i], atol=1e-9)


def test_edgeless_graph_embeds():
    g = MultiGraph(node_labels=["a", "a"], edges=[])
    schema = graph_schema([g])
    enc = GraphEncoder(ParamStore(seed=8), schema, small_config())
    out = enc.embed_graphs([g]).data
    assert out.shape == (1, 6)
    assert np.all(np.isfinite(out))


def test_pack_graphs_offsets():
    g1 = MultiGraph(node_labels=["a", "b"], edges=[Edge(0, 1, (1.0,))])
    g2 = MultiGraph(node_labels=["b", "a", "a"], edges=[Edge(2, 0, (2.0,))])
    schema = graph_schema([g1, g2])
    pb = pack_graphs([encode_graph(g1, schema), encode_graph(g2, schema)])
    assert pb.n_graphs == 2 and pb.n_nodes == 5
    assert pb.node_graph.tolist() == [0, 0, 1, 1, 1]
    # second graph's groups point at globally offset node ids
    assert pb.group_src.max() >= 2


def test_synthetic_graphs_round_trip_through_encoder():
    db = generate("mobility", 25, 2, seed=0)
    enc = GraphEncoder(ParamStore(seed=9), db.schema, small_config())
    out = enc.embed_graphs([s.graph for s in db.samples]).data
    assert out.shape == (25, 6)
    assert np.all(np.isfinite(out))
