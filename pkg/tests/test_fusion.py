"""Metadata featurization, record-multiset encoding, and the fusion head."""

import numpy as np
import pytest

from adamm.autodiff import Value
from adamm.data import Database, Edge, MultiGraph, Sample, derive_schema
from adamm.encoder import NetworkConfig
from adamm.fusion import (FusionHead, MetadataEncoder, MetaFeaturizer,
                          normalize_rows, pack_meta)
from adamm.model import JointModel
from adamm.params import ParamStore
from adamm.synth import generate


def single_meta_samples():
    g = MultiGraph(node_labels=["a"], edges=[])
    return [
        Sample("s0", g, {"amount": 10.0, "who": "ann",
                         "entry_date": "2021-03-01", "effective_date": "2021-03-03"}),
        Sample("s1", g, {"amount": 20.0, "who": "bob",
                         "entry_date": "2021-03-02", "effective_date": "2021-03-02"}),
    ]


def test_numeric_and_date_standardization():
    samples = single_meta_samples()
    schema = derive_schema(samples)
    feat = MetaFeaturizer(schema)
    # fields: amount (numeric), entry_date, effective_date (+1 gap feature)
    assert feat.n_numeric == 3 + len(schema.gap_stats)
    row = feat.record_numeric(samples[0].meta)
    amount = next(f for f in schema.fields if f.name == "amount")
    assert row[0] == pytest.approx((10.0 - amount.mean) / amount.std)
    assert np.all(np.isfinite(row))


def test_gap_feature_reacts_to_backdating():
    samples = single_meta_samples()
    schema = derive_schema(samples)
    feat = MetaFeaturizer(schema)
    normal = feat.record_numeric(samples[0].meta)
    shifted = dict(samples[0].meta)
    shifted["entry_date"] = "2021-03-17"  # entry now after effective
    moved = feat.record_numeric(shifted)
    # the trailing gap feature moves a lot more than day indices do
    assert abs(moved[-1] - normal[-1]) > 1.0


def test_oov_categorical_gets_reserved_id():
    samples = single_meta_samples()
    feat = MetaFeaturizer(derive_schema(samples))
    known = feat.record_cat_ids({"who": "ann"})
    assert known == [0]
    with pytest.warns(UserWarning, match="unseen value"):
        oov = feat.record_cat_ids({"who": "zelda"})
    assert oov == [len(feat.cat_fields[0].vocab)]


def test_onehot_matrix_rows_follow_records():
    db = generate("mobility", 6, 1, seed=0)
    feat = MetaFeaturizer(db.schema)
    x, owner = feat.onehot_matrix(list(db.samples))
    assert x.shape[0] == sum(len(s.meta_records) for s in db.samples)
    assert owner.max() == len(db) - 1
    # each record row carries exactly one active slot per categorical field
    n_cat = len(feat.cat_fields)
    assert np.all(x[:, feat.n_numeric:].sum(1) == n_cat)


def test_record_multiset_reorder_invariance():
    db = generate("mobility", 15, 2, seed=1)
    config = NetworkConfig(hidden=8, meta_hidden=8, meta_dim=6, cat_dim=4)
    store = ParamStore(seed=2)
    feat = MetaFeaturizer(db.schema)
    enc = MetadataEncoder(store, db.schema, config, feat)
    metas = [feat.encode_sample(s) for s in db.samples]
    base = enc.forward(pack_meta(metas, "records")).data

    rng = np.random.default_rng(3)
    shuffled = []
    for s in db.samples:
        recs = list(s.meta_records)
        order = rng.permutation(len(recs))
        shuffled.append(Sample(s.sample_id, s.graph, [recs[i] for i in order]))
    metas2 = [feat.encode_sample(s) for s in shuffled]
    out = enc.forward(pack_meta(metas2, "records")).data
    assert np.max(np.abs(out - base)) <= 1e-9


def test_single_mode_meta_is_raw_record_vector():
    samples = single_meta_samples()
    schema = derive_schema(samples)
    config = NetworkConfig(cat_dim=4)
    store = ParamStore(seed=4)
    feat = MetaFeaturizer(schema)
    enc = MetadataEncoder(store, schema, config, feat)
    assert enc.out_dim == feat.n_numeric + 4 * len(feat.cat_fields)
    pm = pack_meta([feat.encode_sample(s) for s in samples], "single")
    out = enc.forward(pm)
    assert out.shape == (2, enc.out_dim)


def test_normalize_rows_unit_length():
    x = Value(np.array([[3.0, 4.0], [0.0, 0.0]]))
    out = normalize_rows(x).data
    assert np.allclose(out[0], [0.6, 0.8])
    assert np.allclose(out[1], [0.0, 0.0])  # zero row stays finite


def test_fusion_concatenates_normalized_projections():
    config = NetworkConfig(graph_dim=5, proj_dim=3, joint_dim=4, use_metadata=True)
    store = ParamStore(seed=5)
    head = FusionHead(store, config, meta_dim=7)
    rng = np.random.default_rng(6)
    zg = Value(rng.normal(size=(4, 5)))
    zm = Value(rng.normal(size=(4, 7)))
    out = head.forward(zg, zm)
    assert out.shape == (4, 4)
    # scaling either modality's input leaves the fused embedding unchanged
    out_scaled = head.forward(Value(zg.data * 100.0), Value(zm.data * 0.01))
    assert np.allclose(out.data, out_scaled.data, atol=1e-9)


def test_fusion_without_metadata_branch():
    config = NetworkConfig(graph_dim=5, proj_dim=3, joint_dim=4, use_metadata=False)
    head = FusionHead(ParamStore(seed=7), config, meta_dim=None)
    out = head.forward(Value(np.ones((2, 5))), None)
    assert out.shape == (2, 4)


def test_joint_model_invariant_to_record_order():
    db = generate("mobility", 12, 2, seed=2)
    config = NetworkConfig(hidden=8, edge_dim=8, gin_layers=2, graph_dim=6,
                           proj_dim=4, joint_dim=4, cat_dim=4, meta_hidden=8,
                           meta_dim=6, men_hidden=8)
    model = JointModel(db.schema, config, n_centroids=2, seed=8)
    rng = np.random.default_rng(9)
    reordered = []
    for s in db.samples:
        recs = list(s.meta_records)
        order = rng.permutation(len(recs))
        reordered.append(Sample(s.sample_id, s.graph, [recs[i] for i in order]))
    base = model.embed(model.pack(model.encode_samples(list(db.samples)), range(len(db))))
    out = model.embed(model.pack(model.encode_samples(reordered), range(len(db))))
    assert np.max(np.abs(out.data - base.data)) <= 1e-9
