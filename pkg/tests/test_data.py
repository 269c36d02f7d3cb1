"""Data layer: schema derivation, validation, JSON-lines round trips, and the
half/half split."""

import json

import pytest

from adamm.data import (Database, DataError, Edge, MultiGraph, Sample, Schema,
                        days_since_epoch, derive_schema, load_database,
                        parse_iso_date, sample_from_json_dict,
                        sample_to_json_dict, split_database, strip_labels,
                        validate_database, validate_sample, write_database)
from adamm.synth import generate


def label_sample(sid="s0", labels=("a", "b"), edges=((0, 1, 2.5),),
                 meta=None, eval_label=None):
    e = [Edge(u, v, (w,)) for u, v, w in edges]
    meta = {"who": "alice", "amount": 3.0, "entry_date": "2021-05-01"} if meta is None else meta
    return Sample(sid, MultiGraph(node_labels=list(labels), edges=e), meta, eval_label)


def test_parse_iso_date_and_epoch_days():
    d = parse_iso_date("2021-01-31")
    assert (d.year, d.month, d.day) == (2021, 1, 31)
    assert days_since_epoch("1970-01-02") == 1
    with pytest.raises(ValueError):
        parse_iso_date("2021-13-01")


def test_schema_vocab_first_seen_order():
    samples = [label_sample("s0", ("b", "a")), label_sample("s1", ("c", "a"))]
    schema = derive_schema(samples)
    assert schema.node_mode == "label"
    assert schema.node_vocab == ["b", "a", "c"]
    assert schema.meta_mode == "single"
    kinds = {f.name: f.kind for f in schema.fields}
    assert kinds == {"who": "categorical", "amount": "numeric", "entry_date": "date"}


def test_schema_log1p_only_for_nonnegative_dims():
    samples = [
        label_sample("s0", edges=((0, 1, 5.0),)),
        label_sample("s1", edges=((0, 1, 0.5),)),
    ]
    assert derive_schema(samples).edge_log1p == [True]
    samples[1] = label_sample("s1", edges=((0, 1, -0.5),))
    assert derive_schema(samples).edge_log1p == [False]


def test_schema_gap_stats_cover_date_pairs():
    meta = {"entry_date": "2021-05-03", "effective_date": "2021-05-05"}
    samples = [label_sample("s0", meta=dict(meta)), label_sample("s1", meta=dict(meta))]
    schema = derive_schema(samples)
    assert len(schema.gap_stats) == 1
    a, b, mean, _ = schema.gap_stats[0]
    assert {a, b} == {"entry_date", "effective_date"}
    assert abs(abs(mean) - 2.0) < 1e-12


def test_schema_json_roundtrip_and_digest_stability():
    db = generate("bookkeeping", 30, 2, seed=0)
    blob = db.schema.to_json_dict()
    again = Schema.from_json_dict(json.loads(json.dumps(blob)))
    assert again == db.schema
    assert again.digest() == db.schema.digest()


def test_validate_rejects_out_of_range_edge():
    s = label_sample(edges=((0, 5, 1.0),))
    schema = derive_schema([label_sample()])
    msgs = validate_sample(s, schema)
    assert any("endpoint out of range" in m for m in msgs)


def test_validate_rejects_foreign_label_and_missing_field():
    schema = derive_schema([label_sample()])
    bad = label_sample("s9", labels=("zz", "a"), meta={"who": "bob"})
    msgs = validate_sample(bad, schema)
    assert any("not in vocabulary" in m for m in msgs)
    assert any("missing fields" in m for m in msgs)


def test_validate_rejects_wrong_meta_mode():
    schema = derive_schema([label_sample()])
    listy = label_sample("s1", meta=[{"who": "x", "amount": 1.0, "entry_date": "2021-01-01"}])
    assert any("single record" in m for m in validate_sample(listy, schema))


def test_validate_database_flags_duplicate_ids():
    samples = [label_sample("dup"), label_sample("dup")]
    db = Database(samples, derive_schema(samples))
    assert any("duplicate sample id" in m for m in validate_database(db))


def test_sample_json_roundtrip_preserves_everything():
    s = label_sample("rt", eval_label="GA1")
    d = sample_to_json_dict(s, include_labels=True)
    back = sample_from_json_dict(json.loads(json.dumps(d)))
    assert back == s
    unlabeled = sample_from_json_dict(sample_to_json_dict(s, include_labels=False))
    assert unlabeled.eval_label is None


def test_write_load_database_roundtrip(tmp_path):
    db = generate("bookkeeping", 40, 2, seed=1)
    p = tmp_path / "db.jsonl"
    write_database(db, p)
    back = load_database(p)
    assert len(back) == len(db)
    assert [s.sample_id for s in back] == [s.sample_id for s in db]
    assert back.schema == db.schema
    assert (tmp_path / "db.jsonl.schema.json").exists()
    # byte stability: rewriting an unchanged database reproduces the file
    p2 = tmp_path / "again.jsonl"
    write_database(back, p2)
    assert p.read_bytes() == p2.read_bytes()


def test_load_database_rejects_bad_json(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"not valid\n')
    with pytest.raises(DataError):
        load_database(p)


def test_load_database_rejects_duplicate_ids(tmp_path):
    db = generate("mobility", 5, 1, seed=0)
    p = tmp_path / "dup.jsonl"
    line = json.dumps(sample_to_json_dict(db[0]))
    p.write_text(line + "\n" + line + "\n")
    with pytest.raises(DataError, match="duplicate"):
        load_database(p)


def test_strip_labels_removes_only_labels():
    db = generate("bookkeeping", 10, 1, seed=2)
    labelled = Database([Sample(s.sample_id, s.graph, s.meta, "normal") for s in db], db.schema)
    bare = strip_labels(labelled)
    assert all(s.eval_label is None for s in bare)
    assert [s.graph for s in bare] == [s.graph for s in labelled]


def test_split_database_is_a_deterministic_partition():
    db = generate("bookkeeping", 101, 2, seed=3)
    tr1, te1 = split_database(db, seed=9)
    tr2, te2 = split_database(db, seed=9)
    assert [s.sample_id for s in tr1] == [s.sample_id for s in tr2]
    assert len(tr1) == 50 and len(te1) == 51
    ids = {s.sample_id for s in tr1} | {s.sample_id for s in te1}
    assert len(ids) == 101
    tr3, _ = split_database(db, seed=10)
    assert [s.sample_id for s in tr3] != [s.sample_id for s in tr1]


def test_meta_records_wraps_single_record():
    s = label_sample()
    assert s.meta_records == [s.meta]
    recs = [{"a": 1.0}, {"a": 2.0}]
    s2 = Sample("x", MultiGraph(node_labels=["a"]), recs)
    assert s2.meta_records is recs
