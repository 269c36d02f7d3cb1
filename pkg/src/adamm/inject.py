"""Expert-style anomaly injection and benchmark assembly.

Graph anomalies: GA1 relabels one node, GA2 reroutes one edge through a new
intermediary node. Metadata anomalies: MA1 backdates a journal entry, MA2
merges two transactions into one, MA3 moves a trip start into the night
hours, MA4 stretches a trip duration. A benchmark build splits the database
in half, injects a fixed fraction of the test half, labels test samples for
evaluation, and emits an audit log precise enough to undo every mutation
byte for byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import timedelta

import numpy as np

from .data import (Database, Edge, MultiGraph, Sample, Schema, parse_iso_date,
                   sample_from_json_dict, sample_to_json_dict, split_database)

GA_TYPES = ("GA1", "GA2")
MA_TYPES = ("MA1", "MA2", "MA3", "MA4")
ALL_TYPES = GA_TYPES + MA_TYPES

BACKDATE_DELTAS = (7, 14, 21)
MA1_WINDOW_DAYS = 3
NIGHT_EARLY = (1.0, 4.0)
NIGHT_LATE = (23.0, 24.0)
DURATION_FACTOR = (5.0, 10.0)


class InjectionError(ValueError):
    pass


@dataclass
class InjectionSpec:
    types: list[str]
    rate: float = 0.05
    seed: int = 0

    def validate(self) -> None:
        if not self.types:
            raise InjectionError("at least one injection type is required")
        for t in self.types:
            if t not in ALL_TYPES:
                raise InjectionError(f"unknown injection type {t!r}")
        if len(set(self.types)) != len(self.types):
            raise InjectionError("duplicate injection types")
        if not (0.0 < self.rate <= 0.5):
            raise InjectionError(f"rate must be in (0, 0.5], got {self.rate}")

    @property
    def potpourri(self) -> tuple[str, str] | None:
        """A pair of exactly one GA and one MA means both hit the same sample."""
        if len(self.types) == 2:
            gas = [t for t in self.types if t in GA_TYPES]
            mas = [t for t in self.types if t in MA_TYPES]
            if len(gas) == 1 and len(mas) == 1:
                return gas[0], mas[0]
        return None

    def label(self) -> str:
        pot = self.potpourri
        if pot:
            return f"{pot[0]}+{pot[1]}"
        return "|".join(self.types)


@dataclass
class AuditLog:
    entries: list[dict] = field(default_factory=list)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e, separators=(",", ":")))
                fh.write("\n")

    @classmethod
    def read(cls, path) -> "AuditLog":
        entries = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return cls(entries)


# ---------------------------------------------------------------------------
# single-sample mutations; each returns (new sample, mutation record)


def inject_ga1(s: Sample, rng: np.random.Generator, vocab: list[str]) -> tuple[Sample, dict]:
    g = s.graph
    if g.node_labels is None or g.n_nodes < 1:
        raise InjectionError(f"{s.sample_id}: GA1 needs labelled nodes")
    if len(vocab) < 2:
        raise InjectionError("GA1 needs a label vocabulary of size >= 2")
    node = int(rng.integers(g.n_nodes))
    old = g.node_labels[node]
    choices = [lab for lab in vocab if lab != old]
    new = choices[int(rng.integers(len(choices)))]
    labels = list(g.node_labels)
    labels[node] = new
    out = Sample(s.sample_id, MultiGraph(node_labels=labels, edges=list(g.edges)), s.meta, s.eval_label)
    return out, {"op": "GA1", "node": node, "old_label": old, "new_label": new}


def inject_ga2(s: Sample, rng: np.random.Generator, vocab: list[str]) -> tuple[Sample, dict]:
    g = s.graph
    nonloop = [i for i, e in enumerate(g.edges) if e.src != e.dst]
    if not nonloop:
        raise InjectionError(f"{s.sample_id}: GA2 needs a non-loop edge")
    idx = nonloop[int(rng.integers(len(nonloop)))]
    u, v, attrs = g.edges[idx]
    z = g.n_nodes
    z_label = vocab[int(rng.integers(len(vocab)))]
    labels = list(g.node_labels) + [z_label]
    edges = [e for i, e in enumerate(g.edges) if i != idx]
    edges.append(Edge(u, z, attrs))
    edges.append(Edge(z, v, attrs))
    out = Sample(s.sample_id, MultiGraph(node_labels=labels, edges=edges), s.meta, s.eval_label)
    rec = {"op": "GA2", "edge_index": idx, "src": u, "dst": v, "attrs": list(attrs), "new_label": z_label}
    return out, rec


def ma1_eligible(s: Sample) -> bool:
    meta = s.meta
    if not isinstance(meta, dict):
        return False
    try:
        entry = parse_iso_date(meta["entry_date"])
        eff = parse_iso_date(meta["effective_date"])
    except (KeyError, ValueError, AttributeError, TypeError):
        return False
    gap = (entry - eff).days
    return -MA1_WINDOW_DAYS <= gap <= 0


def inject_ma1(s: Sample, rng: np.random.Generator) -> tuple[Sample, dict]:
    if not ma1_eligible(s):
        raise InjectionError(f"{s.sample_id}: not eligible for MA1 (entry must fall within "
                             f"{MA1_WINDOW_DAYS} days before the effective date)")
    meta = dict(s.meta)
    eff = parse_iso_date(meta["effective_date"])
    delta = int(BACKDATE_DELTAS[int(rng.integers(len(BACKDATE_DELTAS)))])
    old = meta["entry_date"]
    meta["entry_date"] = (eff + timedelta(days=delta)).isoformat()
    out = Sample(s.sample_id, s.graph, meta, s.eval_label)
    return out, {"op": "MA1", "old_entry_date": old, "new_entry_date": meta["entry_date"], "delta_days": delta}


def inject_ma2(s1: Sample, s2: Sample, rng: np.random.Generator) -> tuple[Sample, dict]:
    if not isinstance(s1.meta, dict) or not isinstance(s2.meta, dict):
        raise InjectionError("MA2 needs single-record metadata on both samples")
    if s1.sample_id == s2.sample_id:
        raise InjectionError("MA2 needs two distinct samples")
    g1, g2 = s1.graph, s2.graph
    if (g1.node_labels is None) != (g2.node_labels is None):
        raise InjectionError("MA2 samples must share the node schema")
    n1 = g1.n_nodes
    if g1.node_labels is not None:
        labels = list(g1.node_labels) + list(g2.node_labels)
        attrs = None
    else:
        labels = None
        attrs = list(g1.node_attrs) + list(g2.node_attrs)
    edges = list(g1.edges) + [Edge(e.src + n1, e.dst + n1, e.attrs) for e in g2.edges]
    meta = {}
    coins = {}
    for name in s1.meta:
        take_first = bool(rng.integers(2) == 0)
        coins[name] = 1 if take_first else 2
        meta[name] = s1.meta[name] if take_first else s2.meta.get(name)
    merged_id = f"merged-{s1.sample_id}-{s2.sample_id}"
    out = Sample(merged_id, MultiGraph(node_labels=labels, node_attrs=attrs, edges=edges), meta, s1.eval_label)
    rec = {
        "op": "MA2",
        "merged_id": merged_id,
        "coins": coins,
        "original_s1": sample_to_json_dict(s1, include_labels=False),
        "original_s2": sample_to_json_dict(s2, include_labels=False),
    }
    return out, rec


def _records_with(s: Sample, field_name: str) -> list[dict]:
    if not isinstance(s.meta, list) or not s.meta:
        raise InjectionError(f"{s.sample_id}: needs a nonempty record multiset")
    if field_name not in s.meta[0]:
        raise InjectionError(f"{s.sample_id}: records lack the {field_name!r} field")
    return s.meta


def inject_ma3(s: Sample, rng: np.random.Generator) -> tuple[Sample, dict]:
    recs = _records_with(s, "start_time")
    idx = int(rng.integers(len(recs)))
    lo, hi = NIGHT_EARLY if rng.integers(2) == 0 else NIGHT_LATE
    new_start = float(rng.uniform(lo, hi))
    new_recs = [dict(r) for r in recs]
    old = new_recs[idx]["start_time"]
    new_recs[idx]["start_time"] = new_start
    out = Sample(s.sample_id, s.graph, new_recs, s.eval_label)
    return out, {"op": "MA3", "record": idx, "old_start_time": old, "new_start_time": new_start}


def inject_ma4(s: Sample, rng: np.random.Generator) -> tuple[Sample, dict]:
    recs = _records_with(s, "duration")
    idx = int(rng.integers(len(recs)))
    factor = float(rng.uniform(*DURATION_FACTOR))
    new_recs = [dict(r) for r in recs]
    old = float(new_recs[idx]["duration"])
    new_recs[idx]["duration"] = old * factor
    out = Sample(s.sample_id, s.graph, new_recs, s.eval_label)
    return out, {"op": "MA4", "record": idx, "old_duration": old,
                 "new_duration": new_recs[idx]["duration"], "factor": factor}


# ---------------------------------------------------------------------------


def _eligible(t: str, s: Sample, schema: Schema) -> bool:
    if t == "GA1":
        return schema.node_mode == "label" and len(schema.node_vocab) >= 2 and s.graph.n_nodes >= 1
    if t == "GA2":
        # the detour node needs a label, so attribute-mode graphs are out
        return (schema.node_mode == "label" and bool(schema.node_vocab)
                and any(e.src != e.dst for e in s.graph.edges))
    if t == "MA1":
        return schema.meta_mode == "single" and ma1_eligible(s)
    if t == "MA2":
        return schema.meta_mode == "single"
    if t in ("MA3", "MA4"):
        fld = "start_time" if t == "MA3" else "duration"
        return schema.meta_mode == "records" and bool(s.meta_records) and fld in s.meta_records[0]
    raise InjectionError(f"unknown type {t!r}")


def _apply_type(t: str, sample: Sample, rng, vocab, partner: Sample | None = None):
    if t == "GA1":
        return inject_ga1(sample, rng, vocab)
    if t == "GA2":
        return inject_ga2(sample, rng, vocab)
    if t == "MA1":
        return inject_ma1(sample, rng)
    if t == "MA2":
        return inject_ma2(sample, partner, rng)
    if t == "MA3":
        return inject_ma3(sample, rng)
    if t == "MA4":
        return inject_ma4(sample, rng)
    raise InjectionError(f"unknown type {t!r}")


def build_benchmark(db: Database, spec: InjectionSpec) -> tuple[Database, Database, AuditLog]:
    """Split half/half, inject floor(rate * |test|) test samples, label test.

    The train half is untouched and label-free. The audit log records every
    mutation with enough detail to restore the clean test half exactly.
    """
    spec.validate()
    if len(db) < 4:
        raise InjectionError(f"database too small to benchmark ({len(db)} samples)")
    schema = db.schema
    train, test = split_database(db, spec.seed)
    rng = np.random.default_rng([spec.seed, 1])
    n_test = len(test)
    k = int(math.floor(spec.rate * n_test))

    pot = spec.potpourri
    if pot:
        plan_types = [pot]
        pools = [i for i in range(n_test)
                 if _eligible(pot[0], test[i], schema) and _eligible(pot[1], test[i], schema)]
        shortfall_name = "+".join(pot)
    elif len(spec.types) == 1:
        t = spec.types[0]
        pools = [i for i in range(n_test) if _eligible(t, test[i], schema)]
        plan_types = [(t,)]
        shortfall_name = t
    else:
        pools = [i for i in range(n_test) if any(_eligible(t, test[i], schema) for t in spec.types)]
        plan_types = None
        shortfall_name = ",".join(spec.types)
    if len(pools) < k:
        raise InjectionError(f"{shortfall_name}: need {k} eligible test samples, found {len(pools)}")
    target_pos = sorted(int(i) for i in rng.choice(len(pools), size=k, replace=False))
    targets = [pools[i] for i in target_pos]
    target_set = set(targets)

    samples = list(test.samples)
    audit = AuditLog()
    partners_to_remove: list[int] = []
    used_partners: set[int] = set()

    for idx in targets:
        if plan_types is not None:
            chosen = plan_types[0]
        else:
            options = [t for t in spec.types if _eligible(t, samples[idx], schema)]
            chosen = (options[int(rng.integers(len(options)))],)
        mutations = []
        current = samples[idx]
        for t in chosen:
            partner = None
            partner_idx = None
            if t == "MA2":
                candidates = [j for j in range(n_test)
                              if j != idx and j not in target_set and j not in used_partners]
                if not candidates:
                    raise InjectionError("MA2: no partner sample available")
                partner_idx = candidates[int(rng.integers(len(candidates)))]
                used_partners.add(partner_idx)
                partners_to_remove.append(partner_idx)
                partner = samples[partner_idx]
            current, rec = _apply_type(t, current, rng, schema.node_vocab, partner)
            if t == "MA2":
                rec["partner_index"] = partner_idx
            mutations.append(rec)
        label = "+".join(chosen)
        current = Sample(current.sample_id, current.graph, current.meta, label)
        audit.entries.append({
            "sample_id": current.sample_id,
            "original_id": samples[idx].sample_id,
            "index": idx,
            "type": label,
            "mutations": mutations,
        })
        samples[idx] = current

    for j in range(len(samples)):
        if j not in target_set and j not in used_partners:
            s = samples[j]
            samples[j] = Sample(s.sample_id, s.graph, s.meta, "normal")
    for j in sorted(partners_to_remove, reverse=True):
        del samples[j]

    test_out = Database(samples, schema)
    return train, test_out, audit


def reverse_benchmark(test: Database, audit: AuditLog) -> Database:
    """Undo every audited mutation, restoring the clean test half."""
    samples = list(test.samples)
    # bring removed merge partners back first, in ascending original position
    reinserts = []
    for entry in audit.entries:
        for rec in entry["mutations"]:
            if rec["op"] == "MA2":
                reinserts.append((rec["partner_index"], sample_from_json_dict(rec["original_s2"])))
    for pos, sample in sorted(reinserts, key=lambda x: x[0]):
        samples.insert(pos, sample)

    for entry in audit.entries:
        idx = entry["index"]
        s = samples[idx]
        for rec in reversed(entry["mutations"]):
            op = rec["op"]
            if op == "GA1":
                labels = list(s.graph.node_labels)
                labels[rec["node"]] = rec["old_label"]
                s = Sample(s.sample_id, MultiGraph(node_labels=labels, edges=list(s.graph.edges)), s.meta, s.eval_label)
            elif op == "GA2":
                labels = list(s.graph.node_labels)[:-1]
                edges = list(s.graph.edges)[:-2]
                edges.insert(rec["edge_index"], Edge(rec["src"], rec["dst"], tuple(rec["attrs"])))
                s = Sample(s.sample_id, MultiGraph(node_labels=labels, edges=edges), s.meta, s.eval_label)
            elif op == "MA1":
                meta = dict(s.meta)
                meta["entry_date"] = rec["old_entry_date"]
                s = Sample(s.sample_id, s.graph, meta, s.eval_label)
            elif op == "MA2":
                s = sample_from_json_dict(rec["original_s1"])
            elif op == "MA3":
                recs = [dict(r) for r in s.meta]
                recs[rec["record"]]["start_time"] = rec["old_start_time"]
                s = Sample(s.sample_id, s.graph, recs, s.eval_label)
            elif op == "MA4":
                recs = [dict(r) for r in s.meta]
                recs[rec["record"]]["duration"] = rec["old_duration"]
                s = Sample(s.sample_id, s.graph, recs, s.eval_label)
            else:
                raise InjectionError(f"unknown audit op {op!r}")
        samples[idx] = Sample(s.sample_id, s.graph, s.meta, None)

    for j in range(len(samples)):
        s = samples[j]
        if s.eval_label is not None:
            samples[j] = Sample(s.sample_id, s.graph, s.meta, None)
    return Database(samples, test.schema)
