"""Data model for node/edge-attributed directed multi-graphs with per-sample metadata.

A database is a list of samples. Each sample couples a directed multi-graph
(categorical node labels or numeric node attributes, numeric edge attributes,
parallel edges and self-loops allowed) with tabular metadata: either a single
record or a multiset of records. Samples may carry an evaluation-only label
that no training code reads.

On disk a database is JSON lines, one sample per line, with a derived schema
written alongside as a human-readable sidecar. Loading always re-derives the
schema from file content, so the sidecar is informational only.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Any, Iterable, NamedTuple

EPOCH = date(1970, 1, 1)
_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


class DataError(ValueError):
    """Raised when a database or sample fails validation."""

    def __init__(self, violations):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = list(violations)
        preview = "; ".join(self.violations[:5])
        more = len(self.violations) - 5
        if more > 0:
            preview += f"; (+{more} more)"
        super().__init__(preview)


class Edge(NamedTuple):
    src: int
    dst: int
    attrs: tuple[float, ...]


@dataclass
class MultiGraph:
    """Directed multi-graph. Node ids are dense 0..n-1.

    Exactly one of node_labels / node_attrs is set; all graphs in one
    database must agree on which.
    """

    node_labels: list[str] | None = None
    node_attrs: list[tuple[float, ...]] | None = None
    edges: list[Edge] = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        if self.node_labels is not None:
            return len(self.node_labels)
        return len(self.node_attrs)

    @property
    def n_edges(self) -> int:
        return len(self.edges)


@dataclass
class Sample:
    sample_id: str
    graph: MultiGraph
    meta: dict[str, Any] | list[dict[str, Any]]
    eval_label: str | None = None  # evaluation-only; never read during training

    @property
    def meta_records(self) -> list[dict[str, Any]]:
        if isinstance(self.meta, list):
            return self.meta
        return [self.meta]


@dataclass
class FieldSpec:
    name: str
    kind: str  # "numeric" | "categorical" | "date"
    vocab: list[str] | None = None  # categorical: first-seen order
    mean: float = 0.0  # numeric / date(days since epoch) standardization
    std: float = 1.0


@dataclass
class Schema:
    """Everything needed to map samples to fixed-width model inputs.

    Derived deterministically from a database: vocabularies in first-seen
    order, standardization statistics over all observed values. Edge
    attribute dimensions whose observed values are all nonnegative are
    log1p-compressed before standardization (monetary amounts and most
    physical quantities are heavy-tailed and nonnegative).
    """

    node_mode: str  # "label" | "attr"
    node_vocab: list[str] | None
    node_attr_dim: int | None
    edge_attr_dim: int
    edge_log1p: list[bool]
    edge_mean: list[float]
    edge_std: list[float]
    meta_mode: str  # "single" | "records"
    fields: list[FieldSpec]
    # standardization for day gaps between ordered pairs of date fields
    gap_stats: list[tuple[str, str, float, float]] = field(default_factory=list)

    def field_names(self) -> list[str]:
        return [f.name for f in self.fields]

    def date_fields(self) -> list[FieldSpec]:
        return [f for f in self.fields if f.kind == "date"]

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["gap_stats"] = [list(g) for g in self.gap_stats]
        return d

    @classmethod
    def from_json_dict(cls, d: dict) -> "Schema":
        fields = [FieldSpec(**f) for f in d["fields"]]
        gaps = [tuple(g) for g in d.get("gap_stats", [])]
        kw = {k: v for k, v in d.items() if k not in ("fields", "gap_stats")}
        return cls(fields=fields, gap_stats=gaps, **kw)

    def digest(self) -> str:
        """Stable hash of the schema; stored in checkpoints."""
        blob = json.dumps(self.to_json_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class Database:
    samples: list[Sample]
    schema: Schema

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]


def parse_iso_date(s: str) -> date:
    y, m, d = s.split("-")
    return date(int(y), int(m), int(d))


def days_since_epoch(s: str) -> int:
    return (parse_iso_date(s) - EPOCH).days


def _is_date_string(v: Any) -> bool:
    if not isinstance(v, str) or not _ISO_DATE.match(v):
        return False
    try:
        parse_iso_date(v)
        return True
    except ValueError:
        return False


def _canon_value(v: Any) -> Any:
    # booleans become categorical strings so vocabularies stay string-typed
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def _field_kind(v: Any) -> str:
    v = _canon_value(v)
    if isinstance(v, (int, float)):
        return "numeric"
    if isinstance(v, str):
        return "date" if _is_date_string(v) else "categorical"
    raise DataError(f"unsupported metadata value type {type(v).__name__!r}")


def _mean_std(values: list[float]) -> tuple[float, float]:
    if not values:
        return 0.0, 1.0
    m = float(sum(values) / len(values))
    var = sum((x - m) ** 2 for x in values) / len(values)
    s = math.sqrt(var)
    return m, (s if s > 0 else 1.0)


def derive_schema(samples: list[Sample]) -> Schema:
    """Scan a database once and freeze vocabularies plus feature statistics."""
    if not samples:
        raise DataError("empty database")
    g0 = samples[0].graph
    node_mode = "label" if g0.node_labels is not None else "attr"
    meta_mode = "records" if isinstance(samples[0].meta, list) else "single"

    node_vocab: list[str] = []
    seen_labels: set[str] = set()
    node_attr_dim = None
    edge_dim = None
    edge_values: list[list[float]] = []

    field_order: list[str] = []
    field_kind: dict[str, str] = {}
    vocabs: dict[str, list[str]] = {}
    vocab_seen: dict[str, set[str]] = {}
    numeric_vals: dict[str, list[float]] = {}
    date_vals: dict[str, list[int]] = {}

    for s in samples:
        g = s.graph
        if node_mode == "label":
            for lab in g.node_labels or []:
                if lab not in seen_labels:
                    seen_labels.add(lab)
                    node_vocab.append(lab)
        else:
            for a in g.node_attrs or []:
                node_attr_dim = len(a) if node_attr_dim is None else node_attr_dim
        for e in g.edges:
            if edge_dim is None:
                edge_dim = len(e.attrs)
                edge_values = [[] for _ in range(edge_dim)]
            if len(e.attrs) == edge_dim:
                for j, x in enumerate(e.attrs):
                    edge_values[j].append(float(x))
        for rec in s.meta_records:
            for name, raw in rec.items():
                v = _canon_value(raw)
                if name not in field_kind:
                    field_order.append(name)
                    field_kind[name] = _field_kind(v)
                k = field_kind[name]
                if k == "numeric" and isinstance(v, (int, float)):
                    numeric_vals.setdefault(name, []).append(float(v))
                elif k == "date" and _is_date_string(v):
                    date_vals.setdefault(name, []).append(days_since_epoch(v))
                elif k == "categorical" and isinstance(v, str):
                    seen = vocab_seen.setdefault(name, set())
                    if v not in seen:
                        seen.add(v)
                        vocabs.setdefault(name, []).append(v)

    if edge_dim is None:
        edge_dim = 0
    edge_log1p = []
    edge_mean = []
    edge_std = []
    for j in range(edge_dim):
        vals = edge_values[j]
        use_log = bool(vals) and min(vals) >= 0.0
        if use_log:
            vals = [math.log1p(x) for x in vals]
        m, sd = _mean_std(vals)
        edge_log1p.append(use_log)
        edge_mean.append(m)
        edge_std.append(sd)

    fields = []
    for name in field_order:
        k = field_kind[name]
        if k == "numeric":
            m, sd = _mean_std(numeric_vals.get(name, []))
            fields.append(FieldSpec(name, "numeric", mean=m, std=sd))
        elif k == "date":
            m, sd = _mean_std([float(x) for x in date_vals.get(name, [])])
            fields.append(FieldSpec(name, "date", mean=m, std=sd))
        else:
            fields.append(FieldSpec(name, "categorical", vocab=vocabs.get(name, [])))

    # gaps between every ordered pair of date fields, standardized
    gap_stats = []
    dnames = [f.name for f in fields if f.kind == "date"]
    for i in range(len(dnames)):
        for j in range(i + 1, len(dnames)):
            a, b = dnames[i], dnames[j]
            gaps = []
            for s in samples:
                for rec in s.meta_records:
                    va, vb = rec.get(a), rec.get(b)
                    if _is_date_string(va) and _is_date_string(vb):
                        gaps.append(float(days_since_epoch(va) - days_since_epoch(vb)))
            m, sd = _mean_std(gaps)
            gap_stats.append((a, b, m, sd))

    return Schema(
        node_mode=node_mode,
        node_vocab=node_vocab if node_mode == "label" else None,
        node_attr_dim=node_attr_dim if node_mode == "attr" else None,
        edge_attr_dim=edge_dim,
        edge_log1p=edge_log1p,
        edge_mean=edge_mean,
        edge_std=edge_std,
        meta_mode=meta_mode,
        fields=fields,
        gap_stats=gap_stats,
    )


def validate_sample(sample: Sample, schema: Schema) -> list[str]:
    """Return a list of violation strings; empty means the sample conforms."""
    out = []
    sid = sample.sample_id
    g = sample.graph
    if not isinstance(sid, str) or not sid:
        out.append(f"sample-id: missing or empty id")
    if schema.node_mode == "label":
        if g.node_labels is None:
            out.append(f"{sid}: node-mode: expected labelled nodes")
        else:
            if len(g.node_labels) < 1:
                out.append(f"{sid}: graph: needs at least one node")
            for lab in g.node_labels:
                if schema.node_vocab is not None and lab not in schema.node_vocab:
                    out.append(f"{sid}: node-label: {lab!r} not in vocabulary")
    else:
        if g.node_attrs is None:
            out.append(f"{sid}: node-mode: expected numeric node attributes")
        else:
            if len(g.node_attrs) < 1:
                out.append(f"{sid}: graph: needs at least one node")
            for i, a in enumerate(g.node_attrs):
                if len(a) != schema.node_attr_dim:
                    out.append(f"{sid}: node-attr: node {i} has dim {len(a)}, want {schema.node_attr_dim}")
                elif not all(math.isfinite(x) for x in a):
                    out.append(f"{sid}: node-attr: node {i} has non-finite value")
    n = g.n_nodes
    for idx, e in enumerate(g.edges):
        if not (0 <= e.src < n) or not (0 <= e.dst < n):
            out.append(f"{sid}: edge {idx}: endpoint out of range ({e.src},{e.dst}) with {n} nodes")
        if len(e.attrs) != schema.edge_attr_dim:
            out.append(f"{sid}: edge {idx}: attr dim {len(e.attrs)}, want {schema.edge_attr_dim}")
        elif not all(math.isfinite(x) for x in e.attrs):
            out.append(f"{sid}: edge {idx}: non-finite attribute")

    recs = sample.meta_records
    if schema.meta_mode == "records":
        if not isinstance(sample.meta, list):
            out.append(f"{sid}: meta: expected a record multiset")
        elif len(recs) == 0:
            out.append(f"{sid}: meta: record multiset is empty")
    else:
        if isinstance(sample.meta, list):
            out.append(f"{sid}: meta: expected a single record")
    known = {f.name: f for f in schema.fields}
    for ri, rec in enumerate(recs):
        if not isinstance(rec, dict):
            out.append(f"{sid}: meta record {ri}: not an object")
            continue
        missing = [f.name for f in schema.fields if f.name not in rec]
        if missing:
            out.append(f"{sid}: meta record {ri}: missing fields {missing}")
        for name, raw in rec.items():
            spec = known.get(name)
            if spec is None:
                out.append(f"{sid}: meta record {ri}: unknown field {name!r}")
                continue
            v = _canon_value(raw)
            if spec.kind == "numeric":
                if not isinstance(v, (int, float)):
                    out.append(f"{sid}: meta record {ri}: field {name!r} should be numeric")
                elif not math.isfinite(float(v)):
                    out.append(f"{sid}: meta record {ri}: field {name!r} is non-finite")
            elif spec.kind == "date":
                if not _is_date_string(v):
                    out.append(f"{sid}: meta record {ri}: field {name!r} should be an ISO date")
            else:
                if not isinstance(v, str):
                    out.append(f"{sid}: meta record {ri}: field {name!r} should be a string")
    return out


def validate_database(db: Database) -> list[str]:
    out = []
    seen_ids: set[str] = set()
    for s in db.samples:
        if s.sample_id in seen_ids:
            out.append(f"{s.sample_id}: duplicate sample id")
        seen_ids.add(s.sample_id)
        out.extend(validate_sample(s, db.schema))
    return out


# ---------------------------------------------------------------------------
# JSON-lines serialization


def sample_to_json_dict(sample: Sample, include_labels: bool = True) -> dict:
    g = sample.graph
    if g.node_labels is not None:
        nodes = [{"id": i, "label": lab} for i, lab in enumerate(g.node_labels)]
    else:
        nodes = [{"id": i, "attrs": list(a)} for i, a in enumerate(g.node_attrs)]
    edges = [{"src": e.src, "dst": e.dst, "attrs": list(e.attrs)} for e in g.edges]
    if isinstance(sample.meta, list):
        meta: Any = {"records": [dict(r) for r in sample.meta]}
    else:
        meta = dict(sample.meta)
    d = {"id": sample.sample_id, "nodes": nodes, "edges": edges, "meta": meta}
    if include_labels and sample.eval_label is not None:
        d["eval_label"] = {"anomaly": sample.eval_label}
    else:
        d["eval_label"] = None
    return d


def sample_from_json_dict(d: dict) -> Sample:
    violations = []
    sid = d.get("id")
    nodes = d.get("nodes")
    if not isinstance(nodes, list) or not nodes:
        raise DataError(f"{sid}: nodes: missing or empty")
    labels: list[str] | None = None
    attrs: list[tuple[float, ...]] | None = None
    ids = [n.get("id") for n in nodes]
    if sorted(ids) != list(range(len(nodes))):
        violations.append(f"{sid}: nodes: ids must be exactly 0..{len(nodes) - 1}")
    by_id = sorted(nodes, key=lambda n: n.get("id", 0))
    if "label" in nodes[0]:
        labels = [str(n.get("label", "")) for n in by_id]
    else:
        attrs = [tuple(float(x) for x in n.get("attrs", [])) for n in by_id]
    edges = []
    for e in d.get("edges", []):
        edges.append(Edge(int(e["src"]), int(e["dst"]), tuple(float(x) for x in e.get("attrs", []))))
    meta = d.get("meta", {})
    if isinstance(meta, dict) and set(meta.keys()) == {"records"}:
        meta = [dict(r) for r in meta["records"]]
    lab = d.get("eval_label")
    eval_label = None
    if isinstance(lab, dict) and "anomaly" in lab:
        eval_label = str(lab["anomaly"])
    if violations:
        raise DataError(violations)
    return Sample(str(sid), MultiGraph(node_labels=labels, node_attrs=attrs, edges=edges), meta, eval_label)


def write_database(db: Database, path, include_labels: bool = True, sidecar: bool = True) -> None:
    path = str(path)
    with open(path, "w") as fh:
        for s in db.samples:
            fh.write(json.dumps(sample_to_json_dict(s, include_labels), separators=(",", ":")))
            fh.write("\n")
    if sidecar:
        with open(path + ".schema.json", "w") as fh:
            json.dump(db.schema.to_json_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")


def load_database(path, strict: bool = True) -> Database:
    """Load a JSON-lines database, derive its schema, and validate.

    The schema always comes from the file content itself so that scoring and
    training see exactly what is on disk.
    """
    samples = []
    lines = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                samples.append(sample_from_json_dict(d))
            except DataError as exc:
                raise DataError([f"line {lineno}: {v}" for v in exc.violations]) from exc
            lines.append(lineno)
    schema = derive_schema(samples)
    db = Database(samples, schema)
    if strict:
        violations = []
        seen_ids: set[str] = set()
        for lineno, s in zip(lines, db.samples):
            if s.sample_id in seen_ids:
                violations.append(f"line {lineno}: {s.sample_id}: duplicate sample id")
            seen_ids.add(s.sample_id)
            violations.extend(f"line {lineno}: {v}" for v in validate_sample(s, schema))
        if violations:
            raise DataError(violations)
    return db


def strip_labels(db: Database) -> Database:
    """Copy of the database with every evaluation label removed."""
    samples = [Sample(s.sample_id, s.graph, s.meta, None) for s in db.samples]
    return Database(samples, db.schema)


def split_database(db: Database, seed: int) -> tuple[Database, Database]:
    """Deterministic half/half split: first floor(n/2) shuffled samples train."""
    import numpy as np

    n = len(db.samples)
    order = np.random.default_rng(seed).permutation(n)
    k = n // 2
    train = [db.samples[i] for i in order[:k]]
    test = [db.samples[i] for i in order[k:]]
    return Database(train, db.schema), Database(test, db.schema)
