"""Two-stage baselines: WL graph features, metadata Isolation Forest, and
rank aggregation.

The graph stage collapses each multi-graph to a simple undirected graph,
runs Weisfeiler-Lehman relabeling, and scores histograms by mean cosine
dissimilarity against the whole set. The metadata stage one-hot encodes
records and scores them with an isolation forest built from scratch.
Per-modality rankings are merged either by BFS interleaving or by inverse
rank sums.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .data import Database, MultiGraph, Sample
from .fusion import MetaFeaturizer

WL_ITER_GRID = (1, 2, 4, 8, 16)

IFOREST_TREES = 100
IFOREST_SUBSAMPLE = 256


@dataclass
class Ranking:
    """Descending scores; ties broken by sample id ascending. Ranks are 1-based."""

    entries: list[tuple[str, float]]

    @classmethod
    def from_scores(cls, ids: list[str], scores) -> "Ranking":
        if len(ids) != len(scores):
            raise ValueError("ids and scores length mismatch")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate sample ids in ranking")
        order = sorted(range(len(ids)), key=lambda i: (-float(scores[i]), ids[i]))
        return cls([(ids[i], float(scores[i])) for i in order])

    def ids(self) -> list[str]:
        return [sid for sid, _ in self.entries]

    def rank_of(self) -> dict[str, int]:
        return {sid: pos + 1 for pos, (sid, _) in enumerate(self.entries)}

    def __len__(self) -> int:
        return len(self.entries)


# ---------------------------------------------------------------------------
# Weisfeiler-Lehman graph stage


def collapse_simple_undirected(g: MultiGraph) -> list[set[int]]:
    """Adjacency sets after dropping multiplicity, direction, and self-loops."""
    adj: list[set[int]] = [set() for _ in range(g.n_nodes)]
    for e in g.edges:
        if e.src != e.dst:
            adj[e.src].add(e.dst)
            adj[e.dst].add(e.src)
    return adj

def _wl_compress(label: str) -> str:
    # content hash keeps working labels bounded across iterations while
    # staying consistent between graphs
    return hashlib.md5(label.encode()).hexdigest()[:16]


def wl_features(g: MultiGraph, h: int, labels: list[str] | None = None) -> dict[str, int]:
    """Histogram of WL labels accumulated over iterations 0..h.

    Each iteration records the composite label own|[sorted neighbors] and
    carries its hash forward as the node's working label.
    """
    if h < 0:
        raise ValueError("h must be >= 0")
    if labels is None:
        if g.node_labels is None:
            raise ValueError("label-free graph needs precomputed bucket labels")
        labels = list(g.node_labels)
    adj = collapse_simple_undirected(g)
    hist: dict[str, int] = {}
    cur = list(labels)
    for lab in cur:
        hist[lab] = hist.get(lab, 0) + 1
    for _ in range(h):
        composites = []
        for v in range(g.n_nodes):
            neigh = ",".join(sorted(cur[u] for u in adj[v]))
            composites.append(f"{cur[v]}|[{neigh}]")
        for lab in composites:
            hist[lab] = hist.get(lab, 0) + 1
        cur = [_wl_compress(c) for c in composites]
    return hist


def bucketize_node_attrs(samples: list[Sample]) -> list[list[str]]:
    """Decile-bucket continuous node attributes into per-node label strings."""
    all_rows = np.array([a for s in samples for a in (s.graph.node_attrs or [])], dtype=float)
    if all_rows.size == 0:
        return [[] for _ in samples]
    qs = np.quantile(all_rows, np.linspace(0.1, 0.9, 9), axis=0)
    out = []
    for s in samples:
        rows = np.array(s.graph.node_attrs, dtype=float)
        buckets = np.stack([np.digitize(rows[:, j], qs[:, j]) for j in range(rows.shape[1])], axis=1)
        out.append(["|".join(f"d{b}" for b in row) for row in buckets])
    return out


def _histograms_matrix(hists: list[dict[str, int]]) -> sp.csr_matrix:
    vocab: dict[str, int] = {}
    rows, cols, vals = [], [], []
    for i, hct in enumerate(hists):
        for lab, c in hct.items():
            j = vocab.setdefault(lab, len(vocab))
            rows.append(i)
            cols.append(j)
            vals.append(float(c))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(hists), max(len(vocab), 1)))


def one_class_scores(hists: list[dict[str, int]]) -> np.ndarray:
    """score(i) = 1 - mean_j cos(hist_i, hist_j); zero histograms score 1."""
    if len(hists) < 2:
        raise ValueError("need at least 2 histograms")
    m = _histograms_matrix(hists)
    norms = np.sqrt(np.asarray(m.multiply(m).sum(axis=1)).ravel())
    zero = norms == 0
    norms[zero] = 1.0
    unit = sp.diags(1.0 / norms) @ m
    mean_vec = np.asarray(unit.sum(axis=0)).ravel() / len(hists)
    sims = unit @ mean_vec
    scores = 1.0 - sims
    scores[zero] = 1.0
    return np.clip(scores, 0.0, 1.0)


def wl_graph_scores(samples: list[Sample], h: int) -> np.ndarray:
    if samples and samples[0].graph.node_labels is None:
        buckets = bucketize_node_attrs(samples)
        hists = [wl_features(s.graph, h, labels=b) for s, b in zip(samples, buckets)]
    else:
        hists = [wl_features(s.graph, h) for s in samples]
    return one_class_scores(hists)


def wl_grid_scores(samples: list[Sample], iters=WL_ITER_GRID) -> tuple[np.ndarray, dict[int, np.ndarray]]:
    """Sweep WL iteration counts; returns (mean-over-grid scores, per-config)."""
    per = {h: wl_graph_scores(samples, h) for h in iters}
    mean = np.mean(np.stack(list(per.values())), axis=0)
    return mean, per


# ---------------------------------------------------------------------------
# Isolation forest on metadata


def harmonic(n: int) -> float:
    return float(sum(1.0 / i for i in range(1, n + 1)))


def c_factor(n: int) -> float:
    """Expected path-length normalizer: c(n) = 2H(n-1) - 2(n-1)/n."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


class _Node:
    __slots__ = ("feature", "threshold", "left", "right", "size")

    def __init__(self, feature=-1, threshold=0.0, left=None, right=None, size=0):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.size = size


def _build_tree(x: np.ndarray, depth: int, cap: int, rng: np.random.Generator) -> _Node:
    n = x.shape[0]
    if n <= 1 or depth >= cap:
        return _Node(size=n)
    lo = x.min(axis=0)
    hi = x.max(axis=0)
    usable = np.nonzero(hi > lo)[0]
    if usable.size == 0:
        return _Node(size=n)
    q = int(usable[rng.integers(usable.size)])
    p = float(rng.uniform(lo[q], hi[q]))
    mask = x[:, q] < p
    if not mask.any() or mask.all():
        return _Node(size=n)
    return _Node(q, p,
                 _build_tree(x[mask], depth + 1, cap, rng),
                 _build_tree(x[~mask], depth + 1, cap, rng), n)


def _path_lengths(node: _Node, x: np.ndarray, depth: int, out: np.ndarray, idx: np.ndarray) -> None:
    if node.feature < 0:
        out[idx] = depth + c_factor(node.size)
        return
    mask = x[idx, node.feature] < node.threshold
    if mask.any():
        _path_lengths(node.left, x, depth + 1, out, idx[mask])
    if not mask.all():
        _path_lengths(node.right, x, depth + 1, out, idx[~mask])


def isolation_forest_scores(
    x: np.ndarray,
    n_trees: int = IFOREST_TREES,
    subsample: int = IFOREST_SUBSAMPLE,
    seed: int = 0,
) -> np.ndarray:
    """Anomaly score s(x) = 2^(-E[h(x)] / c(psi)) per row of x."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 rows")
    psi = min(subsample, n)
    cap = math.ceil(math.log2(psi)) if psi > 1 else 1
    children = np.random.SeedSequence(seed).spawn(n_trees)
    total = np.zeros(n)
    all_idx = np.arange(n)
    for ss in children:
        rng = np.random.default_rng(ss)
        pick = rng.choice(n, size=psi, replace=False) if n > psi else all_idx
        tree = _build_tree(x[pick], 0, cap, rng)
        depths = np.zeros(n)
        _path_lengths(tree, x, 0, depths, all_idx)
        total += depths
    expected = total / n_trees
    return np.power(2.0, -expected / c_factor(psi))


def metadata_scores(db: Database, n_trees: int = IFOREST_TREES,
                    subsample: int = IFOREST_SUBSAMPLE, seed: int = 0) -> np.ndarray:
    """Isolation forest over one-hot record rows; samples take their max record score."""
    feat = MetaFeaturizer(db.schema)
    x, owner = feat.onehot_matrix(list(db.samples))
    rec_scores = isolation_forest_scores(x, n_trees, subsample, seed)
    out = np.zeros(len(db))
    np.maximum.at(out, owner, rec_scores)
    return out


# ---------------------------------------------------------------------------
# rank aggregation


def _check_same_ids(a: Ranking, b: Ranking) -> None:
    if set(a.ids()) != set(b.ids()):
        raise ValueError("rankings cover different sample id sets")


def aggregate_bfs(a: Ranking, b: Ranking) -> Ranking:
    """Interleave list heads (a first), skipping already-emitted ids.

    The merged position defines the score as 1/position.
    """
    _check_same_ids(a, b)
    merged: list[str] = []
    seen: set[str] = set()
    ia = iter(a.ids())
    ib = iter(b.ids())
    take_a = True
    pending = len(a)
    while len(merged) < pending:
        it = ia if take_a else ib
        for sid in it:
            if sid not in seen:
                seen.add(sid)
                merged.append(sid)
                break
        take_a = not take_a
    return Ranking([(sid, 1.0 / (pos + 1)) for pos, sid in enumerate(merged)])


def aggregate_inverse_rank(a: Ranking, b: Ranking) -> Ranking:
    """score(s) = 1/rank_a(s) + 1/rank_b(s), descending."""
    _check_same_ids(a, b)
    ra = a.rank_of()
    rb = b.rank_of()
    ids = a.ids()
    scores = [1.0 / ra[sid] + 1.0 / rb[sid] for sid in ids]
    return Ranking.from_scores(ids, scores)
