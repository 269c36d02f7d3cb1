"""Synthetic database generators: double-entry bookkeeping and trip mobility.

Both generators draw each sample from one of a configurable number of
regimes. A regime fixes the plausible node labels, the flow topology, the
value scales, and the metadata pools, so a database is multi-modal by
construction and regime membership is learnable without labels.
"""

from __future__ import annotations

import zlib
from datetime import timedelta
import numpy as np

from .data import Database, Edge, MultiGraph, Sample, derive_schema, parse_iso_date

ACCOUNTS = [
    "cash", "receivable", "inventory", "payable", "revenue", "expense",
    "equity", "tax", "accrual", "prepaid", "reserve", "intercompany",
]

# each regime journals a disjoint slice of the chart of accounts
ACCOUNT_POOLS = [
    ["revenue", "receivable", "cash", "tax"],
    ["expense", "payable", "inventory", "accrual"],
    ["equity", "reserve", "prepaid", "intercompany"],
]

_NAMED_POIS = [
    "home", "office", "school", "gym", "market", "cafe", "restaurant", "park",
    "station", "mall", "library", "hospital", "bank", "bar", "theater", "hotel",
    "airport", "museum", "stadium", "church",
]
POIS = _NAMED_POIS + [f"poi-{i:02d}" for i in range(41 - len(_NAMED_POIS))]

WEEKDAYS = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"]


def _pool_rank(pool: list[str]) -> dict[str, int]:
    r = {lab: i for i, lab in enumerate(pool)}
    # labels outside the pool sort after it, in global vocabulary order
    for j, lab in enumerate(ACCOUNTS):
        r.setdefault(lab, len(pool) + j)
    return r


def _pair_mu(src: str, dst: str) -> float:
    # every ordered account pair transacts at its own typical magnitude
    h = zlib.crc32(f"{src}>{dst}".encode()) % 1000
    return 2.5 + 3.5 * h / 999.0


def generate_bookkeeping(
    n_samples: int,
    n_regimes: int = 2,
    seed: int = 0,
    base_date: str = "2021-01-01",
) -> Database:
    """Journal-entry database: accounts as nodes, money flows as multi-edges.

    Per sample: one node per account in the regime's slice of the chart (a
    canonical 4-account journal), 3..~9 multi-edges with a single positive
    amount attribute, and one metadata record (requester, approver,
    entry/effective dates, total amount). Money always moves from the
    lower-ranked account of a pair to the higher-ranked one, at a magnitude
    typical for that pair, so the label multiset, flow direction, and amount
    scale are all fixed by the regime and only booking details vary between
    normal samples. At least 80% of samples have an entry date within three
    days before the effective date, which backdating-style mutations later
    rely on.
    """
    if n_samples < 1 or n_regimes < 1:
        raise ValueError("n_samples and n_regimes must be positive")
    rng = np.random.default_rng(seed)
    day0 = parse_iso_date(base_date)
    samples = []
    for i in range(n_samples):
        r = int(rng.integers(n_regimes))
        pool = ACCOUNT_POOLS[r % len(ACCOUNT_POOLS)]
        rank = _pool_rank(pool)

        n = len(pool)
        labels = list(pool)

        def orient(a: int, b: int) -> tuple[int, int]:
            # regime flow: lower-ranked account pays the higher-ranked one
            if rank[labels[a]] == rank[labels[b]]:
                return (a, b) if a < b else (b, a)
            return (a, b) if rank[labels[a]] < rank[labels[b]] else (b, a)

        pairs: list[tuple[int, int]] = []
        for v in range(1, n):
            # journals fan out of a hub account, with occasional side flows
            u = 0 if rng.random() < 0.8 else int(rng.integers(v))
            pairs.append(orient(u, v))
        m_total = len(pairs) + int(rng.poisson(1.0))
        edges = []
        amounts = []
        for t in range(m_total):
            if t < len(pairs):
                u, v = pairs[t]
            else:
                roll = rng.random()
                if roll < 0.75:
                    u, v = pairs[int(rng.integers(len(pairs)))]
                elif roll < 0.95:
                    a, b = rng.choice(n, size=2, replace=False)
                    u, v = orient(int(a), int(b))
                else:
                    u = int(rng.integers(n))
                    v = u
            mu = _pair_mu(labels[u], labels[v])
            amount = round(float(np.exp(rng.normal(mu, 0.15))), 2)
            amounts.append(amount)
            edges.append(Edge(u, v, (amount,)))

        eff = day0 + timedelta(days=int(rng.integers(365)))
        if rng.random() < 0.95:
            gap = -int(rng.integers(0, 4))  # entry at most 3 days before effective
        else:
            gap = -int(rng.integers(4, 11))
        entry = eff + timedelta(days=gap)
        meta = {
            "requester": f"req-{r}-{int(rng.integers(3))}",
            "approver": f"app-{r}-{int(rng.integers(2))}",
            "entry_date": entry.isoformat(),
            "effective_date": eff.isoformat(),
            "total_amount": round(float(sum(amounts)), 2),
        }
        g = MultiGraph(node_labels=labels, edges=edges)
        samples.append(Sample(f"bk-{seed}-{i:05d}", g, meta))
    return Database(samples, derive_schema(samples))


def _regime_pois(r: int) -> list[str]:
    # rotate a window of anchor places through the vocabulary
    k = 5
    start = (r * 7) % (len(POIS) - k)
    anchors = [POIS[0]] + POIS[1 + start : start + k]
    return anchors


def generate_mobility(
    n_samples: int,
    n_regimes: int = 2,
    seed: int = 0,
) -> Database:
    """Trip-diary database: places as nodes, trips as multi-edges.

    Per sample: 1..10 nodes, 1..20 trips. Each trip contributes an edge with
    attributes (duration minutes, distance km, speed km/h, start hour) and a
    matching metadata record {start_time, duration, day}. Normal start times
    stay inside daytime hours so late-night mutations stand out.
    """
    if n_samples < 1 or n_regimes < 1:
        raise ValueError("n_samples and n_regimes must be positive")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_samples):
        r = int(rng.integers(n_regimes))
        anchors = _regime_pois(r)
        peak = 7.0 + 3.0 * (r % 4)  # regime-typical departure hour
        dur_mu = np.log(18.0 + 10.0 * (r % 3))

        n = 1 + int(rng.binomial(9, 0.35))
        n = min(n, 10)
        labels = [anchors[v % len(anchors)] for v in range(n)]
        if rng.random() < 0.02 and n >= 2:
            labels[n - 1] = POIS[int(rng.integers(len(POIS)))]

        m = 1 + int(rng.poisson(5.0))
        m = min(m, 20)
        edges = []
        records = []
        for t in range(m):
            if n == 1:
                u = v = 0
            else:
                u = 0 if t % 2 == 0 else 1 + int(rng.integers(n - 1))
                v = 1 + int(rng.integers(n - 1)) if u == 0 else 0
            dur = float(np.exp(rng.normal(dur_mu, 0.35)))
            dist = max(0.3, dur / 60.0 * float(rng.normal(28.0, 5.0)))
            speed = dist / (dur / 60.0)
            start = float(np.clip(rng.normal(peak + 5.0 * (t % 2), 1.5), 5.0, 22.75))
            edges.append(Edge(u, v, (round(dur, 2), round(dist, 2), round(speed, 2), round(start, 2))))
            records.append({
                "start_time": round(start, 2),
                "duration": round(dur, 2),
                "day": WEEKDAYS[int(rng.integers(7))],
            })
        g = MultiGraph(node_labels=labels, edges=edges)
        samples.append(Sample(f"mb-{seed}-{i:05d}", g, records))
    return Database(samples, derive_schema(samples))


def generate(domain: str, n_samples: int, n_regimes: int = 2, seed: int = 0) -> Database:
    if domain == "bookkeeping":
        return generate_bookkeeping(n_samples, n_regimes, seed)
    if domain == "mobility":
        return generate_mobility(n_samples, n_regimes, seed)
    raise ValueError(f"unknown domain {domain!r} (expected 'bookkeeping' or 'mobility')")
