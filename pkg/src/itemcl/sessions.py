"""Session segmentation and global item co-occurrence mining.

A session is a maximal run of one user's clicks whose inter-click gaps do
not exceed the window (a gap exactly equal to the window stays inside).
Within a session, every unordered pair of distinct items counts one
co-occurrence; repeated clicks on the same item within a session neither
self-pair nor inflate a pair beyond one count per session.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ItemCatalog, SplitDataset
from .sampling import uniform_excluding
from .util import atomic_write_text


@dataclass
class Session:
    user_id: str
    items: list[int]


def segment_sessions(split: SplitDataset, window_seconds: int = 3600) -> list[Session]:
    """Greedily segment each user's train clicks into sessions.

    Users are processed in sorted order and clicks in time order, so the
    output is deterministic. Single-click sessions are kept; they simply
    contribute no pairs.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    per_user: dict[str, list[tuple[int, int]]] = {}
    for ev in split.train_interactions:
        per_user.setdefault(ev.user_id, []).append((ev.timestamp, ev.item_index))

    sessions: list[Session] = []
    for user_id in sorted(per_user):
        events = per_user[user_id]  # train_interactions are already time-ordered
        current: list[int] = [events[0][1]]
        last_ts = events[0][0]
        for ts, item in events[1:]:
            if ts - last_ts > window_seconds:
                sessions.append(Session(user_id, current))
                current = []
            current.append(item)
            last_ts = ts
        sessions.append(Session(user_id, current))
    return sessions


def count_pairs(sessions: list[Session]) -> dict[tuple[int, int], int]:
    """Raw unordered pair counts; keys are (low, high) index tuples."""
    counts: dict[tuple[int, int], int] = {}
    for session in sessions:
        distinct = sorted(set(session.items))
        for i, a in enumerate(distinct):
            for b in distinct[i + 1 :]:
                key = (a, b)
                counts[key] = counts.get(key, 0) + 1
    return counts


def merge_pair_counts(parts: list[dict[tuple[int, int], int]]) -> dict[tuple[int, int], int]:
    """Commutative sum of partial count tables (partition-and-merge)."""
    merged: dict[tuple[int, int], int] = {}
    for part in parts:
        for key, value in part.items():
            merged[key] = merged.get(key, 0) + value
    return merged


class CooccurrenceTable:
    """Sparse symmetric session co-occurrence counts with per-item top-k
    neighbor lists (ordered by count descending, index ascending)."""

    def __init__(self, counts: dict[tuple[int, int], int], n_items: int, k: int = 10):
        if k <= 0:
            raise ValueError("k must be positive")
        self.n_items = n_items
        self.k = k
        self.counts = dict(counts)
        neighbor_lists: dict[int, list[tuple[int, int]]] = {}
        for (a, b), c in counts.items():
            if not (0 <= a < b < n_items):
                raise ValueError(f"bad pair key ({a}, {b}) for catalog of size {n_items}")
            if c <= 0:
                raise ValueError(f"nonpositive count for pair ({a}, {b})")
            neighbor_lists.setdefault(a, []).append((b, c))
            neighbor_lists.setdefault(b, []).append((a, c))
        self.neighbor_sets: dict[int, frozenset[int]] = {
            item: frozenset(nb for nb, _ in pairs) for item, pairs in neighbor_lists.items()
        }
        self.topk: dict[int, list[tuple[int, int]]] = {}
        for item, pairs in neighbor_lists.items():
            pairs.sort(key=lambda pair: (-pair[1], pair[0]))
            self.topk[item] = pairs[:k]

    def count(self, a: int, b: int) -> int:
        if a == b:
            return 0
        key = (a, b) if a < b else (b, a)
        return self.counts.get(key, 0)

    def neighbors(self, item: int) -> frozenset[int]:
        return self.neighbor_sets.get(item, frozenset())


def build_cooccurrence(sessions: list[Session], n_items: int, k: int = 10) -> CooccurrenceTable:
    """Scan all sessions and build the co-occurrence table."""
    return CooccurrenceTable(count_pairs(sessions), n_items, k)


class SessionPositiveSampler:
    """Weighted sampler over each item's top-k co-occurred neighbors,
    proportional to co-occurrence counts."""

    def __init__(self, table: CooccurrenceTable):
        self._neighbors: dict[int, np.ndarray] = {}
        self._cumweights: dict[int, np.ndarray] = {}
        for item, pairs in table.topk.items():
            self._neighbors[item] = np.asarray([nb for nb, _ in pairs], dtype=np.int64)
            self._cumweights[item] = np.cumsum([c for _, c in pairs]).astype(np.float64)

    def has_positive(self, item: int) -> bool:
        return item in self._neighbors

    def sample(self, item: int, rng: np.random.Generator) -> int | None:
        cum = self._cumweights.get(item)
        if cum is None:
            return None
        u = rng.random() * cum[-1]
        pos = int(np.searchsorted(cum, u, side="right"))
        pos = min(pos, len(cum) - 1)
        return int(self._neighbors[item][pos])


def sample_session_positive(
    sampler: SessionPositiveSampler, item: int, rng: np.random.Generator
) -> int | None:
    """One weighted draw from the item's top-k co-occurred neighbors, or
    None when the item never co-occurred with anything."""
    return sampler.sample(item, rng)


def sample_session_negatives(
    table: CooccurrenceTable, item: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Distinct items drawn uniformly from everything that never
    co-occurred with ``item`` (and is not ``item`` itself)."""
    excluded = set(table.neighbors(item))
    excluded.add(item)
    return uniform_excluding(table.n_items, excluded, n, rng)


def dump_cooccurrence(table: CooccurrenceTable, catalog: ItemCatalog, path: str) -> None:
    """Write ``item_id_a TAB item_id_b TAB count`` rows, each pair ordered
    and the file sorted lexicographically, for diffable golden files."""
    rows = []
    for (a, b), c in table.counts.items():
        id_a, id_b = catalog[a].item_id, catalog[b].item_id
        if id_b < id_a:
            id_a, id_b = id_b, id_a
        rows.append((id_a, id_b, c))
    rows.sort()
    body = "".join(f"{a}\t{b}\t{c}\n" for a, b, c in rows)
    atomic_write_text(path, body)


def load_cooccurrence(path: str, catalog: ItemCatalog, k: int = 10) -> CooccurrenceTable:
    counts: dict[tuple[int, int], int] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields")
            a = catalog.index_of[parts[0]]
            b = catalog.index_of[parts[1]]
            key = (a, b) if a < b else (b, a)
            counts[key] = int(parts[2])
    return CooccurrenceTable(counts, len(catalog), k)
