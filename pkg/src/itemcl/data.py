"""Catalog and click-log ingestion, validation, and chronological splitting.

On-disk formats:

* item catalog, one JSON object per line::

    {"item_id": str, "tags": [str], "provider": str,
     "taxonomy": str|null, "title_vector": [float]|null}

* interactions, tab-separated, one click per line::

    user_id <TAB> item_id <TAB> timestamp_seconds

* user profiles, one JSON object per line::

    {"user_id": str, "fields": {name: str}}

Item indices are assigned in catalog file order (0..n-1), so every
downstream artifact is reproducible byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .util import atomic_write_text, warn


class DataFormatError(ValueError):
    """Raised for malformed or inconsistent input files; the message names
    the offending file and line."""


@dataclass(frozen=True)
class Item:
    item_id: str
    tags: tuple[str, ...] = ()
    provider: str = ""
    taxonomy: str | None = None
    title_vector: np.ndarray | None = None


@dataclass(frozen=True)
class Interaction:
    """One click event. ``item_index`` is resolved against the catalog."""

    user_id: str
    item_index: int
    timestamp: int


class ItemCatalog:
    """Immutable, index-addressed item collection.

    Index i is the position of the item in the source file; all embedding
    tables, mined pools, and retrieval lists use these indices.
    """

    def __init__(self, items: list[Item]):
        self.items = list(items)
        self.index_of: dict[str, int] = {}
        for i, item in enumerate(self.items):
            if item.item_id in self.index_of:
                raise DataFormatError(f"duplicate item_id {item.item_id!r}")
            self.index_of[item.item_id] = i
        dims = {item.title_vector.shape[0] for item in self.items if item.title_vector is not None}
        if len(dims) > 1:
            raise DataFormatError(f"title_vector dimensions disagree: {sorted(dims)}")
        self.title_dim: int | None = dims.pop() if dims else None

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, index: int) -> Item:
        return self.items[index]

    def item_ids(self) -> list[str]:
        return [item.item_id for item in self.items]


@dataclass
class UserProfileTable:
    """Per-user categorical profile fields with a fixed field schema."""

    field_names: tuple[str, ...] = ()
    rows: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def values_for(self, user_id: str) -> tuple[str, ...] | None:
        return self.rows.get(user_id)


@dataclass
class SplitDataset:
    """Chronological train/test split plus per-user behavior histories.

    Histories contain each user's most recent train-time item indices,
    most-recent-last, at most ``behavior_window`` long.
    """

    train_interactions: list[Interaction]
    test_interactions: list[Interaction]
    behavior_histories: dict[str, list[int]]
    behavior_window: int
    split_time: int


def load_catalog(path: str) -> ItemCatalog:
    """Parse a JSONL item catalog; indices follow file order."""
    items: list[Item] = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                item = _item_from_row(row)
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed item row ({exc})") from None
            items.append(item)
    return ItemCatalog(items)


def _item_from_row(row: dict) -> Item:
    item_id = row["item_id"]
    if not isinstance(item_id, str) or not item_id:
        raise ValueError("item_id must be a non-empty string")
    tags = row.get("tags", [])
    if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
        raise ValueError("tags must be a list of strings")
    provider = row.get("provider", "")
    if not isinstance(provider, str):
        raise ValueError("provider must be a string")
    taxonomy = row.get("taxonomy")
    if taxonomy is not None and not isinstance(taxonomy, str):
        raise ValueError("taxonomy must be a string or null")
    vector = row.get("title_vector")
    title_vector = None
    if vector is not None:
        title_vector = np.asarray(vector, dtype=np.float64)
        if title_vector.ndim != 1:
            raise ValueError("title_vector must be a flat list of numbers")
        title_vector.setflags(write=False)
    return Item(item_id, tuple(tags), provider, taxonomy, title_vector)


def save_catalog(catalog: ItemCatalog, path: str) -> None:
    """Write the catalog back to JSONL in index order (round-trip exact)."""
    lines = []
    for item in catalog.items:
        row = {
            "item_id": item.item_id,
            "tags": list(item.tags),
            "provider": item.provider,
            "taxonomy": item.taxonomy,
            "title_vector": None if item.title_vector is None else [float(x) for x in item.title_vector],
        }
        lines.append(json.dumps(row, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_interactions(path: str, catalog: ItemCatalog) -> list[Interaction]:
    """Parse a TSV click log; rows whose item_id is not in the catalog are
    dropped and reported in one warning with the rejected count."""
    events: list[Interaction] = []
    rejected = 0
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            user_id, item_id, ts_text = parts
            try:
                timestamp = int(ts_text)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad timestamp {ts_text!r}") from None
            index = catalog.index_of.get(item_id)
            if index is None:
                rejected += 1
                continue
            events.append(Interaction(user_id, index, timestamp))
    if rejected:
        warn(f"dropped {rejected} interaction rows with item_ids missing from the catalog")
    return events


def save_interactions(interactions: list[Interaction], catalog: ItemCatalog, path: str) -> None:
    lines = [
        f"{ev.user_id}\t{catalog[ev.item_index].item_id}\t{ev.timestamp}"
        for ev in interactions
    ]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_profiles(path: str) -> UserProfileTable:
    """Parse JSONL user profiles; every row must carry the same field set."""
    field_names: tuple[str, ...] | None = None
    rows: dict[str, tuple[str, ...]] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                user_id = row["user_id"]
                fields = row["fields"]
                if not isinstance(user_id, str) or not isinstance(fields, dict):
                    raise ValueError("user_id must be a string and fields an object")
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed profile row ({exc})") from None
            if user_id in rows:
                raise DataFormatError(f"{path}:{lineno}: duplicate user_id {user_id!r}")
            if field_names is None:
                field_names = tuple(sorted(fields))
            elif tuple(sorted(fields)) != field_names:
                raise DataFormatError(
                    f"{path}:{lineno}: profile fields {sorted(fields)} do not match schema {list(field_names)}"
                )
            rows[user_id] = tuple(str(fields[name]) for name in field_names)
    return UserProfileTable(field_names or (), rows)


def save_profiles(profiles: UserProfileTable, path: str) -> None:
    lines = []
    for user_id, values in profiles.rows.items():
        row = {"user_id": user_id, "fields": dict(zip(profiles.field_names, values))}
        lines.append(json.dumps(row, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def build_histories(
    train: list[Interaction], behavior_window: int
) -> dict[str, list[int]]:
    """Most recent ``behavior_window`` train item indices per user,
    most-recent-last. ``train`` must already be time-ordered."""
    histories: dict[str, list[int]] = {}
    for ev in train:
        histories.setdefault(ev.user_id, []).append(ev.item_index)
    for user_id, history in histories.items():
        if len(history) > behavior_window:
            histories[user_id] = history[-behavior_window:]
    return histories


def assemble_split(
    train: list[Interaction],
    test: list[Interaction],
    behavior_window: int = 20,
) -> SplitDataset:
    """Build a SplitDataset from already-separated train/test click lists
    (each gets stably time-ordered)."""
    def ordered(events: list[Interaction]) -> list[Interaction]:
        ts = np.asarray([ev.timestamp for ev in events], dtype=np.int64)
        return [events[i] for i in np.argsort(ts, kind="stable")]

    train = ordered(train)
    test = ordered(test)
    split_time = test[0].timestamp if test else (train[-1].timestamp + 1 if train else 0)
    return SplitDataset(train, test, build_histories(train, behavior_window), behavior_window, split_time)


def chronological_split(
    interactions: list[Interaction],
    split_time: int,
    behavior_window: int = 20,
) -> SplitDataset:
    """Split clicks at ``split_time`` (train strictly before, test at or
    after) and build per-user behavior histories from the train side only.

    Events are ordered by timestamp with ties resolved by stable input
    order. Users that only appear in the test side get an empty history.
    """
    if not interactions:
        raise ValueError("interactions must be non-empty")
    if behavior_window <= 0:
        raise ValueError("behavior_window must be positive")

    timestamps = np.asarray([ev.timestamp for ev in interactions], dtype=np.int64)
    order = np.argsort(timestamps, kind="stable")
    ordered = [interactions[i] for i in order]

    train = [ev for ev in ordered if ev.timestamp < split_time]
    test = [ev for ev in ordered if ev.timestamp >= split_time]
    if not train:
        warn("chronological split produced an empty train set")
    if not test:
        warn("chronological split produced an empty test set")

    return SplitDataset(train, test, build_histories(train, behavior_window), behavior_window, split_time)
