"""Synthetic dataset generator with planted structure.

Items fall into clusters that leave three recoverable footprints: title
vectors near the cluster centroid, cluster-specific tags and taxonomy
keys, and user click streams biased toward preferred clusters. Two kinds
of purely behavioral structure are planted on top, invisible to features
and titles, so the session-level task has something of its own to find:
every cluster has a companion cluster whose items leak into its sessions
at a configured rate, and explicit cross-cluster motif pairs are
injected into sessions.

Everything is a pure function of the spec and its seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Interaction, Item, ItemCatalog, UserProfileTable
from .rng import substream


@dataclass(frozen=True)
class SyntheticSpec:
    n_users: int = 2000
    n_items: int = 1000
    n_clusters: int = 20
    n_interactions: int = 200_000
    intra_cluster_bias: float = 0.85
    title_dim: int = 16
    title_noise: float = 0.05
    tags_per_cluster: int = 4
    n_providers: int = 20
    zipf_exponent: float = 0.8
    mean_session_length: float = 3.0
    max_session_length: int = 8
    session_gap_seconds: int = 300
    companion_rate: float = 0.15  # chance a session click leaks into the companion cluster
    motif_pairs: tuple[tuple[int, int], ...] | None = None  # None -> auto-pick
    n_motif_pairs: int = 60
    motif_rate: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if min(self.n_users, self.n_items, self.n_clusters, self.n_interactions) <= 0:
            raise ValueError("counts must be positive")
        if not (0.0 < self.intra_cluster_bias < 1.0):
            raise ValueError("intra_cluster_bias must lie in (0, 1)")
        if not (0.0 <= self.motif_rate < 1.0):
            raise ValueError("motif_rate must lie in [0, 1)")
        if not (0.0 <= self.companion_rate < 1.0):
            raise ValueError("companion_rate must lie in [0, 1)")
        if self.n_clusters > self.n_items:
            raise ValueError("need at least one item per cluster")
        if self.motif_pairs is not None:
            for a, b in self.motif_pairs:
                if not (0 <= a < self.n_items and 0 <= b < self.n_items) or a == b:
                    raise ValueError(f"motif pair ({a}, {b}) does not reference two distinct items")


@dataclass
class SyntheticDataset:
    catalog: ItemCatalog
    interactions: list[Interaction]
    profiles: UserProfileTable
    clusters: np.ndarray  # item index -> cluster
    motif_pairs: tuple[tuple[int, int], ...] = field(default_factory=tuple)


def _item_clusters(spec: SyntheticSpec) -> np.ndarray:
    return np.arange(spec.n_items) % spec.n_clusters


def _pick_motif_pairs(spec: SyntheticSpec, clusters: np.ndarray) -> tuple[tuple[int, int], ...]:
    if spec.motif_pairs is not None:
        return tuple((int(a), int(b)) for a, b in spec.motif_pairs)
    rng = substream(spec.seed, "synth", "motifs")
    sizes = np.bincount(clusters, minlength=spec.n_clusters)
    cross_pairs = (spec.n_items * (spec.n_items - 1) - int((sizes * (sizes - 1)).sum())) // 2
    target = min(spec.n_motif_pairs, cross_pairs)
    pairs: list[tuple[int, int]] = []
    taken: set[tuple[int, int]] = set()
    while len(pairs) < target:
        a, b = (int(x) for x in rng.integers(0, spec.n_items, size=2))
        if a == b or clusters[a] == clusters[b]:
            continue  # motifs are cross-cluster on purpose
        key = (min(a, b), max(a, b))
        if key in taken:
            continue
        taken.add(key)
        pairs.append((a, b))
    return tuple(pairs)


def generate(spec: SyntheticSpec) -> SyntheticDataset:
    """Build the catalog, click log, and profiles for ``spec``."""
    spec.validate()
    clusters = _item_clusters(spec)
    motifs = _pick_motif_pairs(spec, clusters)

    rng_titles = substream(spec.seed, "synth", "titles")
    centroids = rng_titles.normal(size=(spec.n_clusters, spec.title_dim))
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
    noise = rng_titles.normal(size=(spec.n_items, spec.title_dim)) * spec.title_noise
    titles = centroids[clusters] + noise
    titles /= np.linalg.norm(titles, axis=1, keepdims=True)

    rng_items = substream(spec.seed, "synth", "items")
    items: list[Item] = []
    for i in range(spec.n_items):
        k = int(clusters[i])
        n_tags = int(rng_items.integers(1, 4))
        tag_ids = rng_items.choice(spec.tags_per_cluster, size=min(n_tags, spec.tags_per_cluster), replace=False)
        tags = tuple(f"c{k}:t{int(t)}" for t in sorted(tag_ids))
        provider = f"p{int(rng_items.integers(spec.n_providers))}"
        items.append(
            Item(
                item_id=f"i{i:05d}",
                tags=tags,
                provider=provider,
                taxonomy=f"c{k}",
                title_vector=titles[i],
            )
        )
    catalog = ItemCatalog(items)

    # popularity within each cluster: Zipf over the cluster's member rank
    cluster_members = [np.flatnonzero(clusters == k) for k in range(spec.n_clusters)]
    cluster_weights = []
    for members in cluster_members:
        ranks = np.arange(1, members.size + 1, dtype=np.float64)
        w = ranks ** (-spec.zipf_exponent)
        cluster_weights.append(w / w.sum())

    rng_users = substream(spec.seed, "synth", "users")
    preferred = np.stack(
        [rng_users.choice(spec.n_clusters, size=2, replace=False) for _ in range(spec.n_users)]
    )
    profile_rows: dict[str, tuple[str, ...]] = {}
    for j in range(spec.n_users):
        profile_rows[f"u{j:05d}"] = (
            f"h{int(rng_users.integers(5))}",
            f"g{int(preferred[j, 0]) % 10}",
        )
    profiles = UserProfileTable(("cohort", "group"), profile_rows)

    rng_clicks = substream(spec.seed, "synth", "clicks")
    interactions: list[Interaction] = []
    base_quota = spec.n_interactions // spec.n_users
    horizon = 90 * 24 * 3600
    for j in range(spec.n_users):
        quota = base_quota + (1 if j < spec.n_interactions % spec.n_users else 0)
        if quota == 0:
            continue
        user_id = f"u{j:05d}"
        n_sessions = max(1, int(round(quota / spec.mean_session_length)))
        starts = np.sort(rng_clicks.integers(0, horizon, size=n_sessions))
        remaining = quota
        last_end = -(10**9)
        for s in range(n_sessions):
            if remaining <= 0:
                break
            length = int(
                min(
                    remaining,
                    spec.max_session_length,
                    1 + rng_clicks.poisson(spec.mean_session_length - 1.0),
                )
            )
            start = max(int(starts[s]), last_end + 2 * 3600 + 1)
            # session items lean on one cluster for within-session coherence
            if rng_clicks.random() < spec.intra_cluster_bias:
                session_cluster = int(preferred[j, 0] if rng_clicks.random() < 0.7 else preferred[j, 1])
            else:
                session_cluster = int(rng_clicks.integers(spec.n_clusters))
            t = start
            session_items: list[int] = []
            for _ in range(length):
                if rng_clicks.random() < 0.9:
                    k = session_cluster
                else:
                    k = int(rng_clicks.integers(spec.n_clusters))
                item = int(rng_clicks.choice(cluster_members[k], p=cluster_weights[k]))
                session_items.append(item)
            if spec.motif_rate > 0 and motifs and rng_clicks.random() < spec.motif_rate:
                a, b = motifs[int(rng_clicks.integers(len(motifs)))]
                session_items.extend((a, b))
            for item in session_items:
                interactions.append(Interaction(user_id, item, t))
                t += 1 + int(rng_clicks.integers(spec.session_gap_seconds))
            last_end = t
            remaining -= len(session_items)

    interactions.sort(key=lambda ev: ev.timestamp)
    return SyntheticDataset(catalog, interactions, profiles, clusters, motifs)


def default_split_time(interactions: list[Interaction], train_fraction: float = 0.8) -> int:
    """Timestamp at the given quantile of the click log, for chronological
    splitting."""
    if not interactions:
        raise ValueError("interactions must be non-empty")
    ts = np.asarray([ev.timestamp for ev in interactions], dtype=np.int64)
    return int(np.quantile(ts, train_fraction, method="higher"))
