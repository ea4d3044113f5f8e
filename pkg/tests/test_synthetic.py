"""Planted-structure recovery and determinism of the synthetic generator."""

import numpy as np
import pytest

from itemcl.data import chronological_split, save_catalog, save_interactions, save_profiles
from itemcl.semantics import mine_title_knn
from itemcl.sessions import build_cooccurrence, segment_sessions
from itemcl.synthetic import SyntheticSpec, default_split_time, generate

SMALL_SPEC = SyntheticSpec(
    n_users=300,
    n_items=200,
    n_clusters=10,
    n_interactions=20_000,
    title_dim=8,
    seed=5,
)


def cooccurrence_of(data, spec):
    split = chronological_split(
        data.interactions, default_split_time(data.interactions), behavior_window=5
    )
    sessions = segment_sessions(split, 3600)
    return build_cooccurrence(sessions, spec.n_items)


class TestPlantedClusters:
    def test_zero_noise_title_cosines(self):
        import dataclasses

        spec = dataclasses.replace(SMALL_SPEC, title_noise=0.0, n_items=40, n_clusters=2, n_users=20, n_interactions=500)
        data = generate(spec)
        vectors = np.stack([item.title_vector for item in data.catalog.items])
        sims = vectors @ vectors.T
        same = data.clusters[:, None] == data.clusters[None, :]
        np.testing.assert_allclose(sims[same], 1.0, atol=1e-12)
        assert sims[~same].max() < 1.0

    def test_title_knn_recovers_only_same_cluster(self):
        import dataclasses

        spec = dataclasses.replace(SMALL_SPEC, title_noise=0.0, n_items=60, n_clusters=6, n_users=20, n_interactions=500)
        data = generate(spec)
        pool = mine_title_knn(data.catalog, k=5)
        for i in range(60):
            for j in pool.positives[i]:
                assert data.clusters[i] == data.clusters[int(j)]


class TestMotifs:
    def test_planted_motifs_rank_above_background_median(self):
        import dataclasses

        spec = dataclasses.replace(SMALL_SPEC, motif_rate=0.10)
        data = generate(spec)
        table = cooccurrence_of(data, spec)
        motif_counts = [table.count(a, b) for a, b in data.motif_pairs]
        background = _cross_cluster_counts(table, data, exclude=set(data.motif_pairs))
        assert np.median(motif_counts) > np.median(background)
        assert np.mean(motif_counts) > np.mean(background) + 3 * _stderr(background)

    def test_rate_zero_matches_background(self):
        import dataclasses

        spec = dataclasses.replace(SMALL_SPEC, motif_rate=0.0)
        data = generate(spec)
        table = cooccurrence_of(data, spec)
        motif_counts = [table.count(a, b) for a, b in data.motif_pairs]
        background = _cross_cluster_counts(table, data, exclude=set(data.motif_pairs))
        # two-sided: the would-be motif pairs look like any other pairs
        half_width = 4 * _stderr(background, len(motif_counts))
        assert abs(np.mean(motif_counts) - np.mean(background)) < max(half_width, 0.5)

    def test_invalid_motif_rejected(self):
        with pytest.raises(ValueError, match="motif"):
            SyntheticSpec(n_items=10, n_clusters=2, motif_pairs=((3, 3),)).validate()


def _cross_cluster_counts(table, data, exclude):
    counts = []
    n = len(data.clusters)
    rng = np.random.default_rng(0)
    for _ in range(4000):
        a, b = (int(x) for x in rng.integers(0, n, size=2))
        if a == b or data.clusters[a] == data.clusters[b]:
            continue
        if (a, b) in exclude or (b, a) in exclude:
            continue
        counts.append(table.count(a, b))
    return counts


def _stderr(sample, m=None):
    sample = np.asarray(sample, dtype=float)
    return float(sample.std() / np.sqrt(m if m else len(sample)))


class TestDeterminism:
    def test_same_seed_identical_files(self, tmp_path):
        for sub in ("x", "y"):
            data = generate(SMALL_SPEC)
            save_catalog(data.catalog, str(tmp_path / sub / "catalog.jsonl"))
            save_interactions(data.interactions, data.catalog, str(tmp_path / sub / "interactions.tsv"))
            save_profiles(data.profiles, str(tmp_path / sub / "profiles.jsonl"))
        for name in ("catalog.jsonl", "interactions.tsv", "profiles.jsonl"):
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()

    def test_different_seed_differs(self):
        import dataclasses

        a = generate(SMALL_SPEC)
        b = generate(dataclasses.replace(SMALL_SPEC, seed=6))
        assert [e.item_index for e in a.interactions] != [e.item_index for e in b.interactions]


class TestShape:
    def test_sizes_and_split(self):
        data = generate(SMALL_SPEC)
        assert len(data.catalog) == SMALL_SPEC.n_items
        assert len(data.profiles.rows) == SMALL_SPEC.n_users
        assert abs(len(data.interactions) - SMALL_SPEC.n_interactions) < 0.1 * SMALL_SPEC.n_interactions
        split_time = default_split_time(data.interactions, 0.8)
        n_before = sum(1 for e in data.interactions if e.timestamp < split_time)
        assert 0.7 < n_before / len(data.interactions) < 0.9

    def test_timestamps_sorted(self):
        data = generate(SMALL_SPEC)
        ts = [e.timestamp for e in data.interactions]
        assert ts == sorted(ts)
