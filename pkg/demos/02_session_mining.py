#!/usr/bin/env python3
"""Segment click streams into sessions, count global item co-occurrence,
and sample session-level positives and negatives."""

import numpy as np

from itemcl import (
    SessionPositiveSampler,
    SyntheticSpec,
    build_cooccurrence,
    chronological_split,
    default_split_time,
    generate,
    sample_session_negatives,
    sample_session_positive,
    segment_sessions,
)

spec = SyntheticSpec(n_users=200, n_items=120, n_clusters=10, n_interactions=12_000, motif_rate=0.1, seed=3)
data = generate(spec)
split = chronological_split(data.interactions, default_split_time(data.interactions), 20)

sessions = segment_sessions(split, window_seconds=3600)
lengths = [len(s.items) for s in sessions]
print(f"{len(sessions)} sessions, lengths min/median/max = {min(lengths)}/{int(np.median(lengths))}/{max(lengths)}")

table = build_cooccurrence(sessions, len(data.catalog), k=10)
print(f"co-occurrence table: {len(table.counts)} distinct pairs")

# the planted cross-cluster motifs should sit far above the background
motif_counts = [table.count(a, b) for a, b in data.motif_pairs]
all_counts = list(table.counts.values())
print(f"median planted-motif count = {np.median(motif_counts):.0f} vs overall median pair count = {np.median(all_counts):.0f}")

sampler = SessionPositiveSampler(table)
rng = np.random.default_rng(0)
anchor = data.motif_pairs[0][0]
draws = [sample_session_positive(sampler, anchor, rng) for _ in range(2000)]
partner = data.motif_pairs[0][1]
print(f"item {anchor}: top co-occurred neighbors {table.topk[anchor][:3]}")
print(f"  weighted sampling hit its motif partner {partner} in {draws.count(partner)}/2000 draws")

negatives = sample_session_negatives(table, anchor, 8, rng)
assert not (set(negatives.tolist()) & set(table.neighbors(anchor)))
print(f"  8 negatives, all from the never-co-occurred set: {negatives.tolist()}")
