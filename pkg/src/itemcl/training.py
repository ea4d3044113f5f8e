"""Joint multi-task training loop: batch assembly, negative sampling
orchestration, Adam updates, and checkpointing.

Every randomized stage draws from its own named substream of the config
seed (shuffling, matching negatives, per-task contrastive sampling,
dropout masks), so toggling one task never perturbs the draws of the
others and runs are bit-reproducible under a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationPlan
from .config import TrainConfig
from .data import ItemCatalog, SplitDataset, UserProfileTable
from .losses import ContrastiveBatch, JointLossInputs, MatchBatch, loss_joint
from .model import (
    EncodedCatalog,
    EncodedProfiles,
    ModelParams,
    build_meta,
    init_params,
    load_checkpoint,
    pad_histories,
    save_checkpoint,
)
from .rng import substream
from .semantics import SemanticPositivePool, mine_taxonomy, mine_title_knn
from .sessions import (
    CooccurrenceTable,
    SessionPositiveSampler,
    build_cooccurrence,
    segment_sessions,
)

__all__ = [
    "TrainConfig",
    "TrainReport",
    "TrainingError",
    "train",
    "mine_artifacts",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingError(RuntimeError):
    """Raised when a loss or parameter turns non-finite; the message names
    the offending component."""


@dataclass
class TrainReport:
    """Per-epoch loss means, wall-clock, and a parameter-norm summary."""

    config: dict
    epochs: list[dict] = field(default_factory=list)

    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else {}


def mine_artifacts(
    config: TrainConfig, split: SplitDataset, catalog: ItemCatalog
) -> tuple[SemanticPositivePool | None, SessionPositiveSampler | None, CooccurrenceTable | None]:
    """Mine exactly the artifacts the config's active tasks need."""
    pool = None
    sampler = None
    table = None
    if config.use_semantic_cl and config.lambda_semantic > 0:
        if config.semantic_source == "title_knn":
            pool = mine_title_knn(catalog, config.k_semantic)
        else:
            pool = mine_taxonomy(catalog, cap=config.k_semantic, rng=substream(config.seed, "taxonomy_cap"))
    if config.use_session_cl and config.lambda_session > 0:
        sessions = segment_sessions(split, config.session_window)
        table = build_cooccurrence(sessions, len(catalog), config.k_session)
        sampler = SessionPositiveSampler(table)
    return pool, sampler, table


def _sample_match_negatives(
    pos_items: np.ndarray, n_items: int, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Uniform catalog draws, redrawn wherever a draw hit the pair's own
    positive item."""
    negs = rng.integers(0, n_items, size=(pos_items.size, k))
    collisions = negs == pos_items[:, None]
    while collisions.any():
        negs[collisions] = rng.integers(0, n_items, size=int(collisions.sum()))
        collisions = negs == pos_items[:, None]
    return negs


def train(
    config: TrainConfig,
    split: SplitDataset,
    catalog: ItemCatalog,
    profiles: UserProfileTable | None = None,
    pool: SemanticPositivePool | None = None,
    sampler: SessionPositiveSampler | None = None,
    table: CooccurrenceTable | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Run the joint optimization and return the final parameters plus the
    per-epoch report. Deterministic given the config seed."""
    config.validate()
    if not split.train_interactions:
        raise ValueError("train split is empty")
    lambdas = config.effective_lambdas()
    if lambdas[1] > 0 and pool is None:
        raise ValueError("semantic task is active but no positive pool was supplied")
    if lambdas[2] > 0 and (sampler is None or table is None):
        raise ValueError("session task is active but no co-occurrence artifacts were supplied")

    meta = build_meta(catalog, profiles, config.model_dims())
    enc = EncodedCatalog(catalog, meta)
    prof_enc = EncodedProfiles(profiles, meta)
    params = init_params(meta, config.seed)

    user_ids = sorted({ev.user_id for ev in split.train_interactions})
    user_row = {uid: i for i, uid in enumerate(user_ids)}
    histories_all = pad_histories(
        [split.behavior_histories.get(uid, []) for uid in user_ids], config.behavior_window
    )
    profiles_all = prof_enc.rows(user_ids)
    ev_user = np.asarray([user_row[ev.user_id] for ev in split.train_interactions], dtype=np.int64)
    ev_item = np.asarray([ev.item_index for ev in split.train_interactions], dtype=np.int64)

    rng_shuffle = substream(config.seed, "shuffle")
    rngs = {
        "match": substream(config.seed, "match_negatives"),
        "feature": substream(config.seed, "cl_feature"),
        "dropout": substream(config.seed, "dropout"),
        "semantic": substream(config.seed, "cl_semantic"),
        "session": substream(config.seed, "cl_session"),
    }
    plan = AugmentationPlan(config.augment_strategy, config.mask_ratio)
    adam_m = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    adam_v = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step_count = 0

    report = TrainReport(config.to_dict())
    n = len(split.train_interactions)
    for epoch in range(config.epochs):
        started = time.perf_counter()
        perm = rng_shuffle.permutation(n)
        sums = {"matching": 0.0, "feature": 0.0, "semantic": 0.0, "session": 0.0, "joint": 0.0}
        n_steps = 0
        for lo in range(0, n, config.batch_size):
            chunk = perm[lo : lo + config.batch_size]
            step_users = ev_user[chunk]
            step_items = ev_item[chunk]
            uq, inv = np.unique(step_users, return_inverse=True)
            match = MatchBatch(
                user_rows=inv,
                histories=histories_all[uq],
                profile_idx=profiles_all[uq],
                pos_items=step_items,
                neg_items=_sample_match_negatives(step_items, len(catalog), config.negatives, rngs["match"]),
            )
            contrastive = ContrastiveBatch(
                anchors=np.unique(step_items),
                tau=config.tau,
                num_negatives=config.negatives,
                include_positive=config.include_positive_in_denominator,
            )
            inputs = JointLossInputs(match, contrastive, plan, pool, sampler, table)
            total, components, grads = loss_joint(params, enc, inputs, lambdas, rngs)

            for name, value in components.items():
                if not np.isfinite(value):
                    raise TrainingError(
                        f"loss component {name!r} became non-finite at epoch {epoch} step {n_steps}"
                    )
            step_count += 1
            correction1 = 1.0 - beta1**step_count
            correction2 = 1.0 - beta2**step_count
            for name, arr in params.arrays.items():
                g = grads[name]
                adam_m[name] = beta1 * adam_m[name] + (1.0 - beta1) * g
                adam_v[name] = beta2 * adam_v[name] + (1.0 - beta2) * g * g
                arr -= config.learning_rate * (adam_m[name] / correction1) / (
                    np.sqrt(adam_v[name] / correction2) + eps
                )
            if not params.all_finite():
                raise TrainingError(
                    f"parameters became non-finite after epoch {epoch} step {n_steps}"
                )

            for key in ("matching", "feature", "semantic", "session"):
                sums[key] += components[key]
            sums["joint"] += total
            n_steps += 1

        norm = float(np.sqrt(sum(float((a * a).sum()) for a in params.arrays.values())))
        report.epochs.append(
            {
                "epoch": epoch,
                "loss_matching": sums["matching"] / n_steps,
                "loss_feature": sums["feature"] / n_steps,
                "loss_semantic": sums["semantic"] / n_steps,
                "loss_session": sums["session"] / n_steps,
                "loss_joint": sums["joint"] / n_steps,
                "seconds": time.perf_counter() - started,
                "param_norm": norm,
            }
        )
    return params, report
