"""Central finite-difference verification of every analytic gradient.

Runs each loss (and the joint objective) on a deliberately tiny fixture,
re-seeding the sampling streams on every evaluation so each loss is a
deterministic, differentiable function of the parameters, then compares
the hand-written gradients against central differences coordinate by
coordinate.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .augment import AugmentationPlan
from .data import Item, ItemCatalog, UserProfileTable
from .losses import (
    ContrastiveBatch,
    JointLossInputs,
    MatchBatch,
    loss_feature_cl,
    loss_joint,
    loss_matching,
    loss_semantic_cl,
    loss_session_cl,
)
from .model import (
    EncodedCatalog,
    EncodedProfiles,
    ModelDims,
    ModelParams,
    build_meta,
    init_params,
    pad_histories,
)
from .rng import substream
from .semantics import mine_taxonomy
from .sessions import CooccurrenceTable, SessionPositiveSampler

DEFAULT_STEP = 1e-4
DEFAULT_THRESHOLD = 1e-5


def flatten(arrays: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate([arrays[name].ravel() for name in arrays])


def assign_flat(params: ModelParams, vec: np.ndarray) -> None:
    cursor = 0
    for arr in params.arrays.values():
        arr[...] = vec[cursor : cursor + arr.size].reshape(arr.shape)
        cursor += arr.size


def finite_difference_gradient(
    value_fn: Callable[[ModelParams], float], params: ModelParams, step: float = DEFAULT_STEP
) -> np.ndarray:
    """Central differences over every parameter coordinate."""
    base = flatten(params.arrays)
    grad = np.zeros_like(base)
    for i in range(base.size):
        probe = base.copy()
        probe[i] = base[i] + step
        assign_flat(params, probe)
        plus = value_fn(params)
        probe[i] = base[i] - step
        assign_flat(params, probe)
        minus = value_fn(params)
        grad[i] = (plus - minus) / (2.0 * step)
    assign_flat(params, base)
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Coordinatewise |a - b| / max(|a|, |b|, 1e-6).

    The absolute floor keeps coordinates whose true gradient sits below
    the central-difference noise floor (about 1e-12 here) from swamping
    the ratio; any real gradient bug still produces errors far above it.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    err = np.abs(analytic - numeric) / denom
    return float(err.max()) if err.size else 0.0


def build_fixture(seed: int = 0) -> dict:
    """A complete miniature pipeline with well under 200 parameters."""
    items = [
        Item("a", ("t1", "t2"), "p1", "c1"),
        Item("b", ("t2",), "p2", "c1"),
        Item("c", ("t1", "t3"), "p1", "c1"),
        Item("d", ("t3",), "p2", "c2"),
        Item("e", (), "p1", "c2"),
        Item("f", ("t2",), "p2", None),
    ]
    catalog = ItemCatalog(items)
    profiles = UserProfileTable(("seg",), {"u1": ("s1",), "u2": ("s2",)})
    dims = ModelDims(d_field=2, tower_dims=(3, 2, 2), behavior_window=3, ffn_dim=2, d_proj=2)
    meta = build_meta(catalog, profiles, dims)
    params = init_params(meta, seed)
    # healthy parameter magnitudes keep every gradient well away from the
    # finite-difference noise floor
    rng = substream(seed, "fd", "values")
    for name, arr in params.arrays.items():
        arr[...] = rng.uniform(-0.6, 0.6, size=arr.shape)

    enc = EncodedCatalog(catalog, meta)
    prof_enc = EncodedProfiles(profiles, meta)
    pool = mine_taxonomy(catalog)
    table = CooccurrenceTable({(0, 1): 3, (0, 2): 1, (1, 2): 2, (3, 4): 2, (2, 4): 1}, 6, k=10)
    sampler = SessionPositiveSampler(table)

    histories = pad_histories([[0, 2], [1, 3, 4]], dims.behavior_window)
    profile_idx = prof_enc.rows(["u1", "u2"])
    match = MatchBatch(
        user_rows=np.array([0, 1, 0]),
        histories=histories,
        profile_idx=profile_idx,
        pos_items=np.array([1, 4, 5]),
        neg_items=np.array([[0, 3], [2, 5], [0, 2]]),
    )
    contrastive = ContrastiveBatch(
        anchors=np.unique(match.pos_items), tau=1.0, num_negatives=2, include_positive=True
    )
    plan = AugmentationPlan("field_plus_categorial", 0.5)
    return {
        "catalog": catalog,
        "params": params,
        "enc": enc,
        "prof_enc": prof_enc,
        "pool": pool,
        "table": table,
        "sampler": sampler,
        "match": match,
        "contrastive": contrastive,
        "plan": plan,
        "seed": seed,
    }


def _loss_closures(fix: dict) -> dict[str, Callable[[ModelParams], tuple[float, dict]]]:
    enc = fix["enc"]
    seed = fix["seed"]

    def matching(params):
        return loss_matching(params, enc, fix["match"])

    def feature(params):
        return loss_feature_cl(
            params,
            enc,
            fix["contrastive"],
            fix["plan"],
            substream(seed, "fd", "fea"),
            substream(seed, "fd", "drop"),
        )

    def semantic(params):
        return loss_semantic_cl(params, enc, fix["contrastive"], fix["pool"], substream(seed, "fd", "sem"))

    def session(params):
        return loss_session_cl(
            params, enc, fix["contrastive"], fix["sampler"], fix["table"], substream(seed, "fd", "sess")
        )

    def joint(params):
        inputs = JointLossInputs(
            fix["match"], fix["contrastive"], fix["plan"], fix["pool"], fix["sampler"], fix["table"]
        )
        rngs = {
            "feature": substream(seed, "fd", "fea"),
            "dropout": substream(seed, "fd", "drop"),
            "semantic": substream(seed, "fd", "sem"),
            "session": substream(seed, "fd", "sess"),
        }
        value, _, grads = loss_joint(params, enc, inputs, (1.0, 0.3, 0.1), rngs)
        return value, grads

    return {"matching": matching, "feature": feature, "semantic": semantic, "session": session, "joint": joint}


def gradcheck_suite(seed: int = 0, step: float = DEFAULT_STEP) -> dict[str, float]:
    """Max relative error of the analytic gradient per loss."""
    fix = build_fixture(seed)
    params: ModelParams = fix["params"]
    errors: dict[str, float] = {}
    for name, closure in _loss_closures(fix).items():
        _, grads = closure(params)
        analytic = flatten(grads)
        numeric = finite_difference_gradient(lambda p: closure(p)[0], params, step)
        errors[name] = max_relative_error(analytic, numeric)
    return errors
