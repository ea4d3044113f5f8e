"""Uniform negative sampling over an index range with an exclusion set."""

from __future__ import annotations

import numpy as np

from .util import warn


def uniform_excluding(
    n_items: int,
    excluded: set[int] | frozenset[int],
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Draw ``n`` distinct indices uniformly from ``range(n_items)`` minus
    ``excluded``.

    If fewer than ``n`` indices are eligible, the whole eligible set is
    returned in ascending order with a warning.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    eligible_count = n_items - len(excluded)
    if n == 0:
        return np.empty(0, dtype=np.int64)
    if eligible_count < n:
        warn("eligible set smaller than requested sample size; returning the whole eligible set")
        eligible = np.array(
            [i for i in range(n_items) if i not in excluded], dtype=np.int64
        )
        return eligible

    # Rejection sampling: process each draw buffer in order, accepting the
    # first occurrence of every not-yet-seen eligible value. Equivalent to
    # drawing without replacement from the eligible set, and cheap while
    # |excluded| + n stays small versus n_items.
    return _reject_loop(n_items, excluded, n, rng)


def _reject_loop(
    n_items: int, excluded: set[int] | frozenset[int], n: int, rng: np.random.Generator
) -> np.ndarray:
    excluded_arr = np.fromiter(excluded, dtype=np.int64, count=len(excluded))
    excluded_arr.sort()
    chunks: list[np.ndarray] = []
    taken = 0
    while taken < n:
        need = n - taken
        draws = rng.integers(0, n_items, size=max(2 * need, 8))
        ok = draws[~np.isin(draws, excluded_arr)]
        for prev in chunks:
            ok = ok[~np.isin(ok, prev)]
        if ok.size:
            _, first = np.unique(ok, return_index=True)
            ok = ok[np.sort(first)][:need]
            chunks.append(ok)
            taken += ok.size
    return np.concatenate(chunks) if len(chunks) != 1 else chunks[0]


def _mark_row_duplicates(draws: np.ndarray) -> np.ndarray:
    """True at every entry that repeats an earlier value in its row."""
    order = np.argsort(draws, axis=1, kind="stable")
    sorted_draws = np.take_along_axis(draws, order, axis=1)
    dup_sorted = np.zeros_like(draws, dtype=bool)
    dup_sorted[:, 1:] = sorted_draws[:, 1:] == sorted_draws[:, :-1]
    dup = np.zeros_like(dup_sorted)
    np.put_along_axis(dup, order, dup_sorted, axis=1)
    return dup


def sample_distinct_rows(
    n_items: int,
    k: int,
    rng: np.random.Generator,
    exclude_mask: np.ndarray | None = None,
    exclude_single: np.ndarray | None = None,
) -> np.ndarray:
    """Per-row uniform draws without replacement, vectorized across rows.

    Exclusions come either as a boolean (n_rows, n_items) mask or as one
    excluded index per row. Invalid entries are redrawn until every row
    holds k distinct eligible values; the acceptance rule sees only the
    equality pattern, never the values, so the result is uniform over
    distinct k-tuples. Every row must have at least k eligible values.
    """
    if exclude_mask is not None:
        n_rows = exclude_mask.shape[0]
    elif exclude_single is not None:
        n_rows = len(exclude_single)
    else:
        raise ValueError("one of exclude_mask / exclude_single is required")
    draws = rng.integers(0, n_items, size=(n_rows, k))
    rows = np.arange(n_rows)[:, None]
    while True:
        if exclude_mask is not None:
            bad = exclude_mask[rows, draws]
        else:
            bad = draws == np.asarray(exclude_single)[:, None]
        bad |= _mark_row_duplicates(draws)
        n_bad = int(bad.sum())
        if n_bad == 0:
            return draws
        draws[bad] = rng.integers(0, n_items, size=n_bad)
