"""Dropout-style augmentation of concatenated item feature embeddings.

Three strategies, applied to the raw concatenated field embedding before
the item tower:

* ``element``: each scalar is independently zeroed with the mask ratio.
* ``field``: whole field slices are zeroed; a draw that would zero every
  field gets one uniformly chosen field restored.
* ``categorial``: for multi-valued fields only, individual values are
  dropped before mean pooling.
* ``field_plus_categorial`` (default): categorial then field.

Masking never rescales; unmasked coordinates stay bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRATEGIES = ("element", "field", "categorial", "field_plus_categorial")

SINGLE_CATEGORICAL = "single_categorical"
MULTI_CATEGORICAL = "multi_categorical"


@dataclass(frozen=True)
class FieldSlot:
    name: str
    kind: str
    start: int
    end: int


class FieldLayout:
    """Ordered feature fields tiling the concatenated raw embedding."""

    def __init__(self, fields: list[FieldSlot]):
        if not fields:
            raise ValueError("layout needs at least one field")
        width = fields[0].end - fields[0].start
        cursor = 0
        for f in fields:
            if f.kind not in (SINGLE_CATEGORICAL, MULTI_CATEGORICAL):
                raise ValueError(f"unknown field kind {f.kind!r}")
            if f.start != cursor or f.end - f.start != width:
                raise ValueError("field slices must tile the embedding with equal widths")
            cursor = f.end
        self.fields = tuple(fields)
        self.d_field = width
        self.width = cursor

    @classmethod
    def build(cls, names_kinds: list[tuple[str, str]], d_field: int) -> "FieldLayout":
        fields = [
            FieldSlot(name, kind, i * d_field, (i + 1) * d_field)
            for i, (name, kind) in enumerate(names_kinds)
        ]
        return cls(fields)

    def __len__(self) -> int:
        return len(self.fields)


@dataclass(frozen=True)
class AugmentationPlan:
    strategy: str = "field_plus_categorial"
    mask_ratio: float = 0.5

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if not (0.0 <= self.mask_ratio < 1.0):
            raise ValueError("mask_ratio must lie in [0, 1)")


def draw_element_mask(width: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """True where a scalar gets zeroed."""
    return rng.random(width) < ratio


def draw_field_mask(n_fields: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """True where a whole field gets zeroed; never all-True (one uniformly
    chosen field is restored when the draw would mask everything)."""
    mask = rng.random(n_fields) < ratio
    if mask.all():
        mask[int(rng.integers(n_fields))] = False
    return mask


def draw_value_keep(n_values: int, ratio: float, rng: np.random.Generator) -> np.ndarray:
    """True where a constituent value of a multi-valued field is kept."""
    return rng.random(n_values) >= ratio


def augment(
    raw: np.ndarray,
    layout: FieldLayout,
    plan: AugmentationPlan,
    rng: np.random.Generator,
) -> np.ndarray:
    """Augment one raw embedding with the element or field strategy.

    The categorial strategies need the pre-pooling per-value embeddings
    and live in :func:`augment_multivalue`.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (layout.width,):
        raise ValueError(f"raw embedding has shape {raw.shape}, layout expects ({layout.width},)")
    if plan.strategy == "element":
        out = raw.copy()
        out[draw_element_mask(layout.width, plan.mask_ratio, rng)] = 0.0
        return out
    if plan.strategy == "field":
        out = raw.copy()
        mask = draw_field_mask(len(layout), plan.mask_ratio, rng)
        for f, masked in zip(layout.fields, mask):
            if masked:
                out[f.start : f.end] = 0.0
        return out
    raise ValueError(
        f"strategy {plan.strategy!r} needs per-value embeddings; use augment_multivalue"
    )


def augment_multivalue(
    raw: np.ndarray,
    layout: FieldLayout,
    plan: AugmentationPlan,
    rng: np.random.Generator,
    value_embeddings: dict[str, np.ndarray],
) -> np.ndarray:
    """Augment with the categorial or field_plus_categorial strategy.

    ``value_embeddings`` maps each multi-valued field name to its
    (n_values, d_field) pre-pooling embedding rows. Dropping every value
    of a field leaves that slice zero (the empty-mean convention). Draw
    order is fixed: per-value keeps in layout order, then the field mask.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (layout.width,):
        raise ValueError(f"raw embedding has shape {raw.shape}, layout expects ({layout.width},)")
    if plan.strategy not in ("categorial", "field_plus_categorial"):
        raise ValueError("augment_multivalue handles the categorial strategies only")
    out = raw.copy()
    for f in layout.fields:
        if f.kind != MULTI_CATEGORICAL:
            continue
        values = np.asarray(value_embeddings.get(f.name, np.empty((0, layout.d_field))))
        keep = draw_value_keep(values.shape[0], plan.mask_ratio, rng)
        kept = values[keep]
        out[f.start : f.end] = kept.mean(axis=0) if kept.shape[0] else 0.0
    if plan.strategy == "field_plus_categorial":
        mask = draw_field_mask(len(layout), plan.mask_ratio, rng)
        for f, masked in zip(layout.fields, mask):
            if masked:
                out[f.start : f.end] = 0.0
    return out
