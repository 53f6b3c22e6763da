"""Merge per-query class masks into one pseudo label per image."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .classes import BACKGROUND, IGNORE_INDEX

CONFLICT_POLICIES = ("score", "ignore", "smallest")
UNMASKED_POLICIES = ("background", "ignore")


@dataclass
class ClassMask:
    class_id: int
    mask: np.ndarray
    score: float = 1.0
    source: str = ""


@dataclass
class PseudoLabel:
    label: np.ndarray
    coverage: float
    conflicts: int
    provenance: dict = field(default_factory=dict)


def merge_instances(masks) -> list[ClassMask]:
    """OR together masks sharing a class; the merged score is the maximum."""
    merged: dict[int, ClassMask] = {}
    for m in masks:
        current = merged.get(m.class_id)
        if current is None:
            merged[m.class_id] = ClassMask(m.class_id, np.asarray(m.mask, dtype=bool).copy(),
                                           m.score, m.source)
        else:
            current.mask |= np.asarray(m.mask, dtype=bool)
            current.score = max(current.score, m.score)
            current.source = ",".join(s for s in (current.source, m.source) if s)
    return [merged[c] for c in sorted(merged)]


def compose(masks, shape=None, policy: str = "score", unmasked: str = "background",
            provenance: dict | None = None) -> PseudoLabel:
    """Resolve overlapping class masks into a label map.

    ``score`` gives contested pixels to the highest-scoring class (ties go to
    the smaller class id), ``smallest`` to the class with the smallest mask
    area (same tie rule), ``ignore`` marks them 255.  Uncovered pixels become
    background, or 255 when ``unmasked == "ignore"``.
    """
    if policy not in CONFLICT_POLICIES:
        raise ValueError(f"unknown conflict policy {policy!r}")
    if unmasked not in UNMASKED_POLICIES:
        raise ValueError(f"unknown unmasked policy {unmasked!r}")
    masks = list(masks)
    if shape is None:
        if not masks:
            raise ValueError("shape is required when there are no masks")
        shape = np.asarray(masks[0].mask).shape
    shape = tuple(shape)
    for m in masks:
        if np.asarray(m.mask).shape != shape:
            raise ValueError(f"mask for class {m.class_id} has shape "
                             f"{np.asarray(m.mask).shape}, expected {shape}")

    fill = IGNORE_INDEX if unmasked == "ignore" else BACKGROUND
    label = np.full(shape, fill, dtype=np.uint8)
    merged = merge_instances(masks)
    if not merged:
        return PseudoLabel(label, 0.0, 0, dict(provenance or {}))

    stack = np.stack([m.mask for m in merged])
    claims = stack.sum(axis=0)
    contested = claims >= 2
    single = claims == 1
    ids = np.array([m.class_id for m in merged], dtype=np.uint8)
    label[single] = ids[stack[:, single].argmax(axis=0)]

    if contested.any():
        if policy == "ignore":
            label[contested] = IGNORE_INDEX
        else:
            if policy == "score":
                key = np.array([m.score for m in merged], dtype=np.float64)
            else:
                key = -np.array([m.mask.sum() for m in merged], dtype=np.float64)
            # merged is sorted by class id, so argmax breaks ties toward the smaller id
            ranked = np.where(stack[:, contested], key[:, None], -np.inf)
            label[contested] = ids[ranked.argmax(axis=0)]

    foreground = (label != BACKGROUND) & (label != IGNORE_INDEX)
    return PseudoLabel(label, float(foreground.mean()), int(contested.sum()),
                       dict(provenance or {}))
