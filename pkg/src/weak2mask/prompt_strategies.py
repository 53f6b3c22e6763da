"""PromptSets from point, scribble, and box annotations."""
from __future__ import annotations

import math

import numpy as np

from .classes import BACKGROUND, IGNORE_INDEX
from .errors import PreconditionError
from .prompts import PromptSet, exclude, make_schedule


def _group_by_class(points):
    groups: dict[int, list[tuple[int, int]]] = {}
    for x, y, c in points:
        groups.setdefault(c, []).append((x, y))
    return groups


def points_to_prompts(ann, iterative: bool = False, use_negatives: bool = False) -> list[PromptSet]:
    if ann.kind != "points":
        raise PreconditionError(f"expected a points annotation, got {ann.kind!r}")
    if not ann.points:
        raise PreconditionError(f"{ann.image_id}: point annotation is empty")
    groups = _group_by_class(ann.points)
    return _class_prompts(groups, iterative, use_negatives)


def _class_prompts(groups, iterative, use_negatives, batch_size=1) -> list[PromptSet]:
    # Background points only ever serve as negatives.
    prompt_sets = []
    for class_id in sorted(groups):
        if class_id == BACKGROUND:
            continue
        positives = exclude(groups[class_id], ())
        negatives = []
        if use_negatives:
            others = [p for c in sorted(groups) if c != class_id for p in groups[c]]
            negatives = exclude(others, positives)
        prompt_sets.append(PromptSet(
            class_id=class_id,
            positives=positives,
            negatives=negatives,
            schedule=make_schedule(len(positives), iterative, batch_size),
        ))
    return prompt_sets


def subsample_scribble(pixels, fraction: float, seed) -> list[tuple[int, int]]:
    """Pick ``max(1, ceil(fraction * N))`` pixels uniformly without replacement.

    The chosen pixels keep their input order.
    """
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    pixels = list(pixels)
    n = len(pixels)
    if n == 0:
        return []
    if fraction == 1:
        return pixels
    k = max(1, math.ceil(fraction * n - 1e-9))
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    return [pixels[i] for i in chosen]


def scribble_pixels(scribbles: np.ndarray) -> dict[int, list[tuple[int, int]]]:
    """Labeled scribble pixels per class, each list in row-major order."""
    out = {}
    for class_id in np.unique(scribbles).tolist():
        if class_id == IGNORE_INDEX:
            continue
        ys, xs = np.nonzero(scribbles == class_id)
        out[class_id] = list(zip(xs.tolist(), ys.tolist()))
    return out


def class_seed(seed: int, class_id: int) -> list[int]:
    return [int(seed), int(class_id)]


def scribbles_to_prompts(ann, fraction: float = 0.2, iterative: bool = False,
                         use_negatives: bool = False, seed: int = 0,
                         batch_size: int = 1) -> list[PromptSet]:
    """One PromptSet per labeled foreground class.

    Every class (background included) is subsampled once with a seed derived
    from ``seed`` and its class id; negatives of a class are the sampled
    pixels of all other classes.
    """
    if ann.kind != "scribbles":
        raise PreconditionError(f"expected a scribbles annotation, got {ann.kind!r}")
    groups = {
        c: subsample_scribble(pts, fraction, class_seed(seed, c))
        for c, pts in scribble_pixels(ann.scribbles).items()
    }
    return _class_prompts(groups, iterative, use_negatives, batch_size)


def boxes_to_prompts(ann) -> list[PromptSet]:
    if ann.kind != "boxes":
        raise PreconditionError(f"expected a boxes annotation, got {ann.kind!r}")
    prompt_sets = []
    for x0, y0, x1, y1, class_id in ann.boxes:
        if x0 >= x1 or y0 >= y1:
            raise PreconditionError(f"{ann.image_id}: degenerate box {(x0, y0, x1, y1)}")
        prompt_sets.append(PromptSet(class_id=class_id, box=(x0, y0, x1, y1)))
    return prompt_sets
