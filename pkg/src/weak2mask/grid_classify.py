"""Label-free masks from a strided point grid, classified per mask."""
from __future__ import annotations

import numpy as np

from .classes import BACKGROUND, IGNORE_INDEX
from .composer import ClassMask, compose
from .errors import AnnotationError, ImageNotFound, PreconditionError
from .segmenter import SegmenterQuery, select_mask

DEFAULT_STRIDE = 32
DEFAULT_DEDUP_IOU = 0.9


def generate_grid_points(width: int, height: int, stride: int = DEFAULT_STRIDE) -> list[tuple[int, int]]:
    """Points at ``stride // 2 + i * stride`` on both axes, row-major.

    An axis shorter than half a stride gets a single point at its centre.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")

    def axis(n):
        coords = list(range(stride // 2, n, stride))
        return coords or [n // 2]

    xs, ys = axis(width), axis(height)
    return [(x, y) for y in ys for x in xs]


class Classifier:
    def classify(self, image, mask, candidates) -> tuple[int, float]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class MockClassifier(Classifier):
    """Majority ground-truth class under the mask, restricted to ``candidates``."""

    def __init__(self, gt_source):
        self._lookup = gt_source if callable(gt_source) else gt_source.__getitem__

    def classify(self, image, mask, candidates):
        candidates = sorted(set(candidates))
        if not candidates or BACKGROUND not in candidates:
            raise PreconditionError("candidate classes must be non-empty and include background")
        try:
            gt = np.asarray(self._lookup(image.image_id))
        except (LookupError, OSError, AnnotationError) as exc:
            raise ImageNotFound(f"no ground truth for image {image.image_id!r}") from exc
        values = gt[np.asarray(mask, dtype=bool)]
        values = values[values != IGNORE_INDEX]
        counts = np.bincount(values, minlength=max(candidates) + 1)
        allowed = np.array([counts[c] for c in candidates])
        if values.size == 0 or allowed.max() == 0:
            return BACKGROUND, 0.0
        best = int(allowed.argmax())
        return candidates[best], float(allowed[best] / values.size)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)


def dedup_masks(proposals, dedup_iou: float = DEFAULT_DEDUP_IOU):
    """Collapse near-duplicate masks, keeping the highest-scoring one per group.

    Masks are grouped by single linkage over pairs with IoU >= ``dedup_iou``;
    input order breaks score ties.  Grouping (rather than greedy suppression)
    keeps the survivor count monotone in the threshold.  ``dedup_iou >= 1``
    disables the step.
    """
    n = len(proposals)
    if dedup_iou >= 1.0 or n < 2:
        return list(proposals)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if mask_iou(proposals[i].mask, proposals[j].mask) >= dedup_iou:
                parent[find(j)] = find(i)
    best: dict[int, int] = {}
    for i in range(n):
        root = find(i)
        if root not in best or proposals[i].score > proposals[best[root]].score:
            best[root] = i
    return [proposals[i] for i in sorted(best.values())]


def grid_pipeline(backend, classifier, image, image_labels, stride: int = DEFAULT_STRIDE,
                  dedup_iou: float = DEFAULT_DEDUP_IOU, selection: str = "third",
                  conflict: str = "score", unmasked: str = "background"):
    if not image_labels:
        raise PreconditionError(f"{image.image_id}: image labels are empty")
    proposals = []
    for point in generate_grid_points(image.width, image.height, stride):
        selected = select_mask(backend.predict(SegmenterQuery(image, [point])), selection)
        if selected.mask.any():
            proposals.append(selected)
    survivors = dedup_masks(proposals, dedup_iou)
    candidates = set(image_labels) | {BACKGROUND}
    class_masks = []
    for k, proposal in enumerate(survivors):
        class_id, confidence = classifier.classify(image, proposal.mask, candidates)
        if class_id not in candidates:
            raise PreconditionError(f"classifier returned class {class_id} outside candidates")
        if class_id == BACKGROUND:
            continue
        class_masks.append(ClassMask(class_id, proposal.mask, confidence, f"grid:{k}"))
    return compose(class_masks, (image.height, image.width), conflict, unmasked,
                   {"strategy": "grid", "masks": len(proposals), "kept": len(survivors)})
