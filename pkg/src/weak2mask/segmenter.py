"""Promptable-segmenter interface, mask selection, and the refinement loop.

Two in-process backends are provided: :class:`OracleSegmenter`, which answers
from ground-truth connected components, and :class:`DegradedOracleSegmenter`,
which blurs the oracle's answer by a dilation that shrinks as more prompt
points are given.  The out-of-process adapter lives in :mod:`.external`.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .classes import IGNORE_INDEX
from .errors import AnnotationError, BackendError, ImageNotFound, MalformedResponse, PreconditionError

SELECTION_POLICIES = ("third", "best_score")
ORACLE_SCORES = (0.9, 0.8, 0.7)
_STRUCT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ImageRef:
    image_id: str
    height: int
    width: int


@dataclass
class SegmenterQuery:
    image: ImageRef
    positives: list[tuple[int, int]] = field(default_factory=list)
    negatives: list[tuple[int, int]] = field(default_factory=list)
    box: tuple[int, int, int, int] | None = None
    state: bytes | None = None

    def validate(self) -> None:
        if not self.positives and self.box is None:
            raise PreconditionError(
                f"{self.image.image_id}: query needs at least one positive point or a box"
            )
        h, w = self.image.height, self.image.width
        for x, y in list(self.positives) + list(self.negatives):
            if not (0 <= x < w and 0 <= y < h):
                raise PreconditionError(f"{self.image.image_id}: point ({x}, {y}) out of bounds")
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if not (0 <= x0 < x1 < w and 0 <= y0 < y1 < h):
                raise PreconditionError(f"{self.image.image_id}: invalid box {self.box}")


@dataclass
class MaskProposal:
    mask: np.ndarray
    score: float
    rank: int
    state: bytes | None = None
    conflict: bool = False


class Segmenter:
    """Base class for promptable segmenters.

    ``concurrent`` declares whether :meth:`predict` may be called from several
    threads at once; backends that set it to False are called single-flight.
    """

    concurrent = True

    def predict(self, query: SegmenterQuery) -> list[MaskProposal]:
        query.validate()
        return self._predict(query)

    def _predict(self, query: SegmenterQuery) -> list[MaskProposal]:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def select_mask(proposals, policy: str = "third") -> MaskProposal:
    """Pick one of the three proposals; ``third`` takes rank 2."""
    if policy not in SELECTION_POLICIES:
        raise ValueError(f"unknown selection policy {policy!r}")
    if len(proposals) != 3:
        raise MalformedResponse(f"expected 3 proposals, got {len(proposals)}")
    ranks = [p.rank for p in proposals]
    if sorted(ranks) != [0, 1, 2]:
        raise MalformedResponse(f"proposal ranks must be exactly {{0, 1, 2}}, got {ranks}")
    if policy == "third":
        return next(p for p in proposals if p.rank == 2)
    return max(sorted(proposals, key=lambda p: p.rank), key=lambda p: p.score)


def refine(backend: Segmenter, query: SegmenterQuery, schedule, policy: str = "third") -> MaskProposal:
    """Feed positive batches one call at a time, carrying state and all earlier points."""
    if not schedule:
        raise PreconditionError("refinement schedule is empty")
    sent: list[tuple[int, int]] = []
    state = query.state
    selected = None
    for step, batch in enumerate(schedule, start=1):
        sent.extend(query.positives[i] for i in batch)
        step_query = replace(query, positives=list(sent), state=state)
        try:
            selected = select_mask(backend.predict(step_query), policy)
        except BackendError as exc:
            exc.step = step
            exc.args = (f"refinement step {step}: {exc.args[0] if exc.args else exc}",)
            raise
        except PreconditionError:
            raise
        except Exception as exc:
            raise BackendError(f"refinement step {step}: {exc}", step=step) from exc
        state = selected.state
    return selected


def run_prompt_set(backend: Segmenter, image: ImageRef, prompt_set, policy: str = "third") -> MaskProposal:
    """Single predict+select, or refinement when the schedule has several batches."""
    query = SegmenterQuery(image, list(prompt_set.positives), list(prompt_set.negatives),
                           prompt_set.box)
    if len(prompt_set.schedule) > 1:
        return refine(backend, query, prompt_set.schedule, policy)
    return select_mask(backend.predict(query), policy)


def _as_lookup(gt_source):
    if callable(gt_source):
        return gt_source
    return gt_source.__getitem__


def _box_region(box, shape) -> np.ndarray:
    x0, y0, x1, y1 = box
    region = np.zeros(shape, dtype=bool)
    region[y0:y1 + 1, x0:x1 + 1] = True
    return region


class OracleSegmenter(Segmenter):
    """Answers queries from connected components of the ground-truth map.

    Rank 2 is the union of components (any class, 255 excluded) hit by a
    positive point, minus components hit by a negative point.  A box query
    selects the component with the largest area inside the box, clipped to
    it.  Rank 0 is rank 2 eroded by one pixel and rank 1 is rank 2 dilated
    by one pixel.
    """

    def __init__(self, gt_source):
        self._lookup = _as_lookup(gt_source)
        self._cache: dict[str, np.ndarray] = {}
        self._lock = threading.Lock()

    def components(self, image_id: str) -> np.ndarray:
        with self._lock:
            cached = self._cache.get(image_id)
        if cached is not None:
            return cached
        try:
            gt = np.asarray(self._lookup(image_id))
        except (LookupError, OSError, AnnotationError) as exc:
            raise ImageNotFound(f"no ground truth for image {image_id!r}") from exc
        comp = np.zeros(gt.shape, dtype=np.int32)
        offset = 0
        for value in np.unique(gt).tolist():
            if value == IGNORE_INDEX:
                continue
            labeled, n = ndimage.label(gt == value)
            comp[labeled > 0] = labeled[labeled > 0] + offset
            offset += n
        with self._lock:
            self._cache[image_id] = comp
        return comp

    def _base_mask(self, query: SegmenterQuery):
        comp = self.components(query.image.image_id)
        if comp.shape != (query.image.height, query.image.width):
            raise PreconditionError(
                f"{query.image.image_id}: query size {(query.image.height, query.image.width)} "
                f"!= ground truth {comp.shape}"
            )
        pos = {int(comp[y, x]) for x, y in query.positives} - {0}
        neg = {int(comp[y, x]) for x, y in query.negatives} - {0}
        mask = np.isin(comp, sorted(pos - neg))
        if query.box is not None:
            region = _box_region(query.box, comp.shape)
            counts = np.bincount(comp[region], minlength=comp.max() + 1)
            counts[0] = 0
            if counts.max() > 0:
                mask |= comp == int(counts.argmax())
            mask &= region
        return mask, comp, neg, bool(pos & neg)

    def _proposals(self, mask, conflict):
        eroded = ndimage.binary_erosion(mask, _STRUCT, border_value=1)
        dilated = ndimage.binary_dilation(mask, _STRUCT)
        return [
            MaskProposal(m, s, r, None, conflict)
            for r, (m, s) in enumerate(zip((eroded, dilated, mask), ORACLE_SCORES))
        ]

    def _predict(self, query):
        mask, _, _, conflict = self._base_mask(query)
        return self._proposals(mask, conflict)


class DegradedOracleSegmenter(OracleSegmenter):
    """Oracle whose masks bleed outward by ``k`` pixels.

    ``k = max(min_dilation, ceil(max_dilation / n))`` where ``n`` counts
    positive and negative points plus ``box_weight`` for a box.  Box queries
    stay clipped to the box.
    """

    def __init__(self, gt_source, max_dilation: int = 4, min_dilation: int = 1,
                 box_weight: int = 4):
        super().__init__(gt_source)
        self.max_dilation = max_dilation
        self.min_dilation = min_dilation
        self.box_weight = box_weight

    def dilation(self, query: SegmenterQuery) -> int:
        n = len(query.positives) + len(query.negatives)
        if query.box is not None:
            n += self.box_weight
        return max(self.min_dilation, math.ceil(self.max_dilation / max(n, 1)))

    def _predict(self, query):
        mask, comp, _, conflict = self._base_mask(query)
        k = self.dilation(query)
        if k > 0 and mask.any():
            mask = ndimage.binary_dilation(mask, _STRUCT, iterations=k)
            if query.box is not None:
                mask &= _box_region(query.box, comp.shape)
        return self._proposals(mask, conflict)
