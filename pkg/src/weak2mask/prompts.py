"""Prompt container shared by every prompting strategy."""
from __future__ import annotations

from dataclasses import dataclass, field

Point = tuple[int, int]
Box = tuple[int, int, int, int]


@dataclass
class PromptSet:
    """Prompts for one (image, class) query.

    ``schedule`` lists batches of indices into ``positives``; refinement feeds
    the batches to the segmenter in order.  Box-only prompt sets have an empty
    schedule.
    """

    class_id: int
    positives: list[Point] = field(default_factory=list)
    negatives: list[Point] = field(default_factory=list)
    box: Box | None = None
    schedule: list[list[int]] = field(default_factory=list)

    def validate(self, height: int, width: int) -> None:
        if not self.positives and self.box is None:
            raise ValueError(f"prompt set for class {self.class_id} has no positives and no box")
        if set(self.positives) & set(self.negatives):
            raise ValueError(f"prompt set for class {self.class_id} has overlapping positives and negatives")
        for x, y in self.positives + self.negatives:
            if not (0 <= x < width and 0 <= y < height):
                raise ValueError(f"point ({x}, {y}) outside {width}x{height} image")
        if self.box is not None:
            x0, y0, x1, y1 = self.box
            if not (0 <= x0 < x1 < width and 0 <= y0 < y1 < height):
                raise ValueError(f"box {self.box} invalid for {width}x{height} image")
        flat = sorted(i for batch in self.schedule for i in batch)
        if self.positives and flat != list(range(len(self.positives))):
            raise ValueError("schedule does not partition the positive list")


def make_schedule(n: int, iterative: bool, batch_size: int = 1) -> list[list[int]]:
    if n == 0:
        return []
    if not iterative:
        return [list(range(n))]
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    return [list(range(i, min(i + batch_size, n))) for i in range(0, n, batch_size)]


def exclude(points, banned) -> list[Point]:
    """Drop duplicates and any point in ``banned``, keeping first-seen order."""
    banned = set(banned)
    out: list[Point] = []
    seen: set[Point] = set()
    for p in points:
        if p in banned or p in seen:
            continue
        seen.add(p)
        out.append(p)
    return out
