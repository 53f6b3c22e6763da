"""Readers and writers for VOC-layout datasets and weak annotations.

Layout under the dataset root::

    JPEGImages/<id>.jpg
    SegmentationClassAug/<id>.png      ground truth, indexed, 255 = ignore
    ImageSets/Segmentation/<split>.txt
    scribbles/<id>.png                 indexed, 255 = unlabeled
    points/<split>.json                {id: [[x, y, class], ...]}
    boxes/<split>.json                 {id: [[xmin, ymin, xmax, ymax, class], ...]}
    image_labels/<split>.json          {id: [class, ...]}

Coordinates are ``(x, y)`` = (column, row).  Box corners are inclusive pixel
coordinates.  Classes in JSON sidecars may be given as indices or VOC names.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image

from .classes import IGNORE_INDEX, VOC_CLASSES, class_index, voc_palette
from .errors import AnnotationError

KINDS = ("image_labels", "points", "scribbles", "boxes")

IMAGE_DIR = "JPEGImages"
GT_DIR = "SegmentationClassAug"
SPLIT_DIR = "ImageSets/Segmentation"
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


@dataclass(frozen=True)
class DatasetIndex:
    split_name: str
    image_ids: tuple[str, ...]
    root_path: Path
    classes: tuple[str, ...] = VOC_CLASSES
    gt_dir: Path | None = None

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def image_path(self, image_id: str) -> Path:
        for suffix in IMAGE_SUFFIXES:
            path = self.root_path / IMAGE_DIR / f"{image_id}{suffix}"
            if path.exists():
                return path
        raise AnnotationError("image file not found", image_id)

    def image_size(self, image_id: str) -> tuple[int, int]:
        """Return ``(height, width)`` without decoding pixel data."""
        with Image.open(self.image_path(image_id)) as im:
            width, height = im.size
        return height, width

    def gt_path(self, image_id: str) -> Path:
        base = self.gt_dir if self.gt_dir is not None else self.root_path / GT_DIR
        return Path(base) / f"{image_id}.png"


@dataclass
class WeakAnnotation:
    """Weak supervision for one image; only the fields of ``kind`` are set."""

    image_id: str
    kind: str
    height: int
    width: int
    image_labels: frozenset[int] | None = None
    points: list[tuple[int, int, int]] | None = None
    scribbles: np.ndarray | None = None
    boxes: list[tuple[int, int, int, int, int]] | None = None
    num_classes: int = field(default=len(VOC_CLASSES), repr=False)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise AnnotationError(f"unknown annotation kind {self.kind!r}", self.image_id)
        populated = {
            name for name in KINDS if getattr(self, name) is not None
        }
        if populated != {self.kind}:
            raise AnnotationError(
                f"annotation of kind {self.kind!r} has fields {sorted(populated)} populated",
                self.image_id,
            )
        h, w, n = self.height, self.width, self.num_classes
        if self.kind == "image_labels":
            for c in self.image_labels:
                if not 1 <= c < n:
                    raise AnnotationError(f"image label {c} out of range", self.image_id)
        elif self.kind == "points":
            for x, y, c in self.points:
                if not (0 <= x < w and 0 <= y < h):
                    raise AnnotationError(f"point ({x}, {y}) outside {w}x{h} image", self.image_id)
                if not 0 <= c < n:
                    raise AnnotationError(f"point class {c} out of range", self.image_id)
        elif self.kind == "scribbles":
            if self.scribbles.shape != (h, w):
                raise AnnotationError(
                    f"scribble map shape {self.scribbles.shape} != image {(h, w)}", self.image_id
                )
            _check_label_values(self.scribbles, n, self.image_id)
        else:
            for x0, y0, x1, y1, c in self.boxes:
                if x0 >= x1 or y0 >= y1:
                    raise AnnotationError(f"degenerate box {(x0, y0, x1, y1)}", self.image_id)
                if x0 < 0 or y0 < 0 or x1 >= w or y1 >= h:
                    raise AnnotationError(
                        f"box {(x0, y0, x1, y1)} outside {w}x{h} image", self.image_id
                    )
                if not 1 <= c < n:
                    raise AnnotationError(f"box class {c} out of range", self.image_id)


def _check_label_values(values: np.ndarray, num_classes: int, image_id: str | None) -> None:
    bad = (values >= num_classes) & (values != IGNORE_INDEX)
    if bad.any():
        found = sorted(set(np.unique(values[bad]).tolist()))
        raise AnnotationError(f"label values {found} out of range", image_id)


def load_dataset_index(root, split: str, classes=VOC_CLASSES, gt_dir=None,
                       check_images: bool = True) -> DatasetIndex:
    root = Path(root)
    split_file = root / SPLIT_DIR / f"{split}.txt"
    if not split_file.is_file():
        raise AnnotationError(f"split file {split_file} does not exist")
    ids: list[str] = []
    seen: set[str] = set()
    for line in split_file.read_text().splitlines():
        image_id = line.strip()
        if not image_id:
            continue
        if image_id in seen:
            raise AnnotationError("duplicate id in split file", image_id)
        seen.add(image_id)
        ids.append(image_id)
    index = DatasetIndex(split, tuple(ids), root, tuple(classes),
                         Path(gt_dir) if gt_dir is not None else None)
    if check_images:
        for image_id in ids:
            index.image_path(image_id)
    return index


@lru_cache(maxsize=16)
def _read_sidecar(path: Path, mtime_ns: int) -> dict:
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"malformed JSON in {path}: {exc}") from None
    if not isinstance(data, dict):
        raise AnnotationError(f"{path} must contain a JSON object keyed by image id")
    return data


def _sidecar_entry(index: DatasetIndex, folder: str, image_id: str):
    path = index.root_path / folder / f"{index.split_name}.json"
    if not path.is_file():
        raise AnnotationError(f"annotation file {path} does not exist", image_id)
    data = _read_sidecar(path, path.stat().st_mtime_ns)
    if image_id not in data:
        raise AnnotationError(f"no entry in {path}", image_id)
    entry = data[image_id]
    if not isinstance(entry, list):
        raise AnnotationError(f"entry in {path} must be a list", image_id)
    return entry


def _int_coord(value, image_id):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise AnnotationError(f"coordinate {value!r} is not an integer", image_id)
    return int(value)


def _resolve_class(token, classes, image_id):
    try:
        return class_index(token, classes)
    except ValueError as exc:
        raise AnnotationError(str(exc), image_id) from None


def load_weak_annotation(index: DatasetIndex, image_id: str, kind: str) -> WeakAnnotation:
    if kind not in KINDS:
        raise AnnotationError(f"unknown annotation kind {kind!r}", image_id)
    height, width = index.image_size(image_id)
    common = dict(image_id=image_id, kind=kind, height=height, width=width,
                  num_classes=index.num_classes)

    if kind == "image_labels":
        entry = _sidecar_entry(index, "image_labels", image_id)
        labels = frozenset(_resolve_class(t, index.classes, image_id) for t in entry)
        return WeakAnnotation(image_labels=labels, **common)

    if kind == "points":
        points = []
        for item in _sidecar_entry(index, "points", image_id):
            if not isinstance(item, list) or len(item) != 3:
                raise AnnotationError(f"malformed point {item!r}", image_id)
            x, y = (_int_coord(v, image_id) for v in item[:2])
            points.append((x, y, _resolve_class(item[2], index.classes, image_id)))
        return WeakAnnotation(points=points, **common)

    if kind == "boxes":
        boxes = []
        for item in _sidecar_entry(index, "boxes", image_id):
            if not isinstance(item, list) or len(item) != 5:
                raise AnnotationError(f"malformed box {item!r}", image_id)
            x0, y0, x1, y1 = (_int_coord(v, image_id) for v in item[:4])
            boxes.append((x0, y0, x1, y1, _resolve_class(item[4], index.classes, image_id)))
        return WeakAnnotation(boxes=boxes, **common)

    path = index.root_path / "scribbles" / f"{image_id}.png"
    if not path.is_file():
        raise AnnotationError(f"scribble file {path} does not exist", image_id)
    scribbles = read_label_png(path, image_id=image_id)
    return WeakAnnotation(scribbles=scribbles, **common)


def read_label_png(path, image_id: str | None = None) -> np.ndarray:
    """Decode an 8-bit indexed (palette or grayscale) PNG to a uint8 array."""
    try:
        with Image.open(path) as im:
            if im.mode not in ("P", "L"):
                raise AnnotationError(f"{path} is not an indexed PNG (mode {im.mode})", image_id)
            return np.array(im, dtype=np.uint8)
    except OSError as exc:
        raise AnnotationError(f"cannot read {path}: {exc}", image_id) from None


def load_gt_label(index: DatasetIndex, image_id: str) -> np.ndarray:
    path = index.gt_path(image_id)
    if not path.is_file():
        raise AnnotationError(f"ground-truth file {path} does not exist", image_id)
    label = read_label_png(path, image_id)
    _check_label_values(label, index.num_classes, image_id)
    return label


def save_label_png(label: np.ndarray, path) -> None:
    """Write a label map as an 8-bit palette PNG using the VOC palette."""
    label = np.asarray(label)
    if label.ndim != 2:
        raise ValueError(f"label map must be 2-D, got shape {label.shape}")
    if label.min(initial=0) < 0 or label.max(initial=0) > 255:
        raise ValueError("label values must fit in uint8")
    height, width = label.shape
    im = Image.frombytes("P", (width, height), np.ascontiguousarray(label, dtype=np.uint8).tobytes())
    im.putpalette(voc_palette())
    im.save(path, format="PNG", optimize=False)
