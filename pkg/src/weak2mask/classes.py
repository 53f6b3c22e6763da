"""Class vocabulary and the standard VOC colour palette."""
from __future__ import annotations

from pathlib import Path

IGNORE_INDEX = 255
BACKGROUND = 0

VOC_CLASSES = (
    "background", "aeroplane", "bicycle", "bird", "boat", "bottle",
    "bus", "car", "cat", "chair", "cow", "diningtable", "dog", "horse",
    "motorbike", "person", "pottedplant", "sheep", "sofa", "train",
    "tvmonitor",
)


def voc_palette() -> list[int]:
    """Return the 256-entry VOC palette as a flat ``[r, g, b, ...]`` list."""
    palette = []
    for index in range(256):
        r = g = b = 0
        c = index
        for shift in range(7, -1, -1):
            r |= ((c >> 0) & 1) << shift
            g |= ((c >> 1) & 1) << shift
            b |= ((c >> 2) & 1) << shift
            c >>= 3
        palette.extend((r, g, b))
    return palette


def load_class_list(path: str | Path) -> tuple[str, ...]:
    names = [line.strip() for line in Path(path).read_text().splitlines()]
    names = [n for n in names if n]
    if not names:
        raise ValueError(f"class list {path} is empty")
    if len(set(names)) != len(names):
        raise ValueError(f"class list {path} contains duplicate names")
    if len(names) > IGNORE_INDEX:
        raise ValueError("at most 255 classes are supported")
    return tuple(names)


def class_index(token, classes=VOC_CLASSES) -> int:
    """Resolve a class given either as an integer index or a name."""
    if isinstance(token, bool):
        raise ValueError(f"invalid class {token!r}")
    if isinstance(token, int):
        index = token
    elif isinstance(token, str) and token.strip().lstrip("-").isdigit():
        index = int(token)
    elif isinstance(token, str):
        try:
            return classes.index(token.strip())
        except ValueError:
            raise ValueError(f"unknown class name {token!r}") from None
    else:
        raise ValueError(f"invalid class {token!r}")
    if not 0 <= index < len(classes):
        raise ValueError(f"class index {index} out of range [0, {len(classes)})")
    return index
