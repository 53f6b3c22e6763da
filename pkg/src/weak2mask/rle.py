"""Uncompressed COCO-style run-length encoding of binary masks.

The mask is flattened in row-major (C) order, unlike COCO which uses
column-major order.  ``counts`` alternates run lengths of 0s and 1s and
always starts with a run of 0s, which may have length zero.  The counts sum
to ``height * width``.  On the wire::

    {"size": [height, width], "counts": [n0, n1, n0, ...]}
"""
from __future__ import annotations

import numpy as np


def encode(mask: np.ndarray) -> dict:
    mask = np.asarray(mask)
    if mask.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {mask.shape}")
    flat = mask.astype(bool).ravel()
    height, width = mask.shape
    if flat.size == 0:
        return {"size": [height, width], "counts": []}
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return {"size": [int(height), int(width)], "counts": [int(r) for r in runs]}


def decode(rle: dict) -> np.ndarray:
    try:
        height, width = (int(v) for v in rle["size"])
        counts = [int(c) for c in rle["counts"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed RLE: {exc}") from None
    if height < 0 or width < 0 or any(c < 0 for c in counts):
        raise ValueError("RLE sizes and counts must be non-negative")
    if sum(counts) != height * width:
        raise ValueError(f"RLE counts sum to {sum(counts)}, expected {height * width}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    return flat.reshape(height, width)
