"""Point prompts from class activation maps.

CAM files live at ``cams/<id>_<class>.npyish`` where ``<class>`` is the
integer class index.  Byte layout, all little-endian::

    offset 0   4 bytes   magic b"CAMF"
    offset 4   u32       height
    offset 8   u32       width
    offset 12  f32 * height * width, row-major
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .prompts import PromptSet, exclude, make_schedule

log = logging.getLogger(__name__)

CAM_MAGIC = b"CAMF"
_HEADER = struct.Struct("<4sII")

DEFAULT_THRESHOLD = 0.7
DEFAULT_RADIUS = 8


@dataclass
class ScoreMap:
    class_id: int
    values: np.ndarray


def write_cam(path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype="<f4")
    if values.ndim != 2:
        raise ValueError("CAM must be 2-D")
    height, width = values.shape
    with open(path, "wb") as f:
        f.write(_HEADER.pack(CAM_MAGIC, height, width))
        f.write(np.ascontiguousarray(values).tobytes())


def read_cam(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated CAM header")
    magic, height, width = _HEADER.unpack_from(data)
    if magic != CAM_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 4 * height * width
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    return values.reshape(height, width).astype(np.float64)


def cam_path(root, image_id: str, class_id: int) -> Path:
    return Path(root) / "cams" / f"{image_id}_{class_id}.npyish"


def normalize_cam(raw, class_id: int = 0) -> ScoreMap:
    """Min-max normalise to [0, 1]; constant maps become all zeros."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.size == 0:
        raise ValueError("CAM is empty")
    if not np.isfinite(raw).all():
        raise ValueError("CAM contains NaN or Inf")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return ScoreMap(class_id, np.zeros_like(raw))
    values = (raw - lo) / (hi - lo)
    return ScoreMap(class_id, np.clip(values, 0.0, 1.0))


def confident_pixels(cam: ScoreMap, threshold: float) -> list[tuple[int, int]]:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    ys, xs = np.nonzero(cam.values >= threshold)
    return list(zip(xs.tolist(), ys.tolist()))


def _half_footprint(radius: int) -> np.ndarray:
    # Offsets that precede the centre in row-major order.
    size = 2 * radius + 1
    fp = np.zeros((size, size), dtype=bool)
    fp[:radius, :] = True
    fp[radius, :radius] = True
    return fp


def sample_local_peaks(cam: ScoreMap, threshold: float, radius: int = DEFAULT_RADIUS) -> list[tuple[int, int]]:
    """Pixels above ``threshold`` that dominate their Chebyshev neighbourhood.

    A pixel survives when no neighbour within ``radius`` exceeds it and no
    neighbour preceding it in row-major order equals it, so a plateau keeps
    only its first pixel.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    values = cam.values
    size = 2 * radius + 1
    full = ndimage.maximum_filter(values, size=size, mode="constant", cval=-np.inf)
    before = ndimage.maximum_filter(values, footprint=_half_footprint(radius),
                                    mode="constant", cval=-np.inf)
    keep = (values >= threshold) & (values >= full) & (values > before)
    ys, xs = np.nonzero(keep)
    return list(zip(xs.tolist(), ys.tolist()))


def build_cam_prompts(cams, mode: str = "peaks", use_negatives: bool = False,
                      iterative: bool = False, threshold: float = DEFAULT_THRESHOLD,
                      radius: int = DEFAULT_RADIUS, batch_size: int = 1):
    """Build one PromptSet per class from normalised CAMs.

    ``cams`` maps class id to ScoreMap (or is a list of ScoreMaps).  Returns
    ``(prompt_sets, dropped)`` where ``dropped`` lists classes whose sampling
    produced no positives.
    """
    if isinstance(cams, dict):
        cams = [cams[c] for c in sorted(cams)]
    else:
        cams = sorted(cams, key=lambda m: m.class_id)
    if not cams:
        raise ValueError("at least one class must be present")
    if mode in ("all", "all_confident"):
        sampled = {m.class_id: confident_pixels(m, threshold) for m in cams}
    elif mode == "peaks":
        sampled = {m.class_id: sample_local_peaks(m, threshold, radius) for m in cams}
    else:
        raise ValueError(f"unknown CAM mode {mode!r}")

    dropped = [c for c, pts in sampled.items() if not pts]
    if dropped:
        log.info("classes %s produced no CAM prompts", dropped)
    prompt_sets = []
    for class_id, positives in sampled.items():
        if not positives:
            continue
        negatives: list[tuple[int, int]] = []
        if use_negatives:
            others = [p for c, pts in sampled.items() if c != class_id for p in pts]
            negatives = exclude(others, positives)
        prompt_sets.append(PromptSet(
            class_id=class_id,
            positives=list(positives),
            negatives=negatives,
            schedule=make_schedule(len(positives), iterative, batch_size),
        ))
    return prompt_sets, dropped


def cam_to_label(cams, shape, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """CAM-only pseudo label: arg-max class where its score reaches ``threshold``."""
    label = np.zeros(shape, dtype=np.uint8)
    if isinstance(cams, dict):
        cams = list(cams.values())
    if not cams:
        return label
    cams = sorted(cams, key=lambda m: m.class_id)
    stack = np.stack([m.values for m in cams])
    ids = np.array([m.class_id for m in cams], dtype=np.uint8)
    best = stack.argmax(axis=0)
    confident = stack.max(axis=0) >= threshold
    label[confident] = ids[best[confident]]
    return label
