"""Synthetic VOC-layout datasets with every annotation regime filled in.

Scenes hold 2-4 non-touching rectangles and ellipses drawn from a few object
classes.  Scribbles, points and boxes are derived from the ground truth;
CAMs are Gaussian responses centred on a random interior pixel of each object,
with a random per-object strength and low-frequency noise, so that some
objects are missed and some peaks land off-object.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .annotation_io import GT_DIR, IMAGE_DIR, SPLIT_DIR, save_label_png
from .cam_prompting import cam_path, write_cam
from .classes import IGNORE_INDEX


def _shape_mask(rng, size, shape_kind, cy, cx, hy, hx):
    yy, xx = np.mgrid[:size, :size]
    if shape_kind == "rect":
        return (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    return ((yy - cy) / (hy + 0.5)) ** 2 + ((xx - cx) / (hx + 0.5)) ** 2 <= 1.0


def make_scene(rng, size: int = 64, classes=(1, 2, 3), min_objects: int = 2,
               max_objects: int = 4, margin: int = 4):
    """Return ``(label, objects)`` where each object is ``(class_id, mask)``."""
    n_target = int(rng.integers(min_objects, max_objects + 1))
    label = np.zeros((size, size), dtype=np.uint8)
    occupied = np.zeros((size, size), dtype=bool)
    objects = []
    attempts = 0
    while len(objects) < n_target and attempts < 500:
        attempts += 1
        hy, hx = (int(v) for v in rng.integers(4, 11, size=2))
        cy = int(rng.integers(hy + 1, size - hy - 1))
        cx = int(rng.integers(hx + 1, size - hx - 1))
        kind = "rect" if rng.random() < 0.5 else "ellipse"
        mask = _shape_mask(rng, size, kind, cy, cx, hy, hx)
        grown = ndimage.binary_dilation(mask, iterations=margin)
        if (grown & occupied).any():
            continue
        class_id = int(rng.choice(classes))
        occupied |= mask
        label[mask] = class_id
        objects.append((class_id, mask))
    return label, objects


def _stroke(mask):
    """A 3-pixel-wide plus-shaped stroke through the object's interior centroid."""
    core = ndimage.binary_erosion(mask, iterations=1)
    if not core.any():
        core = mask
    ys, xs = np.nonzero(core)
    cy, cx = int(np.median(ys)), int(np.median(xs))
    stroke = np.zeros_like(mask)
    stroke[cy - 1:cy + 2, :] = True
    stroke[:, cx - 1:cx + 2] = True
    return stroke & core


def make_scribbles(label, objects, rng):
    scribbles = np.full(label.shape, IGNORE_INDEX, dtype=np.uint8)
    for class_id, mask in objects:
        scribbles[_stroke(mask)] = class_id
    background = ndimage.binary_erosion(label == 0, iterations=2)
    size = label.shape[0]
    for row in (3, size // 2, size - 4):
        line = np.zeros_like(background)
        line[row, 3:size - 3] = True
        scribbles[line & background] = 0
    return scribbles


def make_cam(shape, objects, class_id, rng, noise: float = 0.15):
    h, w = shape
    yy, xx = np.mgrid[:h, :w]
    cam = np.zeros(shape, dtype=np.float64)
    for cls, mask in objects:
        if cls != class_id:
            continue
        ys, xs = np.nonzero(mask)
        k = int(rng.integers(len(ys)))
        sy = max(2.0, (ys.max() - ys.min()) / 3)
        sx = max(2.0, (xs.max() - xs.min()) / 3)
        strength = rng.uniform(0.35, 1.0)
        cam += strength * np.exp(-((yy - ys[k]) ** 2 / (2 * sy ** 2) + (xx - xs[k]) ** 2 / (2 * sx ** 2)))
    field = ndimage.gaussian_filter(rng.standard_normal(shape), sigma=4)
    field /= np.abs(field).max() or 1.0
    return cam + noise * field


def make_image(label, rng):
    palette = np.array([[90, 110, 90], [200, 40, 40], [40, 200, 40], [40, 40, 200],
                        [200, 200, 40]], dtype=np.float64)
    base = palette[np.minimum(label, len(palette) - 1)]
    noisy = base + rng.normal(0, 12, base.shape)
    return np.clip(noisy, 0, 255).astype(np.uint8)


def make_synthetic_voc(root, n_images: int = 20, size: int = 64, classes=(1, 2, 3),
                       seed: int = 0, split: str = "train", cam_noise: float = 0.15) -> list[str]:
    """Write a complete synthetic dataset under ``root`` and return its ids."""
    root = Path(root)
    for sub in (IMAGE_DIR, GT_DIR, SPLIT_DIR, "scribbles", "points", "boxes",
                "image_labels", "cams"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    ids, points, boxes, image_labels = [], {}, {}, {}
    for i in range(n_images):
        image_id = f"syn_{i:04d}"
        label, objects = make_scene(rng, size, classes)
        Image.fromarray(make_image(label, rng)).save(root / IMAGE_DIR / f"{image_id}.jpg", quality=95)
        save_label_png(label, root / GT_DIR / f"{image_id}.png")
        save_label_png(make_scribbles(label, objects, rng), root / "scribbles" / f"{image_id}.png")

        pts, bxs = [], []
        for class_id, mask in objects:
            core = ndimage.binary_erosion(mask, iterations=2)
            ys, xs = np.nonzero(core if core.any() else mask)
            k = int(rng.integers(len(ys)))
            pts.append([int(xs[k]), int(ys[k]), class_id])
            ys, xs = np.nonzero(mask)
            bxs.append([int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()), class_id])
        present = sorted({c for c, _ in objects})
        for class_id in present:
            write_cam(cam_path(root, image_id, class_id),
                      make_cam(label.shape, objects, class_id, rng, cam_noise))
        points[image_id], boxes[image_id], image_labels[image_id] = pts, bxs, present
        ids.append(image_id)

    (root / SPLIT_DIR / f"{split}.txt").write_text("".join(f"{i}\n" for i in ids))
    for folder, data in (("points", points), ("boxes", boxes), ("image_labels", image_labels)):
        (root / folder / f"{split}.json").write_text(json.dumps(data, indent=1, sort_keys=True))
    return ids
