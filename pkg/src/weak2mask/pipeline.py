"""Per-image pseudo-label generation and the dataset-level driver."""
from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import cam_prompting as cp
from .annotation_io import load_weak_annotation, save_label_png
from .composer import CONFLICT_POLICIES, UNMASKED_POLICIES, ClassMask, PseudoLabel, compose
from .errors import BackendUnavailable, ConfigError, Weak2MaskError
from .grid_classify import grid_pipeline
from .prompt_strategies import boxes_to_prompts, points_to_prompts, scribbles_to_prompts
from .segmenter import SELECTION_POLICIES, ImageRef, run_prompt_set

log = logging.getLogger(__name__)

STRATEGIES = ("image_labels", "points", "scribbles", "boxes", "grid")
CAM_MODES = ("all", "peaks", "none")


@dataclass
class PipelineConfig:
    strategy: str = "scribbles"
    cam_mode: str = "peaks"
    cam_threshold: float = cp.DEFAULT_THRESHOLD
    peak_radius: int = cp.DEFAULT_RADIUS
    negatives: bool = True
    iterative: bool = False
    batch_size: int = 1
    scribble_fraction: float = 0.2
    seed: int = 0
    selection: str = "third"
    conflict: str = "score"
    unmasked: str = "background"
    grid_stride: int = 32
    dedup_iou: float = 0.9

    def validate(self) -> None:
        choices = {
            "strategy": STRATEGIES, "cam_mode": CAM_MODES, "selection": SELECTION_POLICIES,
            "conflict": CONFLICT_POLICIES, "unmasked": UNMASKED_POLICIES,
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")
        if not 0 < self.cam_threshold < 1:
            raise ConfigError("cam_threshold must lie in (0, 1)")
        if self.peak_radius < 1 or self.batch_size < 1 or self.grid_stride < 1:
            raise ConfigError("peak_radius, batch_size and grid_stride must be >= 1")
        if not 0 < self.scribble_fraction <= 1:
            raise ConfigError("scribble_fraction must lie in (0, 1]")
        if not 0 < self.dedup_iou <= 1:
            raise ConfigError("dedup_iou must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})

    def params_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_cams(index, image_id: str, classes, cam_root=None) -> dict:
    root = Path(cam_root) if cam_root is not None else index.root_path
    cams = {}
    for class_id in sorted(classes):
        path = cp.cam_path(root, image_id, class_id)
        try:
            cams[class_id] = cp.normalize_cam(cp.read_cam(path), class_id)
        except (OSError, ValueError) as exc:
            raise Weak2MaskError(f"{image_id}: cannot load CAM {path}: {exc}") from None
    return cams


def build_prompts(index, image_id: str, config: PipelineConfig, cam_root=None):
    """Return ``(prompt_sets, notes)`` for the prompt-based strategies."""
    notes: dict = {}
    if config.strategy == "image_labels":
        ann = load_weak_annotation(index, image_id, "image_labels")
        if not ann.image_labels:
            return [], {"no_prompts": True}
        cams = load_cams(index, image_id, ann.image_labels, cam_root)
        prompt_sets, dropped = cp.build_cam_prompts(
            cams, config.cam_mode, config.negatives, config.iterative,
            config.cam_threshold, config.peak_radius, config.batch_size)
        if dropped:
            notes["dropped_classes"] = dropped
    elif config.strategy == "points":
        ann = load_weak_annotation(index, image_id, "points")
        prompt_sets = points_to_prompts(ann, config.iterative, config.negatives) if ann.points else []
    elif config.strategy == "scribbles":
        ann = load_weak_annotation(index, image_id, "scribbles")
        prompt_sets = scribbles_to_prompts(ann, config.scribble_fraction, config.iterative,
                                           config.negatives, config.seed, config.batch_size)
    elif config.strategy == "boxes":
        prompt_sets = boxes_to_prompts(load_weak_annotation(index, image_id, "boxes"))
    else:
        raise ConfigError(f"strategy {config.strategy!r} does not produce prompt sets")
    if not prompt_sets:
        notes["no_prompts"] = True
    return prompt_sets, notes


def generate_pseudo_label(index, image_id: str, config: PipelineConfig, backend,
                          classifier=None, cam_root=None):
    height, width = index.image_size(image_id)
    image = ImageRef(image_id, height, width)
    provenance = {"strategy": config.strategy, "params_hash": config.params_hash()}

    if config.strategy == "grid":
        if classifier is None:
            raise ConfigError("the grid strategy needs a classifier")
        ann = load_weak_annotation(index, image_id, "image_labels")
        result = grid_pipeline(backend, classifier, image, ann.image_labels,
                               config.grid_stride, config.dedup_iou, config.selection,
                               config.conflict, config.unmasked)
        result.provenance.update(provenance)
        return result

    if config.strategy == "image_labels" and config.cam_mode == "none":
        ann = load_weak_annotation(index, image_id, "image_labels")
        cams = load_cams(index, image_id, ann.image_labels, cam_root)
        label = cp.cam_to_label(cams, (height, width), config.cam_threshold)
        return PseudoLabel(label, float((label != 0).mean()), 0, provenance)

    prompt_sets, notes = build_prompts(index, image_id, config, cam_root)
    masks = []
    empty = conflicts = 0
    for k, prompt_set in enumerate(prompt_sets):
        proposal = run_prompt_set(backend, image, prompt_set, config.selection)
        conflicts += int(proposal.conflict)
        if not proposal.mask.any():
            empty += 1
            continue
        masks.append(ClassMask(prompt_set.class_id, proposal.mask, proposal.score,
                               f"{config.strategy}:{k}"))
    provenance.update(notes, queries=len(prompt_sets), empty_masks=empty,
                      prompt_conflicts=conflicts)
    return compose(masks, (height, width), config.conflict, config.unmasked, provenance)


def map_images(fn, image_ids, jobs: int = 1):
    """Apply ``fn`` to each id, returning results in input order."""
    if jobs <= 1:
        return [fn(i) for i in image_ids]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, image_ids))


def generate_dataset(index, config: PipelineConfig, backend, out_dir, classifier=None,
                     jobs: int = 1, cam_root=None, extra_manifest: dict | None = None) -> dict:
    """Write ``<out>/<id>.png`` for every image plus ``<out>/manifest.json``.

    Per-image failures are recorded under ``skipped``; an unreachable backend
    aborts the run.
    """
    config.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def work(image_id):
        try:
            result = generate_pseudo_label(index, image_id, config, backend, classifier, cam_root)
        except BackendUnavailable:
            raise
        except (Weak2MaskError, ValueError, OSError) as exc:
            log.warning("image %s failed: %s", image_id, exc)
            return image_id, None, f"{type(exc).__name__}: {exc}"
        save_label_png(result.label, out_dir / f"{image_id}.png")
        return image_id, result, None

    images = {}
    skipped = {}
    for image_id, result, reason in map_images(work, index.image_ids, jobs):
        if result is None:
            skipped[image_id] = reason
            continue
        images[image_id] = {
            "coverage": round(result.coverage, 6),
            "conflicts": result.conflicts,
            **{k: v for k, v in result.provenance.items() if k not in ("strategy", "params_hash")},
        }
    manifest = {
        "params_hash": config.params_hash(),
        "config": {**(extra_manifest or {}), **asdict(config)},
        "split": index.split_name,
        "num_images": len(index.image_ids),
        "images": images,
        "skipped": skipped,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
