"""Confusion-matrix mIoU and the ablation-grid runner."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .annotation_io import load_gt_label
from .classes import BACKGROUND, IGNORE_INDEX
from .errors import BackendUnavailable, ConfigError, PreconditionError, Weak2MaskError
from .pipeline import PipelineConfig, generate_pseudo_label, map_images

log = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    """Rows index ground truth, columns index prediction."""

    num_classes: int
    counts: np.ndarray = None

    def __post_init__(self):
        if self.counts is None:
            self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ValueError("confusion matrices have different class counts")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)


def accumulate(cm: ConfusionMatrix, gt, pred, ignore_pred_255: bool = False) -> ConfusionMatrix:
    """Add one image to ``cm`` in place and return it.

    Pixels with ground truth 255 are skipped.  Predicted 255 counts as
    background unless ``ignore_pred_255`` is set, in which case the pixel is
    skipped.
    """
    gt = np.asarray(gt)
    pred = np.asarray(pred)
    if gt.shape != pred.shape:
        raise ValueError(f"ground truth {gt.shape} and prediction {pred.shape} differ in shape")
    n = cm.num_classes
    valid = gt != IGNORE_INDEX
    if ignore_pred_255:
        valid &= pred != IGNORE_INDEX
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    p[p == IGNORE_INDEX] = BACKGROUND
    if g.size and (g.max() >= n or p.max() >= n or min(g.min(), p.min()) < 0):
        raise ValueError(f"label values outside [0, {n}) or 255")
    cm.counts += np.bincount(n * g + p, minlength=n * n).reshape(n, n)
    return cm


@dataclass
class EvaluationResult:
    per_class_iou: list  # float, or None when the class is absent from GT and prediction
    miou: float
    pixels: int
    class_names: tuple = ()

    def report(self) -> str:
        lines = []
        for c, iou in enumerate(self.per_class_iou):
            name = self.class_names[c] if c < len(self.class_names) else str(c)
            value = "   n/a" if iou is None else f"{100 * iou:6.2f}"
            lines.append(f"{name:>14s} {value}")
        lines.append(f"{'mIoU':>14s} {100 * self.miou:6.2f}")
        return "\n".join(lines)


def miou(cm: ConfusionMatrix, include_background: bool = True, class_names=()) -> EvaluationResult:
    if cm.total == 0:
        raise PreconditionError("confusion matrix is empty")
    counts = cm.counts.astype(np.float64)
    diag = np.diag(counts)
    denom = counts.sum(axis=1) + counts.sum(axis=0) - diag
    per_class = [None if d == 0 else float(i / d) for i, d in zip(diag, denom)]
    used = [v for c, v in enumerate(per_class)
            if v is not None and (include_background or c != BACKGROUND)]
    mean = math.fsum(used) / len(used) if used else 0.0
    return EvaluationResult(per_class, mean, cm.total, tuple(class_names))


# Column layout of the settings table.
TABLE_COLUMNS = ("Annotations", "All confident pixels", "Sample confident pixels",
                 "Iterative input", "Negative points", "mIoU_train")
ANNOTATION_TITLES = {"image_labels": "Image-level labels", "points": "Points",
                     "scribbles": "Scribbles", "boxes": "Bounding boxes", "grid": "Grid + classifier"}


@dataclass(frozen=True)
class AblationSetting:
    annotation: str
    all_confident: bool = False
    sample_confident: bool = False
    iterative: bool = False
    negatives: bool = False

    def validate(self) -> None:
        if self.annotation not in ANNOTATION_TITLES:
            raise ConfigError(f"unknown annotation kind {self.annotation!r}")
        if self.all_confident and self.sample_confident:
            raise ConfigError("a setting cannot use both all and sampled confident pixels")
        if self.annotation in ("points", "boxes") and not self.all_confident:
            raise ConfigError(f"{self.annotation} settings must use all annotated pixels")
        if self.annotation == "scribbles" and not (self.all_confident or self.sample_confident):
            raise ConfigError("scribble settings must choose all or sampled pixels")
        if self.annotation == "boxes" and (self.iterative or self.negatives):
            raise ConfigError("box prompts take neither iterative input nor negative points")
        if self.annotation == "image_labels" and not (self.all_confident or self.sample_confident) \
                and (self.iterative or self.negatives):
            raise ConfigError("the CAM-only setting takes no prompt options")

    def apply(self, base: PipelineConfig) -> PipelineConfig:
        cfg = replace(base, strategy=self.annotation, iterative=self.iterative,
                      negatives=self.negatives)
        if self.annotation == "image_labels":
            cfg.cam_mode = "all" if self.all_confident else "peaks" if self.sample_confident else "none"
        elif self.annotation == "scribbles" and self.all_confident:
            cfg.scribble_fraction = 1.0
        return cfg

    @classmethod
    def from_dict(cls, data: dict) -> "AblationSetting":
        allowed = {"annotation", "all_confident", "sample_confident", "iterative", "negatives"}
        unknown = set(data) - allowed
        if unknown:
            raise ConfigError(f"unknown ablation keys {sorted(unknown)}")
        setting = cls(**data)
        setting.validate()
        return setting


def _s(annotation, all_c=False, sample=False, it=False, neg=False):
    return AblationSetting(annotation, all_c, sample, it, neg)


STANDARD_SETTINGS = (
    _s("image_labels"),
    _s("image_labels", all_c=True),
    _s("image_labels", sample=True),
    _s("image_labels", sample=True, it=True),
    _s("image_labels", sample=True, neg=True),
    _s("points", all_c=True),
    _s("points", all_c=True, it=True),
    _s("points", all_c=True, it=True, neg=True),
    _s("scribbles", all_c=True),
    _s("scribbles", sample=True),
    _s("scribbles", sample=True, it=True),
    _s("scribbles", sample=True, it=True, neg=True),
    _s("boxes", all_c=True),
)

# Published pseudo-label mIoU (%) on VOC 2012 train for the rows above.
REFERENCE_MIOU = (47.1, 50.9, 61.5, 59.4, 61.9, 69.2, 71.7, 71.5,
                     74.6, 81.0, 84.3, 89.7, 91.5)


@dataclass
class AblationRow:
    setting: AblationSetting
    miou: float | None
    error: str | None = None
    result: EvaluationResult | None = field(default=None, repr=False)


def evaluate_config(index, config: PipelineConfig, backend, classifier=None, jobs: int = 1,
                    cam_root=None, ignore_pred_255: bool = False,
                    include_background: bool = True) -> EvaluationResult:
    """Run the pipeline in memory over ``index`` and score it against GT."""
    config.validate()

    def work(image_id):
        pseudo = generate_pseudo_label(index, image_id, config, backend, classifier, cam_root)
        cm = ConfusionMatrix(index.num_classes)
        return accumulate(cm, load_gt_label(index, image_id), pseudo.label, ignore_pred_255)

    total = ConfusionMatrix(index.num_classes)
    for cm in map_images(work, index.image_ids, jobs):
        total = total + cm
    return miou(total, include_background, index.classes)


def run_ablation(index, settings, backend, base: PipelineConfig | None = None,
                 classifier=None, jobs: int = 1, cam_root=None,
                 ignore_pred_255: bool = False, include_background: bool = True) -> list[AblationRow]:
    """Evaluate each setting; a failing setting is recorded and the rest continue."""
    base = base or PipelineConfig()
    rows = []
    for setting in settings:
        try:
            setting.validate()
            result = evaluate_config(index, setting.apply(base), backend, classifier, jobs,
                                     cam_root, ignore_pred_255, include_background)
        except BackendUnavailable:
            raise
        except (Weak2MaskError, ValueError, OSError) as exc:
            log.warning("setting %s failed: %s", setting, exc)
            rows.append(AblationRow(setting, None, f"{type(exc).__name__}: {exc}"))
            continue
        rows.append(AblationRow(setting, result.miou, None, result))
    return rows


def _row_cells(row: AblationRow) -> list[str]:
    s = row.setting
    mark = lambda flag: "x" if flag else ""  # noqa: E731
    value = "failed" if row.miou is None else f"{100 * row.miou:.1f}"
    return [ANNOTATION_TITLES[s.annotation], mark(s.all_confident), mark(s.sample_confident),
            mark(s.iterative), mark(s.negatives), value]


def table_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    for row in rows:
        writer.writerow(_row_cells(row))
    return buf.getvalue()


def table_text(rows) -> str:
    cells = [list(TABLE_COLUMNS)] + [_row_cells(r) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(TABLE_COLUMNS))]
    lines = [" | ".join(c.center(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "-+-".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
