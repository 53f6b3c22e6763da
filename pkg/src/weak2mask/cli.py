"""Command-line entry point: ``generate``, ``evaluate``, ``ablate``,
``export-protocol-docs`` and ``make-synthetic``.

Settings come from built-in defaults, then a JSON config file (``--config``),
then the ``WEAK2MASK_BACKEND`` / ``WEAK2MASK_CLASSIFIER`` environment
variables, then command-line flags.  A ``manifest.json`` written by
``generate`` is itself a valid config file.

Exit codes: 0 success, 2 configuration error, 3 backend error,
4 partial failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import cam_prompting, external, rle
from .annotation_io import load_dataset_index, load_gt_label, read_label_png
from .classes import VOC_CLASSES, load_class_list
from .errors import AnnotationError, BackendError, ConfigError, Weak2MaskError
from .evaluation import (STANDARD_SETTINGS, AblationSetting, ConfusionMatrix, accumulate, miou,
                         run_ablation, table_csv, table_text)
from .grid_classify import MockClassifier
from .pipeline import CAM_MODES, STRATEGIES, PipelineConfig, generate_dataset
from .segmenter import DegradedOracleSegmenter, OracleSegmenter

log = logging.getLogger("weak2mask")

EXIT_OK, EXIT_CONFIG, EXIT_BACKEND, EXIT_PARTIAL = 0, 2, 3, 4
ENV_BACKEND = "WEAK2MASK_BACKEND"
ENV_CLASSIFIER = "WEAK2MASK_CLASSIFIER"

RUN_DEFAULTS = {
    "root": None,
    "split": "train",
    "gt_dir": None,
    "cam_root": None,
    "classes": None,
    "backend": "oracle",
    "classifier": "mock",
    "oracle_max_dilation": 4,
    "oracle_min_dilation": 1,
    "oracle_box_weight": 4,
    "jobs": 1,
    "ignore_pred_255": False,
    "include_background": True,
}
PIPELINE_KEYS = {f.name for f in fields(PipelineConfig)}
# Keys that do not influence outputs and stay out of the manifest.
VOLATILE_KEYS = {"out", "jobs", "config"}
NON_SETTING_ARGS = {"command", "func", "config", "verbose", "grid", "csv"}


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    if "config" in data and "params_hash" in data:
        data = data["config"]
    unknown = set(data) - PIPELINE_KEYS - set(RUN_DEFAULTS) - {"out"}
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    return data


def resolve_settings(args) -> dict:
    """Merge defaults < config file < environment < explicit flags."""
    settings = dict(RUN_DEFAULTS)
    settings.update(asdict(PipelineConfig()))
    if getattr(args, "config", None):
        settings.update(load_config_file(args.config))
    if os.environ.get(ENV_BACKEND):
        settings["backend"] = os.environ[ENV_BACKEND]
    if os.environ.get(ENV_CLASSIFIER):
        settings["classifier"] = os.environ[ENV_CLASSIFIER]
    for key, value in vars(args).items():
        if value is not None and key not in NON_SETTING_ARGS:
            settings[key] = value
    return settings


def pipeline_config(settings) -> PipelineConfig:
    try:
        config = PipelineConfig.from_dict(settings)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    config.validate()
    return config


def class_names(spec) -> tuple[str, ...]:
    if spec is None:
        return VOC_CLASSES
    if isinstance(spec, int) or str(spec).isdigit():
        n = int(spec)
        if n <= len(VOC_CLASSES):
            return VOC_CLASSES[:n]
        return tuple(str(i) for i in range(n))
    try:
        return load_class_list(spec)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"bad class list {spec!r}: {exc}") from None


def open_index(settings):
    if not settings.get("root"):
        raise ConfigError("--root is required")
    try:
        return load_dataset_index(settings["root"], settings["split"],
                                  class_names(settings.get("classes")), settings.get("gt_dir"))
    except AnnotationError as exc:
        raise ConfigError(str(exc)) from None


def make_backend(spec: str, index, settings):
    lookup = lambda image_id: load_gt_label(index, image_id)  # noqa: E731
    if spec == "oracle":
        return OracleSegmenter(lookup)
    if spec == "degraded-oracle":
        return DegradedOracleSegmenter(lookup, settings["oracle_max_dilation"],
                                       settings["oracle_min_dilation"],
                                       settings["oracle_box_weight"])
    if spec.startswith("external:"):
        return external.ExternalSegmenter(spec[len("external:"):])
    raise ConfigError(f"unknown backend {spec!r} (oracle, degraded-oracle, external:<endpoint>)")


def make_classifier(spec: str, index):
    if spec == "mock":
        return MockClassifier(lambda image_id: load_gt_label(index, image_id))
    if spec.startswith("external:"):
        def load_pixels(image_id):
            from PIL import Image

            with Image.open(index.image_path(image_id)) as im:
                return np.array(im.convert("RGB"))

        return external.ExternalClassifier(spec[len("external:"):], index.classes, load_pixels)
    raise ConfigError(f"unknown classifier {spec!r} (mock, external:<endpoint>)")


def manifest_settings(settings) -> dict:
    return {k: v for k, v in settings.items() if k not in VOLATILE_KEYS}


def cmd_generate(args) -> int:
    settings = resolve_settings(args)
    if not settings.get("out"):
        raise ConfigError("--out is required")
    config = pipeline_config(settings)
    index = open_index(settings)
    backend = make_backend(settings["backend"], index, settings)
    classifier = make_classifier(settings["classifier"], index) if config.strategy == "grid" else None
    try:
        manifest = generate_dataset(index, config, backend, settings["out"], classifier,
                                    settings["jobs"], settings.get("cam_root"),
                                    manifest_settings(settings))
    finally:
        backend.close()
        if classifier is not None:
            classifier.close()
    written = len(manifest["images"])
    print(f"wrote {written} pseudo labels to {settings['out']} (params {manifest['params_hash']})")
    if manifest["skipped"]:
        for image_id, reason in manifest["skipped"].items():
            print(f"failed {image_id}: {reason}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def _evaluate_ids(args, gt_dir: Path):
    if args.split is None:
        return sorted(p.stem for p in gt_dir.glob("*.png"))
    split = Path(args.split)
    if not split.is_file() and args.root:
        split = Path(args.root) / "ImageSets/Segmentation" / f"{args.split}.txt"
    if not split.is_file():
        raise ConfigError(f"split {args.split!r} not found")
    return [line.strip() for line in split.read_text().splitlines() if line.strip()]


def cmd_evaluate(args) -> int:
    gt_dir = Path(args.gt_dir)
    pred_dir = Path(args.pred_dir)
    names = class_names(args.classes)
    cm = ConfusionMatrix(len(names))
    missing = []
    for image_id in _evaluate_ids(args, gt_dir):
        pred_path = pred_dir / f"{image_id}.png"
        if not pred_path.is_file():
            missing.append(image_id)
            continue
        gt = read_label_png(gt_dir / f"{image_id}.png", image_id)
        try:
            accumulate(cm, gt, read_label_png(pred_path, image_id), args.ignore_pred_255)
        except ValueError as exc:
            raise AnnotationError(str(exc), image_id) from None
    if cm.total == 0:
        raise ConfigError("no evaluable pixels (are the prediction and GT directories right?)")
    result = miou(cm, not args.no_background, names)
    print(result.report())
    if missing:
        print(f"{len(missing)} predictions missing, e.g. {missing[0]}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def load_grid(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from None
    if isinstance(data, list):
        data = {"rows": data}
    if not isinstance(data, dict):
        raise ConfigError("grid file must be a JSON object or list")
    if data.get("preset") == "standard":
        rows = list(STANDARD_SETTINGS)
    elif "preset" in data:
        raise ConfigError(f"unknown preset {data['preset']!r}")
    else:
        try:
            rows = [AblationSetting.from_dict(r) for r in data.get("rows", [])]
        except TypeError as exc:
            raise ConfigError(f"bad grid row: {exc}") from None
    return rows, data.get("base", {})


def cmd_ablate(args) -> int:
    rows, base = load_grid(args.grid)
    settings = resolve_settings(args)
    unknown = set(base) - PIPELINE_KEYS
    if unknown:
        raise ConfigError(f"unknown base keys {sorted(unknown)}")
    settings.update(base)
    if not rows:
        table = []
    else:
        config = pipeline_config(settings)
        index = open_index(settings)
        backend = make_backend(settings["backend"], index, settings)
        classifier = make_classifier(settings["classifier"], index)
        try:
            table = run_ablation(index, rows, backend, config, classifier, settings["jobs"],
                                 settings.get("cam_root"), settings["ignore_pred_255"],
                                 settings["include_background"])
        finally:
            backend.close()
            classifier.close()
    print(table_text(table), end="")
    if args.csv:
        Path(args.csv).write_text(table_csv(table))
    return EXIT_PARTIAL if any(r.miou is None for r in table) else EXIT_OK


def protocol_docs() -> str:
    parts = [
        "# weak2mask wire formats\n",
        "## External adapter protocol\n", external.__doc__.strip(), "\n",
        "## Mask run-length encoding\n", rle.__doc__.strip(), "\n",
        "## CAM files\n", cam_prompting.__doc__.strip(), "\n",
        "## Pseudo-label output\n",
        "`<out>/<id>.png`: 8-bit palette PNG with the 256-entry VOC palette; "
        "pixel values are class indices, 255 = ignore.  `<out>/manifest.json` "
        "holds the resolved config, `params_hash`, per-image coverage/conflicts "
        "and skipped images with reasons.\n",
    ]
    return "\n".join(parts)


def cmd_export_docs(args) -> int:
    text = protocol_docs()
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    from .synthetic import make_synthetic_voc

    ids = make_synthetic_voc(args.out, args.images, args.size, seed=args.seed, split=args.split)
    print(f"wrote {len(ids)} synthetic images to {args.out}")
    return EXIT_OK


def _add_dataset_flags(p):
    p.add_argument("--config", help="JSON config file (a generate manifest also works)")
    p.add_argument("--root", help="VOC-layout dataset root")
    p.add_argument("--split")
    p.add_argument("--gt-dir", dest="gt_dir")
    p.add_argument("--cam-root", dest="cam_root", help="directory holding cams/ (default: root)")
    p.add_argument("--classes", help="class-list file or number of classes")
    p.add_argument("--backend", help="oracle | degraded-oracle | external:<endpoint>")
    p.add_argument("--classifier", help="mock | external:<endpoint>")
    p.add_argument("--jobs", type=int)


def _add_pipeline_flags(p):
    bool_flag = argparse.BooleanOptionalAction
    p.add_argument("--strategy", choices=STRATEGIES)
    p.add_argument("--cam-mode", dest="cam_mode", choices=CAM_MODES)
    p.add_argument("--cam-threshold", dest="cam_threshold", type=float)
    p.add_argument("--peak-radius", dest="peak_radius", type=int)
    p.add_argument("--negatives", action=bool_flag)
    p.add_argument("--iterative", action=bool_flag)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--scribble-fraction", dest="scribble_fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--selection", choices=("third", "best_score"))
    p.add_argument("--conflict", choices=("score", "ignore", "smallest"))
    p.add_argument("--unmasked", choices=("background", "ignore"))
    p.add_argument("--grid-stride", dest="grid_stride", type=int)
    p.add_argument("--dedup-iou", dest="dedup_iou", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weak2mask", description="Weak annotations to pseudo labels via a promptable segmenter.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write pseudo-label PNGs and a manifest")
    _add_dataset_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="mIoU of a prediction directory against ground truth")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--split", help="split file, or split name under --root")
    p.add_argument("--root")
    p.add_argument("--classes", help="class-list file or number of classes")
    p.add_argument("--ignore-pred-255", action="store_true")
    p.add_argument("--no-background", action="store_true", help="exclude class 0 from the mean")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run a grid of settings and print a results table")
    p.add_argument("--grid", required=True, help='JSON: {"preset": "standard"} or {"rows": [...]}')
    _add_dataset_flags(p)
    _add_pipeline_flags(p)
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-protocol-docs", help="print the wire-format documentation")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_docs)

    p = sub.add_parser("make-synthetic", help="write a synthetic VOC-layout dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--images", type=int, default=20)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_make_synthetic)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BackendError as exc:
        print(f"backend error [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except Weak2MaskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main())
