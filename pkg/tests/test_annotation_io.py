import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from weak2mask.annotation_io import (
    WeakAnnotation,
    load_dataset_index,
    load_gt_label,
    load_weak_annotation,
    read_label_png,
    save_label_png,
)
from weak2mask.classes import voc_palette
from weak2mask.errors import AnnotationError


def make_root(tmp_path, ids, size=(40, 30)):
    (tmp_path / "ImageSets/Segmentation").mkdir(parents=True)
    (tmp_path / "JPEGImages").mkdir()
    for image_id in ids:
        Image.new("RGB", size).save(tmp_path / "JPEGImages" / f"{image_id}.jpg")
    (tmp_path / "ImageSets/Segmentation/train.txt").write_text("".join(f"{i}\n" for i in ids))
    return tmp_path


def write_sidecar(root, folder, data, split="train"):
    (root / folder).mkdir(exist_ok=True)
    (root / folder / f"{split}.json").write_text(json.dumps(data))


def test_index_preserves_file_order(tmp_path):
    ids = ["b_2", "a_1", "c_3"]
    root = make_root(tmp_path, ids)
    index = load_dataset_index(root, "train")
    direct = [l.strip() for l in (root / "ImageSets/Segmentation/train.txt").read_text().splitlines()]
    assert list(index.image_ids) == direct == ids


def test_index_skips_blank_lines_and_accepts_empty(tmp_path):
    root = make_root(tmp_path, [])
    assert load_dataset_index(root, "train").image_ids == ()
    (root / "ImageSets/Segmentation/val.txt").write_text("\n\n")
    assert load_dataset_index(root, "val").image_ids == ()


def test_index_rejects_duplicates_naming_the_id(tmp_path):
    root = make_root(tmp_path, ["x1"])
    (root / "ImageSets/Segmentation/train.txt").write_text("x1\nx2\nx1\n")
    with pytest.raises(AnnotationError, match="x1"):
        load_dataset_index(root, "train", check_images=False)


def test_index_missing_split_and_missing_image(tmp_path):
    root = make_root(tmp_path, ["x1"])
    with pytest.raises(AnnotationError, match="split file"):
        load_dataset_index(root, "val")
    (root / "ImageSets/Segmentation/train.txt").write_text("x1\nghost\n")
    with pytest.raises(AnnotationError, match="ghost"):
        load_dataset_index(root, "train")


def test_points_by_name_and_index(tmp_path):
    root = make_root(tmp_path, ["im"], size=(200, 150))
    write_sidecar(root, "points", {"im": [[120, 80, "cat"], [5, 6, 12]]})
    ann = load_weak_annotation(load_dataset_index(root, "train"), "im", "points")
    assert ann.kind == "points"
    assert ann.points == [(120, 80, 8), (5, 6, 12)]
    assert ann.scribbles is None and ann.boxes is None and ann.image_labels is None


@pytest.mark.parametrize("entry, message", [
    ([[500, 1, 3]], "outside"),
    ([[1, 1, "unicorn"]], "unknown class"),
    ([[1, 1, 40]], "out of range"),
    ([[1, 1]], "malformed"),
    ([[1.5, 1, 3]], "not an integer"),
])
def test_points_invalid(tmp_path, entry, message):
    root = make_root(tmp_path, ["im"])
    write_sidecar(root, "points", {"im": entry})
    with pytest.raises(AnnotationError, match=message) as err:
        load_weak_annotation(load_dataset_index(root, "train"), "im", "points")
    assert err.value.image_id == "im"


def test_boxes_degenerate_and_valid(tmp_path):
    root = make_root(tmp_path, ["im", "bad"])
    write_sidecar(root, "boxes", {"im": [[1, 2, 10, 20, "dog"]], "bad": [[10, 10, 5, 20, 1]]})
    index = load_dataset_index(root, "train")
    assert load_weak_annotation(index, "im", "boxes").boxes == [(1, 2, 10, 20, 12)]
    with pytest.raises(AnnotationError, match="degenerate box"):
        load_weak_annotation(index, "bad", "boxes")


def test_image_labels_reject_background(tmp_path):
    root = make_root(tmp_path, ["im", "bg"])
    write_sidecar(root, "image_labels", {"im": ["cat", 15], "bg": [0]})
    index = load_dataset_index(root, "train")
    assert load_weak_annotation(index, "im", "image_labels").image_labels == {8, 15}
    with pytest.raises(AnnotationError):
        load_weak_annotation(index, "bg", "image_labels")


def test_malformed_sidecar_and_missing_entry(tmp_path):
    root = make_root(tmp_path, ["im"])
    (root / "boxes").mkdir()
    (root / "boxes/train.json").write_text("{not json")
    index = load_dataset_index(root, "train")
    with pytest.raises(AnnotationError, match="malformed"):
        load_weak_annotation(index, "im", "boxes")
    write_sidecar(root, "points", {"other": []})
    with pytest.raises(AnnotationError, match="no entry"):
        load_weak_annotation(index, "im", "points")


def test_all_unlabeled_scribble_is_valid(tmp_path):
    root = make_root(tmp_path, ["im"])
    (root / "scribbles").mkdir()
    save_label_png(np.full((30, 40), 255, np.uint8), root / "scribbles/im.png")
    ann = load_weak_annotation(load_dataset_index(root, "train"), "im", "scribbles")
    assert ann.scribbles.shape == (30, 40)
    assert not (ann.scribbles != 255).any()


def test_scribble_size_mismatch(tmp_path):
    root = make_root(tmp_path, ["im"])
    (root / "scribbles").mkdir()
    save_label_png(np.zeros((10, 10), np.uint8), root / "scribbles/im.png")
    with pytest.raises(AnnotationError, match="shape"):
        load_weak_annotation(load_dataset_index(root, "train"), "im", "scribbles")


def test_weak_annotation_requires_exactly_its_fields():
    with pytest.raises(AnnotationError):
        WeakAnnotation("im", "points", 10, 10, points=[(1, 1, 1)], boxes=[(0, 0, 2, 2, 1)])
    with pytest.raises(AnnotationError):
        WeakAnnotation("im", "boxes", 10, 10)


def test_save_load_roundtrip_keeps_ignore(tmp_path, rng):
    values = np.array(list(range(21)) + [255], dtype=np.uint8)
    label = rng.choice(values, size=(17, 23))
    path = tmp_path / "x.png"
    save_label_png(label, path)
    with Image.open(path) as im:
        assert im.mode == "P"
        assert im.getpalette()[:768] == voc_palette()
        raw = np.frombuffer(im.tobytes(), dtype=np.uint8).reshape(17, 23)
    assert np.array_equal(raw, label)
    assert np.array_equal(read_label_png(path), label)


def test_all_background_roundtrip(tmp_path):
    save_label_png(np.zeros((5, 7), np.uint8), tmp_path / "z.png")
    assert not read_label_png(tmp_path / "z.png").any()


def test_load_rejects_rgb_png(tmp_path):
    Image.new("RGB", (4, 4)).save(tmp_path / "rgb.png")
    with pytest.raises(AnnotationError, match="not an indexed PNG"):
        read_label_png(tmp_path / "rgb.png")


def test_load_gt_label_validates_range(tmp_path):
    root = make_root(tmp_path, ["im"])
    (root / "SegmentationClassAug").mkdir()
    bad = np.zeros((30, 40), np.uint8)
    bad[0, 0] = 50
    save_label_png(bad, root / "SegmentationClassAug/im.png")
    with pytest.raises(AnnotationError, match="out of range"):
        load_gt_label(load_dataset_index(root, "train"), "im")


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_roundtrip_property(tmp_path_factory, h, w, data):
    values = data.draw(st.lists(st.sampled_from(list(range(21)) + [255]), min_size=h * w, max_size=h * w))
    label = np.array(values, dtype=np.uint8).reshape(h, w)
    path = tmp_path_factory.mktemp("rt") / "l.png"
    save_label_png(label, path)
    assert np.array_equal(read_label_png(path), label)


def test_loading_is_deterministic(synthetic_index):
    image_id = synthetic_index.image_ids[0]
    for kind in ("points", "boxes", "scribbles", "image_labels"):
        a = load_weak_annotation(synthetic_index, image_id, kind)
        b = load_weak_annotation(synthetic_index, image_id, kind)
        if kind == "scribbles":
            assert np.array_equal(a.scribbles, b.scribbles)
        else:
            assert getattr(a, kind) == getattr(b, kind)
