import json
import shlex
import socket
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from weak2mask.errors import (BackendError, BackendUnavailable, ClassifierUnavailable,
                              ImageNotFound, MalformedResponse)
from weak2mask.external import (
    ExternalClassifier,
    ExternalSegmenter,
    decode_classify_response,
    decode_request,
    decode_response,
    dumps,
    encode_classify_request,
    encode_request,
    encode_response,
)
from weak2mask.segmenter import ImageRef, OracleSegmenter, SegmenterQuery

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_lines(name):
    return (FIXTURES / name).read_text().splitlines()


def test_request_fixture_bit_exact():
    lines = fixture_lines("segmenter_requests.jsonl")
    img = ImageRef("2007_000032", 3, 4)
    q1 = SegmenterQuery(img, [(3, 1), (0, 2)], [(1, 1)], None, b"\x00\x01\x02")
    q2 = SegmenterQuery(img, box=(0, 0, 3, 2))
    assert dumps(encode_request(7, q1)) == lines[0]
    assert dumps(encode_request(8, q2)) == lines[1]
    assert decode_request(json.loads(lines[0])) == (
        7, "2007_000032", [(3, 1), (0, 2)], [(1, 1)], None, b"\x00\x01\x02")


def test_response_fixture_decodes_and_reencodes():
    lines = fixture_lines("segmenter_responses.jsonl")
    proposals = decode_response(json.loads(lines[0]), 7, (3, 4))
    assert [p.rank for p in proposals] == [0, 1, 2]
    assert [p.score for p in proposals] == [0.9, 0.8, 0.7]
    assert not proposals[0].mask.any() and proposals[1].mask.all()
    assert proposals[2].mask.tolist() == [[False, True, True, False],
                                          [False, True, True, False],
                                          [False] * 4]
    assert proposals[1].state == b"\x01\x02"
    assert dumps(encode_response(7, proposals)) == lines[0]


def test_error_response_is_image_not_found():
    line = fixture_lines("segmenter_responses.jsonl")[1]
    with pytest.raises(ImageNotFound, match="unknown image"):
        decode_response(json.loads(line), 8, (3, 4))


def test_classifier_fixtures():
    mask = np.array([[0, 1, 1], [0, 0, 0]], bool)
    request = encode_classify_request(3, "img", mask, ["background", "cat"])
    assert dumps(request) == fixture_lines("classifier_request.jsonl")[0]
    reply = json.loads(fixture_lines("classifier_response.jsonl")[0])
    assert decode_classify_response(reply, 3, ["background", "cat"]) == ("cat", 0.75)
    with pytest.raises(MalformedResponse):
        decode_classify_response(reply, 3, ["background", "dog"])


def test_classifier_crop_is_png():
    import base64
    import io

    from PIL import Image

    image = np.arange(4 * 5 * 3, dtype=np.uint8).reshape(4, 5, 3)
    mask = np.zeros((4, 5), bool)
    mask[1:3, 2:5] = True
    request = encode_classify_request(1, "x", mask, ["cat"], image)
    assert request["crop_box"] == [2, 1, 4, 2]
    crop = np.array(Image.open(io.BytesIO(base64.b64decode(request["crop"]))))
    assert np.array_equal(crop, image[1:3, 2:5])


def good_masks():
    return json.loads(fixture_lines("segmenter_responses.jsonl")[0])


@pytest.mark.parametrize("mutate", [
    lambda r: r.update(id=99),
    lambda r: r["masks"].pop(),
    lambda r: r["masks"][0].update(rank=1),
    lambda r: r["masks"][0].update(rank="0"),
    lambda r: r["masks"][0].update(score="high"),
    lambda r: r["masks"][0]["rle"].update(counts=[11]),
    lambda r: r["masks"][0].update(state=5),
    lambda r: r["masks"][0].update(rle={"size": [2, 6], "counts": [12]}),
])
def test_malformed_responses(mutate):
    reply = good_masks()
    mutate(reply)
    with pytest.raises(MalformedResponse):
        decode_response(reply, 7, (3, 4))


def test_generic_remote_error_keeps_code():
    with pytest.raises(BackendError) as err:
        decode_response({"id": 1, "error": {"code": "oom", "message": "out of memory"}}, 1)
    assert err.value.code == "oom"
    assert not isinstance(err.value, ImageNotFound)


def server_cmd(root, *extra):
    args = [sys.executable, "-m", "weak2mask.oracle_server", "--root", str(root), *extra]
    return "stdio:" + shlex.join(args)


def test_stdio_roundtrip_matches_in_process(synthetic_index, gt_lookup):
    local = OracleSegmenter(gt_lookup)
    with ExternalSegmenter(server_cmd(synthetic_index.root_path)) as remote:
        for image_id in synthetic_index.image_ids[:3]:
            gt = gt_lookup(image_id)
            h, w = gt.shape
            ys, xs = np.nonzero(gt > 0)
            query = SegmenterQuery(ImageRef(image_id, h, w), [(int(xs[0]), int(ys[0]))],
                                   [(0, 0)], state=b"abc")
            got, want = remote.predict(query), local.predict(query)
            for g, e in zip(got, want):
                assert np.array_equal(g.mask, e.mask) and g.score == e.score
            assert got[2].state == b"abc"
        with pytest.raises(ImageNotFound):
            remote.predict(SegmenterQuery(ImageRef("missing", 4, 4), [(1, 1)]))


def test_stdio_classifier(synthetic_index, gt_lookup):
    image_id = synthetic_index.image_ids[0]
    gt = gt_lookup(image_id)
    c = int(max(v for v in np.unique(gt) if v not in (0, 255)))
    h, w = gt.shape
    clf = ExternalClassifier(server_cmd(synthetic_index.root_path, "--role", "classifier"),
                             synthetic_index.classes)
    try:
        class_id, confidence = clf.classify(ImageRef(image_id, h, w), gt == c, {0, c})
    finally:
        clf.close()
    assert class_id == c and 0 < confidence <= 1


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_tcp_roundtrip(synthetic_index, gt_lookup):
    port = free_port()
    proc = subprocess.Popen([sys.executable, "-m", "weak2mask.oracle_server", "--root",
                             str(synthetic_index.root_path), "--tcp", f"127.0.0.1:{port}"])
    try:
        deadline = time.time() + 20
        while True:
            try:
                remote = ExternalSegmenter(f"tcp://127.0.0.1:{port}")
                break
            except BackendUnavailable:
                if time.time() > deadline:
                    raise
                time.sleep(0.1)
        image_id = synthetic_index.image_ids[1]
        gt = gt_lookup(image_id)
        h, w = gt.shape
        query = SegmenterQuery(ImageRef(image_id, h, w), box=(0, 0, w - 1, h - 1))
        with remote:
            got = remote.predict(query)
        want = OracleSegmenter(gt_lookup).predict(query)
        assert all(np.array_equal(g.mask, e.mask) for g, e in zip(got, want))
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_unreachable_endpoints():
    with pytest.raises(BackendUnavailable):
        ExternalSegmenter(f"tcp://127.0.0.1:{free_port()}")
    with pytest.raises(BackendUnavailable):
        ExternalSegmenter("stdio:/nonexistent/binary")
    with pytest.raises(BackendUnavailable):
        ExternalSegmenter("http://example.invalid")
    with pytest.raises(ClassifierUnavailable):
        ExternalClassifier(f"tcp://127.0.0.1:{free_port()}", ["background"])


def test_server_that_exits_is_unavailable():
    with ExternalSegmenter(f"stdio:{shlex.quote(sys.executable)} -c pass") as seg:
        with pytest.raises(BackendUnavailable):
            seg.predict(SegmenterQuery(ImageRef("x", 4, 4), [(1, 1)]))


def test_non_json_reply_is_malformed():
    cmd = f"{shlex.quote(sys.executable)} -c \"import sys; sys.stdin.readline(); print('nope', flush=True)\""
    with ExternalSegmenter(f"stdio:{cmd}") as seg:
        with pytest.raises(MalformedResponse):
            seg.predict(SegmenterQuery(ImageRef("x", 4, 4), [(1, 1)]))
