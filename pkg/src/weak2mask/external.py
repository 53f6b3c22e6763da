"""Out-of-process segmenter and classifier adapters.

Both speak line-delimited JSON: one compact JSON object per line, one
response line per request line, answered in order.  Endpoints are either
``stdio:<command>`` (the command is spawned and spoken to over its
stdin/stdout) or ``tcp://host:port``.

Segmenter request::

    {"id": 1, "image_id": "2007_000032", "points_pos": [[x, y], ...],
     "points_neg": [[x, y], ...], "box": [x0, y0, x1, y1] | null,
     "state": "<base64>" | null}

Segmenter response (exactly three masks, ranks 0, 1, 2)::

    {"id": 1, "masks": [{"rle": {...}, "score": 0.7, "rank": 2,
                         "state": "<base64>" | null}, ...]}

Classifier request / response::

    {"id": 1, "image_id": "...", "mask": {...rle...}, "crop_box": [x0, y0, x1, y1],
     "crop": "<base64 png>" | null, "candidates": ["background", "dog"]}
    {"id": 1, "class": "dog", "confidence": 0.93}

Either side may answer ``{"id": 1, "error": {"code": "...", "message": "..."}}``
where code is ``image_not_found`` or any other string.
"""
from __future__ import annotations

import base64
import io
import json
import shlex
import socket
import subprocess
import threading

import numpy as np

from . import rle
from .errors import (BackendError, BackendUnavailable, ClassifierUnavailable,
                     ImageNotFound, MalformedResponse)
from .segmenter import MaskProposal, Segmenter, SegmenterQuery


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=True)


def _b64(data: bytes | None):
    return None if data is None else base64.b64encode(data).decode("ascii")


def _unb64(text):
    if text is None:
        return None
    if not isinstance(text, str):
        raise MalformedResponse("state must be a base64 string or null")
    try:
        return base64.b64decode(text, validate=True)
    except ValueError as exc:
        raise MalformedResponse(f"bad base64 state: {exc}") from None


def encode_request(request_id: int, query: SegmenterQuery) -> dict:
    return {
        "id": request_id,
        "image_id": query.image.image_id,
        "points_pos": [[int(x), int(y)] for x, y in query.positives],
        "points_neg": [[int(x), int(y)] for x, y in query.negatives],
        "box": None if query.box is None else [int(v) for v in query.box],
        "state": _b64(query.state),
    }


def decode_request(obj: dict) -> tuple[int, str, list, list, tuple | None, bytes | None]:
    try:
        box = obj["box"]
        return (
            int(obj["id"]),
            str(obj["image_id"]),
            [(int(x), int(y)) for x, y in obj["points_pos"]],
            [(int(x), int(y)) for x, y in obj["points_neg"]],
            None if box is None else tuple(int(v) for v in box),
            _unb64(obj["state"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedResponse(f"malformed request: {exc}") from None


def encode_response(request_id: int, proposals) -> dict:
    return {
        "id": request_id,
        "masks": [
            {"rle": rle.encode(p.mask), "score": float(p.score), "rank": int(p.rank),
             "state": _b64(p.state)}
            for p in proposals
        ],
    }


def encode_error(request_id, code: str, message: str) -> dict:
    return {"id": request_id, "error": {"code": code, "message": message}}


def _raise_remote_error(obj):
    err = obj["error"]
    code = err.get("code", "backend_failure") if isinstance(err, dict) else "backend_failure"
    message = err.get("message", "") if isinstance(err, dict) else str(err)
    if code == "image_not_found":
        raise ImageNotFound(message)
    raise BackendError(message, code=code)


def decode_response(obj: dict, request_id: int, shape: tuple[int, int] | None = None) -> list[MaskProposal]:
    if not isinstance(obj, dict):
        raise MalformedResponse("response is not a JSON object")
    if obj.get("id") != request_id:
        raise MalformedResponse(f"response id {obj.get('id')!r} != request id {request_id}")
    if "error" in obj:
        _raise_remote_error(obj)
    masks = obj.get("masks")
    if not isinstance(masks, list) or len(masks) != 3:
        raise MalformedResponse("response must carry exactly 3 masks")
    proposals = []
    for item in masks:
        try:
            mask = rle.decode(item["rle"])
            score = float(item["score"])
            rank = item["rank"]
            state = _unb64(item.get("state"))
        except (KeyError, TypeError, ValueError) as exc:
            raise MalformedResponse(f"malformed mask entry: {exc}") from None
        if not isinstance(rank, int) or isinstance(rank, bool):
            raise MalformedResponse(f"rank must be an integer, got {rank!r}")
        if not np.isfinite(score):
            raise MalformedResponse("mask score is not finite")
        if shape is not None and mask.shape != tuple(shape):
            raise MalformedResponse(f"mask size {mask.shape} != image size {tuple(shape)}")
        proposals.append(MaskProposal(mask, score, rank, state))
    if sorted(p.rank for p in proposals) != [0, 1, 2]:
        raise MalformedResponse(f"mask ranks {[p.rank for p in proposals]} are not 0, 1, 2")
    return proposals


class LineChannel:
    """A serialised request/response channel over a subprocess or TCP socket."""

    def __init__(self, endpoint: str, timeout: float | None = 60.0,
                 unavailable=BackendUnavailable):
        self.endpoint = endpoint
        self._unavailable = unavailable
        self._lock = threading.Lock()
        self._proc = None
        self._sock = None
        if endpoint.startswith("stdio:"):
            cmd = shlex.split(endpoint[len("stdio:"):])
            if not cmd:
                raise unavailable("empty stdio command")
            try:
                self._proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                              bufsize=0)
            except OSError as exc:
                raise unavailable(f"cannot start {endpoint!r}: {exc}") from None
            self._reader, self._writer = self._proc.stdout, self._proc.stdin
        elif endpoint.startswith("tcp://"):
            host, _, port = endpoint[len("tcp://"):].rpartition(":")
            try:
                self._sock = socket.create_connection((host or "127.0.0.1", int(port)), timeout=timeout)
            except (OSError, ValueError) as exc:
                raise unavailable(f"cannot connect to {endpoint!r}: {exc}") from None
            self._reader = self._sock.makefile("rb")
            self._writer = self._sock.makefile("wb")
        else:
            raise unavailable(f"unsupported endpoint {endpoint!r} (use stdio:<cmd> or tcp://host:port)")

    def call(self, obj: dict) -> dict:
        line = (dumps(obj) + "\n").encode("ascii")
        with self._lock:
            try:
                self._writer.write(line)
                self._writer.flush()
                reply = self._reader.readline()
            except OSError as exc:
                raise self._unavailable(f"{self.endpoint}: {exc}") from None
        if not reply:
            raise self._unavailable(f"{self.endpoint}: connection closed")
        try:
            return json.loads(reply)
        except json.JSONDecodeError as exc:
            raise MalformedResponse(f"response is not JSON: {exc}") from None

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
            self._proc.stdout.close()
            self._proc = None
        if self._sock is not None:
            self._reader.close()
            self._writer.close()
            self._sock.close()
            self._sock = None


class ExternalSegmenter(Segmenter):
    """Segmenter backed by an external process; requests are single-flight."""

    concurrent = False

    def __init__(self, endpoint: str, timeout: float | None = 60.0):
        self.channel = LineChannel(endpoint, timeout)
        self._next_id = 0
        self._id_lock = threading.Lock()

    def _predict(self, query):
        with self._id_lock:
            self._next_id += 1
            request_id = self._next_id
        reply = self.channel.call(encode_request(request_id, query))
        return decode_response(reply, request_id, (query.image.height, query.image.width))

    def close(self):
        self.channel.close()


def encode_png_b64(image: np.ndarray) -> str:
    from PIL import Image

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(image)).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def mask_bbox(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return None
    return [int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())]


def encode_classify_request(request_id, image_id, mask, candidates, image=None) -> dict:
    box = mask_bbox(mask)
    crop = None
    if image is not None and box is not None:
        x0, y0, x1, y1 = box
        crop = encode_png_b64(image[y0:y1 + 1, x0:x1 + 1])
    return {
        "id": request_id,
        "image_id": image_id,
        "mask": rle.encode(mask),
        "crop_box": box,
        "crop": crop,
        "candidates": list(candidates),
    }


def decode_classify_response(obj, request_id, candidates) -> tuple[str, float]:
    if not isinstance(obj, dict) or obj.get("id") != request_id:
        raise MalformedResponse(f"classifier response id mismatch: {obj!r:.80}")
    if "error" in obj:
        _raise_remote_error(obj)
    name = obj.get("class")
    try:
        confidence = float(obj["confidence"])
    except (KeyError, TypeError, ValueError):
        raise MalformedResponse("classifier response lacks a numeric confidence") from None
    if name not in candidates:
        raise MalformedResponse(f"classifier returned {name!r}, not among candidates {list(candidates)}")
    return name, confidence


class ExternalClassifier:
    """Mask classifier behind the same line protocol as :class:`ExternalSegmenter`."""

    concurrent = False

    def __init__(self, endpoint: str, classes, image_loader=None, timeout: float | None = 60.0):
        self.channel = LineChannel(endpoint, timeout, unavailable=ClassifierUnavailable)
        self.classes = tuple(classes)
        self.image_loader = image_loader
        self._next_id = 0
        self._id_lock = threading.Lock()

    def classify(self, image, mask, candidates) -> tuple[int, float]:
        names = [self.classes[c] for c in sorted(candidates)]
        with self._id_lock:
            self._next_id += 1
            request_id = self._next_id
        pixels = self.image_loader(image.image_id) if self.image_loader else None
        reply = self.channel.call(
            encode_classify_request(request_id, image.image_id, mask, names, pixels))
        name, confidence = decode_classify_response(reply, request_id, names)
        return self.classes.index(name), confidence

    def close(self):
        self.channel.close()
