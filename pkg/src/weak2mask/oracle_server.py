"""Reference adapter serving the oracle backend over the line protocol.

Run as ``python -m weak2mask.oracle_server --root <voc> --split train`` to
answer segmenter requests on stdin/stdout, or with ``--tcp 127.0.0.1:7000``
to listen on a socket.  ``--role classifier`` serves the mock classifier
instead.  It doubles as a template for wrapping a real model.
"""
from __future__ import annotations

import argparse
import json
import socketserver
import sys

from . import rle
from .annotation_io import load_dataset_index, load_gt_label
from .errors import Weak2MaskError
from .external import decode_request, dumps, encode_error, encode_response
from .grid_classify import MockClassifier
from .segmenter import DegradedOracleSegmenter, ImageRef, OracleSegmenter, SegmenterQuery


class Handler:
    def __init__(self, index, role="segmenter", degraded=False):
        self.index = index
        self.role = role
        lookup = lambda image_id: load_gt_label(index, image_id)  # noqa: E731
        self.backend = DegradedOracleSegmenter(lookup) if degraded else OracleSegmenter(lookup)
        self.classifier = MockClassifier(lookup)

    def _image(self, image_id):
        if image_id not in self.index.image_ids:
            raise KeyError(image_id)
        height, width = self.index.image_size(image_id)
        return ImageRef(image_id, height, width)

    def handle(self, line: str) -> dict:
        request_id = None
        try:
            obj = json.loads(line)
            request_id = obj.get("id")
            try:
                image = self._image(str(obj["image_id"]))
            except KeyError:
                return encode_error(request_id, "image_not_found", f"unknown image {obj.get('image_id')!r}")
            if self.role == "classifier":
                names = list(obj["candidates"])
                candidates = {self.index.classes.index(n) for n in names}
                class_id, confidence = self.classifier.classify(image, rle.decode(obj["mask"]), candidates)
                return {"id": request_id, "class": self.index.classes[class_id],
                        "confidence": confidence}
            request_id, _, pos, neg, box, state = decode_request(obj)
            proposals = self.backend.predict(SegmenterQuery(image, pos, neg, box, state))
            for p in proposals:
                p.state = state
            return encode_response(request_id, proposals)
        except (Weak2MaskError, ValueError, KeyError, TypeError) as exc:
            return encode_error(request_id, "bad_request", str(exc))


def serve_stdio(handler: Handler, stdin=None, stdout=None) -> None:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(dumps(handler.handle(line)) + "\n")
        stdout.flush()


def serve_tcp(handler: Handler, address: str) -> None:
    host, _, port = address.rpartition(":")

    class StreamHandler(socketserver.StreamRequestHandler):
        def handle(self):
            for raw in self.rfile:
                if raw.strip():
                    self.wfile.write((dumps(handler.handle(raw.decode())) + "\n").encode())
                    self.wfile.flush()

    with socketserver.ThreadingTCPServer((host or "127.0.0.1", int(port)), StreamHandler) as server:
        server.serve_forever()


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--root", required=True)
    parser.add_argument("--split", default="train")
    parser.add_argument("--role", choices=("segmenter", "classifier"), default="segmenter")
    parser.add_argument("--degraded", action="store_true")
    parser.add_argument("--tcp", metavar="HOST:PORT")
    args = parser.parse_args(argv)
    handler = Handler(load_dataset_index(args.root, args.split), args.role, args.degraded)
    if args.tcp:
        serve_tcp(handler, args.tcp)
    else:
        serve_stdio(handler)


if __name__ == "__main__":
    main()
