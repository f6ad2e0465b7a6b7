"""Serve a mock backend over stdio or HTTP.

Usage (stdio is the default transport):

    python -m raddet.mock_backend transcriber --size small --seed 7
    python -m raddet.mock_backend classifier --mode oracle --corpus DIR \
        --segmentation exact --window 10 --size small [--cache DIR]
    python -m raddet.mock_backend classifier --mode keyword [--sentinel TOKEN]
    python -m raddet.mock_backend classifier --mode constant [--label no-ad]
    python -m raddet.mock_backend classifier --mode memorize --models-dir DIR
    python -m raddet.mock_backend classifier --mode scripted-trainer --val-curve 0.6,0.9,0.7
    python -m raddet.mock_backend llm [--sentinel TOKEN | --script FILE]
"""

from __future__ import annotations

import argparse
import json
import sys
from http.server import BaseHTTPRequestHandler, HTTPServer
from pathlib import Path

from .corpus import corpus_index, load_corpus
from .mocks import (
    AD_SENTINEL,
    ConstantClassifier,
    KeywordClassifier,
    KeywordLlm,
    MemorizingClassifier,
    MockHandler,
    OracleClassifier,
    ScriptedLlm,
    ScriptedTrainer,
    ScriptTranscriber,
)
from .protocol import ModelSize
from .timeline import Label
from .windowing import Segmentation


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raddet.mock_backend")
    parser.add_argument("--transport", choices=["stdio", "http"], default="stdio")
    parser.add_argument("--port", type=int, default=8752)
    subparsers = parser.add_subparsers(dest="role", required=True)

    transcriber = subparsers.add_parser("transcriber")
    transcriber.add_argument("--size", choices=[m.value for m in ModelSize], required=True)
    transcriber.add_argument("--seed", type=int, default=0)

    classifier = subparsers.add_parser("classifier")
    classifier.add_argument(
        "--mode",
        choices=["oracle", "keyword", "constant", "memorize", "scripted-trainer"],
        required=True,
    )
    classifier.add_argument("--corpus")
    classifier.add_argument("--segmentation")
    classifier.add_argument("--window", type=int)
    classifier.add_argument("--size", choices=[m.value for m in ModelSize])
    classifier.add_argument("--cache")
    classifier.add_argument("--sentinel", default=AD_SENTINEL)
    classifier.add_argument("--label", default=Label.NO_AD.value)
    classifier.add_argument("--models-dir")
    classifier.add_argument("--val-curve")

    llm = subparsers.add_parser("llm")
    llm.add_argument("--sentinel", default=None)
    llm.add_argument("--script")
    return parser


def build_handler(args: argparse.Namespace) -> MockHandler:
    if args.role == "transcriber":
        return ScriptTranscriber(ModelSize.from_wire(args.size), seed=args.seed)
    if args.role == "classifier":
        if args.mode == "oracle":
            if not (args.corpus and args.segmentation and args.window and args.size):
                raise SystemExit(
                    "oracle mode needs --corpus, --segmentation, --window, --size"
                )
            return OracleClassifier(
                corpus=corpus_index(load_corpus(args.corpus)),
                window_len_s=args.window,
                segmentation=Segmentation.from_wire(args.segmentation),
                model_size=ModelSize.from_wire(args.size),
                cache_root=Path(args.cache) if args.cache else None,
            )
        if args.mode == "keyword":
            return KeywordClassifier(args.sentinel)
        if args.mode == "constant":
            return ConstantClassifier(Label.from_wire(args.label))
        if args.mode == "memorize":
            if not args.models_dir:
                raise SystemExit("memorize mode needs --models-dir")
            return MemorizingClassifier(Path(args.models_dir))
        if args.mode == "scripted-trainer":
            if not args.val_curve:
                raise SystemExit("scripted-trainer mode needs --val-curve")
            return ScriptedTrainer([float(v) for v in args.val_curve.split(",")])
    if args.role == "llm":
        if args.script:
            replies = json.loads(Path(args.script).read_text(encoding="utf-8"))
            return ScriptedLlm(replies)
        return KeywordLlm(args.sentinel or AD_SENTINEL)
    raise SystemExit(f"unknown role {args.role!r}")


def serve_stdio(handler: MockHandler) -> None:
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError:
            sys.stdout.write(
                json.dumps(
                    {"id": -1, "error": {"code": "bad_request", "message": "not JSON"}}
                )
                + "\n"
            )
            sys.stdout.flush()
            continue
        response = handler.handle(request)
        sys.stdout.write(json.dumps(response, ensure_ascii=False) + "\n")
        sys.stdout.flush()


def make_http_server(handler: MockHandler, port: int) -> HTTPServer:
    class RequestProxy(BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length)
            try:
                request = json.loads(body)
                response = handler.handle(request)
            except json.JSONDecodeError:
                response = {
                    "id": -1,
                    "error": {"code": "bad_request", "message": "not JSON"},
                }
            payload = json.dumps(response, ensure_ascii=False).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    return HTTPServer(("127.0.0.1", port), RequestProxy)


def serve_http(handler: MockHandler, port: int) -> None:
    make_http_server(handler, port).serve_forever()


def main(argv: list[str] | None = None) -> None:
    args = build_parser().parse_args(argv)
    handler = build_handler(args)
    if args.transport == "http":
        serve_http(handler, args.port)
    else:
        serve_stdio(handler)


if __name__ == "__main__":
    main()
