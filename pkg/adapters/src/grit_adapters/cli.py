"""Console entry points: export-parses and export-detections.

Both read and write JSON Lines, report per-line failures to a rejects
sidecar (never dropping records silently), and record the tool that
produced the output in a ``<out>.manifest.json`` sidecar. Exit codes
match the core CLI: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import __version__
from .detect import load_model, mock_detections, model_detections
from .parsing import AdapterError, load_backend

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _open_in(path: str):
    return sys.stdin if path == "-" else open(path, "r", encoding="utf-8")


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", encoding="utf-8")


def _close(f):
    if f not in (sys.stdin, sys.stdout):
        f.close()


def _write_manifest(out_path: str, manifest: dict):
    if out_path == "-":
        return
    with open(out_path + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


class _Rejects:
    def __init__(self, path: Optional[str], out_path: str):
        if path is None and out_path != "-":
            path = out_path + ".rejects.jsonl"
        self.path = path
        self.count = 0
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def add(self, line_no: int, reason: str, raw: str):
        self.count += 1
        if self._fh:
            self._fh.write(
                json.dumps({"line": line_no, "reason": reason, "raw": raw}, ensure_ascii=False)
                + "\n"
            )
        else:
            print(f"reject line {line_no}: {reason}", file=sys.stderr)

    def close(self):
        if self._fh:
            self._fh.close()


def _require(obj, key, typ, line_no):
    if not isinstance(obj, dict) or key not in obj:
        raise AdapterError(f"missing field {key!r}")
    v = obj[key]
    if typ is int:
        if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
            raise AdapterError(f"field {key!r} must be a positive integer")
    elif not isinstance(v, typ):
        raise AdapterError(f"field {key!r} must be {typ.__name__}")
    return v


def main_parses(argv=None) -> int:
    parser = _Parser(
        prog="export-parses",
        description="captions.jsonl {image_id,width,height,caption} -> parses.jsonl",
    )
    parser.add_argument("--in", dest="infile", default="-")
    parser.add_argument("--out", default="-")
    parser.add_argument("--rejects")
    parser.add_argument(
        "--backend",
        choices=("auto", "spacy", "heuristic"),
        default="auto",
        help="parser backend (auto prefers spacy, falls back to the rule-based one)",
    )
    parser.add_argument("--spacy-model", default="en_core_web_sm")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        backend = load_backend(args.backend, args.spacy_model)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    fin, fout = _open_in(args.infile), _open_out(args.out)
    rejects = _Rejects(args.rejects, args.out)
    try:
        for line_no, line in enumerate(fin, 1):
            line = line.rstrip("\n")
            try:
                obj = json.loads(line)
                image_id = _require(obj, "image_id", str, line_no)
                width = _require(obj, "width", int, line_no)
                height = _require(obj, "height", int, line_no)
                caption = _require(obj, "caption", str, line_no)
                if not caption.strip():
                    raise AdapterError("empty caption")
                tokens, chunks = backend.parse(caption)
            except json.JSONDecodeError as exc:
                rejects.add(line_no, f"invalid JSON: {exc.msg}", line)
                continue
            except AdapterError as exc:
                rejects.add(line_no, str(exc), line)
                continue
            out = {
                "image_id": image_id,
                "width": width,
                "height": height,
                "caption": caption,
                "tokens": tokens,
                "chunks": chunks,
            }
            for k, v in obj.items():
                out.setdefault(k, v)
            fout.write(json.dumps(out, ensure_ascii=False) + "\n")
    finally:
        _close(fin)
        _close(fout)
        rejects.close()
    _write_manifest(args.out, {"tool": backend.name, "version": backend.version})
    return EXIT_DATA if rejects.count else EXIT_OK


def main_detections(argv=None) -> int:
    parser = _Parser(
        prog="export-detections",
        description="parses.jsonl -> detections.jsonl (mock or model detector)",
    )
    parser.add_argument("--in", dest="infile", default="-")
    parser.add_argument("--out", default="-")
    parser.add_argument("--rejects")
    parser.add_argument("--mode", choices=("mock", "model"), required=True)
    parser.add_argument("--model-spec", help="module:function detector for --mode model")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    model = None
    if args.mode == "model":
        try:
            model = load_model(args.model_spec)
        except AdapterError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DATA

    fin, fout = _open_in(args.infile), _open_out(args.out)
    rejects = _Rejects(args.rejects, args.out)
    try:
        for line_no, line in enumerate(fin, 1):
            line = line.rstrip("\n")
            try:
                obj = json.loads(line)
                _require(obj, "image_id", str, line_no)
                _require(obj, "width", int, line_no)
                _require(obj, "height", int, line_no)
                if not isinstance(obj.get("tokens"), list) or not isinstance(
                    obj.get("chunks"), list
                ):
                    raise AdapterError("tokens and chunks must be lists")
                if args.mode == "mock":
                    rec = mock_detections(obj)
                else:
                    rec = model_detections(obj, model)
            except json.JSONDecodeError as exc:
                rejects.add(line_no, f"invalid JSON: {exc.msg}", line)
                continue
            except (AdapterError, KeyError, TypeError, IndexError) as exc:
                rejects.add(line_no, str(exc), line)
                continue
            fout.write(json.dumps(rec, ensure_ascii=False) + "\n")
    finally:
        _close(fin)
        _close(fout)
        rejects.close()
    manifest = {"tool": f"{args.mode}-detector", "version": f"grit-adapters {__version__}"}
    if args.mode == "mock":
        manifest["hash"] = "fnv1a64(image_id|chunk_text)"
    else:
        manifest["spec"] = args.model_spec
    _write_manifest(args.out, manifest)
    return EXIT_DATA if rejects.count else EXIT_OK
