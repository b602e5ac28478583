"""Command-line interface.

Subcommands:

    encode          pixel box -> location tokens
    decode          location tokens -> pixel box
    parse           markup lines -> structured JSONL
    render          structured JSONL -> markup lines
    build           parses.jsonl + detections.jsonl -> grit.jsonl
    stats           grit.jsonl -> corpus statistics
    eval-grounding  phrase grounding recall@k
    eval-rec        referring-expression comprehension accuracy
    prompts         prompt / instruction-pair generation

All record I/O is JSON Lines on files or standard streams (``-``). Exit
codes: 0 success, 1 usage error, 2 data error (offending records are
written to a rejects sidecar, never silently dropped).
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import re
import sys
from functools import partial
from typing import Iterable, Iterator, Optional

from . import markup, metrics, pipeline, prompts
from .locgrid import GridSpec, ImageDims, TokenBoxPair, dequantize_box, quantize_box
from .geometry import PixelBox
from .markup import DecodeFailure, GroundLink, GroundedCaption, TextSpan
from .pipeline import BuildConfig, SchemaError

STOPLIST_ENV = "GRIT_STOPLIST"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class _Parser(argparse.ArgumentParser):
    # Usage problems exit 1; argparse's default of 2 is reserved for data errors.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def _open_in(path: str):
    if path == "-":
        yield sys.stdin
    else:
        with open(path, "r", encoding="utf-8") as f:
            yield f


@contextlib.contextmanager
def _open_out(path: str):
    if path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8") as f:
            yield f


def _lines(f) -> Iterator[str]:
    for line in f:
        yield line.rstrip("\n")


class _RejectWriter:
    def __init__(self, path: Optional[str]):
        self.path = path
        self.count = 0
        self._fh = None

    def __enter__(self):
        if self.path:
            self._fh = open(self.path, "w", encoding="utf-8")
        return self

    def __exit__(self, *exc):
        if self._fh:
            self._fh.close()

    def write(self, line_no: int, reason: str, **extra):
        self.count += 1
        obj = {"line": line_no, "reason": reason, **extra}
        if self._fh:
            self._fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
        else:
            print(f"reject line {line_no}: {reason}", file=sys.stderr)


def _default_rejects(out_path: str, explicit: Optional[str]) -> Optional[str]:
    if explicit:
        return explicit
    if out_path and out_path != "-":
        return out_path + ".rejects.jsonl"
    return None


def _load_stoplist(path: Optional[str]) -> frozenset[str]:
    if path is None:
        path = os.environ.get(STOPLIST_ENV)
    if path is None:
        from importlib.resources import files

        text = files("gritkit").joinpath("data/stoplist.txt").read_text(encoding="utf-8")
    else:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line.lower())
    return frozenset(words)


def _parse_box_arg(s: str) -> PixelBox:
    parts = s.split(",")
    if len(parts) != 4:
        raise SchemaError(f"expected x1,y1,x2,y2 but got {s!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise SchemaError(f"box coordinates must be numbers: {s!r}") from exc
    try:
        return PixelBox(*vals)
    except ValueError as exc:
        raise SchemaError(str(exc)) from exc


_LOC_ARG = re.compile(r"<loc_(\d+)>")


def _parse_tokens_arg(s: str) -> TokenBoxPair:
    found = _LOC_ARG.findall(s)
    if not found:
        found = [p.strip() for p in s.split(",")]
    if len(found) != 2 or not all(p.isdigit() for p in found):
        raise SchemaError(f"expected two location tokens, got {s!r}")
    return TokenBoxPair(int(found[0]), int(found[1]))


# ---------------------------------------------------------------------------
# Structured JSON <-> GroundedCaption (parse / render subcommands)


def caption_to_json(doc: GroundedCaption) -> dict:
    return {
        "caption": doc.caption,
        "links": [
            {
                "start": link.span.start,
                "end": link.span.end,
                "text": link.span.text,
                "boxes": [[p.tl, p.br] for p in link.boxes],
            }
            for link in doc.links
        ],
        "has_grounding_marker": doc.has_grounding_marker,
        "has_image_slot": doc.has_image_slot,
        "image_payload": doc.image_payload,
    }


def caption_from_json(obj) -> GroundedCaption:
    if not isinstance(obj, dict) or not isinstance(obj.get("caption"), str):
        raise SchemaError("record must be an object with a string caption")
    links = []
    for i, l in enumerate(obj.get("links", [])):
        try:
            span = TextSpan(l["start"], l["end"], l["text"])
            boxes = tuple(TokenBoxPair(int(b[0]), int(b[1])) for b in l["boxes"])
            links.append(GroundLink(span, boxes))
        except (KeyError, TypeError, IndexError, ValueError) as exc:
            raise SchemaError(f"link {i}: {exc}") from exc
    return GroundedCaption(
        caption=obj["caption"],
        links=tuple(links),
        has_grounding_marker=bool(obj.get("has_grounding_marker", False)),
        has_image_slot=bool(obj.get("has_image_slot", False)),
        image_payload=str(obj.get("image_payload", "")),
    )


# ---------------------------------------------------------------------------
# Subcommand implementations


def _cmd_encode(args) -> int:
    grid = GridSpec(args.bins)
    dims = ImageDims(args.width, args.height)
    try:
        box = _parse_box_arg(args.box)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    pair = quantize_box(box, dims, grid)
    print(f"<loc_{pair.tl}><loc_{pair.br}>")
    return EXIT_OK


def _cmd_decode(args) -> int:
    grid = GridSpec(args.bins)
    dims = ImageDims(args.width, args.height)
    try:
        pair = _parse_tokens_arg(args.tokens)
        box = dequantize_box(pair, dims, grid)
    except (SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(f"{box.x1},{box.y1},{box.x2},{box.y2}")
    return EXIT_OK


def _cmd_parse(args) -> int:
    grid = GridSpec(args.bins)
    rejects_path = _default_rejects(args.out, args.rejects)
    with _open_in(args.infile) as fin, _open_out(args.out) as fout, _RejectWriter(
        rejects_path
    ) as rejects:
        for n, line in enumerate(_lines(fin), 1):
            got = markup.parse(line, grid)
            if isinstance(got, DecodeFailure):
                rejects.write(n, got.reason, position=got.position, raw=line)
                continue
            fout.write(json.dumps(caption_to_json(got), ensure_ascii=False) + "\n")
    return EXIT_DATA if rejects.count else EXIT_OK


def _cmd_render(args) -> int:
    grid = GridSpec(args.bins)
    rejects_path = _default_rejects(args.out, args.rejects)
    with _open_in(args.infile) as fin, _open_out(args.out) as fout, _RejectWriter(
        rejects_path
    ) as rejects:
        for n, line in enumerate(_lines(fin), 1):
            try:
                doc = caption_from_json(json.loads(line))
                rendered = markup.serialize(doc, grid)
            except (json.JSONDecodeError, SchemaError, ValueError) as exc:
                rejects.write(n, str(exc), raw=line)
                continue
            fout.write(rendered + "\n")
    return EXIT_DATA if rejects.count else EXIT_OK


def _build_task(task, config: BuildConfig):
    line_no, parse_line, det_line = task
    kind, payload = pipeline.build_line_pair(parse_line, det_line, config)
    return line_no, kind, payload


def _pair_streams(parse_lines: Iterable[str], det_lines: Iterable[str]):
    sentinel = object()
    det_iter = iter(det_lines)
    n = 0
    for pline in parse_lines:
        n += 1
        dline = next(det_iter, sentinel)
        yield (n, pline, None if dline is sentinel else dline)
    for dline in det_iter:
        n += 1
        yield (n, None, dline)


def _cmd_build(args) -> int:
    config = BuildConfig(
        grid=GridSpec(args.bins),
        stoplist=_load_stoplist(args.stoplist),
        score_threshold=args.score_threshold,
        nms_threshold=args.nms_threshold,
    )
    rejects_path = _default_rejects(args.out, args.rejects)
    n_records = n_discarded = 0
    with _open_in(args.parses) as fp, _open_in(args.detections) as fd, _open_out(
        args.out
    ) as fout, _RejectWriter(rejects_path) as rejects:

        def results():
            pairs = _pair_streams(_lines(fp), _lines(fd))
            if args.workers > 1:
                import multiprocessing

                with multiprocessing.Pool(args.workers) as pool:
                    yield from pool.imap(
                        partial(_worker_or_tail, config=config), pairs, chunksize=64
                    )
            else:
                for task in pairs:
                    yield _worker_or_tail(task, config=config)

        for line_no, kind, payload in results():
            if kind == "record":
                fout.write(payload + "\n")
                n_records += 1
            elif kind == "discard":
                n_discarded += 1
            else:
                rejects.write(line_no, payload)
    print(
        f"build: {n_records} records, {n_discarded} discarded, {rejects.count} rejected",
        file=sys.stderr,
    )
    return EXIT_DATA if rejects.count else EXIT_OK


def _worker_or_tail(task, config: BuildConfig):
    line_no, pline, dline = task
    if pline is None:
        return line_no, "reject", "no matching parses line"
    if dline is None:
        return line_no, "reject", "no matching detections line"
    kind, payload = pipeline.build_line_pair(pline, dline, config)
    return line_no, kind, payload


def _cmd_stats(args) -> int:
    acc = pipeline.StatsAccumulator()
    with _open_in(args.infile) as fin:
        for n, line in enumerate(_lines(fin), 1):
            try:
                acc.add_json(json.loads(line))
            except (json.JSONDecodeError, SchemaError) as exc:
                print(f"error: line {n}: {exc}", file=sys.stderr)
                return EXIT_DATA
    stats = acc.finalize()
    if args.json:
        print(
            json.dumps(
                {
                    "images": stats.images,
                    "objects": stats.objects,
                    "text_spans": stats.text_spans,
                    "avg_expression_length": stats.avg_expression_length,
                }
            )
        )
    else:
        print(
            f"images={stats.images} objects={stats.objects} "
            f"text_spans={stats.text_spans} avg_len={round(stats.avg_expression_length, 4)}"
        )
    return EXIT_OK


def _parse_ks(s: str) -> list[int]:
    try:
        ks = [int(p) for p in s.split(",") if p.strip()]
    except ValueError:
        raise SchemaError(f"bad k list: {s!r}")
    if not ks or any(k < 1 for k in ks):
        raise SchemaError(f"bad k list: {s!r}")
    return ks


def _score_task(pair, ks, iou_threshold, grid):
    item, output = pair
    return metrics.score_pair(item, output, ks, iou_threshold, grid)


def _run_eval(args, ks) -> int:
    grid = GridSpec(args.bins)
    dims_override = None
    if args.width or args.height:
        if not (args.width and args.height):
            print("error: --width and --height must be given together", file=sys.stderr)
            return EXIT_USAGE
        dims_override = ImageDims(args.width, args.height)
    try:
        with _open_in(args.gold) as fg:
            items = metrics.load_gold_items(_lines(fg), dims_override)
        with _open_in(args.pred) as fp:
            preds = metrics.load_predictions(_lines(fp))
        paired = metrics.pair_items(items, preds)
    except (SchemaError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA

    task = partial(_score_task, ks=tuple(ks), iou_threshold=args.iou, grid=grid)
    if args.workers > 1:
        import multiprocessing

        with multiprocessing.Pool(args.workers) as pool:
            scores = pool.map(task, paired, chunksize=64)
    else:
        scores = [task(p) for p in paired]
    all_single = bool(items) and all(len(it.gold_boxes) == 1 for it in items)
    report = metrics.reduce_scores(scores, ks, len(items), all_single)

    print(f"items:           {report.n_items}")
    print(f"decode_failures: {report.n_decode_failures}")
    for k in ks:
        print(f"R@{k}: {report.recall_at[k]:.3f}")
    if report.accuracy is not None:
        print(f"accuracy: {report.accuracy:.3f}")
    print(
        json.dumps(
            {
                "n_items": report.n_items,
                "n_decode_failures": report.n_decode_failures,
                "recall_at": {str(k): report.recall_at[k] for k in ks},
                "accuracy": report.accuracy,
            }
        )
    )
    return EXIT_OK


def _cmd_eval_grounding(args) -> int:
    try:
        ks = _parse_ks(args.k)
    except SchemaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return _run_eval(args, ks)


def _cmd_eval_rec(args) -> int:
    args.k = "1"
    return _run_eval(args, [1])


def _cmd_prompts(args) -> int:
    grid = GridSpec(args.bins)
    rejects_path = _default_rejects(args.out, args.rejects)
    if args.mode == "instructions":
        if args.templates:
            with open(args.templates, "r", encoding="utf-8") as f:
                templates = prompts.load_templates(f)
        else:
            templates = prompts.default_templates()
    with _open_in(args.infile) as fin, _open_out(args.out) as fout, _RejectWriter(
        rejects_path
    ) as rejects:
        for n, line in enumerate(_lines(fin), 1):
            try:
                obj = json.loads(line)
                if args.mode == "instructions":
                    record = pipeline.grit_record_from_json(obj)
                    for pair in prompts.instruction_examples(record, templates, args.seed, grid):
                        fout.write(
                            json.dumps(
                                {"prompt": pair.prompt, "target": pair.target},
                                ensure_ascii=False,
                            )
                            + "\n"
                        )
                elif args.mode == "rec":
                    item = metrics.gold_item_from_json(obj)
                    out = {"id": item.id, "prompt": prompts.rec_prompt(item.phrase)}
                    fout.write(json.dumps(out, ensure_ascii=False) + "\n")
                elif args.mode == "reg":
                    item = metrics.gold_item_from_json(obj)
                    pair = quantize_box(item.gold_boxes[0], item.dims, grid)
                    out = {"id": item.id, "prompt": prompts.reg_prompt(pair, grid)}
                    fout.write(json.dumps(out, ensure_ascii=False) + "\n")
                else:  # grounding
                    if not isinstance(obj, dict) or not all(
                        k in obj for k in ("id", "caption", "start", "end")
                    ):
                        raise SchemaError("expected {id, caption, start, end}")
                    span = TextSpan(
                        obj["start"], obj["end"], obj["caption"][obj["start"] : obj["end"]]
                    )
                    out = {
                        "id": obj["id"],
                        "prompt": prompts.phrase_grounding_prompt(obj["caption"], span),
                    }
                    fout.write(json.dumps(out, ensure_ascii=False) + "\n")
            except (json.JSONDecodeError, SchemaError, ValueError, TypeError) as exc:
                rejects.write(n, str(exc), raw=line)
    return EXIT_DATA if rejects.count else EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring


def _add_grid(p, with_dims=True):
    p.add_argument("--bins", type=int, default=32, help="grid bins per side (default 32)")
    if with_dims:
        p.add_argument("--width", type=int, default=224, help="image width (default 224)")
        p.add_argument("--height", type=int, default=224, help="image height (default 224)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gritkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("encode", help="pixel box to location tokens")
    _add_grid(p)
    p.add_argument("--box", required=True, help="x1,y1,x2,y2 in pixels")
    p.set_defaults(func=_cmd_encode)

    p = sub.add_parser("decode", help="location tokens to pixel box")
    _add_grid(p)
    p.add_argument("--tokens", required=True, help="'<loc_a><loc_b>' or 'a,b'")
    p.set_defaults(func=_cmd_decode)

    p = sub.add_parser("parse", help="markup lines to structured JSONL")
    _add_grid(p, with_dims=False)
    p.add_argument("--in", dest="infile", default="-")
    p.add_argument("--out", default="-")
    p.add_argument("--rejects")
    p.set_defaults(func=_cmd_parse)

    p = sub.add_parser("render", help="structured JSONL to markup lines")
    _add_grid(p, with_dims=False)
    p.add_argument("--in", dest="infile", default="-")
    p.add_argument("--out", default="-")
    p.add_argument("--rejects")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("build", help="construct grounded records")
    _add_grid(p, with_dims=False)
    p.add_argument("--parses", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", default="-")
    p.add_argument("--rejects")
    p.add_argument("--stoplist", help=f"stoplist path (default ${STOPLIST_ENV} or packaged)")
    p.add_argument("--score-threshold", type=float, default=pipeline.DEFAULT_SCORE_THRESHOLD)
    p.add_argument("--nms-threshold", type=float, default=pipeline.DEFAULT_NMS_THRESHOLD)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_build)

    p = sub.add_parser("stats", help="corpus statistics over grit.jsonl")
    p.add_argument("--in", dest="infile", default="-")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=_cmd_stats)

    for name, fn in (("eval-grounding", _cmd_eval_grounding), ("eval-rec", _cmd_eval_rec)):
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} metrics")
        p.add_argument("--gold", required=True)
        p.add_argument("--pred", required=True)
        p.add_argument("--bins", type=int, default=32)
        p.add_argument("--iou", type=float, default=metrics.DEFAULT_IOU_THRESHOLD)
        p.add_argument(
            "--width", type=int, help="force one image width for all items (with --height)"
        )
        p.add_argument("--height", type=int, help="force one image height for all items")
        p.add_argument("--workers", type=int, default=1)
        if name == "eval-grounding":
            p.add_argument("--k", default="1,5,10", help="comma-separated ranks")
        p.set_defaults(func=fn)

    p = sub.add_parser("prompts", help="build prompts / instruction pairs")
    _add_grid(p, with_dims=False)
    p.add_argument(
        "--mode", choices=("instructions", "rec", "reg", "grounding"), required=True
    )
    p.add_argument("--in", dest="infile", default="-")
    p.add_argument("--out", default="-")
    p.add_argument("--rejects")
    p.add_argument("--templates", help="template file (default: packaged set)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_prompts)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
