"""Grounded image-text corpus construction and statistics.

Consumes dependency-parsed captions (parses.jsonl) and grounding-detector
outputs (detections.jsonl) and produces grounded records (grit.jsonl):
noun chunks are filtered against an abstract-noun stoplist, detector boxes
are deduplicated by global NMS and cut at a confidence threshold, chunks
are expanded to referring expressions along their dependency subtrees,
non-maximal expressions are dropped, and the survivors are serialized as
grounded markup.

Wire formats (JSON Lines, UTF-8, one object per line):

    parses.jsonl     {"image_id", "width", "height", "caption",
                      "tokens": [{"text", "head", "dep"}],
                      "chunks": [{"start", "end", "head"}]}
    detections.jsonl {"image_id",
                      "detections": [{"chunk_index", "box": [x1,y1,x2,y2],
                                      "score"}]}
    grit.jsonl       {"image_id", "width", "height", "caption",
                      "refs": [{"start_tok", "end_tok", "text",
                                "boxes": [[x1,y1,x2,y2], ...]}],
                      "grounded_text"}

Unknown fields on a parses record are passed through to the grit record.
Records violating a schema are never silently dropped; the streaming
entry points report them so callers can write a rejects sidecar.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Sequence

from . import geometry
from .geometry import PixelBox, ScoredBox
from .locgrid import GridSpec, ImageDims, quantize_box
from .markup import GroundLink, GroundedCaption, TextSpan, serialize

DEFAULT_SCORE_THRESHOLD = 0.65
DEFAULT_NMS_THRESHOLD = 0.7


class SchemaError(ValueError):
    """A record does not conform to its wire schema."""


@dataclass(frozen=True)
class ParseToken:
    text: str
    head: int
    dep: str


@dataclass(frozen=True)
class NounChunk:
    """Token range of a base noun phrase; ``head`` is its head token index."""

    start: int
    end: int
    head: int


@dataclass
class ParseDoc:
    """A parsed caption: tokens with dependency heads plus noun chunks."""

    image_id: str
    dims: ImageDims
    caption: str
    tokens: list[ParseToken]
    chunks: list[NounChunk]
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExpressionSpan:
    """A referring expression as a token range tied to its source chunk."""

    start: int
    end: int
    source_chunk: int
    text: str


@dataclass
class GritRecord:
    """One grounded image-text pair ready for serialization."""

    image_id: str
    dims: ImageDims
    caption: str
    refs: list[tuple[ExpressionSpan, list[PixelBox]]]
    grounded_text: str
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Discarded:
    """A record legitimately dropped by the pipeline (not an error)."""

    reason: str


@dataclass(frozen=True)
class DatasetStats:
    images: int
    objects: int
    text_spans: int
    avg_expression_length: float


@dataclass(frozen=True)
class BuildConfig:
    grid: GridSpec = GridSpec()
    stoplist: frozenset[str] = frozenset()
    score_threshold: float = DEFAULT_SCORE_THRESHOLD
    nms_threshold: float = DEFAULT_NMS_THRESHOLD

    def __post_init__(self):
        if not 0.0 < self.score_threshold <= 1.0:
            raise ValueError(f"score_threshold must lie in (0, 1], got {self.score_threshold}")
        if not 0.0 < self.nms_threshold <= 1.0:
            raise ValueError(f"nms_threshold must lie in (0, 1], got {self.nms_threshold}")


# ---------------------------------------------------------------------------
# Schema validation


def _expect(cond: bool, msg: str):
    if not cond:
        raise SchemaError(msg)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


_PARSE_KEYS = ("image_id", "width", "height", "caption", "tokens", "chunks")


def parse_doc_from_json(obj) -> ParseDoc:
    """Validate a parses.jsonl object and build a ParseDoc (raises SchemaError)."""
    _expect(isinstance(obj, dict), "record must be a JSON object")
    for key in _PARSE_KEYS:
        _expect(key in obj, f"missing field {key!r}")
    _expect(isinstance(obj["image_id"], str) and obj["image_id"], "image_id must be a non-empty string")
    _expect(_is_int(obj["width"]) and obj["width"] > 0, "width must be a positive integer")
    _expect(_is_int(obj["height"]) and obj["height"] > 0, "height must be a positive integer")
    _expect(isinstance(obj["caption"], str), "caption must be a string")
    raw_tokens = obj["tokens"]
    _expect(isinstance(raw_tokens, list), "tokens must be a list")
    n = len(raw_tokens)
    tokens: list[ParseToken] = []
    n_roots = 0
    for i, t in enumerate(raw_tokens):
        _expect(isinstance(t, dict), f"token {i} must be an object")
        text, head, dep = t.get("text"), t.get("head"), t.get("dep")
        _expect(isinstance(text, str) and text != "", f"token {i}: text must be a non-empty string")
        _expect(_is_int(head) and 0 <= head < n, f"token {i}: head out of range")
        _expect(isinstance(dep, str), f"token {i}: dep must be a string")
        if head == i:
            n_roots += 1
        tokens.append(ParseToken(text, head, dep))
    # One root per sentence; multi-sentence captions carry several.
    _expect(n == 0 or n_roots >= 1, "token heads contain no root")
    for i, t in enumerate(tokens):
        # Every token must reach a root; a cycle would trap subtree expansion.
        seen = set()
        j = i
        while tokens[j].head != j:
            _expect(j not in seen, f"token {i}: head chain contains a cycle")
            seen.add(j)
            j = tokens[j].head
    raw_chunks = obj["chunks"]
    _expect(isinstance(raw_chunks, list), "chunks must be a list")
    chunks: list[NounChunk] = []
    prev_end = 0
    for i, c in enumerate(raw_chunks):
        _expect(isinstance(c, dict), f"chunk {i} must be an object")
        start, end, head = c.get("start"), c.get("end"), c.get("head")
        _expect(_is_int(start) and _is_int(end) and _is_int(head), f"chunk {i}: indices must be integers")
        _expect(0 <= start <= head < end <= n, f"chunk {i}: span/head out of range")
        _expect(start >= prev_end, f"chunk {i}: chunks overlap or are out of order")
        prev_end = end
        chunks.append(NounChunk(start, end, head))
    extra = {k: v for k, v in obj.items() if k not in _PARSE_KEYS}
    return ParseDoc(
        image_id=obj["image_id"],
        dims=ImageDims(obj["width"], obj["height"]),
        caption=obj["caption"],
        tokens=tokens,
        chunks=chunks,
        extra=extra,
    )


def detections_from_json(obj) -> tuple[str, list[ScoredBox]]:
    """Validate a detections.jsonl object; returns (image_id, detections)."""
    _expect(isinstance(obj, dict), "record must be a JSON object")
    _expect(isinstance(obj.get("image_id"), str) and obj["image_id"], "image_id must be a non-empty string")
    raw = obj.get("detections")
    _expect(isinstance(raw, list), "detections must be a list")
    dets: list[ScoredBox] = []
    for i, d in enumerate(raw):
        _expect(isinstance(d, dict), f"detection {i} must be an object")
        ci, box, score = d.get("chunk_index"), d.get("box"), d.get("score")
        _expect(_is_int(ci) and ci >= 0, f"detection {i}: chunk_index must be a non-negative integer")
        _expect(
            isinstance(box, list) and len(box) == 4 and all(_is_num(v) for v in box),
            f"detection {i}: box must be [x1, y1, x2, y2]",
        )
        _expect(_is_num(score) and 0.0 <= score <= 1.0, f"detection {i}: score must lie in [0, 1]")
        try:
            pixel = PixelBox(*(float(v) for v in box))
        except ValueError as exc:
            raise SchemaError(f"detection {i}: {exc}") from exc
        dets.append(ScoredBox(pixel, float(score), ci))
    return obj["image_id"], dets


def grit_record_to_json(record: GritRecord) -> dict:
    refs = [
        {
            "start_tok": expr.start,
            "end_tok": expr.end,
            "text": expr.text,
            "boxes": [[b.x1, b.y1, b.x2, b.y2] for b in boxes],
        }
        for expr, boxes in record.refs
    ]
    out = {
        "image_id": record.image_id,
        "width": record.dims.width,
        "height": record.dims.height,
        "caption": record.caption,
        "refs": refs,
        "grounded_text": record.grounded_text,
    }
    for k, v in record.extra.items():
        out.setdefault(k, v)
    return out


_GRIT_KEYS = ("image_id", "width", "height", "caption", "refs", "grounded_text")


def grit_record_from_json(obj) -> GritRecord:
    """Validate a grit.jsonl object back into a GritRecord (raises SchemaError)."""
    _expect(isinstance(obj, dict), "record must be a JSON object")
    for key in _GRIT_KEYS:
        _expect(key in obj, f"missing field {key!r}")
    _expect(isinstance(obj["image_id"], str) and obj["image_id"], "image_id must be a non-empty string")
    _expect(_is_int(obj["width"]) and obj["width"] > 0, "width must be a positive integer")
    _expect(_is_int(obj["height"]) and obj["height"] > 0, "height must be a positive integer")
    _expect(isinstance(obj["caption"], str), "caption must be a string")
    _expect(isinstance(obj["grounded_text"], str), "grounded_text must be a string")
    _expect(isinstance(obj["refs"], list), "refs must be a list")
    refs: list[tuple[ExpressionSpan, list[PixelBox]]] = []
    for i, r in enumerate(obj["refs"]):
        _expect(isinstance(r, dict), f"ref {i} must be an object")
        st, en, text, boxes = r.get("start_tok"), r.get("end_tok"), r.get("text"), r.get("boxes")
        _expect(_is_int(st) and _is_int(en) and 0 <= st < en, f"ref {i}: bad token span")
        _expect(isinstance(text, str) and text, f"ref {i}: text must be a non-empty string")
        _expect(isinstance(boxes, list) and boxes, f"ref {i}: boxes must be a non-empty list")
        pix: list[PixelBox] = []
        for b in boxes:
            _expect(
                isinstance(b, list) and len(b) == 4 and all(_is_num(v) for v in b),
                f"ref {i}: box must be [x1, y1, x2, y2]",
            )
            try:
                pix.append(PixelBox(*(float(v) for v in b)))
            except ValueError as exc:
                raise SchemaError(f"ref {i}: {exc}") from exc
        refs.append((ExpressionSpan(st, en, i, text), pix))
    extra = {k: v for k, v in obj.items() if k not in _GRIT_KEYS}
    return GritRecord(
        image_id=obj["image_id"],
        dims=ImageDims(obj["width"], obj["height"]),
        caption=obj["caption"],
        refs=refs,
        grounded_text=obj["grounded_text"],
        extra=extra,
    )


# ---------------------------------------------------------------------------
# Pipeline operations


def token_char_spans(doc: ParseDoc) -> list[tuple[int, int]]:
    """Align tokens to caption character offsets (greedy, whitespace gaps only)."""
    spans: list[tuple[int, int]] = []
    caption = doc.caption
    pos = 0
    for i, tok in enumerate(doc.tokens):
        idx = caption.find(tok.text, pos)
        if idx < 0 or caption[pos:idx].strip():
            raise SchemaError(f"token {i} ({tok.text!r}) does not align with the caption")
        spans.append((idx, idx + len(tok.text)))
        pos = idx + len(tok.text)
    return spans


def filter_chunks(doc: ParseDoc, stoplist: frozenset[str] | set[str]) -> list[NounChunk]:
    """Drop chunks whose head token (lowercased) is stoplisted; keep order."""
    return [c for c in doc.chunks if doc.tokens[c.head].text.lower() not in stoplist]


def _children(doc: ParseDoc) -> list[list[int]]:
    kids: list[list[int]] = [[] for _ in doc.tokens]
    for i, tok in enumerate(doc.tokens):
        if tok.head != i:
            kids[tok.head].append(i)
    return kids


def _subtree_range(doc: ParseDoc, chunk: NounChunk, kids: list[list[int]]) -> tuple[int, int] | None:
    """Token range of the chunk head's full subtree, or None when unusable.

    Unusable means: the head has a conjunct/coordinator child, the subtree is
    not a contiguous surface run, or it fails to cover the chunk itself.
    """
    head = chunk.head
    for c in kids[head]:
        if doc.tokens[c].dep in ("conj", "cc"):
            return None
    members: set[int] = set()
    stack = [head]
    while stack:
        t = stack.pop()
        if t in members:
            continue
        members.add(t)
        stack.extend(kids[t])
    lo, hi = min(members), max(members) + 1
    if hi - lo != len(members):
        return None
    if not (lo <= chunk.start and chunk.end <= hi):
        return None
    return lo, hi


def expand_chunk(doc: ParseDoc, chunk: NounChunk) -> ExpressionSpan:
    """Expand a noun chunk to the referring expression of its head's subtree.

    Falls back to the unexpanded chunk when the head has conjuncts or the
    subtree does not form a contiguous surface string.
    """
    source = doc.chunks.index(chunk)
    spans = token_char_spans(doc)
    rng = _subtree_range(doc, chunk, _children(doc)) or (chunk.start, chunk.end)
    lo, hi = rng
    return ExpressionSpan(lo, hi, source, doc.caption[spans[lo][0] : spans[hi - 1][1]])


def retain_maximal(spans: Sequence[ExpressionSpan]) -> list[ExpressionSpan]:
    """Keep spans not strictly contained in another; equal ranges keep the
    earliest source chunk. Input order is preserved."""
    out: list[ExpressionSpan] = []
    for i, s in enumerate(spans):
        dominated = False
        for j, t in enumerate(spans):
            if i == j:
                continue
            if t.start <= s.start and s.end <= t.end:
                if (t.start, t.end) != (s.start, s.end):
                    dominated = True
                    break
                if t.source_chunk < s.source_chunk:
                    dominated = True
                    break
        if not dominated:
            out.append(s)
    return out


def select_boxes(
    dets: Sequence[ScoredBox], score_threshold: float, nms_threshold: float
) -> dict[int, list[PixelBox]]:
    """Global NMS first, then the confidence cut, grouped by chunk index.

    Every chunk index present in ``dets`` gets a key; groups whose boxes were
    all suppressed or under threshold are empty lists.
    """
    groups: dict[int, list[PixelBox]] = {d.chunk_index: [] for d in dets}
    for i in geometry.nms(dets, nms_threshold):
        d = dets[i]
        if d.score > score_threshold:
            groups[d.chunk_index].append(d.box)
    return groups


def build_record(
    doc: ParseDoc, dets: Sequence[ScoredBox], config: BuildConfig
) -> GritRecord | Discarded:
    """Run the full pipeline on one parsed caption plus its detections.

    Returns Discarded (a normal outcome, not an error) when nothing
    groundable survives. Raises SchemaError for detections referencing
    chunk indices the document does not have, or for tokens that cannot
    be aligned with the caption.
    """
    n_chunks = len(doc.chunks)
    for d in dets:
        if d.chunk_index >= n_chunks:
            raise SchemaError(f"detection references chunk {d.chunk_index} of {n_chunks}")

    stoplist = config.stoplist
    alive = [
        i for i, c in enumerate(doc.chunks) if doc.tokens[c.head].text.lower() not in stoplist
    ]
    alive_set = set(alive)
    groups = select_boxes(
        [d for d in dets if d.chunk_index in alive_set],
        config.score_threshold,
        config.nms_threshold,
    )
    if not any(groups.values()):
        return Discarded("no boxes above threshold")

    spans = token_char_spans(doc)
    kids = _children(doc)
    exprs: list[ExpressionSpan] = []
    for i in alive:
        chunk = doc.chunks[i]
        lo, hi = _subtree_range(doc, chunk, kids) or (chunk.start, chunk.end)
        exprs.append(ExpressionSpan(lo, hi, i, doc.caption[spans[lo][0] : spans[hi - 1][1]]))

    refs: list[tuple[ExpressionSpan, list[PixelBox]]] = []
    prev_char_end = -1
    for expr in retain_maximal(exprs):
        boxes = groups.get(expr.source_chunk)
        if not boxes:
            continue
        char_start = spans[expr.start][0]
        # Distinct subtrees nest or are disjoint, but a contiguity fallback can
        # partially overlap another expression; drop the later one.
        if char_start < prev_char_end:
            continue
        refs.append((expr, boxes))
        prev_char_end = spans[expr.end - 1][1]
    if not refs:
        return Discarded("no grounded expressions")

    links = [
        GroundLink(
            span=TextSpan(
                spans[expr.start][0],
                spans[expr.end - 1][1],
                doc.caption[spans[expr.start][0] : spans[expr.end - 1][1]],
            ),
            boxes=tuple(quantize_box(b, doc.dims, config.grid) for b in boxes),
        )
        for expr, boxes in refs
    ]
    grounded = serialize(
        GroundedCaption(caption=doc.caption, links=tuple(links), has_grounding_marker=True),
        config.grid,
    )
    return GritRecord(
        image_id=doc.image_id,
        dims=doc.dims,
        caption=doc.caption,
        refs=refs,
        grounded_text=grounded,
        extra=dict(doc.extra),
    )


# ---------------------------------------------------------------------------
# Statistics


@dataclass
class StatsAccumulator:
    """Mergeable partial sums behind DatasetStats."""

    images: int = 0
    objects: int = 0
    text_spans: int = 0
    words: int = 0

    def add_record(self, record: GritRecord):
        self.images += 1
        for expr, boxes in record.refs:
            self.text_spans += 1
            self.objects += len(boxes)
            self.words += len(expr.text.split())

    def add_json(self, obj: Mapping):
        _expect(isinstance(obj.get("refs"), list), "refs must be a list")
        self.images += 1
        for r in obj["refs"]:
            _expect(isinstance(r, dict), "ref must be an object")
            text, boxes = r.get("text"), r.get("boxes")
            _expect(isinstance(text, str), "ref text must be a string")
            _expect(isinstance(boxes, list) and boxes, "ref boxes must be a non-empty list")
            self.text_spans += 1
            self.objects += len(boxes)
            self.words += len(text.split())

    def merge(self, other: "StatsAccumulator"):
        self.images += other.images
        self.objects += other.objects
        self.text_spans += other.text_spans
        self.words += other.words

    def finalize(self) -> DatasetStats:
        avg = self.words / self.text_spans if self.text_spans else 0.0
        return DatasetStats(self.images, self.objects, self.text_spans, avg)


def compute_stats(records: Iterable[GritRecord]) -> DatasetStats:
    """Corpus statistics over a stream of records (constant memory)."""
    acc = StatsAccumulator()
    for r in records:
        acc.add_record(r)
    return acc.finalize()


# ---------------------------------------------------------------------------
# Streaming build over JSONL line pairs


def build_line_pair(
    parse_line: str, det_line: str, config: BuildConfig
) -> tuple[str, str]:
    """Process one aligned (parses, detections) line pair.

    Returns (kind, payload): ("record", grit json line), ("discard", reason)
    or ("reject", reason). Pure function of its inputs, safe for worker pools.
    """
    try:
        pobj = json.loads(parse_line)
    except json.JSONDecodeError as exc:
        return "reject", f"parses: invalid JSON: {exc.msg}"
    try:
        dobj = json.loads(det_line)
    except json.JSONDecodeError as exc:
        return "reject", f"detections: invalid JSON: {exc.msg}"
    try:
        doc = parse_doc_from_json(pobj)
        det_id, dets = detections_from_json(dobj)
        if det_id != doc.image_id:
            raise SchemaError(
                f"image_id mismatch: parses {doc.image_id!r} vs detections {det_id!r}"
            )
        result = build_record(doc, dets, config)
    except SchemaError as exc:
        return "reject", str(exc)
    if isinstance(result, Discarded):
        return "discard", result.reason
    return "record", json.dumps(grit_record_to_json(result), ensure_ascii=False)


def build_stream(
    parse_lines: Iterable[str], det_lines: Iterable[str], config: BuildConfig
) -> Iterator[tuple[int, str, str]]:
    """Run the pipeline over aligned line streams.

    Yields (line_number, kind, payload) in input order; line numbers are
    1-based. A length mismatch between the two streams rejects the unpaired
    tail. Memory use is independent of stream length.
    """
    _SENTINEL = object()
    det_iter = iter(det_lines)
    line_no = 0
    for parse_line in parse_lines:
        line_no += 1
        det_line = next(det_iter, _SENTINEL)
        if det_line is _SENTINEL:
            yield line_no, "reject", "no matching detections line"
            continue
        kind, payload = build_line_pair(parse_line, det_line, config)
        yield line_no, kind, payload
    for det_line in det_iter:
        line_no += 1
        yield line_no, "reject", "no matching parses line"
