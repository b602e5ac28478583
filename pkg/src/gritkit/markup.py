"""Serializer and parser for grounded-caption markup.

A grounded caption binds text spans to image regions with a hyperlink-like
notation: the span sits between ``<p>`` and ``</p>`` and is immediately
followed by a ``<box>`` group holding one location-token pair per box,
pairs joined by ``<delim>``. The normative grammar:

    seq   := "<s>"? image? "<grounding>"? (text | link)* "</s>"?
    image := "<image>" opaque "</image>"
    link  := "<p>" text "</p>" "<box>" pair ("<delim>" pair)* "</box>"
    pair  := loc loc
    loc   := "<loc_" k ">"        (k decimal, 0 <= k < bins*bins)

Canonical output spells every link as ``<p> text </p>`` (single spaces
inside, nothing between ``</p>`` and ``<box>``, nothing inside the box
group) and separates the structural prefix/suffix tokens from the caption
body with single spaces. ``parse`` accepts only this grammar but tolerates
extra whitespace between markup tokens; ``extract_links`` is the lenient
scanner for raw model output and recovers every well-formed box group it
can find.

There is no escaping mechanism: captions that contain markup-looking
tokens cannot be serialized and are rejected.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .locgrid import GridSpec, TokenBoxPair, pair_is_ordered

# DecodeFailure reasons.
UNCLOSED_BOX = "unclosed_box"
ODD_LOC_COUNT = "odd_loc_count"
BAD_PAIR = "bad_pair"
EMPTY_BOX = "empty_box"
UNKNOWN_TOKEN = "unknown_token"
SPAN_WITHOUT_BOX = "span_without_box"
BOX_WITHOUT_SPAN = "box_without_span"
TOKEN_OUT_OF_RANGE = "token_out_of_range"
PAIR_ORDER = "pair_order"
UNCLOSED_SPAN = "unclosed_span"
UNCLOSED_IMAGE = "unclosed_image"
EMPTY_SPAN = "empty_span"
MISPLACED_TOKEN = "misplaced_token"
TRAILING_CONTENT = "trailing_content"

FAILURE_REASONS = frozenset(
    {
        UNCLOSED_BOX,
        ODD_LOC_COUNT,
        BAD_PAIR,
        EMPTY_BOX,
        UNKNOWN_TOKEN,
        SPAN_WITHOUT_BOX,
        BOX_WITHOUT_SPAN,
        TOKEN_OUT_OF_RANGE,
        PAIR_ORDER,
        UNCLOSED_SPAN,
        UNCLOSED_IMAGE,
        EMPTY_SPAN,
        MISPLACED_TOKEN,
        TRAILING_CONTENT,
    }
)


@dataclass(frozen=True)
class TextSpan:
    """A caption substring addressed by character offsets (end exclusive)."""

    start: int
    end: int
    text: str


@dataclass(frozen=True)
class GroundLink:
    """One text span bound to one or more token-box pairs.

    ``span`` is None only for anonymous links recovered by the lenient
    scanner (a bare box group with no preceding ``<p>`` span).
    """

    span: Optional[TextSpan]
    boxes: tuple[TokenBoxPair, ...]

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        if not self.boxes:
            raise ValueError("a ground link needs at least one box")


@dataclass(frozen=True)
class GroundedCaption:
    """A caption plus its ordered, non-overlapping ground links."""

    caption: str
    links: tuple[GroundLink, ...] = ()
    has_grounding_marker: bool = False
    has_image_slot: bool = False
    image_payload: str = ""

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))


@dataclass(frozen=True)
class DecodeFailure:
    """Where and why an input string violated the grammar."""

    position: int
    reason: str


# Anything shaped like a markup token; unknown names are lexed, not text.
_TOKEN_RE = re.compile(r"<(/?)([a-zA-Z][a-zA-Z0-9_]*)>")
_LOC_NAME = re.compile(r"loc_(\d+)$")

_FIXED_TOKENS = {
    ("", "s"): "s",
    ("/", "s"): "end_s",
    ("", "image"): "image",
    ("/", "image"): "end_image",
    ("", "grounding"): "grounding",
    ("", "p"): "p",
    ("/", "p"): "end_p",
    ("", "box"): "box",
    ("/", "box"): "end_box",
    ("", "delim"): "delim",
}


@dataclass
class _Tok:
    kind: str
    start: int
    end: int
    text: str = ""
    loc: int = field(default=-1)


def _lex(s: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos = 0
    for m in _TOKEN_RE.finditer(s):
        if m.start() > pos:
            toks.append(_Tok("text", pos, m.start(), s[pos : m.start()]))
        slash, name = m.group(1), m.group(2)
        kind = _FIXED_TOKENS.get((slash, name))
        if kind is None and not slash:
            lm = _LOC_NAME.match(name)
            if lm:
                toks.append(_Tok("loc", m.start(), m.end(), loc=int(lm.group(1))))
                pos = m.end()
                continue
        toks.append(_Tok(kind or "unknown", m.start(), m.end()))
        pos = m.end()
    if pos < len(s):
        toks.append(_Tok("text", pos, len(s), s[pos:]))
    return toks


def _is_ws(tok: _Tok) -> bool:
    return tok.kind == "text" and not tok.text.strip()


def _parse_box_group(toks: list[_Tok], i: int, grid: GridSpec):
    """Parse toks[i] == <box> .. </box>; returns (pairs, next_index) or DecodeFailure."""
    open_tok = toks[i]
    segments: list[list[_Tok]] = [[]]
    j = i + 1
    while j < len(toks):
        t = toks[j]
        if t.kind == "loc":
            segments[-1].append(t)
        elif t.kind == "delim":
            segments.append([])
        elif _is_ws(t):
            pass
        elif t.kind == "end_box":
            break
        elif t.kind == "unknown":
            return DecodeFailure(t.start, UNKNOWN_TOKEN)
        else:
            return DecodeFailure(t.start, MISPLACED_TOKEN)
        j += 1
    else:
        return DecodeFailure(open_tok.start, UNCLOSED_BOX)
    pairs: list[TokenBoxPair] = []
    for seg in segments:
        if not seg:
            return DecodeFailure(open_tok.start, EMPTY_BOX)
        if len(seg) % 2:
            return DecodeFailure(seg[-1].start, ODD_LOC_COUNT)
        if len(seg) != 2:
            return DecodeFailure(seg[2].start, BAD_PAIR)
        for t in seg:
            if t.loc >= grid.vocab_size:
                return DecodeFailure(t.start, TOKEN_OUT_OF_RANGE)
        pair = TokenBoxPair(seg[0].loc, seg[1].loc)
        if not pair_is_ordered(pair, grid):
            return DecodeFailure(seg[0].start, PAIR_ORDER)
        pairs.append(pair)
    return pairs, j + 1


def _skip_ws(toks: list[_Tok], i: int) -> int:
    while i < len(toks) and _is_ws(toks[i]):
        i += 1
    return i


def parse(text: str, grid: GridSpec) -> GroundedCaption | DecodeFailure:
    """Strict parse of a markup string; returns DecodeFailure on any violation.

    Whitespace between markup tokens is tolerated; the single canonical
    separator spaces around the structural prefix and the ``</s>`` suffix
    are consumed, everything else becomes caption text verbatim.
    """
    toks = _lex(text)
    n = len(toks)
    i = 0
    has_image = False
    payload = ""
    has_marker = False

    j = _skip_ws(toks, i)
    if j < n and toks[j].kind == "s":
        i = j + 1
        prefix_seen = True
    else:
        prefix_seen = False
    j = _skip_ws(toks, i)
    if j < n and toks[j].kind == "image":
        k = j + 1
        while k < n and toks[k].kind != "end_image":
            k += 1
        if k == n:
            return DecodeFailure(toks[j].start, UNCLOSED_IMAGE)
        payload = text[toks[j].end : toks[k].start].strip()
        has_image = True
        prefix_seen = True
        i = k + 1
    j = _skip_ws(toks, i)
    if j < n and toks[j].kind == "grounding":
        has_marker = True
        prefix_seen = True
        i = j + 1

    caption_parts: list[str] = []
    caption_len = 0
    links: list[GroundLink] = []
    strip_leading = prefix_seen
    prev_text_part = -1  # index into caption_parts of the immediately preceding text token
    saw_end_s = False

    while i < n:
        t = toks[i]
        do_strip, strip_leading = strip_leading, False
        if saw_end_s:
            if _is_ws(t):
                i += 1
                continue
            return DecodeFailure(t.start, TRAILING_CONTENT)
        if t.kind == "text":
            seg = t.text
            if do_strip and seg.startswith(" "):
                seg = seg[1:]
            caption_parts.append(seg)
            caption_len += len(seg)
            prev_text_part = len(caption_parts) - 1
            i += 1
            continue
        if t.kind == "p":
            j = i + 1
            span_parts: list[str] = []
            while j < n and toks[j].kind == "text":
                span_parts.append(toks[j].text)
                j += 1
            if j == n:
                return DecodeFailure(t.start, UNCLOSED_SPAN)
            if toks[j].kind != "end_p":
                if toks[j].kind == "unknown":
                    return DecodeFailure(toks[j].start, UNKNOWN_TOKEN)
                return DecodeFailure(toks[j].start, MISPLACED_TOKEN)
            span_text = "".join(span_parts).strip()
            if not span_text:
                return DecodeFailure(t.start, EMPTY_SPAN)
            k = _skip_ws(toks, j + 1)
            if k == n or toks[k].kind != "box":
                return DecodeFailure(toks[j].end, SPAN_WITHOUT_BOX)
            got = _parse_box_group(toks, k, grid)
            if isinstance(got, DecodeFailure):
                return got
            pairs, i = got
            span = TextSpan(caption_len, caption_len + len(span_text), span_text)
            caption_parts.append(span_text)
            caption_len += len(span_text)
            links.append(GroundLink(span, tuple(pairs)))
            prev_text_part = -1
            continue
        if t.kind == "box":
            return DecodeFailure(t.start, BOX_WITHOUT_SPAN)
        if t.kind == "end_s":
            if prev_text_part >= 0 and caption_parts[prev_text_part].endswith(" "):
                caption_parts[prev_text_part] = caption_parts[prev_text_part][:-1]
            saw_end_s = True
            i += 1
            continue
        if t.kind == "unknown":
            return DecodeFailure(t.start, UNKNOWN_TOKEN)
        return DecodeFailure(t.start, MISPLACED_TOKEN)

    caption = "".join(caption_parts)
    return GroundedCaption(
        caption=caption,
        links=tuple(links),
        has_grounding_marker=has_marker,
        has_image_slot=has_image,
        image_payload=payload,
    )


def extract_links(text: str, grid: GridSpec) -> tuple[list[GroundLink], bool]:
    """Lenient scan of arbitrary model output for box groups.

    Collects every well-formed ``<box>..</box>`` group in order of
    appearance, attaching the immediately preceding ``<p>..</p>`` span when
    one is present (otherwise the link is anonymous, span None). Malformed
    groups are skipped; the returned flag is True iff at least one group
    had to be skipped.
    """
    toks = _lex(text)
    n = len(toks)
    links: list[GroundLink] = []
    failed = False
    i = 0
    while i < n:
        if toks[i].kind != "box":
            i += 1
            continue
        got = _parse_box_group(toks, i, grid)
        if isinstance(got, DecodeFailure):
            failed = True
            i += 1
            continue
        pairs, nxt = got
        links.append(GroundLink(_preceding_span(toks, i, text), tuple(pairs)))
        i = nxt
    return links, failed


def _preceding_span(toks: list[_Tok], box_idx: int, text: str) -> Optional[TextSpan]:
    j = box_idx - 1
    while j >= 0 and _is_ws(toks[j]):
        j -= 1
    if j < 0 or toks[j].kind != "end_p":
        return None
    close = toks[j]
    j -= 1
    while j >= 0 and toks[j].kind == "text":
        j -= 1
    if j < 0 or toks[j].kind != "p":
        return None
    raw = text[toks[j].end : close.start]
    inner = raw.strip()
    if not inner:
        return None
    start = toks[j].end + (len(raw) - len(raw.lstrip()))
    return TextSpan(start, start + len(inner), inner)


def render_box_group(pairs: Sequence[TokenBoxPair], grid: GridSpec) -> str:
    """Canonical ``<box>..</box>`` string for a sequence of token pairs."""
    if not pairs:
        raise ValueError("cannot render an empty box group")
    for p in pairs:
        if p.tl >= grid.vocab_size or p.br >= grid.vocab_size:
            raise ValueError(f"token index out of range for grid: {p}")
        if not pair_is_ordered(p, grid):
            raise ValueError(f"token pair not corner-ordered: {p}")
    return "<box>" + "<delim>".join(f"<loc_{p.tl}><loc_{p.br}>" for p in pairs) + "</box>"


def contains_markup(s: str) -> bool:
    """True when the string holds anything shaped like a markup token."""
    return _TOKEN_RE.search(s) is not None


def serialize(doc: GroundedCaption, grid: GridSpec) -> str:
    """Render a grounded caption in canonical form.

    Raises ValueError when the document cannot survive a round trip: token
    indices outside the grid vocabulary, unordered pairs, overlapping or
    out-of-order links, span text disagreeing with the caption, or caption
    text containing markup-looking tokens (no escaping exists).
    """
    if contains_markup(doc.caption):
        raise ValueError("caption contains markup-like tokens and cannot be serialized")
    if doc.image_payload and (
        contains_markup(doc.image_payload) or doc.image_payload != doc.image_payload.strip()
    ):
        raise ValueError("image payload must be markup-free with no surrounding whitespace")
    prev_end = 0
    for link in doc.links:
        span = link.span
        if span is None:
            raise ValueError("anonymous links cannot be serialized")
        if span.start < prev_end:
            raise ValueError(f"links overlap or are out of order at offset {span.start}")
        if doc.caption[span.start : span.end] != span.text:
            raise ValueError(f"span text does not match caption at offset {span.start}")
        if not span.text or span.text != span.text.strip():
            raise ValueError(f"span text must be non-empty without outer whitespace: {span.text!r}")
        prev_end = span.end

    parts: list[str] = []
    if doc.has_image_slot:
        parts.append("<s> <image> ")
        if doc.image_payload:
            parts.append(doc.image_payload + " ")
        parts.append("</image> ")
    if doc.has_grounding_marker:
        parts.append("<grounding> ")
    pos = 0
    for link in doc.links:
        parts.append(doc.caption[pos : link.span.start])
        parts.append("<p> " + link.span.text + " </p>")
        parts.append(render_box_group(link.boxes, grid))
        pos = link.span.end
    parts.append(doc.caption[pos:])
    if doc.has_image_slot:
        parts.append(" </s>")
    return "".join(parts)
