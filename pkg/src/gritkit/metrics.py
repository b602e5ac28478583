"""Grounding evaluation: recall@k over phrases and first-box accuracy.

Model outputs are raw strings; boxes are recovered with the lenient markup
scanner, converted back to pixel space at each item's native dimensions,
and compared against gold boxes by IoU. A phrase counts as grounded when
any of its top-k predicted boxes matches any gold box (any-box protocol);
referring-expression accuracy scores only the first predicted box against
a single gold box. Outputs that decode to no usable box are misses.

Wire formats (JSON Lines):

    gold.jsonl {"id", "phrase", "width", "height",
                "gold_boxes": [[x1,y1,x2,y2], ...]}
    pred.jsonl {"id", "output"}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .geometry import PixelBox, iou
from .locgrid import GridSpec, ImageDims, dequantize_box
from .markup import extract_links
from .pipeline import SchemaError, _expect, _is_int, _is_num

DEFAULT_IOU_THRESHOLD = 0.5
DEFAULT_KS = (1, 5, 10)


@dataclass(frozen=True)
class GoldItem:
    id: str
    phrase: str
    gold_boxes: tuple[PixelBox, ...]
    dims: ImageDims

    def __post_init__(self):
        object.__setattr__(self, "gold_boxes", tuple(self.gold_boxes))
        if not self.gold_boxes:
            raise ValueError("a gold item needs at least one gold box")


@dataclass(frozen=True)
class Prediction:
    id: str
    output: str


@dataclass(frozen=True)
class MetricsReport:
    recall_at: dict[int, float]
    accuracy: Optional[float]
    n_items: int
    n_decode_failures: int


def _decode_boxes(output: str, dims: ImageDims, grid: GridSpec) -> tuple[list[PixelBox], bool]:
    """All usable predicted boxes in generation order, plus a failure flag.

    The flag is raised when the output contained a malformed box group or
    yielded no boxes at all; recovered boxes still score normally.
    """
    links, failed = extract_links(output, grid)
    boxes = [dequantize_box(pair, dims, grid) for link in links for pair in link.boxes]
    return boxes, failed or not boxes


@dataclass(frozen=True)
class ItemScore:
    """Per-item outcome: one hit flag per requested k, plus the first-box hit."""

    hits: tuple[bool, ...]
    first_box_hit: bool
    failed: bool


def score_pair(
    item: GoldItem,
    output: str,
    ks: Sequence[int],
    iou_threshold: float,
    grid: GridSpec,
) -> ItemScore:
    """Score one gold item against one raw output string.

    A rank-k hit means any of the first min(k, available) predicted boxes
    exceeds the IoU threshold against any gold box. The first-box flag scores
    only the leading box against the first gold box.
    """
    boxes, failed = _decode_boxes(output, item.dims, grid)
    hits = []
    for k in ks:
        top = boxes[: min(k, len(boxes))]
        hits.append(any(iou(p, g) > iou_threshold for p in top for g in item.gold_boxes))
    first = bool(boxes) and iou(boxes[0], item.gold_boxes[0]) > iou_threshold
    return ItemScore(tuple(hits), first, failed)


def _pair_items(items: Sequence[GoldItem], preds: Sequence[Prediction]) -> list[tuple[GoldItem, str]]:
    by_id = {}
    for p in preds:
        if p.id in by_id:
            raise ValueError(f"duplicate prediction id {p.id!r}")
        by_id[p.id] = p.output
    paired = []
    for item in items:
        if item.id not in by_id:
            raise ValueError(f"missing prediction for item {item.id!r}")
        paired.append((item, by_id.pop(item.id)))
    if by_id:
        raise ValueError(f"predictions without gold items: {sorted(by_id)[:5]}")
    return paired


def recall_at_k(
    items: Sequence[GoldItem],
    preds: Sequence[Prediction],
    k: int,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    grid: GridSpec = GridSpec(),
) -> float:
    """Fraction of items whose top-k boxes match any gold box above the IoU
    threshold (strictly greater). Items with no decodable box are misses."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not items:
        return 0.0
    hits = 0
    for item, output in _pair_items(items, preds):
        hits += score_pair(item, output, (k,), iou_threshold, grid).hits[0]
    return hits / len(items)


def rec_accuracy(
    items: Sequence[GoldItem],
    preds: Sequence[Prediction],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    grid: GridSpec = GridSpec(),
) -> float:
    """Referring-expression comprehension: first predicted box vs the single
    gold box, IoU strictly greater than the threshold."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    for item in items:
        if len(item.gold_boxes) != 1:
            raise ValueError(f"item {item.id!r} must carry exactly one gold box")
    if not items:
        return 0.0
    hits = 0
    for item, output in _pair_items(items, preds):
        hits += score_pair(item, output, (), iou_threshold, grid).first_box_hit
    return hits / len(items)


def gold_item_from_json(obj) -> GoldItem:
    _expect(isinstance(obj, dict), "record must be a JSON object")
    _expect(isinstance(obj.get("id"), str) and obj["id"], "id must be a non-empty string")
    _expect(isinstance(obj.get("phrase"), str), "phrase must be a string")
    _expect(_is_int(obj.get("width")) and obj["width"] > 0, "width must be a positive integer")
    _expect(_is_int(obj.get("height")) and obj["height"] > 0, "height must be a positive integer")
    raw = obj.get("gold_boxes")
    _expect(isinstance(raw, list) and raw, "gold_boxes must be a non-empty list")
    boxes = []
    for b in raw:
        _expect(
            isinstance(b, list) and len(b) == 4 and all(_is_num(v) for v in b),
            "gold box must be [x1, y1, x2, y2]",
        )
        try:
            boxes.append(PixelBox(*(float(v) for v in b)))
        except ValueError as exc:
            raise SchemaError(str(exc)) from exc
    return GoldItem(obj["id"], obj["phrase"], tuple(boxes), ImageDims(obj["width"], obj["height"]))


def prediction_from_json(obj) -> Prediction:
    _expect(isinstance(obj, dict), "record must be a JSON object")
    _expect(isinstance(obj.get("id"), str) and obj["id"], "id must be a non-empty string")
    _expect(isinstance(obj.get("output"), str), "output must be a string")
    return Prediction(obj["id"], obj["output"])


def load_gold_items(
    lines: Iterable[str], dims_override: Optional[ImageDims] = None
) -> list[GoldItem]:
    items: list[GoldItem] = []
    for n, line in enumerate(lines, 1):
        try:
            item = gold_item_from_json(json.loads(line))
        except (json.JSONDecodeError, SchemaError, ValueError) as exc:
            raise SchemaError(f"gold line {n}: {exc}") from exc
        if dims_override is not None:
            item = GoldItem(item.id, item.phrase, item.gold_boxes, dims_override)
        items.append(item)
    return items


def load_predictions(lines: Iterable[str]) -> list[Prediction]:
    preds: list[Prediction] = []
    for n, line in enumerate(lines, 1):
        try:
            preds.append(prediction_from_json(json.loads(line)))
        except (json.JSONDecodeError, SchemaError, ValueError) as exc:
            raise SchemaError(f"pred line {n}: {exc}") from exc
    return preds


def pair_items(items: Sequence[GoldItem], preds: Sequence[Prediction]) -> list[tuple[GoldItem, str]]:
    """Match every gold item with its prediction; unmatched ids are errors."""
    return _pair_items(items, preds)


def score_run(
    gold_lines: Iterable[str],
    pred_lines: Iterable[str],
    ks: Sequence[int] = DEFAULT_KS,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    grid: GridSpec = GridSpec(),
    dims_override: Optional[ImageDims] = None,
) -> MetricsReport:
    """Score a full gold/prediction run from JSONL lines.

    Computes recall@k for each requested k; accuracy is reported only when
    every item carries a single gold box. ``dims_override`` forces one
    image size for all items instead of their native dimensions.
    """
    items = load_gold_items(gold_lines, dims_override)
    preds = load_predictions(pred_lines)
    paired = _pair_items(items, preds)
    scores = [score_pair(item, output, ks, iou_threshold, grid) for item, output in paired]
    all_single = bool(items) and all(len(it.gold_boxes) == 1 for it in items)
    return reduce_scores(scores, ks, len(items), all_single)


def reduce_scores(
    scores: Sequence[ItemScore], ks: Sequence[int], n_items: int, all_single_gold: bool
) -> MetricsReport:
    """Fold per-item scores into a report; order-independent."""
    recall = {}
    for pos, k in enumerate(ks):
        recall[k] = (
            sum(s.hits[pos] for s in scores) / n_items if n_items else 0.0
        )
    accuracy = None
    if all_single_gold and n_items:
        accuracy = sum(s.first_box_hit for s in scores) / n_items
    return MetricsReport(
        recall_at=recall,
        accuracy=accuracy,
        n_items=n_items,
        n_decode_failures=sum(s.failed for s in scores),
    )
