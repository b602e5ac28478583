"""Axis-aligned box arithmetic: IoU and cross-chunk greedy NMS.

Coordinates are continuous pixels with the origin at the top-left corner,
x growing rightward and y growing downward. Areas are real-valued
(x2 - x1) * (y2 - y1) products, not inclusive pixel counts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence


@dataclass(frozen=True)
class PixelBox:
    """Axis-aligned box given by its top-left and bottom-right corners."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        for v in (self.x1, self.y1, self.x2, self.y2):
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"box coordinates must be finite and >= 0, got {self}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"box corners out of order: {self}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class ScoredBox:
    """A detector output: box, confidence, and the noun chunk it grounds."""

    box: PixelBox
    score: float
    chunk_index: int

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")


def iou(a: PixelBox, b: PixelBox) -> float:
    """Intersection over union of two boxes; 0 when the union has zero area."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = ix * iy if ix > 0 and iy > 0 else 0.0
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def nms(candidates: Sequence[ScoredBox], overlap_threshold: float) -> list[int]:
    """Greedy non-maximum suppression over all candidates jointly.

    Chunk identity is ignored on purpose: near-duplicate boxes are suppressed
    even when they ground different noun chunks. Candidates are visited by
    descending score (ties broken by lower input index) and kept only while
    their IoU with every already-kept box stays below ``overlap_threshold``.
    Returns kept indices in input order.
    """
    if not 0.0 < overlap_threshold <= 1.0:
        raise ValueError(f"overlap_threshold must lie in (0, 1], got {overlap_threshold}")
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, i))
    kept: list[int] = []
    for i in order:
        box = candidates[i].box
        if all(iou(box, candidates[j].box) < overlap_threshold for j in kept):
            kept.append(i)
    kept.sort()
    return kept
