"""Independent reference implementations used to cross-check the library.

Everything in this module is deliberately written from scratch against the
raw definitions (rasterized areas, nested loops, regex token scraping) and
must never import from gritkit, so that agreement between the two code
paths is meaningful.
"""

from __future__ import annotations

import re


def rasterized_iou(a, b, cells: int = 400) -> float:
    """IoU estimated by counting covered cells of a fine grid.

    The grid spans the joint bounding region of both boxes; each cell is
    classified by its center point. Accuracy is on the order of one cell
    width, so callers should compare with a loose tolerance.
    """
    x_lo = min(a[0], b[0])
    y_lo = min(a[1], b[1])
    x_hi = max(a[2], b[2])
    y_hi = max(a[3], b[3])
    if x_hi <= x_lo or y_hi <= y_lo:
        return 0.0
    dx = (x_hi - x_lo) / cells
    dy = (y_hi - y_lo) / cells
    in_a = in_b = in_both = 0
    for iy in range(cells):
        cy = y_lo + (iy + 0.5) * dy
        ay = a[1] <= cy <= a[3]
        by = b[1] <= cy <= b[3]
        if not (ay or by):
            continue
        for ix in range(cells):
            cx = x_lo + (ix + 0.5) * dx
            hit_a = ay and a[0] <= cx <= a[2]
            hit_b = by and b[0] <= cx <= b[2]
            if hit_a:
                in_a += 1
            if hit_b:
                in_b += 1
            if hit_a and hit_b:
                in_both += 1
    union = in_a + in_b - in_both
    return in_both / union if union else 0.0


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def brute_force_nms(boxes, scores, threshold: float) -> list[int]:
    """O(n^2) greedy suppression: highest score first, input index breaks ties."""
    order = sorted(range(len(boxes)), key=lambda i: (-scores[i], i))
    kept: list[int] = []
    for i in order:
        if all(_iou(boxes[i], boxes[kj]) < threshold for kj in kept):
            kept.append(i)
    return sorted(kept)


_BOX_GROUP = re.compile(r"<box>(.*?)</box>", re.DOTALL)
_LOC = re.compile(r"<loc_(\d+)>")


def scrape_boxes(output: str, bins: int, width: float, height: float):
    """Regex-scrape well-formed box groups from a raw model output string.

    Returns (pixel_boxes, saw_malformed). A group is well formed when every
    <delim>-separated segment is exactly two location tokens, all indices are
    inside the vocabulary and each pair is corner-ordered. Box corners are
    mapped to bin centers.
    """
    out = []
    malformed = False
    for m in _BOX_GROUP.finditer(output):
        body = m.group(1)
        # Inner markup means this group was not actually well formed.
        if "<box>" in body:
            malformed = True
            continue
        segments = body.split("<delim>")
        pairs = []
        ok = True
        for seg in segments:
            locs = _LOC.findall(seg)
            if len(locs) != 2 or _LOC.sub("", seg).strip():
                ok = False
                break
            tl, br = int(locs[0]), int(locs[1])
            if not (0 <= tl < bins * bins and 0 <= br < bins * bins):
                ok = False
                break
            if tl // bins > br // bins or tl % bins > br % bins:
                ok = False
                break
            pairs.append((tl, br))
        if not ok:
            malformed = True
            continue
        for tl, br in pairs:
            x1 = (tl % bins + 0.5) * width / bins
            y1 = (tl // bins + 0.5) * height / bins
            x2 = (br % bins + 0.5) * width / bins
            y2 = (br // bins + 0.5) * height / bins
            out.append((x1, y1, x2, y2))
    # An unterminated trailing <box> never matches the group regex.
    if output.count("<box>") > len(_BOX_GROUP.findall(output)):
        malformed = True
    return out, malformed


def score_items_by_hand(items, outputs, ks, iou_threshold: float, bins: int):
    """Reference grounding scorer: returns ({k: recall}, first_box_accuracy, n_fail).

    items are (gold_boxes, width, height) tuples; outputs are raw strings.
    Accuracy is computed against gold_boxes[0] and only meaningful when every
    item carries a single gold box.
    """
    hits = {k: 0 for k in ks}
    acc_hits = 0
    n_fail = 0
    for (gold, width, height), output in zip(items, outputs):
        boxes, malformed = scrape_boxes(output, bins, width, height)
        if malformed or not boxes:
            n_fail += 1
        for k in ks:
            top = boxes[:k]
            if any(_iou(p, g) > iou_threshold for p in top for g in gold):
                hits[k] += 1
        if boxes and _iou(boxes[0], gold[0]) > iou_threshold:
            acc_hits += 1
    n = len(items)
    return (
        {k: hits[k] / n if n else 0.0 for k in ks},
        acc_hits / n if n else 0.0,
        n_fail,
    )


def count_stats_by_hand(ref_texts_and_box_counts):
    """Recompute corpus statistics from (records -> [(text, n_boxes), ...])."""
    images = len(ref_texts_and_box_counts)
    spans = 0
    objects = 0
    words = 0
    for refs in ref_texts_and_box_counts:
        for text, n_boxes in refs:
            spans += 1
            objects += n_boxes
            words += len(text.split())
    avg = words / spans if spans else 0.0
    return images, objects, spans, avg
