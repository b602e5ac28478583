"""Grounding-detector export: mock boxes for offline runs, or a real model.

Mock mode derives one detection per noun chunk from an FNV-1a 64-bit hash
of ``"{image_id}|{chunk_text}"`` (chunk text is the chunk's token texts
joined with single spaces). The hash fixes everything: four 16-bit fields
give the box position and size inside the image, and ``hash % 3`` picks
the confidence from {0.5, 0.66, 0.9}, so scores straddle the pipeline's
default 0.65 cut. Output is bit-stable across runs and platforms.

Model mode delegates to a user-supplied callable (``module:function``)
with signature ``fn(image_id, width, height, chunk_texts) -> iterable of
(chunk_index, [x1, y1, x2, y2], score)``.
"""

from __future__ import annotations

from importlib import import_module
from typing import Callable, Sequence

from .parsing import AdapterError

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF

MOCK_SCORES = (0.5, 0.66, 0.9)


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK
    return h


def mock_detection(image_id: str, chunk_text: str, width: int, height: int):
    """Deterministic (box, score) for one chunk."""
    h = fnv1a64(f"{image_id}|{chunk_text}".encode("utf-8"))
    fx = ((h >> 48) & 0xFFFF) / 65536
    fy = ((h >> 32) & 0xFFFF) / 65536
    fw = ((h >> 16) & 0xFFFF) / 65536
    fh = (h & 0xFFFF) / 65536
    x1 = fx * 0.7 * width
    y1 = fy * 0.7 * height
    x2 = min(x1 + (0.1 + 0.2 * fw) * width, width)
    y2 = min(y1 + (0.1 + 0.2 * fh) * height, height)
    box = [round(x1, 2), round(y1, 2), round(x2, 2), round(y2, 2)]
    return box, MOCK_SCORES[h % 3]


def chunk_texts(record: dict) -> list[str]:
    tokens = record["tokens"]
    return [
        " ".join(t["text"] for t in tokens[c["start"] : c["end"]])
        for c in record["chunks"]
    ]


def mock_detections(record: dict) -> dict:
    """detections.jsonl object for one parses.jsonl record."""
    dets = []
    for idx, text in enumerate(chunk_texts(record)):
        box, score = mock_detection(record["image_id"], text, record["width"], record["height"])
        dets.append({"chunk_index": idx, "box": box, "score": score})
    return {"image_id": record["image_id"], "detections": dets}


def load_model(spec: str) -> Callable:
    """Import a detector callable from a ``module:function`` spec."""
    if not spec:
        raise AdapterError("model mode needs --model-spec module:function")
    mod_name, _, fn_name = spec.partition(":")
    if not mod_name or not fn_name:
        raise AdapterError(f"bad model spec {spec!r}, expected module:function")
    try:
        fn = getattr(import_module(mod_name), fn_name)
    except (ImportError, AttributeError) as exc:
        raise AdapterError(f"model unavailable: {exc}") from exc
    if not callable(fn):
        raise AdapterError(f"model spec {spec!r} is not callable")
    return fn


def model_detections(record: dict, model: Callable) -> dict:
    texts = chunk_texts(record)
    dets = []
    for chunk_index, box, score in model(
        record["image_id"], record["width"], record["height"], texts
    ):
        if not 0 <= chunk_index < len(texts):
            raise AdapterError(f"model returned bad chunk index {chunk_index}")
        dets.append(
            {
                "chunk_index": int(chunk_index),
                "box": [float(v) for v in box],
                "score": float(score),
            }
        )
    return {"image_id": record["image_id"], "detections": dets}
