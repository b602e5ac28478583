"""Toolkit for grounded image-text corpora.

Library surface for the location-token codec, the grounded-caption markup
language, the corpus construction pipeline, grounding evaluation, and
prompt construction. The ``gritkit`` console script exposes the same
functionality on JSONL files.
"""

from .geometry import PixelBox, ScoredBox, iou, nms
from .locgrid import (
    GridSpec,
    ImageDims,
    LocToken,
    TokenBoxPair,
    cell_of_token,
    dequantize_box,
    quantize_box,
    token_of_cell,
)
from .markup import (
    DecodeFailure,
    GroundLink,
    GroundedCaption,
    TextSpan,
    extract_links,
    parse,
    serialize,
)

__version__ = "0.1.0"

__all__ = [
    "PixelBox",
    "ScoredBox",
    "iou",
    "nms",
    "GridSpec",
    "ImageDims",
    "LocToken",
    "TokenBoxPair",
    "cell_of_token",
    "token_of_cell",
    "quantize_box",
    "dequantize_box",
    "GroundedCaption",
    "GroundLink",
    "TextSpan",
    "DecodeFailure",
    "parse",
    "serialize",
    "extract_links",
    "__version__",
]
