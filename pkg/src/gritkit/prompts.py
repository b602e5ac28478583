"""Prompt builders for grounding evaluation and grounded instruction data.

All evaluation prompts share one preamble carrying the image slot and the
grounding marker. Grounding prompts wrap the queried phrase in span tags,
with the caption's preceding words kept as disambiguating context; the
referring-generation prompt presents a box and asks for its description.
Instruction pairs are emitted in both directions per grounded expression:
expression to boxes, and boxes to expression through a seeded choice from
a template file.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .locgrid import GridSpec, TokenBoxPair, quantize_box
from .markup import TextSpan, contains_markup, render_box_group
from .pipeline import GritRecord

PREAMBLE = "<s> <image> </image> <grounding> "

EXPRESSION_TO_BOXES = "expression_to_boxes"
BOXES_TO_EXPRESSION = "boxes_to_expression"

_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")
_KNOWN_PLACEHOLDERS = frozenset({"expression", "loc_tl", "loc_br"})


@dataclass(frozen=True)
class PromptTemplate:
    """A pattern with {expression} / {loc_tl} / {loc_br} placeholders."""

    pattern: str
    direction: str = BOXES_TO_EXPRESSION

    def __post_init__(self):
        names = set(_PLACEHOLDER.findall(self.pattern))
        unknown = names - _KNOWN_PLACEHOLDERS
        if unknown:
            raise ValueError(f"unknown placeholders {sorted(unknown)} in {self.pattern!r}")
        if self.direction == BOXES_TO_EXPRESSION and "expression" not in names:
            raise ValueError(f"template needs an {{expression}} placeholder: {self.pattern!r}")


@dataclass(frozen=True)
class InstructionPair:
    prompt: str
    target: str


def load_templates(lines: Iterable[str]) -> list[PromptTemplate]:
    """Parse a templates file: one pattern per line, ``#`` starts a comment."""
    templates = []
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        templates.append(PromptTemplate(line))
    if not templates:
        raise ValueError("template file contains no patterns")
    return templates


def default_templates() -> list[PromptTemplate]:
    from importlib.resources import files

    text = files("gritkit").joinpath("data/templates.txt").read_text(encoding="utf-8")
    return load_templates(text.splitlines())


def phrase_grounding_prompt(caption: str, phrase_span: TextSpan) -> str:
    """Prompt locating a phrase in context: preceding words, then the phrase
    wrapped in span tags."""
    if not (0 <= phrase_span.start < phrase_span.end <= len(caption)):
        raise ValueError(f"phrase span {phrase_span.start}..{phrase_span.end} outside caption")
    if caption[phrase_span.start : phrase_span.end] != phrase_span.text:
        raise ValueError("phrase span text does not match the caption")
    prefix = caption[: phrase_span.start]
    if contains_markup(prefix) or contains_markup(phrase_span.text):
        raise ValueError("caption and phrase must be markup-free")
    return f"{PREAMBLE}{prefix}<p> {phrase_span.text.strip()} </p>"


def rec_prompt(expression: str) -> str:
    """Prompt for referring-expression comprehension: the bare expression."""
    expression = expression.strip()
    if not expression:
        raise ValueError("expression must be non-empty")
    if contains_markup(expression):
        raise ValueError("expression must be markup-free")
    return f"{PREAMBLE}<p> {expression} </p>"


def reg_prompt(
    pair: TokenBoxPair,
    grid: GridSpec = GridSpec(),
    demonstrations: Sequence[tuple[TokenBoxPair, str]] = (),
) -> str:
    """Prompt for referring-expression generation from a box.

    With demonstrations, each (pair, expression) example becomes a completed
    block terminated by ``</s>`` ahead of the query block.
    """
    blocks = []
    for demo_pair, expression in demonstrations:
        expression = expression.strip()
        if not expression or contains_markup(expression):
            raise ValueError("demonstration expressions must be non-empty and markup-free")
        group = render_box_group([demo_pair], grid)
        blocks.append(f"{PREAMBLE}<p> It </p>{group} is {expression} </s>")
    blocks.append(f"{PREAMBLE}<p> It </p>{render_box_group([pair], grid)} is")
    return " ".join(blocks)


def _template_index(seed: int, image_id: str, ref_ordinal: int, n: int) -> int:
    key = f"{seed}|{image_id}|{ref_ordinal}".encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big") % n


def instruction_examples(
    record: GritRecord,
    templates: Sequence[PromptTemplate],
    seed: int,
    grid: GridSpec = GridSpec(),
) -> list[InstructionPair]:
    """Instruction pairs for every grounded expression of a record.

    Each expression yields two pairs: the expression as instruction with its
    serialized box group as target, and a seeded template asking for the
    expression given the (first) box. Identical inputs and seed give
    identical output, independent of process or platform.
    """
    if not templates:
        raise ValueError("at least one template is required")
    out: list[InstructionPair] = []
    for ordinal, (expr, boxes) in enumerate(record.refs):
        pairs = [quantize_box(b, record.dims, grid) for b in boxes]
        if contains_markup(expr.text):
            raise ValueError(f"expression contains markup: {expr.text!r}")
        out.append(
            InstructionPair(
                prompt=f"<p> {expr.text} </p>",
                target=render_box_group(pairs, grid),
            )
        )
        template = templates[_template_index(seed, record.image_id, ordinal, len(templates))]
        filled = template.pattern.replace("{loc_tl}", f"<loc_{pairs[0].tl}>").replace(
            "{loc_br}", f"<loc_{pairs[0].br}>"
        )
        prefix, _, suffix = filled.partition("{expression}")
        out.append(
            InstructionPair(prompt=prefix.rstrip(), target=(expr.text + suffix).strip())
        )
    return out
