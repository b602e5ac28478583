"""Dependency-parse and noun-chunk export.

Two backends produce the same wire format:

- ``spacy``: a real statistical parser; used when spaCy and a model are
  installed. The parser's own noun-chunk definition is trusted verbatim.
- ``heuristic``: a deterministic rule-based stand-in for offline builds
  and tests. It handles caption-style English (noun phrases, prepositional
  chains, coordination, simple subject-verb clauses) and nothing more;
  prefer spaCy for real corpora.

Output records:
    {"image_id", "width", "height", "caption",
     "tokens": [{"text", "head", "dep"}],
     "chunks": [{"start", "end", "head"}]}
"""

from __future__ import annotations

import re
from dataclasses import dataclass


class AdapterError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Heuristic backend

_DETERMINERS = frozenset(
    "a an the this that these those his her its their my your our some any each every no".split()
)
_PREPOSITIONS = frozenset(
    "in of on at by with for from to near under over above below behind beside "
    "between inside outside into onto upon against along across around through "
    "during without within".split()
)
_CONJUNCTIONS = frozenset("and or but nor".split())
_VERBS = frozenset(
    "is are was were be been being has have had sits sit sitting stands stand "
    "standing seats seated runs run running walks walk walking lies lying rests "
    "resting looks look looking holds hold holding wears wear wearing plays play "
    "playing hangs hang hanging jumps jump jumping flies fly flying swims swim "
    "swimming eats eat eating drinks drink drinking rides ride riding sleeps "
    "sleep sleeping filled served dipped placed parked grows growing".split()
)
_ADJECTIVES = frozenset(
    "red green blue yellow orange black white brown gray grey pink purple golden "
    "silver small big large little tiny huge old young new tall short long wide "
    "narrow wooden metal plastic glass stone bright dark shiny dirty clean empty "
    "full round square happy sad cute furry fluffy wet dry hot cold".split()
)

_SENT_END = frozenset(".!?")
_PUNCT_CHARS = ".,!?;:\"'()[]"

_TOKEN_SPLIT = re.compile(r"\S+")


def _tokenize(caption: str) -> list[str]:
    """Whitespace tokens with surrounding punctuation split off."""
    out: list[str] = []
    for m in _TOKEN_SPLIT.finditer(caption):
        word = m.group(0)
        lead = []
        while word and word[0] in _PUNCT_CHARS:
            lead.append(word[0])
            word = word[1:]
        tail = []
        while word and word[-1] in _PUNCT_CHARS:
            tail.append(word[-1])
            word = word[:-1]
        out.extend(lead)
        if word:
            out.append(word)
        out.extend(reversed(tail))
    return out


def _classify(word: str) -> str:
    low = word.lower()
    if all(c in _PUNCT_CHARS for c in word):
        return "PUNCT"
    if low in _DETERMINERS:
        return "DET"
    if low in _PREPOSITIONS:
        return "PREP"
    if low in _CONJUNCTIONS:
        return "CC"
    if low in _VERBS:
        return "VERB"
    if low in _ADJECTIVES:
        return "ADJ"
    return "NOUN"


@dataclass
class _Sentence:
    offset: int
    words: list[str]
    classes: list[str]


def _split_sentences(tokens: list[str]) -> list[_Sentence]:
    sents: list[_Sentence] = []
    start = 0
    for i, tok in enumerate(tokens):
        if tok in _SENT_END:
            sents.append(_Sentence(start, tokens[start : i + 1], []))
            start = i + 1
    if start < len(tokens):
        sents.append(_Sentence(start, tokens[start:], []))
    for s in sents:
        s.classes = [_classify(w) for w in s.words]
    return sents


def _noun_phrase_runs(classes: list[str]) -> list[tuple[int, int]]:
    """Maximal DET? ADJ* NOUN+ runs (local indices, end exclusive)."""
    runs = []
    i, n = 0, len(classes)
    while i < n:
        j = i
        if j < n and classes[j] == "DET":
            j += 1
        while j < n and classes[j] == "ADJ":
            j += 1
        if j < n and classes[j] == "NOUN":
            k = j
            while k < n and classes[k] == "NOUN":
                k += 1
            runs.append((i, k))
            i = k
        else:
            i = i + 1 if j == i else j
    return runs


def _parse_sentence(sent: _Sentence) -> tuple[list[dict], list[dict]]:
    """Heads and deps for one sentence; indices are sentence-local here."""
    n = len(sent.words)
    classes = sent.classes
    runs = _noun_phrase_runs(classes)
    np_of_token = {}
    heads_of_np = {}
    for run in runs:
        head = max(i for i in range(run[0], run[1]) if classes[i] == "NOUN")
        heads_of_np[run] = head
        for i in range(*run):
            np_of_token[i] = run

    first_verb = next((i for i, c in enumerate(classes) if c == "VERB"), None)
    if first_verb is not None:
        root = first_verb
    elif runs:
        root = heads_of_np[runs[0]]
    else:
        root = 0

    head = [root] * n
    dep = ["dep"] * n
    head[root] = root
    dep[root] = "ROOT"

    # Intra-phrase arcs.
    for run, np_head in heads_of_np.items():
        for i in range(*run):
            if i == np_head:
                continue
            head[i] = np_head
            dep[i] = {"DET": "det", "ADJ": "amod", "NOUN": "compound"}[classes[i]]

    # Phrase-level attachment, walking left to right. attach_site is where a
    # following preposition or coordinator hangs; heads only ever point at the
    # root or at already-settled earlier material, so no cycles can form (the
    # one forward edge, a leading PREP onto a root noun phrase, terminates
    # because the root is never re-headed).
    last_np_head = None
    open_prep = None  # most recent preposition waiting for its object
    pending_cc = None  # most recent coordinator waiting for a conjunct
    attach_site = root
    for i in range(n):
        c = classes[i]
        if c == "VERB":
            if i != root:
                head[i] = root
                dep[i] = "aux"
            attach_site = root
            open_prep = None
            pending_cc = None
        elif c == "PREP":
            head[i] = attach_site
            dep[i] = "prep"
            open_prep = i
        elif c == "CC":
            head[i] = attach_site
            dep[i] = "cc"
            pending_cc = attach_site
        elif c == "PUNCT":
            head[i] = root
            dep[i] = "punct"
        elif i in np_of_token:
            np_head = heads_of_np[np_of_token[i]]
            if i != np_head:
                continue
            if i != root:
                if open_prep is not None:
                    head[i] = open_prep
                    dep[i] = "pobj"
                elif pending_cc is not None:
                    head[i] = pending_cc
                    dep[i] = "conj"
                elif first_verb is not None and i > first_verb:
                    head[i] = root
                    dep[i] = "dobj"
                elif first_verb is not None:
                    head[i] = root
                    dep[i] = "nsubj"
                elif last_np_head is not None:
                    head[i] = last_np_head
                    dep[i] = "appos"
            open_prep = None
            pending_cc = None
            last_np_head = np_head
            attach_site = np_head

    tokens = [
        {"text": sent.words[i], "head": head[i] + sent.offset, "dep": dep[i]}
        for i in range(n)
    ]
    chunks = [
        {
            "start": run[0] + sent.offset,
            "end": run[1] + sent.offset,
            "head": heads_of_np[run] + sent.offset,
        }
        for run in runs
    ]
    return tokens, chunks


def heuristic_parse(caption: str) -> tuple[list[dict], list[dict]]:
    """Deterministic parse of a caption; raises AdapterError when empty."""
    words = _tokenize(caption)
    if not words:
        raise AdapterError("empty caption")
    tokens: list[dict] = []
    chunks: list[dict] = []
    for sent in _split_sentences(words):
        t, c = _parse_sentence(sent)
        tokens.extend(t)
        chunks.extend(c)
    return tokens, chunks


# ---------------------------------------------------------------------------
# spaCy backend


class SpacyBackend:
    name = "spacy"

    def __init__(self, model: str = "en_core_web_sm"):
        try:
            import spacy
        except ImportError as exc:
            raise AdapterError("spacy is not installed") from exc
        try:
            self._nlp = spacy.load(model, exclude=("ner", "lemmatizer"))
        except OSError as exc:
            raise AdapterError(f"spacy model {model!r} is not installed") from exc
        self.version = f"spacy {spacy.__version__} / {model}"

    def parse(self, caption: str) -> tuple[list[dict], list[dict]]:
        if not caption.strip():
            raise AdapterError("empty caption")
        doc = self._nlp(caption)
        tokens = [{"text": t.text, "head": t.head.i, "dep": t.dep_} for t in doc]
        chunks = [
            {"start": c.start, "end": c.end, "head": c.root.i} for c in doc.noun_chunks
        ]
        return tokens, chunks


class HeuristicBackend:
    name = "heuristic"

    def __init__(self):
        from . import __version__

        self.version = f"grit-adapters {__version__} rule-based"

    def parse(self, caption: str) -> tuple[list[dict], list[dict]]:
        return heuristic_parse(caption)


def load_backend(name: str = "auto", spacy_model: str = "en_core_web_sm"):
    """Resolve a parser backend; ``auto`` prefers spaCy, falls back silently."""
    if name == "spacy":
        return SpacyBackend(spacy_model)
    if name == "heuristic":
        return HeuristicBackend()
    if name == "auto":
        try:
            return SpacyBackend(spacy_model)
        except AdapterError:
            return HeuristicBackend()
    raise AdapterError(f"unknown backend {name!r}")
