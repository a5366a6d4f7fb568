"""Image-grounded filtering of generated knowledge sentences."""
from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from . import _accel
from .backends import EmbeddingBackend, EmbeddingVector
from .errors import DimensionMismatch, ZeroVector

DEFAULT_THRESHOLD = 0.5

# Stored without the final period, compared lowercased.
DEFAULT_ABBREVIATIONS = frozenset({
    "dr", "mr", "mrs", "ms", "prof", "sr", "jr", "st", "vs", "fig", "approx",
    "e.g", "i.e", "cf", "al",
    "b.i.d", "t.i.d", "q.i.d", "q.d", "q.h", "p.o", "p.r.n", "h.s", "a.c", "p.c",
    "mg", "mcg", "ml", "kg", "cm", "mm", "hr", "hrs", "dept",
})

_OPENERS = "\"'([{“‘"
_CLOSERS = "\"')]}”’"
_TERMINALS = ".!?"
_LIST_MARKER = re.compile(r"^(?:[-*•]|\d+[.)])$")


def _is_boundary(token: str, nxt: str | None, abbreviations) -> bool:
    core = token.rstrip(_CLOSERS)
    if not core or core[-1] not in _TERMINALS:
        return False
    if core[-1] == ".":
        word = core.lstrip(_OPENERS)[:-1].lower()
        if word in abbreviations or word.isdigit():
            return False
    if nxt is None:
        return True
    head = nxt.lstrip(_OPENERS)
    return bool(head) and (head[0].isupper() or _LIST_MARKER.match(nxt) is not None)


def tokenize_sentences(text: str, abbreviations=None) -> list[str]:
    """Split text into sentences with a deterministic rule set.

    A boundary follows a token ending in ``.``, ``!`` or ``?`` (optionally
    followed by closing quotes/brackets) when the next token starts with an
    uppercase letter or a list marker, or the text ends. Known abbreviations
    and bare numbers (``1.``) ending in a period are never boundaries. Blank
    lines, and line breaks that introduce a list item, are hard boundaries.
    Sentences are re-joined with single spaces.
    """
    if not text or not text.strip():
        return []
    abbrev = DEFAULT_ABBREVIATIONS if abbreviations is None else (
        DEFAULT_ABBREVIATIONS | {a.lower().rstrip(".") for a in abbreviations}
    )
    sentences = []
    for block in _hard_blocks(text):
        tokens = block.split()
        start = 0
        for i, tok in enumerate(tokens):
            nxt = tokens[i + 1] if i + 1 < len(tokens) else None
            if nxt is None or _is_boundary(tok, nxt, abbrev):
                sentences.append(" ".join(tokens[start:i + 1]))
                start = i + 1
    return sentences


def _hard_blocks(text: str):
    block = []
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped:
            if block:
                yield " ".join(block)
                block = []
            continue
        first = stripped.split(None, 1)[0]
        if block and _LIST_MARKER.match(first):
            yield " ".join(block)
            block = []
        block.append(stripped)
    if block:
        yield " ".join(block)


def _as_array(v) -> np.ndarray:
    return v.values if isinstance(v, EmbeddingVector) else np.asarray(v, dtype=np.float64)


def cosine_similarity(a, b) -> float:
    a, b = _as_array(a), _as_array(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimensions differ: {a.size} vs {b.size}")
    if not a.any() or not b.any():
        raise ZeroVector("cosine similarity of an all-zero vector is undefined")
    return float(_accel.cosine_rows(a.reshape(1, -1), b)[0])


def cosine_to_many(rows, vec) -> np.ndarray:
    """Cosine of each row of ``rows`` against ``vec``."""
    vec = _as_array(vec)
    matrix = np.vstack([_as_array(r) for r in rows]) if len(rows) else np.empty((0, vec.size))
    if matrix.shape[1] != vec.size:
        raise DimensionMismatch(f"dimensions differ: {matrix.shape[1]} vs {vec.size}")
    if not vec.any() or (matrix.size and not np.all(matrix.any(axis=1))):
        raise ZeroVector("cosine similarity of an all-zero vector is undefined")
    if matrix.shape[0] == 0:
        return np.empty(0)
    return _accel.cosine_rows(matrix, vec)


@dataclass(frozen=True)
class ScoredSentence:
    sentence: str
    score: float
    prompt_id: str | None = None


@dataclass(frozen=True)
class FilteredKnowledge:
    disorder: object
    kept: tuple[ScoredSentence, ...]
    dropped: tuple[ScoredSentence, ...]
    threshold: float

    @property
    def kept_sentences(self) -> list[str]:
        return [s.sentence for s in self.kept]

    def audit(self, digits=8) -> dict:
        return {
            "threshold": self.threshold,
            "kept": [{"sentence": s.sentence, "score": round(s.score, digits)} for s in self.kept],
            "dropped": [{"sentence": s.sentence, "score": round(s.score, digits)} for s in self.dropped],
        }


def filter_knowledge(ks, image_vec: EmbeddingVector, embedder: EmbeddingBackend,
                     threshold: float = DEFAULT_THRESHOLD, abbreviations=None) -> FilteredKnowledge:
    """Keep the sentences whose similarity to the image is strictly above ``threshold``.

    Each knowledge item is split independently; output order follows the
    items and then sentence position.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside [-1, 1]")
    if embedder.dim is not None and image_vec.dim != embedder.dim:
        raise DimensionMismatch(f"image dim {image_vec.dim} != embedder dim {embedder.dim}")
    pieces = [
        (sentence, item.prompt_id)
        for item in ks.items
        for sentence in tokenize_sentences(item.text, abbreviations)
    ]
    vectors = [embedder.embed_text(s) for s, _ in pieces]
    for v in vectors:
        if v.dim != image_vec.dim:
            raise DimensionMismatch(f"sentence dim {v.dim} != image dim {image_vec.dim}")
    sims = cosine_to_many(vectors, image_vec)
    kept, dropped = [], []
    for (sentence, pid), sim in zip(pieces, sims):
        scored = ScoredSentence(sentence, float(sim), pid)
        (kept if sim > threshold else dropped).append(scored)
    return FilteredKnowledge(ks.disorder, tuple(kept), tuple(dropped), float(threshold))
