"""Disorder identification: context-described zero-shot ranking, then LLM rerank."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

from .backends import DEFAULT_TEMPERATURE, EmbeddingBackend, EmbeddingVector, LlmBackend, LlmRequest
from .errors import BackendUnavailable, ContextsMissing, DimensionMismatch
from .filtering import cosine_to_many
from .taxonomy import DisorderLabel, DisorderTaxonomy

log = logging.getLogger(__name__)

DEFAULT_K = 3
DESCRIBE_TEMPLATE = (
    "Describe the image of the disease {DISEASE} in a single sentence stating all the necessary details"
)
RERANK_TEMPLATE = (
    "A patient describes: {QUERY}. The attached image most likely shows one of: {CANDIDATES}. "
    "Answer with exactly one of these disorder names."
)


@dataclass(frozen=True)
class RankedDisorders:
    entries: tuple[tuple[DisorderLabel, float], ...]
    k: int

    @property
    def labels(self) -> list[DisorderLabel]:
        return [label for label, _ in self.entries]

    def __len__(self):
        return len(self.entries)

    def to_list(self) -> list[dict]:
        return [{"name": d.name, "category": d.category, "similarity": s} for d, s in self.entries]


def describe_prompt(name: str, template: str = DESCRIBE_TEMPLATE) -> str:
    return template.replace("{DISEASE}", name)


def build_disorder_contexts(taxonomy: DisorderTaxonomy, llm: LlmBackend,
                            temperature: float = DEFAULT_TEMPERATURE) -> DisorderTaxonomy:
    """Return a taxonomy with a one-sentence visual description for every disorder.

    Disorders that already carry a description are left alone. All-or-nothing:
    if any request fails the error propagates and nothing is returned.
    """
    fresh = {}
    for label in taxonomy.missing_contexts():
        resp = llm.complete(LlmRequest(describe_prompt(label.name), temperature=temperature))
        fresh[label.name] = resp.text.strip()
    return taxonomy.with_contexts(fresh) if fresh else taxonomy


def classify_topk(image_vec: EmbeddingVector, taxonomy: DisorderTaxonomy,
                  embedder: EmbeddingBackend, k: int = DEFAULT_K) -> RankedDisorders:
    """Rank disorders by cosine between the image and each disorder's description.

    Sort is by descending similarity, stable in taxonomy order on ties.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    missing = taxonomy.missing_contexts()
    if missing:
        raise ContextsMissing(f"no context for: {', '.join(d.name for d in missing)}")
    if embedder.dim is not None and image_vec.dim != embedder.dim:
        raise DimensionMismatch(f"image dim {image_vec.dim} != embedder dim {embedder.dim}")
    if len(taxonomy) == 0:
        return RankedDisorders((), k)
    vectors = [embedder.embed_text(taxonomy.contexts[d.name]) for d in taxonomy.disorders]
    sims = cosine_to_many(vectors, image_vec)
    order = np.argsort(-sims, kind="stable")[:k]
    return RankedDisorders(tuple((taxonomy.disorders[i], float(sims[i])) for i in order), k)


def _norm(text: str) -> str:
    return " ".join(re.sub(r"[^\w\s]", " ", text.lower()).split())


def match_candidate(answer: str, candidates) -> DisorderLabel | None:
    """Exact normalised match first, then the earliest whole-phrase mention."""
    norm = _norm(answer)
    for label in candidates:
        if _norm(label.name) == norm:
            return label
    best, best_pos = None, None
    for label in candidates:
        m = re.search(r"\b" + re.escape(_norm(label.name)) + r"\b", norm)
        if m and (best_pos is None or m.start() < best_pos):
            best, best_pos = label, m.start()
    return best


def rerank_prompt(query: str, candidates, template: str = RERANK_TEMPLATE) -> str:
    names = ", ".join(label.name for label in candidates)
    return template.replace("{QUERY}", query.strip()).replace("{CANDIDATES}", names)


def rerank_with_llm(query: str, candidates: RankedDisorders, llm: LlmBackend,
                    template: str = RERANK_TEMPLATE, temperature: float = DEFAULT_TEMPERATURE,
                    fallback_on_error: bool = False) -> DisorderLabel:
    """Ask the LLM to pick one of the ranked candidates for this query.

    An answer that names no candidate falls back to the top-ranked one.
    """
    labels = candidates.labels
    if not labels:
        raise ValueError("rerank needs at least one candidate")
    try:
        resp = llm.complete(LlmRequest(rerank_prompt(query, labels, template), temperature=temperature))
    except BackendUnavailable:
        if not fallback_on_error:
            raise
        log.warning("rerank backend failed; using top-ranked candidate %s", labels[0].name)
        return labels[0]
    chosen = match_candidate(resp.text, labels)
    if chosen is None:
        log.warning("rerank answer %r names no candidate; using %s", resp.text[:80], labels[0].name)
        return labels[0]
    return chosen
