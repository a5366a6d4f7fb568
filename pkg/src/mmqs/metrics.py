"""Automatic and fact-based summary metrics."""
from __future__ import annotations

import enum
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _accel
from .backends import LlmRequest
from .errors import (
    EmptyCandidate,
    EmptyInput,
    EmptyReference,
    EmptyReferenceFacts,
    MissingAnnotations,
)
from .taxonomy import canonical_name

METRICS = (
    "rouge1", "rouge2", "rougeL", "bleu1", "bleu2", "bleu3", "bleu4",
    "mmfcm", "factual_recall", "omission_rate",
)

FACT_PROMPT = "List the distinct medical facts in the following text, one per line: {TEXT}"


class Score(NamedTuple):
    precision: float
    recall: float
    f1: float


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(token: str) -> str:
    start, end = 0, len(token)
    while start < end and _is_punct(token[start]):
        start += 1
    while end > start and _is_punct(token[end - 1]):
        end -= 1
    return token[start:end]


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip edge punctuation, drop empties."""
    out = []
    for tok in text.lower().split():
        tok = _strip_punct(tok)
        if tok:
            out.append(tok)
    return out


def _ngrams(tokens, n) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _prf(overlap, n_cand, n_ref) -> Score:
    p = overlap / n_cand if n_cand else 0.0
    r = overlap / n_ref if n_ref else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return Score(p, r, f)


def rouge_n(candidate: str, reference: str, n: int = 1) -> Score:
    if n not in (1, 2):
        raise ValueError("n must be 1 or 2")
    ref = tokenize(reference)
    if len(ref) < n:
        raise EmptyReference(f"reference has fewer than {n} tokens")
    ref_grams = _ngrams(ref, n)
    cand_grams = _ngrams(tokenize(candidate), n)
    overlap = sum((cand_grams & ref_grams).values())
    return _prf(overlap, sum(cand_grams.values()), sum(ref_grams.values()))


def _to_ids(a, b):
    vocab = {}
    ids_a = np.array([vocab.setdefault(t, len(vocab)) for t in a], dtype=np.int64)
    ids_b = np.array([vocab.setdefault(t, len(vocab)) for t in b], dtype=np.int64)
    return ids_a, ids_b


def lcs_tokens(a, b) -> int:
    return _accel.lcs_length(*_to_ids(a, b))


def rouge_l(candidate: str, reference: str) -> Score:
    ref = tokenize(reference)
    cand = tokenize(candidate)
    if not ref:
        raise EmptyReference("reference has no tokens")
    if not cand:
        raise EmptyCandidate("candidate has no tokens")
    return _prf(lcs_tokens(cand, ref), len(cand), len(ref))


def bleu(candidate: str, reference: str, max_n: int = 4) -> float:
    """Cumulative BLEU-``max_n`` with uniform weights and no smoothing."""
    if not 1 <= max_n <= 4:
        raise ValueError("max_n must be in 1..4")
    cand = tokenize(candidate)
    ref = tokenize(reference)
    if not cand or not ref:
        raise EmptyInput("BLEU needs non-empty candidate and reference")
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_grams = _ngrams(cand, n)
        total = sum(cand_grams.values())
        clipped = sum((cand_grams & _ngrams(ref, n)).values())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / total)
    c, r = len(cand), len(ref)
    bp = 1.0 if c > r else math.exp(1 - r / c)
    return bp * math.exp(log_sum / max_n)


# ---------------------------------------------------------------------------
# Facts
# ---------------------------------------------------------------------------

_BULLET = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s+")
_STOPWORDS = frozenset(
    "a an the of in on at to for with and or my his her their its is are was were be "
    "has have had from by as this that these those some any very".split()
)


def normalize_fact(text: str) -> str:
    text = " ".join(text.lower().split())
    while text and _is_punct(text[-1]):
        text = text[:-1].rstrip()
    return text


@dataclass(frozen=True)
class FactSet:
    facts: frozenset = field(default_factory=frozenset)
    source: str = "query_and_image"

    @classmethod
    def of(cls, items, source="query_and_image") -> FactSet:
        return cls(frozenset(f for f in (normalize_fact(x) for x in items) if f), source)

    def __len__(self):
        return len(self.facts)

    def __iter__(self):
        return iter(sorted(self.facts))


def extract_facts(text: str, mode: str = "annotated", llm=None, annotations=None,
                  source: str = "query_and_image", temperature: float = 0.5) -> FactSet:
    """Facts from supplied annotations, or one-per-line from an LLM listing."""
    if mode == "annotated":
        if annotations is None:
            raise MissingAnnotations("annotated mode needs a fact list")
        return FactSet.of(annotations, source)
    if mode == "llm":
        if llm is None:
            raise MissingAnnotations("llm mode needs a backend")
        if not text or not text.strip():
            return FactSet(frozenset(), source)
        resp = llm.complete(LlmRequest(FACT_PROMPT.replace("{TEXT}", text.strip()), temperature=temperature))
        lines = (_BULLET.sub("", line) for line in resp.text.splitlines())
        return FactSet.of(lines, source)
    raise ValueError(f"unknown fact extraction mode {mode!r}")


class DisorderAssessment(enum.Enum):
    FULLY_CORRECT = "fully_correct"
    PARTIALLY_CORRECT = "partially_correct"
    INCORRECT = "incorrect"
    ABSENT = "absent"

    @property
    def bonus(self) -> int:
        return _BONUS[self]


_BONUS = {
    DisorderAssessment.FULLY_CORRECT: 2,
    DisorderAssessment.PARTIALLY_CORRECT: 1,
    DisorderAssessment.INCORRECT: -1,
    DisorderAssessment.ABSENT: 0,
}


def _words(text: str) -> list[str]:
    return re.sub(r"[^\w\s]", " ", text.lower()).split()


def _contains_phrase(text: str, phrase: str) -> bool:
    words, target = _words(text), _words(phrase)
    n = len(target)
    return n > 0 and any(words[i:i + n] == target for i in range(len(words) - n + 1))


def _stem(word: str) -> str:
    return word[:-1] if len(word) > 1 and word.endswith("s") else word


def _content_stems(text: str) -> set:
    return {_stem(w) for w in _words(text) if w not in _STOPWORDS}


def assess_disorder(gold, summary_facts: FactSet, taxonomy) -> DisorderAssessment:
    """Grade how the summary's facts name the gold disorder.

    Checked in order: the full gold name as a phrase, a shared content word
    (plural ``s`` stripped), the full name of another taxonomy disorder.
    """
    gold_name = canonical_name(getattr(gold, "name", gold))
    facts = list(summary_facts.facts)
    if any(_contains_phrase(f, gold_name) for f in facts):
        return DisorderAssessment.FULLY_CORRECT
    gold_stems = _content_stems(gold_name)
    if any(gold_stems & _content_stems(f) for f in facts):
        return DisorderAssessment.PARTIALLY_CORRECT
    others = [d.name for d in taxonomy if d.name != gold_name]
    if any(_contains_phrase(f, other) for f in facts for other in others):
        return DisorderAssessment.INCORRECT
    return DisorderAssessment.ABSENT


def mmfcm(F: FactSet, Sf: FactSet, assessment: DisorderAssessment, denominator: str = "intersection") -> float:
    """Multimodal fact-capturing score: (|F & Sf| + disorder bonus) / |F & Sf|.

    ``denominator="facts"`` divides by ``|F|`` instead. A zero denominator
    scores 0.
    """
    n = len(F.facts & Sf.facts)
    if denominator == "intersection":
        denom = n
    elif denominator == "facts":
        denom = len(F.facts)
    else:
        raise ValueError(f"unknown mmfcm denominator {denominator!r}")
    if n == 0 or denom == 0:
        return 0.0
    return (n + assessment.bonus) / denom


def jaccard_match(a: str, b: str, threshold: float = 0.5) -> bool:
    ta, tb = set(a.split()), set(b.split())
    if not ta or not tb:
        return a == b
    return len(ta & tb) / len(ta | tb) >= threshold


def _matched(ref: FactSet, cand: FactSet, matcher: str) -> int:
    if not ref.facts:
        raise EmptyReferenceFacts("reference fact set is empty")
    if matcher == "exact":
        return len(ref.facts & cand.facts)
    if matcher == "jaccard":
        return sum(1 for f in ref.facts if any(jaccard_match(f, c) for c in cand.facts))
    raise ValueError(f"unknown fact matcher {matcher!r}")


def factual_recall(ref: FactSet, cand: FactSet, matcher: str = "exact") -> float:
    return _matched(ref, cand, matcher) / len(ref.facts)


def omission_rate(ref: FactSet, cand: FactSet, matcher: str = "exact") -> float:
    return (len(ref.facts) - _matched(ref, cand, matcher)) / len(ref.facts)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------

def text_scores(candidate: str, reference: str) -> dict:
    return {
        "rouge1": rouge_n(candidate, reference, 1).f1,
        "rouge2": rouge_n(candidate, reference, 2).f1 if len(tokenize(reference)) >= 2 else None,
        "rougeL": rouge_l(candidate, reference).f1,
        **{f"bleu{n}": bleu(candidate, reference, n) for n in range(1, 5)},
    }


@dataclass
class EvalReport:
    per_record: dict
    aggregates: dict
    absent_counts: dict

    def to_dict(self) -> dict:
        return {
            "per_record": self.per_record,
            "aggregates": self.aggregates,
            "absent_counts": self.absent_counts,
        }


def aggregate(per_record: dict) -> EvalReport:
    """Mean of every metric over the records where it is present."""
    if not per_record:
        raise EmptyInput("no records to aggregate")
    rows = {rid: {m: scores.get(m) for m in METRICS} for rid, scores in per_record.items()}
    aggregates, absent = {}, {}
    for m in METRICS:
        present = [row[m] for row in rows.values() if row[m] is not None]
        absent[m] = len(rows) - len(present)
        aggregates[m] = math.fsum(present) / len(present) if present else None
    return EvalReport(rows, aggregates, absent)
