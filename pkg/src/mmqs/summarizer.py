"""Final one-line summary generation from the query and the kept context."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

from .backends import DEFAULT_TEMPERATURE, LlmBackend, LlmRequest
from .errors import EmptyCompletion, EmptyQuery

log = logging.getLogger(__name__)

INSTRUCTION = (
    "Write a very short and concise one line summary of the following dialogue as a question "
    "in a healthcare forum incorporating the relevant medical symptoms in the additional "
    "context given below."
)
TEXT_ONLY_INSTRUCTION = (
    "Write a very short and concise one line summary of the following dialogue as a question "
    "in a healthcare forum."
)
DEFAULT_TOKEN_BUDGET = 3000

_QUOTE_PAIRS = {'"': '"', "'": "'", "“": "”", "‘": "’"}


@dataclass(frozen=True)
class SummaryOutput:
    record_id: str
    summary: str
    disorder_used: str | None
    context_sentences_used: int
    prompt_rendered: str

    def to_dict(self) -> dict:
        return asdict(self)


def _context_sentences(context) -> list[str]:
    if context is None:
        return []
    if hasattr(context, "kept_sentences"):
        return list(context.kept_sentences)
    return list(context)


def build_summary_prompt(query: str, context=None, token_budget: int = DEFAULT_TOKEN_BUDGET,
                         text_only: bool = False) -> str:
    """Render the summarisation prompt.

    ``context`` is a ``FilteredKnowledge`` or a plain list of sentences; they
    are joined with single spaces. If the prompt would exceed ``token_budget``
    whitespace tokens, sentences are dropped from the tail. ``text_only``
    renders the query-only baseline prompt with no context slot.
    """
    return _render(query, _context_sentences(context), token_budget, text_only)[0]


def _render(query, sentences, token_budget, text_only):
    if not query or not query.strip():
        raise EmptyQuery("summary prompt needs a non-empty query")
    query = query.strip()
    if text_only:
        return f"{TEXT_ONLY_INSTRUCTION} Dialogue: {query}", 0
    head = f"{INSTRUCTION} Dialogue: {query} and Additional Context: "
    used = list(sentences)
    budget_left = token_budget - len(head.split())
    while used and sum(len(s.split()) for s in used) > budget_left:
        used.pop()
    if len(used) < len(sentences):
        log.warning("prompt budget of %d tokens exceeded; dropped %d context sentences",
                    token_budget, len(sentences) - len(used))
    return head + " ".join(used), len(used)


def clean_completion(text: str) -> str:
    """Trim surrounding whitespace and strip one pair of wrapping quotes.

    The pair is left alone when the same quote characters also occur inside,
    as in ``'a' and 'b'``.
    """
    text = text.strip()
    if len(text) >= 2 and _QUOTE_PAIRS.get(text[0]) == text[-1]:
        inner = text[1:-1]
        if text[0] not in inner and text[-1] not in inner:
            text = inner.strip()
    return text


def generate_summary(record, context, llm: LlmBackend, temperature: float = DEFAULT_TEMPERATURE,
                     token_budget: int = DEFAULT_TOKEN_BUDGET, text_only: bool = False,
                     disorder=None) -> SummaryOutput:
    if disorder is None and context is not None and hasattr(context, "disorder"):
        disorder = context.disorder
    prompt, n_used = _render(record.question, _context_sentences(context), token_budget, text_only)
    resp = llm.complete(LlmRequest(prompt, temperature=temperature))
    summary = clean_completion(resp.text)
    if not summary:
        raise EmptyCompletion(f"{record.id}: backend returned an empty summary")
    return SummaryOutput(
        record_id=record.id,
        summary=summary,
        disorder_used=getattr(disorder, "name", disorder),
        context_sentences_used=n_used,
        prompt_rendered=prompt,
    )
