"""Prompted generation of background knowledge about an identified disorder."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends import DEFAULT_TEMPERATURE, LlmBackend, LlmRequest
from .errors import ConfigError, EmptyPromptSet

log = logging.getLogger(__name__)

PLACEHOLDER = "{disorder}"
ASPECTS = ("symptoms", "tests_procedures", "custom")

SYMPTOMS_TEMPLATE = "What are the symptoms of the medical condition {disorder}?"
TESTS_TEMPLATE = "What tests and procedures need to be done for the medical condition {disorder}?"


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    template: str
    aspect: str = "custom"

    def __post_init__(self):
        if self.aspect not in ASPECTS:
            raise ConfigError(f"prompt {self.id!r}: unknown aspect {self.aspect!r}")
        if not self.id:
            raise ConfigError("prompt id must be non-empty")
        if self.aspect != "custom" and self.template.count(PLACEHOLDER) != 1:
            raise ConfigError(f"prompt {self.id!r}: template must contain {PLACEHOLDER} exactly once")

    def render(self, disorder: str) -> str:
        """Substitute the disorder name; the result ends in exactly one ``?``."""
        text = self.template.replace(PLACEHOLDER, disorder).rstrip().rstrip("?").rstrip()
        return text + "?"


@dataclass(frozen=True)
class KnowledgeItem:
    prompt_id: str
    text: str

    @property
    def empty(self) -> bool:
        return not self.text.strip()


@dataclass(frozen=True)
class KnowledgeSet:
    disorder: object
    items: tuple[KnowledgeItem, ...]

    @property
    def flagged(self) -> list[str]:
        """Ids of prompts whose completion came back empty."""
        return [i.prompt_id for i in self.items if i.empty]

    def to_dict(self) -> dict:
        name = getattr(self.disorder, "name", self.disorder)
        return {
            "disorder": name,
            "items": [{"prompt_id": i.prompt_id, "text": i.text, "empty": i.empty} for i in self.items],
        }


def default_prompts() -> list[PromptTemplate]:
    return [
        PromptTemplate("symptoms", SYMPTOMS_TEMPLATE, "symptoms"),
        PromptTemplate("tests_procedures", TESTS_TEMPLATE, "tests_procedures"),
    ]


def prompts_from_list(entries) -> list[PromptTemplate]:
    try:
        prompts = [PromptTemplate(e["id"], e["template"], e.get("aspect", "custom")) for e in entries]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed prompt catalog: {exc}") from exc
    ids = [p.id for p in prompts]
    if len(set(ids)) != len(ids):
        raise ConfigError("prompt ids must be unique")
    return prompts


def load_prompt_catalog(path) -> list[PromptTemplate]:
    with open(path, encoding="utf-8") as fh:
        return prompts_from_list(json.load(fh))


def generate_context(disorder, prompts, llm: LlmBackend,
                     temperature: float = DEFAULT_TEMPERATURE, workers: int = 1) -> KnowledgeSet:
    """Issue every prompt for ``disorder`` and collect the raw completions in prompt order.

    Any backend failure propagates; no partial set is returned.
    """
    prompts = list(prompts)
    if not prompts:
        raise EmptyPromptSet("at least one prompt is required")
    name = getattr(disorder, "name", disorder)
    requests = [LlmRequest(p.render(name), temperature=temperature) for p in prompts]
    if workers > 1 and len(requests) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            responses = list(pool.map(llm.complete, requests))
    else:
        responses = [llm.complete(r) for r in requests]
    items = tuple(KnowledgeItem(p.id, r.text) for p, r in zip(prompts, responses))
    ks = KnowledgeSet(disorder, items)
    if ks.flagged:
        log.warning("empty completion for %s prompts: %s", name, ", ".join(ks.flagged))
    return ks
