"""Disorder labels and the category catalogue they live in."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from types import MappingProxyType

from .errors import ConfigError

CATEGORIES = ("ENT", "EYE", "LIMB", "SKIN")

_DEFAULT = {
    "ENT": ("lip swelling", "mouth ulcers", "swollen tonsils"),
    "EYE": ("swollen eyes", "eye redness", "itchy eyelids"),
    "LIMB": ("edema", "foot swelling", "knee swelling", "hand lumps", "neck swelling"),
    "SKIN": ("skin rash", "skin irritation", "skin growth"),
}


def canonical_name(name: str) -> str:
    return " ".join(name.lower().split())


def canonical_category(category: str) -> str:
    cat = category.strip().upper()
    if cat not in CATEGORIES:
        raise ConfigError(f"unknown category {category!r}; expected one of {', '.join(CATEGORIES)}")
    return cat


@dataclass(frozen=True)
class DisorderLabel:
    name: str
    category: str

    def __post_init__(self):
        name = canonical_name(self.name)
        if not name:
            raise ConfigError("disorder name must be non-empty")
        object.__setattr__(self, "name", name)
        object.__setattr__(self, "category", canonical_category(self.category))


@dataclass(frozen=True)
class DisorderTaxonomy:
    disorders: tuple[DisorderLabel, ...]
    contexts: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    def __post_init__(self):
        disorders = tuple(self.disorders)
        seen = set()
        for d in disorders:
            if d.name in seen:
                raise ConfigError(f"duplicate disorder {d.name!r} in taxonomy")
            seen.add(d.name)
        unknown = set(self.contexts) - seen
        if unknown:
            raise ConfigError(f"contexts given for unknown disorders: {sorted(unknown)}")
        object.__setattr__(self, "disorders", disorders)
        object.__setattr__(self, "contexts", MappingProxyType(dict(self.contexts)))

    def __len__(self):
        return len(self.disorders)

    def __iter__(self):
        return iter(self.disorders)

    def names(self) -> list[str]:
        return [d.name for d in self.disorders]

    def get(self, name: str) -> DisorderLabel | None:
        name = canonical_name(name)
        for d in self.disorders:
            if d.name == name:
                return d
        return None

    def with_contexts(self, contexts: dict) -> DisorderTaxonomy:
        merged = dict(self.contexts)
        merged.update(contexts)
        return replace(self, contexts=MappingProxyType(merged))

    def missing_contexts(self) -> list[DisorderLabel]:
        return [d for d in self.disorders if not self.contexts.get(d.name)]

    def to_dict(self) -> dict:
        out = {"disorders": [{"name": d.name, "category": d.category} for d in self.disorders]}
        if self.contexts:
            out["contexts"] = {d.name: self.contexts[d.name] for d in self.disorders if d.name in self.contexts}
        return out


def default_taxonomy() -> DisorderTaxonomy:
    """The fourteen disorders named for the four categories."""
    return DisorderTaxonomy(tuple(
        DisorderLabel(name, cat) for cat in CATEGORIES for name in _DEFAULT[cat]
    ))


def taxonomy_from_dict(data: dict) -> DisorderTaxonomy:
    try:
        labels = tuple(DisorderLabel(d["name"], d["category"]) for d in data["disorders"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed taxonomy: {exc}") from exc
    contexts = {canonical_name(k): v for k, v in (data.get("contexts") or {}).items()}
    return DisorderTaxonomy(labels, contexts)


def load_taxonomy(path) -> DisorderTaxonomy:
    with open(path, encoding="utf-8") as fh:
        return taxonomy_from_dict(json.load(fh))
