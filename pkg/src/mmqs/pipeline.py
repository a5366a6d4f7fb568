"""End-to-end orchestration: configuration, backend wiring, batch run and evaluation."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .backends import (
    CachingEmbedder,
    CachingLlm,
    EmbeddingBackend,
    LlmBackend,
    ResponseCache,
    load_mock_fixtures,
    make_embedder,
    make_llm,
)
from .dataset import MmqsRecord, scan_dataset
from .disorder_id import RERANK_TEMPLATE, build_disorder_contexts, classify_topk, rerank_with_llm
from .errors import (
    ConfigError,
    EmptyReference,
    IdMismatch,
    MissingGoldSummary,
    MmqsError,
    ValidationError,
)
from .filtering import filter_knowledge, tokenize_sentences
from .knowledge import default_prompts, generate_context, load_prompt_catalog
from .metrics import (
    DisorderAssessment,
    EvalReport,
    aggregate,
    assess_disorder,
    extract_facts,
    factual_recall,
    mmfcm,
    omission_rate,
    text_scores,
)
from .summarizer import DEFAULT_TOKEN_BUDGET, SummaryOutput, generate_summary
from .taxonomy import default_taxonomy, load_taxonomy

log = logging.getLogger(__name__)

VARIANTS = ("text_only", "clip_llm", "clipsyntel")
STAGES = ("identify", "context", "filter", "summarize")
VOLATILE_MANIFEST_KEYS = ("generated_at", "timing")

_PATH_FIELDS = ("dataset", "taxonomy", "prompts", "out", "mock_fixtures", "image_root", "facts", "summaries")


@dataclass
class PipelineConfig:
    dataset: str | None = None
    format: str = "jsonl"
    taxonomy: str | None = None
    prompts: str | None = None
    variant: str = "clipsyntel"
    th: float = 0.5
    temperature: float = 0.5
    k: int = 3
    out: str = "mmqs-out"
    cache: bool = False
    strict: bool = False
    workers: int = 1
    mock: bool = False
    mock_fixtures: str | None = None
    image_root: str | None = None
    token_budget: int = DEFAULT_TOKEN_BUDGET
    rerank_template: str = RERANK_TEMPLATE
    fallback_on_error: bool = False
    abbreviations: list = field(default_factory=list)
    llm: dict = field(default_factory=lambda: {"type": "http"})
    embedder: dict = field(default_factory=lambda: {"type": "http"})
    classifier_embedder: dict | None = None
    # evaluation
    summaries: str | None = None
    facts: str | None = None
    fact_extraction: str = "annotated"
    fact_matcher: str = "exact"
    mmfcm_denominator: str = "intersection"
    csv: bool = False

    def validate(self) -> PipelineConfig:
        if not -1.0 <= self.th <= 1.0:
            raise ConfigError(f"th={self.th} outside [-1, 1]")
        if not 0.0 <= self.temperature <= 2.0:
            raise ConfigError(f"temperature={self.temperature} outside [0, 2]")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {', '.join(VARIANTS)}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.format not in ("jsonl", "csv"):
            raise ConfigError(f"unknown dataset format {self.format!r}")
        if self.fact_extraction not in ("annotated", "llm"):
            raise ConfigError("fact_extraction must be 'annotated' or 'llm'")
        if self.fact_matcher not in ("exact", "jaccard"):
            raise ConfigError("fact_matcher must be 'exact' or 'jaccard'")
        if self.mmfcm_denominator not in ("intersection", "facts"):
            raise ConfigError("mmfcm_denominator must be 'intersection' or 'facts'")
        return self

    @classmethod
    def load(cls, path=None, overrides=None) -> PipelineConfig:
        """Config file values, then non-None ``overrides`` on top.

        Relative paths inside the file resolve against the file's directory.
        Backend env vars (``MMQS_BASE_URL``, ``MMQS_API_KEY``) are applied when
        backends are built and take precedence over both.
        """
        values = {}
        if path is not None:
            path = Path(path)
            try:
                with open(path, encoding="utf-8") as fh:
                    values = json.load(fh)
            except ValueError as exc:
                raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
            if not isinstance(values, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            for key in _PATH_FIELDS:
                if values.get(key):
                    values[key] = str((path.parent / values[key]))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        try:
            return cls(**values).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def snapshot(self) -> dict:
        snap = dataclasses.asdict(self)
        for key in ("llm", "embedder", "classifier_embedder"):
            if snap.get(key) and "api_key" in snap[key]:
                snap[key] = {**snap[key], "api_key": "***"}
        return snap


@dataclass
class Backends:
    llm: LlmBackend
    embedder: EmbeddingBackend
    classifier: EmbeddingBackend
    cache: ResponseCache | None = None


def build_backends(config: PipelineConfig) -> Backends:
    fixtures = load_mock_fixtures(config.mock_fixtures) if config.mock_fixtures else None
    specs = {"llm": dict(config.llm), "embedder": dict(config.embedder)}
    specs["classifier"] = dict(config.classifier_embedder) if config.classifier_embedder else None
    if config.mock:
        for spec in specs.values():
            if spec is not None:
                spec["type"] = "mock"
    llm = make_llm(specs["llm"], fixtures)
    embedder = make_embedder(specs["embedder"], fixtures)
    classifier = make_embedder(specs["classifier"], fixtures) if specs["classifier"] else embedder

    cache = ResponseCache(Path(config.out) / "cache.jsonl") if config.cache else None
    if cache is not None:
        llm = CachingLlm(llm, cache)
    # embeddings are pure functions of their input, so always memoise in-process
    emb_cache = cache if cache is not None else ResponseCache()
    wrapped = CachingEmbedder(embedder, emb_cache)
    classifier = wrapped if classifier is embedder else CachingEmbedder(classifier, emb_cache)
    return Backends(llm, wrapped, classifier, cache)


@dataclass
class RunManifest:
    config: dict
    records: list
    errors: list
    timing: dict
    generated_at: str = ""

    @property
    def ok(self) -> int:
        return sum(1 for r in self.records if r["status"] == "ok")

    def to_dict(self) -> dict:
        return {
            "generated_at": self.generated_at,
            "config": self.config,
            "counts": {"records": len(self.records), "ok": self.ok, "errors": len(self.errors)},
            "records": self.records,
            "errors": self.errors,
            "timing": self.timing,
        }


def stable_manifest(manifest: dict) -> dict:
    """Manifest without its volatile keys, for golden comparisons."""
    return {k: v for k, v in manifest.items() if k not in VOLATILE_MANIFEST_KEYS}


def _image_path(config: PipelineConfig, record: MmqsRecord) -> Path:
    if config.image_root:
        root = Path(config.image_root)
    elif config.dataset:
        root = Path(config.dataset).parent
    else:
        root = Path.cwd()
    return root / record.image_ref


class _Runner:
    def __init__(self, config, backends, taxonomy, prompts):
        self.config = config
        self.b = backends
        self.taxonomy = taxonomy
        self.prompts = prompts

    def run(self, record: MmqsRecord, outcome: dict, timing: dict):
        """Process one record, filling ``outcome``/``timing`` as stages finish.

        Returns ``(summary, audit)``; errors propagate with ``outcome["stage"]`` set.
        """
        cfg = self.config
        audit = None
        outcome["stage"] = "identify"
        if cfg.variant == "text_only":
            outcome["stage"] = "summarize"
            t0 = time.perf_counter()
            out = generate_summary(record, None, self.b.llm, cfg.temperature, cfg.token_budget,
                                   text_only=True)
            timing["summarize"] = time.perf_counter() - t0
            return out, audit

        t0 = time.perf_counter()
        image = _image_path(cfg, record)
        ranked = classify_topk(self.b.classifier.embed_image(image), self.taxonomy, self.b.classifier, cfg.k)
        disorder = rerank_with_llm(record.question, ranked, self.b.llm, cfg.rerank_template,
                                   cfg.temperature, cfg.fallback_on_error)
        outcome["candidates"] = [d.name for d in ranked.labels]
        outcome["disorder"] = disorder.name
        timing["identify"] = time.perf_counter() - t0

        outcome["stage"] = "context"
        t0 = time.perf_counter()
        ks = generate_context(disorder, self.prompts, self.b.llm, cfg.temperature)
        timing["context"] = time.perf_counter() - t0

        if cfg.variant == "clipsyntel":
            outcome["stage"] = "filter"
            t0 = time.perf_counter()
            filtered = filter_knowledge(ks, self.b.embedder.embed_image(image), self.b.embedder,
                                        cfg.th, cfg.abbreviations)
            context = filtered.kept_sentences
            outcome["kept"], outcome["dropped"] = len(filtered.kept), len(filtered.dropped)
            audit = {"id": record.id, **filtered.audit()}
            timing["filter"] = time.perf_counter() - t0
        else:
            context = [s for item in ks.items for s in tokenize_sentences(item.text, cfg.abbreviations)]
            outcome["kept"] = len(context)

        outcome["stage"] = "summarize"
        t0 = time.perf_counter()
        out = generate_summary(record, context, self.b.llm, cfg.temperature, cfg.token_budget,
                               disorder=disorder)
        timing["summarize"] = time.perf_counter() - t0
        return out, audit

    def process(self, record: MmqsRecord):
        timing = dict.fromkeys(STAGES, 0.0)
        outcome = {"id": record.id, "status": "ok", "disorder": None, "candidates": [],
                   "kept": 0, "dropped": 0, "context_sentences": 0}
        audit = None
        try:
            out, audit = self.run(record, outcome, timing)
        except (MmqsError, OSError, ValueError) as exc:
            outcome.update(status="error", error=f"{type(exc).__name__}: {exc}")
            return None, outcome, audit, timing
        del outcome["stage"]
        outcome["context_sentences"] = out.context_sentences_used
        outcome["summary_id"] = out.record_id
        return out, outcome, audit, timing


def summarize_record(config: PipelineConfig, record: MmqsRecord, backends: Backends | None = None):
    """Run the configured variant on one record; errors propagate."""
    config.validate()
    taxonomy, prompts = load_run_inputs(config)
    backends = backends or build_backends(config)
    if config.variant != "text_only":
        taxonomy = build_disorder_contexts(taxonomy, backends.llm, config.temperature)
    outcome, timing = {}, {}
    out, _ = _Runner(config, backends, taxonomy, prompts).run(record, outcome, timing)
    return out


def _dump_json(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, indent=2) + "\n"


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_run_inputs(config: PipelineConfig):
    taxonomy = load_taxonomy(config.taxonomy) if config.taxonomy else default_taxonomy()
    prompts = load_prompt_catalog(config.prompts) if config.prompts else default_prompts()
    return taxonomy, prompts


def run_pipeline(config: PipelineConfig, backends: Backends | None = None, write: bool = True):
    """Run the configured variant over the dataset.

    Returns ``(manifest, summaries)``. Per-record failures are recorded in the
    manifest; config, dataset-file and shared-context failures raise. Outputs
    (``summaries.jsonl``, ``audit.jsonl`` for the filtered variant,
    ``manifest.json``) are written to ``config.out`` in input order.
    """
    config.validate()
    if not config.dataset:
        raise ConfigError("no dataset configured")
    taxonomy, prompts = load_run_inputs(config)
    entries = scan_dataset(config.dataset, config.format, config.strict, taxonomy, config.image_root)
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    backends = backends or build_backends(config)

    if config.variant != "text_only":
        taxonomy = build_disorder_contexts(taxonomy, backends.llm, config.temperature)
    runner = _Runner(config, backends, taxonomy, prompts)

    records = [e for e in entries if isinstance(e, MmqsRecord)]
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = iter(list(pool.map(runner.process, records)))
    else:
        results = (runner.process(r) for r in records)

    summaries, outcomes, audits, errors = [], [], [], []
    timing = dict.fromkeys(STAGES, 0.0)
    for entry in entries:
        if isinstance(entry, ValidationError):
            outcome = {"id": entry.location, "status": "error", "stage": "load",
                       "error": f"{type(entry).__name__}: {entry}"}
            outcomes.append(outcome)
            errors.append({"id": entry.location, "stage": "load", "error": outcome["error"]})
            continue
        out, outcome, audit, t = next(results)
        for k, v in t.items():
            timing[k] += v
        outcomes.append(outcome)
        if audit is not None:
            audits.append(audit)
        if out is None:
            errors.append({"id": outcome["id"], "stage": outcome["stage"], "error": outcome["error"]})
        else:
            summaries.append(out)

    manifest = RunManifest(
        config=config.snapshot(),
        records=outcomes,
        errors=errors,
        timing={k: round(v, 6) for k, v in timing.items()},
        generated_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    if write:
        _write_jsonl(out_dir / "summaries.jsonl", (s.to_dict() for s in summaries))
        if config.variant == "clipsyntel":
            _write_jsonl(out_dir / "audit.jsonl", audits)
        (out_dir / "manifest.json").write_text(_dump_json(manifest.to_dict()), encoding="utf-8")
    return manifest, summaries


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def read_summaries(path) -> list[SummaryOutput]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(SummaryOutput(
                    record_id=obj["record_id"],
                    summary=obj["summary"],
                    disorder_used=obj.get("disorder_used"),
                    context_sentences_used=int(obj.get("context_sentences_used", 0)),
                    prompt_rendered=obj.get("prompt_rendered", ""),
                ))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"malformed summary line: {exc}", f"line {lineno}") from exc
    return out


def read_facts_sidecar(path) -> dict:
    """``{"id", "query_facts", "summary_facts"?, "assessment"?}`` per line, keyed by id."""
    facts = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                facts[obj["id"]] = obj
            except (ValueError, KeyError, TypeError) as exc:
                raise ValidationError(f"malformed facts line: {exc}", f"line {lineno}") from exc
    return facts


def _fact_scores(record, candidate, side, config, taxonomy, llm):
    mode = config.fact_extraction
    if side is not None and side.get("query_facts") is not None:
        F = extract_facts("", "annotated", annotations=side["query_facts"])
    elif mode == "llm" and llm is not None:
        F = extract_facts(record.question, "llm", llm, temperature=config.temperature)
    else:
        return {}
    if side is not None and side.get("summary_facts") is not None:
        Sf = extract_facts("", "annotated", annotations=side["summary_facts"], source="summary")
    elif mode == "llm" and llm is not None:
        Sf = extract_facts(candidate, "llm", llm, source="summary", temperature=config.temperature)
    else:
        return {}
    scores = {}
    if len(F):
        scores["factual_recall"] = factual_recall(F, Sf, config.fact_matcher)
        scores["omission_rate"] = omission_rate(F, Sf, config.fact_matcher)
    if side is not None and side.get("assessment"):
        assessment = DisorderAssessment(side["assessment"])
    elif record.disorder:
        assessment = assess_disorder(record.disorder, Sf, taxonomy)
    else:
        assessment = DisorderAssessment.ABSENT
    if not len(F.facts & Sf.facts):
        log.info("%s: no shared facts; mmfcm scored 0", record.id)
    scores["mmfcm"] = mmfcm(F, Sf, assessment, config.mmfcm_denominator)
    return scores


AGGREGATE_COLUMNS = (
    ("R1", "rouge1"), ("R2", "rouge2"), ("RL", "rougeL"),
    ("B1", "bleu1"), ("B2", "bleu2"), ("B3", "bleu3"), ("B4", "bleu4"),
    ("FactualRecall", "factual_recall"), ("OmissionRate", "omission_rate"), ("MMFCM", "mmfcm"),
)


def evaluate(summaries, records, config: PipelineConfig, facts=None, llm=None, taxonomy=None) -> EvalReport:
    by_id = {r.id: r for r in records}
    taxonomy = taxonomy or default_taxonomy()
    facts = facts or {}
    cands = {}
    for s in summaries:
        if s.record_id not in by_id:
            raise IdMismatch(f"summary for unknown record id {s.record_id!r}", s.record_id)
        if s.record_id in cands:
            raise IdMismatch(f"duplicate summary for {s.record_id!r}", s.record_id)
        cands[s.record_id] = s.summary
    per_record = {}
    for rec in records:
        if rec.id not in cands:
            continue
        try:
            scores = text_scores(cands[rec.id], rec.gold_summary)
        except EmptyReference as exc:
            raise MissingGoldSummary(f"gold summary has no tokens: {exc}", rec.id) from exc
        except ValueError:
            # empty candidate after tokenisation
            scores = {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0,
                      **{f"bleu{n}": 0.0 for n in range(1, 5)}}
        scores.update(_fact_scores(rec, cands[rec.id], facts.get(rec.id), config, taxonomy, llm))
        per_record[rec.id] = scores
    return aggregate(per_record)


def run_eval(config: PipelineConfig, backends: Backends | None = None) -> EvalReport:
    """Score ``config.summaries`` against the dataset and write ``report.json`` (and CSV)."""
    config.validate()
    if not config.summaries or not config.dataset:
        raise ConfigError("eval needs both summaries and dataset paths")
    taxonomy, _ = load_run_inputs(config)
    entries = scan_dataset(config.dataset, config.format, config.strict, taxonomy, config.image_root)
    bad = [e for e in entries if isinstance(e, ValidationError)]
    if bad:
        raise bad[0]
    records = [e for e in entries if isinstance(e, MmqsRecord)]
    facts = read_facts_sidecar(config.facts) if config.facts else None
    llm = None
    if config.fact_extraction == "llm":
        llm = (backends or build_backends(config)).llm
    report = evaluate(read_summaries(config.summaries), records, config, facts, llm, taxonomy)

    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(_dump_json(report.to_dict()), encoding="utf-8")
    if config.csv:
        with open(out_dir / "report.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["variant"] + [c for c, _ in AGGREGATE_COLUMNS])
            row = [config.variant]
            for _, metric in AGGREGATE_COLUMNS:
                v = report.aggregates.get(metric)
                row.append("" if v is None else f"{v:.6f}")
            writer.writerow(row)
    return report
