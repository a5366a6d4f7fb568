"""Multimodal medical question summarisation pipeline and evaluation harness."""

__version__ = "0.1.0"

from .backends import (
    BackendResponse,
    EmbeddingVector,
    HttpEmbeddingBackend,
    HttpLlmBackend,
    LlmRequest,
    MockEmbeddingBackend,
    MockLlmBackend,
)
from .dataset import MmqsRecord, compute_stats, load_dataset
from .disorder_id import build_disorder_contexts, classify_topk, rerank_with_llm
from .filtering import cosine_similarity, filter_knowledge, tokenize_sentences
from .knowledge import default_prompts, generate_context
from .metrics import bleu, mmfcm, rouge_l, rouge_n
from .pipeline import PipelineConfig, run_eval, run_pipeline
from .summarizer import build_summary_prompt, generate_summary
from .taxonomy import DisorderLabel, DisorderTaxonomy, default_taxonomy

__all__ = [
    "BackendResponse", "EmbeddingVector", "HttpEmbeddingBackend", "HttpLlmBackend", "LlmRequest",
    "MockEmbeddingBackend", "MockLlmBackend", "MmqsRecord", "compute_stats", "load_dataset",
    "build_disorder_contexts", "classify_topk", "rerank_with_llm", "cosine_similarity",
    "filter_knowledge", "tokenize_sentences", "default_prompts", "generate_context", "bleu", "mmfcm",
    "rouge_l", "rouge_n", "PipelineConfig", "run_eval", "run_pipeline", "build_summary_prompt",
    "generate_summary", "DisorderLabel", "DisorderTaxonomy", "default_taxonomy",
]
