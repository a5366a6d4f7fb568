import random

import pytest
from hypothesis import given, strategies as st

from mmqs.backends import MockLlmBackend
from mmqs.errors import EmptyCandidate, EmptyInput, EmptyReference, EmptyReferenceFacts, MissingAnnotations
from mmqs.metrics import (
    DisorderAssessment,
    FactSet,
    aggregate,
    assess_disorder,
    bleu,
    extract_facts,
    factual_recall,
    mmfcm,
    omission_rate,
    rouge_l,
    rouge_n,
    text_scores,
    tokenize,
)
from mmqs.taxonomy import default_taxonomy

from metric_cases import METRIC_TABLE

A = DisorderAssessment


@pytest.mark.parametrize("cand,ref,r1,r2,rl,bleus", METRIC_TABLE)
def test_metric_table(cand, ref, r1, r2, rl, bleus):
    assert tuple(rouge_n(cand, ref, 1)) == pytest.approx(r1, abs=1e-6)
    assert tuple(rouge_n(cand, ref, 2)) == pytest.approx(r2, abs=1e-6)
    assert tuple(rouge_l(cand, ref)) == pytest.approx(rl, abs=1e-6)
    for n, expected in enumerate(bleus, 1):
        assert bleu(cand, ref, n) == pytest.approx(expected, abs=1e-6)


def test_tokenize():
    assert tokenize("What's wrong, Doctor?!") == ["what's", "wrong", "doctor"]
    assert tokenize(" -- ... ") == []
    assert tokenize("“Quoted”") == ["quoted"]


def test_metric_errors():
    with pytest.raises(EmptyReference):
        rouge_n("a", "", 1)
    with pytest.raises(EmptyReference):
        rouge_n("a b", "a", 2)
    with pytest.raises(EmptyReference):
        rouge_l("a", "...")
    with pytest.raises(EmptyCandidate):
        rouge_l("", "a")
    with pytest.raises(EmptyInput):
        bleu("", "a")
    with pytest.raises(ValueError):
        bleu("a", "a", 5)


def test_text_scores_skips_rouge2_for_single_token_reference():
    s = text_scores("fever", "fever")
    assert s["rouge2"] is None
    assert s["rouge1"] == 1.0 and s["bleu1"] == 1.0


words = st.lists(st.sampled_from("a b c d e f".split()), min_size=1, max_size=10).map(" ".join)


@given(words, words)
def test_scores_in_unit_interval(c, r):
    for n in (1, 2, 3, 4):
        assert 0.0 <= bleu(c, r, n) <= 1.0
    for s in (rouge_n(c, r, 1), rouge_l(c, r)):
        assert all(0.0 <= x <= 1.0 for x in s)
    # LCS never exceeds unigram overlap
    assert rouge_l(c, r).f1 <= rouge_n(c, r, 1).f1 + 1e-12


@given(words)
def test_identity_scores_one(t):
    assert rouge_n(t, t, 1).f1 == 1.0
    assert rouge_l(t, t).f1 == 1.0
    assert bleu(t, t, 1) == 1.0


# -- facts -----------------------------------------------------------------------

def test_factset_normalisation():
    fs = FactSet.of(["Sore  Throat.", "sore throat", "", "fever!"])
    assert fs.facts == {"sore throat", "fever"}
    assert list(fs) == ["fever", "sore throat"]


def test_extract_annotated_and_llm():
    assert extract_facts("x", annotations=["A"]).facts == {"a"}
    with pytest.raises(MissingAnnotations):
        extract_facts("x")
    llm = MockLlmBackend([{"pattern": "one per line", "response": "- Fever\n2. Sore throat\n\n* fever"}])
    assert extract_facts("I have a fever", mode="llm", llm=llm).facts == {"fever", "sore throat"}
    assert extract_facts("  ", mode="llm", llm=llm).facts == frozenset()
    with pytest.raises(ValueError):
        extract_facts("x", mode="other", annotations=[])


@pytest.mark.parametrize("facts,expected", [
    (["swollen tonsils since yesterday"], A.FULLY_CORRECT),
    (["my tonsil hurts"], A.PARTIALLY_CORRECT),
    (["skin rash on arm"], A.INCORRECT),
    (["fever and chills"], A.ABSENT),
    ([], A.ABSENT),
])
def test_assess_disorder(facts, expected):
    assert assess_disorder("swollen tonsils", FactSet.of(facts), default_taxonomy()) is expected


def test_mmfcm_examples():
    F = FactSet.of(["a", "b", "d"])
    assert mmfcm(F, FactSet.of(["a", "d"]), A.FULLY_CORRECT) == 2.0
    same = FactSet.of(["a", "b", "x"])
    assert mmfcm(same, same, A.INCORRECT) == pytest.approx(2 / 3)
    assert mmfcm(F, FactSet.of(["z"]), A.FULLY_CORRECT) == 0.0
    assert mmfcm(F, FactSet.of(["a"]), A.PARTIALLY_CORRECT) == 2.0
    assert mmfcm(F, FactSet.of(["a", "b"]), A.ABSENT) == 1.0
    assert mmfcm(F, FactSet.of(["a", "d"]), A.FULLY_CORRECT, denominator="facts") == pytest.approx(4 / 3)
    with pytest.raises(ValueError):
        mmfcm(F, F, A.ABSENT, denominator="other")


@given(st.sets(st.integers(0, 9), max_size=8), st.sets(st.integers(0, 9), max_size=8),
       st.sampled_from(list(A)))
def test_mmfcm_bounds(f, s, assessment):
    score = mmfcm(FactSet.of(map(str, f)), FactSet.of(map(str, s)), assessment)
    assert 0.0 <= score <= 3.0


def test_recall_and_omission():
    ref = FactSet.of(["fever", "rash", "itching", "swelling"])
    cand = FactSet.of(["fever", "rash", "cough"])
    assert factual_recall(ref, cand) == 0.5
    assert omission_rate(ref, cand) == 0.5
    assert factual_recall(ref, FactSet.of(["red rash"]), matcher="jaccard") == 0.25
    with pytest.raises(EmptyReferenceFacts):
        factual_recall(FactSet(), cand)


@given(st.sets(st.integers(0, 12), min_size=1), st.sets(st.integers(0, 12)),
       st.sampled_from(["exact", "jaccard"]))
def test_recall_plus_omission_is_one(r, c, matcher):
    ref, cand = FactSet.of(map(str, r)), FactSet.of(map(str, c))
    assert factual_recall(ref, cand, matcher) + omission_rate(ref, cand, matcher) == pytest.approx(1.0)


def test_aggregate_skips_absent_values():
    report = aggregate({"a": {"rouge1": 0.5, "rouge2": None}, "b": {"rouge1": 1.0, "rouge2": 0.25}})
    assert report.aggregates["rouge1"] == 0.75
    assert report.aggregates["rouge2"] == 0.25
    assert report.absent_counts["rouge2"] == 1
    assert report.aggregates["mmfcm"] is None and report.absent_counts["mmfcm"] == 2
    with pytest.raises(EmptyInput):
        aggregate({})


def test_aggregate_is_order_independent():
    rng = random.Random(3)
    rows = {str(i): {"rouge1": rng.random()} for i in range(200)}
    shuffled = dict(sorted(rows.items(), key=lambda kv: rng.random()))
    assert aggregate(rows).aggregates["rouge1"] == aggregate(shuffled).aggregates["rouge1"]
