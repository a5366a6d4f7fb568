import json

import pytest

from mmqs.cli import main
from mmqs.errors import ConfigError, IdMismatch, MissingGoldSummary
from mmqs.pipeline import (
    PipelineConfig,
    build_backends,
    evaluate,
    read_summaries,
    run_eval,
    run_pipeline,
    stable_manifest,
)
from mmqs.dataset import load_dataset
from mmqs.summarizer import SummaryOutput

VARIANTS = ("text_only", "clip_llm", "clipsyntel")


def _config(data_dir, tmp_path, **kw):
    return PipelineConfig.load(data_dir / "config.json", {"out": str(tmp_path / "out"), **kw})


def _golden_manifest(manifest: dict) -> dict:
    return {k: manifest[k] for k in ("counts", "records", "errors")}


@pytest.mark.parametrize("variant", VARIANTS)
def test_run_matches_golden(data_dir, tmp_path, variant):
    cfg = _config(data_dir, tmp_path, variant=variant)
    run_pipeline(cfg)
    golden = data_dir / "golden" / variant
    out = tmp_path / "out"
    assert (out / "summaries.jsonl").read_bytes() == (golden / "summaries.jsonl").read_bytes()
    if variant == "clipsyntel":
        assert (out / "audit.jsonl").read_bytes() == (golden / "audit.jsonl").read_bytes()
    else:
        assert not (out / "audit.jsonl").exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert _golden_manifest(manifest) == json.loads((golden / "manifest_records.json").read_text())


def test_rerank_overrides_image_top1(data_dir, tmp_path):
    manifest, _ = run_pipeline(_config(data_dir, tmp_path), write=False)
    q3 = manifest.records[2]
    assert q3["candidates"][0] == "foot swelling"
    assert q3["disorder"] == "neck swelling"


def test_variants_differ_only_where_expected(data_dir, tmp_path):
    results = {}
    for v in VARIANTS:
        _, summaries = run_pipeline(_config(data_dir, tmp_path / v, variant=v), write=False)
        results[v] = {s.record_id: s for s in summaries}
    for rid in ("q1", "q2", "q3"):
        text_only, clip, syn = (results[v][rid] for v in VARIANTS)
        assert text_only.context_sentences_used == 0 and text_only.disorder_used is None
        assert clip.context_sentences_used > syn.context_sentences_used > 0
        assert len({text_only.summary, clip.summary, syn.summary}) == 3


def test_invalid_records_are_isolated(data_dir, tmp_path):
    ds = tmp_path / "mixed.jsonl"
    lines = (data_dir / "dataset.jsonl").read_text().splitlines()
    bad = json.dumps({"id": "bad", "question": "", "image_ref": "x.jpg", "summary": "s"})
    unknown = json.loads(lines[0])
    unknown.update(id="q9", question="Something nobody has a fixture for.")
    ds.write_text("\n".join([lines[0], bad, lines[1], json.dumps(unknown)]) + "\n")
    manifest, summaries = run_pipeline(_config(data_dir, tmp_path, dataset=str(ds)))
    assert [s.record_id for s in summaries] == ["q1", "q2"]
    assert [r["status"] for r in manifest.records] == ["ok", "error", "ok", "error"]
    stages = {e["id"]: e["stage"] for e in manifest.errors}
    assert stages == {"bad": "load", "q9": "identify"}
    assert "NoFixtureMatch" in manifest.errors[1]["error"]


def test_resume_from_cache_makes_no_backend_calls(data_dir, tmp_path):
    cfg = _config(data_dir, tmp_path, cache=True)
    first = build_backends(cfg)
    run_pipeline(cfg, first)
    before = (tmp_path / "out" / "summaries.jsonl").read_bytes()
    second = build_backends(cfg)
    run_pipeline(cfg, second)
    assert second.llm.inner.call_count == 0
    assert second.embedder.inner.call_count == 0
    assert (tmp_path / "out" / "summaries.jsonl").read_bytes() == before


def test_workers_do_not_change_output(data_dir, tmp_path):
    run_pipeline(_config(data_dir, tmp_path / "a"))
    run_pipeline(_config(data_dir, tmp_path / "b", workers=4))
    for name in ("summaries.jsonl", "audit.jsonl"):
        assert (tmp_path / "a" / "out" / name).read_bytes() == (tmp_path / "b" / "out" / name).read_bytes()


def test_manifest_stable_view(data_dir, tmp_path):
    m1, _ = run_pipeline(_config(data_dir, tmp_path), write=False)
    m2, _ = run_pipeline(_config(data_dir, tmp_path), write=False)
    assert stable_manifest(m1.to_dict()) == stable_manifest(m2.to_dict())
    assert "generated_at" not in stable_manifest(m1.to_dict())


def test_config_errors(data_dir, tmp_path):
    with pytest.raises(ConfigError):
        _config(data_dir, tmp_path, th=2.0)
    with pytest.raises(ConfigError):
        _config(data_dir, tmp_path, variant="best")
    bad = tmp_path / "bad.json"
    bad.write_text('{"dataset": "x", "thresh": 0.4}')
    with pytest.raises(ConfigError):
        PipelineConfig.load(bad)
    assert PipelineConfig().th == 0.5 and PipelineConfig().k == 3


def test_snapshot_masks_api_key():
    cfg = PipelineConfig(llm={"type": "http", "api_key": "sekret"})
    assert cfg.snapshot()["llm"]["api_key"] == "***"


# -- evaluation ------------------------------------------------------------------

def _gold_as_summaries(records):
    return [SummaryOutput(r.id, r.gold_summary, None, 0, "") for r in records]


def test_eval_identity_corpus(data_dir):
    records = load_dataset(data_dir / "dataset.jsonl")
    report = evaluate(_gold_as_summaries(records), records, PipelineConfig())
    for m in ("rouge1", "rouge2", "rougeL", "bleu1", "bleu2", "bleu3", "bleu4"):
        assert report.aggregates[m] == pytest.approx(1.0)
    assert report.aggregates["mmfcm"] is None and report.absent_counts["mmfcm"] == 3


def test_eval_with_facts_matches_hand_computation(data_dir, tmp_path):
    cfg = _config(data_dir, tmp_path, summaries=str(data_dir / "golden/clipsyntel/summaries.jsonl"),
                  facts=str(data_dir / "facts.jsonl"), csv=True)
    report = run_eval(cfg)
    # shared facts 6, 4, 3; every summary names its disorder in full (+2)
    assert report.aggregates["mmfcm"] == pytest.approx((8 / 6 + 6 / 4 + 5 / 3) / 3)
    assert report.aggregates["factual_recall"] == pytest.approx((1 + 1 + 3 / 4) / 3)
    assert report.aggregates["omission_rate"] == pytest.approx(1 / 12)
    header, row = (tmp_path / "out" / "report.csv").read_text().splitlines()
    assert header == "variant,R1,R2,RL,B1,B2,B3,B4,FactualRecall,OmissionRate,MMFCM"
    assert row.startswith("clipsyntel,") and row.endswith(",1.500000")


def test_eval_id_mismatch(data_dir):
    records = load_dataset(data_dir / "dataset.jsonl")
    stray = _gold_as_summaries(records) + [SummaryOutput("zz", "x", None, 0, "")]
    with pytest.raises(IdMismatch):
        evaluate(stray, records, PipelineConfig())
    dup = _gold_as_summaries(records) + _gold_as_summaries(records)[:1]
    with pytest.raises(IdMismatch):
        evaluate(dup, records, PipelineConfig())


def test_eval_gold_without_tokens(data_dir):
    records = load_dataset(data_dir / "dataset.jsonl")
    from dataclasses import replace
    broken = [replace(records[0], gold_summary="?!")]
    with pytest.raises(MissingGoldSummary):
        evaluate(_gold_as_summaries(records)[:1], broken, PipelineConfig())


def test_read_summaries_round_trip(data_dir):
    summaries = read_summaries(data_dir / "golden/clip_llm/summaries.jsonl")
    assert [s.record_id for s in summaries] == ["q1", "q2", "q3"]
    assert summaries[0].disorder_used == "swollen tonsils"


# -- CLI ---------------------------------------------------------------------------

def _cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_run_and_eval(data_dir, tmp_path, capsys):
    cfg = str(data_dir / "config.json")
    code, out, _ = _cli(capsys, "run", "--config", cfg, "--out", str(tmp_path))
    assert code == 0 and "3/3 records" in out
    code, out, _ = _cli(capsys, "eval", "--config", cfg, "--out", str(tmp_path),
                        "--summaries", str(tmp_path / "summaries.jsonl"), "--facts", str(data_dir / "facts.jsonl"))
    assert code == 0
    assert json.loads(out)["aggregates"]["mmfcm"] == pytest.approx(1.5)


def test_cli_classify(data_dir, capsys):
    cfg = str(data_dir / "config.json")
    code, out, _ = _cli(capsys, "classify", "--config", cfg, "--image", "neck swelling/Image_4.jpg")
    assert code == 0
    result = json.loads(out)
    assert [c["name"] for c in result["candidates"]] == ["foot swelling", "neck swelling", "hand lumps"]
    assert result["prediction"] == "foot swelling"


def test_cli_context_filter_summarize(data_dir, capsys):
    cfg = str(data_dir / "config.json")
    code, out, _ = _cli(capsys, "context", "--config", cfg, "--disorder", "Skin Rash")
    assert code == 0 and json.loads(out)["disorder"] == "skin rash"
    code, out, _ = _cli(capsys, "filter", "--config", cfg, "--image", "skin rash/Image_105.jpg",
                        "--text", "A skin rash shows red, raised or scaly patches. A skin biopsy is rarely needed.")
    audit = json.loads(out)
    assert code == 0
    assert [k["sentence"] for k in audit["kept"]] == ["A skin rash shows red, raised or scaly patches."]
    code, out, _ = _cli(capsys, "summarize", "--config", cfg, "--id", "q2")
    assert code == 0
    assert json.loads(out)["summary"] == "What treatment helps a 16-month-old with a red itchy skin rash and poor sleep?"


def test_cli_stats(data_dir, capsys):
    code, out, _ = _cli(capsys, "stats", "--dataset", str(data_dir / "dataset.jsonl"))
    stats = json.loads(out)
    assert code == 0
    assert stats["record_count"] == 3
    assert stats["per_category_counts"] == {"ENT": 1, "LIMB": 1, "SKIN": 1}


def test_cli_exit_codes(data_dir, tmp_path, capsys):
    bad = tmp_path / "d.jsonl"
    bad.write_text('{"id": "a", "question": "q", "image_ref": "x.jpg"}\n')
    code, _, err = _cli(capsys, "stats", "--dataset", str(bad))
    assert code == 2 and "summary" in err
    code, _, err = _cli(capsys, "stats", "--dataset", str(tmp_path / "missing.jsonl"))
    assert code == 1
    code, _, _ = _cli(capsys, "run", "--config", str(data_dir / "config.json"), "--th", "7", "--out", str(tmp_path))
    assert code == 1
    code, _, _ = _cli(capsys, "summarize", "--config", str(data_dir / "config.json"), "--id", "nope")
    assert code == 2


def test_cli_http_backend_unreachable(data_dir, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MMQS_BASE_URL", "http://127.0.0.1:9")
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dataset": str(data_dir / "dataset.jsonl"),
                               "llm": {"type": "http", "max_attempts": 1, "backoff": 0, "timeout": 0.5},
                               "embedder": {"type": "http", "max_attempts": 1, "backoff": 0, "timeout": 0.5}}))
    code, _, err = _cli(capsys, "run", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 1 and "BackendUnavailable" in err
