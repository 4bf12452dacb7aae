from __future__ import annotations

import json

import pytest

from cirag import cli
from cirag.corpus import read_corpus
from cirag.synthetic import make_bridge_suite

from conftest import CASE_DIR, CASE_GOLD, CASE_QUESTION


def _write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def _write_docs(path, docs):
    path.write_text("".join(json.dumps({"id": d.id, "title": d.title, "text": d.body}) + "\n" for d in docs),
                    encoding="utf-8")
    return str(path)


def _last_json(capsys):
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture
def replay_config(tmp_path):
    return _write_json(tmp_path / "replay.json", {"backend": {"type": "replay", "script": str(CASE_DIR / "script.json")}})


@pytest.fixture
def oracle_config(tmp_path):
    return _write_json(tmp_path / "oracle.json", {"backend": {"type": "oracle"}, "retriever": {"k_docs": 4}})


@pytest.fixture(scope="module")
def suite():
    return make_bridge_suite(n_questions=3, seed=21)


def test_index_empty_corpus_fails(tmp_path, capsys):
    (tmp_path / "empty.jsonl").write_text("", encoding="utf-8")
    assert cli.main(["index", str(tmp_path / "empty.jsonl"), "--out", str(tmp_path / "idx")]) == 1
    assert "error" in capsys.readouterr().err


def test_index_writes_files_and_is_reproducible(tmp_path, capsys, suite):
    corpus = _write_docs(tmp_path / "c.jsonl", suite.documents[:3])
    assert cli.main(["index", corpus, "--out", str(tmp_path / "a")]) == 0
    assert _last_json(capsys)["document_count"] == 3
    for name in ("documents.jsonl", "index.json", "manifest.json"):
        assert (tmp_path / "a" / name).exists()
    assert cli.main(["index", corpus, "--out", str(tmp_path / "b")]) == 0
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text(encoding="utf-8"))
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text(encoding="utf-8"))
    assert ma["index_sha256"] == mb["index_sha256"]
    assert ma["command"] == "index" and ma["engine_version"]


def test_stats(tmp_path, capsys, suite):
    corpus = _write_docs(tmp_path / "c.jsonl", suite.documents)
    assert cli.main(["stats", corpus]) == 0
    assert _last_json(capsys)["document_count"] == len(suite.documents)


def test_extract_cold_then_warm(tmp_path, capsys, replay_config):
    cache = str(tmp_path / "cache.jsonl")
    corpus = str(CASE_DIR / "corpus.jsonl")
    assert cli.main(["extract", corpus, "--cache", cache, "--config", replay_config]) == 0
    cold = _last_json(capsys)
    assert cold["extracted"] == cold["documents"] == 6 and cold["llm_calls"] > 0
    assert cli.main(["extract", corpus, "--cache", cache, "--config", replay_config]) == 0
    warm = _last_json(capsys)
    assert warm["cached"] == 6 and warm["llm_calls"] == 0
    manifest = json.loads((tmp_path / "cache.jsonl.manifest.json").read_text(encoding="utf-8"))
    assert manifest["backend"]["model"] == "case-study-replay"


def test_extract_interrupted_then_resumed(tmp_path, capsys):
    script = json.loads((CASE_DIR / "script.json").read_text(encoding="utf-8"))
    partial = dict(script, rules=script["rules"][:6])  # NER + triples for d1..d3 only
    part_cfg = _write_json(tmp_path / "part.json", {"backend": {"type": "replay", "script": _write_json(tmp_path / "s.json", partial)}})
    full_cfg = _write_json(tmp_path / "full.json", {"backend": {"type": "replay", "script": str(CASE_DIR / "script.json")}})
    corpus = str(CASE_DIR / "corpus.jsonl")

    resumed = str(tmp_path / "resumed.jsonl")
    assert cli.main(["extract", corpus, "--cache", resumed, "--config", part_cfg]) == 1
    err = capsys.readouterr().err
    assert "missing documents: d4 d5 d6" in err
    assert cli.main(["extract", corpus, "--cache", resumed, "--config", full_cfg]) == 0
    out = _last_json(capsys)
    assert (out["cached"], out["extracted"]) == (3, 3)

    single = str(tmp_path / "single.jsonl")
    assert cli.main(["extract", corpus, "--cache", single, "--config", full_cfg]) == 0

    def rows(path):
        return sorted(json.loads(line)["doc_id"] + json.dumps(json.loads(line)["triples"], sort_keys=True)
                      for line in open(path, encoding="utf-8"))
    assert rows(resumed) == rows(single)


def test_extract_best_effort(tmp_path, capsys):
    script = json.loads((CASE_DIR / "script.json").read_text(encoding="utf-8"))
    partial = dict(script, rules=script["rules"][:6])
    cfg = _write_json(tmp_path / "part.json", {"backend": {"type": "replay", "script": _write_json(tmp_path / "s.json", partial)}})
    assert cli.main(["--best-effort", "extract", str(CASE_DIR / "corpus.jsonl"), "--cache",
                     str(tmp_path / "c.jsonl"), "--config", cfg]) == 0


def test_extract_empty_corpus(tmp_path, replay_config):
    (tmp_path / "empty.jsonl").write_text("", encoding="utf-8")
    assert cli.main(["extract", str(tmp_path / "empty.jsonl"), "--cache", str(tmp_path / "c.jsonl"),
                     "--config", replay_config]) == 1


def test_answer_case_study(capsys, replay_config):
    assert cli.main(["answer", CASE_QUESTION, "--config", replay_config, "--corpus", str(CASE_DIR / "corpus.jsonl")]) == 0
    captured = capsys.readouterr()
    assert captured.out.strip() == CASE_GOLD
    assert "[stop] no_question after 2 round(s); granularity=TRIPLE" in captured.err


def test_answer_from_index(tmp_path, capsys, replay_config):
    assert cli.main(["index", str(CASE_DIR / "corpus.jsonl"), "--out", str(tmp_path / "idx")]) == 0
    capsys.readouterr()
    assert cli.main(["answer", CASE_QUESTION, "--config", replay_config, "--index", str(tmp_path / "idx")]) == 0
    assert capsys.readouterr().out.strip() == CASE_GOLD


def test_answer_max_steps_and_trace(tmp_path, capsys, suite):
    # one document per round forces the second hop into a second round
    oracle_config = _write_json(tmp_path / "k1.json", {"backend": {"type": "oracle"}, "retriever": {"k_docs": 1}})
    corpus = _write_docs(tmp_path / "c.jsonl", suite.documents)
    trace = tmp_path / "trace.jsonl"
    q = suite.examples[0].question
    assert cli.main(["answer", q, "--config", oracle_config, "--corpus", corpus, "--emit-trace", str(trace)]) == 0
    assert len(trace.read_text(encoding="utf-8").splitlines()) == 2
    capsys.readouterr()
    assert cli.main(["answer", q, "--config", oracle_config, "--corpus", corpus, "--max-steps", "1",
                     "--emit-trace", str(trace)]) == 0
    assert "after 1 round(s)" in capsys.readouterr().err
    rounds = [json.loads(line) for line in trace.read_text(encoding="utf-8").splitlines()]
    assert [r["iteration"] for r in rounds] == [1]


def test_answer_needs_a_source(oracle_config):
    with pytest.raises(SystemExit):
        cli.main(["answer", "q", "--config", oracle_config])


def _dataset(tmp_path, suite, n):
    return _write_json(tmp_path / "d.json", suite.to_records()[:n])


def test_eval_rows_latency_and_trajectories(tmp_path, capsys, oracle_config, suite):
    report = tmp_path / "run" / "report.json"
    assert cli.main(["eval", _dataset(tmp_path, suite, 2), "--format", "hotpotqa", "--config", oracle_config,
                     "--report", str(report), "--csv", str(tmp_path / "r.csv")]) == 0
    assert _last_json(capsys)["mean_em"] == 1.0
    data = json.loads(report.read_text(encoding="utf-8"))
    assert len(data["examples"]) == 2
    assert all(v > 0 for row in data["examples"] for v in row["latency"].values())
    assert len((tmp_path / "run" / "trajectories.jsonl").read_text(encoding="utf-8").splitlines()) == 2
    assert (tmp_path / "run" / "report.json.manifest.json").exists()
    assert (tmp_path / "r.csv").exists()


def test_eval_sample_is_seeded(tmp_path, capsys, oracle_config, suite):
    ds = _dataset(tmp_path, suite, 3)
    ids = []
    for run in ("a", "b"):
        report = tmp_path / run / "report.json"
        assert cli.main(["eval", ds, "--format", "hotpotqa", "--config", oracle_config, "--report", str(report),
                         "--sample", "1", "--seed", "7"]) == 0
        ids.append([r["id"] for r in json.loads(report.read_text(encoding="utf-8"))["examples"]])
    assert ids[0] == ids[1] and len(ids[0]) == 1
    manifest = json.loads((tmp_path / "a" / "report.json.manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 7


def test_eval_bad_dataset_exits_nonzero(tmp_path, oracle_config):
    bad = _write_json(tmp_path / "bad.json", [{"_id": "x", "question": "q"}])
    assert cli.main(["eval", bad, "--format", "hotpotqa", "--config", oracle_config,
                     "--report", str(tmp_path / "r.json")]) == 1


@pytest.fixture
def run_dir(tmp_path, capsys, oracle_config, suite):
    report = tmp_path / "run" / "report.json"
    assert cli.main(["eval", _dataset(tmp_path, suite, 2), "--format", "hotpotqa", "--config", oracle_config,
                     "--report", str(report)]) == 0
    capsys.readouterr()
    return tmp_path / "run"


def test_export_keep_all(run_dir, tmp_path, capsys):
    out = tmp_path / "kept.jsonl"
    assert cli.main(["export-trajectories", str(run_dir), "--policy", "keep-all", "--out", str(out)]) == 0
    assert len(out.read_text(encoding="utf-8").splitlines()) == 2
    assert _last_json(capsys) == {"trajectories": 2, "lines": 2}
    assert (tmp_path / "kept.jsonl.manifest.json").exists()


def test_export_keep_answer_correct_and_cap(run_dir, tmp_path):
    path = run_dir / "trajectories.jsonl"
    lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
    lines[0]["answer_correct"] = False
    path.write_text("".join(json.dumps(r) + "\n" for r in lines), encoding="utf-8")
    out = tmp_path / "ok.jsonl"
    assert cli.main(["export-trajectories", str(path), "--policy", "keep-answer-correct", "--out", str(out)]) == 0
    kept = [json.loads(line) for line in out.read_text(encoding="utf-8").splitlines()]
    assert [k["question_id"] for k in kept] == [lines[1]["question_id"]]
    assert cli.main(["export-trajectories", str(run_dir), "--cap", "1", "--out", str(out)]) == 0
    assert len(out.read_text(encoding="utf-8").splitlines()) == 1


def test_export_examples_format(run_dir, tmp_path, capsys):
    out = tmp_path / "ex.jsonl"
    assert cli.main(["export-trajectories", str(run_dir), "--format", "examples", "--out", str(out)]) == 0
    res = _last_json(capsys)
    assert res["trajectories"] == 2 and res["lines"] >= 2
    assert all("messages" in json.loads(line) for line in out.read_text(encoding="utf-8").splitlines())


def test_config_yaml_and_unknown_backend(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("backend:\n  type: oracle\npipeline:\n  max_iterations: 3\n", encoding="utf-8")
    cfg = cli.load_config(str(path))
    assert cli.make_backend(cfg).model_id == "bridge-oracle"
    with pytest.raises(Exception, match="unknown backend"):
        cli.make_backend({"backend": {"type": "carrier-pigeon"}})


def test_index_docs_roundtrip(tmp_path, suite):
    corpus = _write_docs(tmp_path / "c.jsonl", suite.documents)
    assert cli.main(["index", corpus, "--out", str(tmp_path / "i")]) == 0
    assert [d.id for d in read_corpus(tmp_path / "i" / "documents.jsonl")] == [d.id for d in suite.documents]
