import json
import subprocess
import sys
from pathlib import Path

import pytest

from varrecover.cli import main
from varrecover.core import load_binary, read_json, top1
from varrecover.validation import validate_names

FIX = Path(__file__).parent / "fixtures"
KEY = FIX / "keyload.json"
KEY_CANDS = FIX / "keyload.candidates.json"
SCORED = FIX / "scored"


def run(*argv):
    return main([str(a) for a in argv])


def test_parse_writes_ir(tmp_path):
    assert run("--out-dir", tmp_path, "parse", KEY) == 0
    doc = read_json(tmp_path / "keyload.ir.json")
    assert load_binary(doc) == load_binary(read_json(KEY))
    diag = read_json(tmp_path / "diagnostics.json")
    assert diag["keyload"]["functions"] == 4 and diag["keyload"]["skipped"] == []


def test_parse_bad_function(tmp_path):
    corpus = tmp_path / "bad.json"
    corpus.write_text(json.dumps({"bid": "bad", "functions": [
        {"fid": "ok", "code": "int ok(){ return 0; }"}, {"fid": "broken", "code": "int broken( {"}]}))
    assert run("--out-dir", tmp_path, "parse", corpus) == 1
    assert run("--out-dir", tmp_path, "--lenient", "parse", corpus) == 0
    assert read_json(tmp_path / "diagnostics.json")["bad"]["skipped"][0]["fid"] == "broken"


def test_missing_file(tmp_path, capsys):
    assert run("--out-dir", tmp_path, "parse", tmp_path / "nope.json") == 1
    assert "no such file" in capsys.readouterr().err


def test_infer_motivating_fixture(tmp_path):
    assert run("--out-dir", tmp_path, "infer", KEY, "--candidates", KEY_CANDS) == 0
    names = read_json(tmp_path / "keyload.names.json")
    b = load_binary(read_json(KEY))
    cands = read_json(KEY_CANDS)
    assert names == validate_names(b, top1(cands), cands)[0]
    trace = read_json(tmp_path / "keyload.trace.json")
    assert all(len(r["iterations"]) <= 4 for r in trace["rounds"])
    assert read_json(tmp_path / "keyload.candidates.json") == cands


def test_infer_budget_zero_is_top1(tmp_path):
    assert run("--out-dir", tmp_path, "infer", KEY, "--candidates", KEY_CANDS, "--budget", 0) == 0
    assert read_json(tmp_path / "keyload.names.json") == top1(read_json(KEY_CANDS))


def test_infer_two_rounds_same_candidates(tmp_path):
    run("--out-dir", tmp_path / "r1", "infer", KEY, "--candidates", KEY_CANDS)
    run("--out-dir", tmp_path / "r2", "infer", KEY, "--candidates", KEY_CANDS, "--rounds", 2)
    assert (tmp_path / "r1" / "keyload.names.json").read_bytes() == (tmp_path / "r2" / "keyload.names.json").read_bytes()


def test_infer_explicit_paths_and_rewrite(tmp_path):
    out, tr = tmp_path / "n.json", tmp_path / "t.json"
    assert run("--out-dir", tmp_path, "infer", KEY, "--candidates", KEY_CANDS, "--out", out, "--trace", tr,
               "--rewrite") == 0
    names = read_json(out)
    text = read_json(tmp_path / "keyload.rewritten.json")["sub_401639"]
    assert names["sub_401639"]["stream"] in text and "stream" not in text
    assert read_json(tr)["bid"] == "keyload"


def test_infer_stub_and_jobs(tmp_path):
    corpus = [KEY, FIX / "ctxdemo.json"]
    assert run("--out-dir", tmp_path / "a", "--jobs", 1, "infer", *corpus, "--provider", "stub") == 0
    assert run("--out-dir", tmp_path / "b", "--jobs", 2, "infer", *corpus, "--provider", "stub") == 0
    for name in ("keyload.names.json", "ctxdemo.names.json", "ctxdemo.trace.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert read_json(tmp_path / "a" / "ctxdemo.names.json")["foo"] == {"a1": "a1", "a2": "a2", "v3": "v3"}


def test_infer_replay_needs_candidates(tmp_path):
    assert run("--out-dir", tmp_path, "infer", KEY) == 1


def test_infer_unreachable_provider(tmp_path):
    rc = run("--out-dir", tmp_path, "infer", KEY, "--provider", "http", "--endpoint", "http://127.0.0.1:9/",
             "--retries", 0, "--timeout", 1)
    assert rc == 2
    assert len(read_json(tmp_path / "keyload.trace.json")["errors"]) == 4


def test_eval_golden(tmp_path):
    rep = tmp_path / "r.json"
    table = tmp_path / "r.txt"
    assert run("--out-dir", tmp_path, "eval", "--corpus", SCORED / "corpus.json", "--gt", SCORED / "gt.json",
               "--pred", SCORED / "pred.json", "--report-json", rep, "--report-table", table) == 0
    assert rep.read_bytes() == (SCORED / "report.golden.json").read_bytes()
    assert table.read_bytes() == (SCORED / "report.golden.txt").read_bytes()


def test_eval_perfect(tmp_path):
    rep = tmp_path / "r.json"
    assert run("eval", "--corpus", SCORED / "corpus.json", "--gt", SCORED / "gt.json", "--pred",
               SCORED / "gt.json", "--report-json", rep) == 0
    assert read_json(rep)["overall"] == {"count": 4, "exact": 1.0, "precision": 1.0, "recall": 1.0}


def test_eval_missing_groundtruth(tmp_path):
    gtdir = tmp_path / "gt"
    gtdir.mkdir()
    assert run("--out-dir", tmp_path, "eval", "--corpus", SCORED / "corpus.json", KEY, "--gt", gtdir,
               "--pred", gtdir) == 1


def test_eval_with_train_set(tmp_path):
    gtdir = tmp_path / "gt"
    gtdir.mkdir()
    (gtdir / "scored.json").write_text((SCORED / "gt.json").read_text())
    rep = tmp_path / "r.json"
    assert run("--out-dir", tmp_path, "eval", "--corpus", SCORED / "corpus.json", "--gt", gtdir, "--pred",
               SCORED / "pred.json", "--train-corpus", SCORED / "corpus.json", "--train-gt", gtdir,
               "--report-json", rep) == 0
    doc = read_json(rep)
    assert doc["in_train"]["count"] == 4
    assert {r["gt_freq"] for r in doc["per_variable"]} == {1}


def test_stats(tmp_path):
    gt = tmp_path / "gt.json"
    gt.write_text(json.dumps({"f": {"a": "size", "b": "size"}}))
    assert run("--out-dir", tmp_path, "stats", SCORED / "corpus.json", "--gt", gt) == 0
    doc = read_json(tmp_path / "stats.json")
    assert doc["names"] == {"size": 2} and doc["total"] == 2


def test_split_manifests(tmp_path):
    corpus = tmp_path / "corpus"
    corpus.mkdir()
    for k in range(10):
        (corpus / f"b{k}.json").write_text(json.dumps(
            {"bid": f"b{k}", "functions": [{"fid": "f", "code": f"int f(){{ return {k}; }}"}]}))
    assert run("--seed", 7, "split", corpus, "--out", tmp_path / "s1.json") == 0
    assert run("--seed", 7, "split", corpus, "--out", tmp_path / "s2.json") == 0
    assert (tmp_path / "s1.json").read_bytes() == (tmp_path / "s2.json").read_bytes()
    doc = read_json(tmp_path / "s1.json")
    assert len(doc["train"]) == 9 and len(doc["test"]) == 1


def test_correlations_dump(tmp_path):
    corpus = tmp_path / "c.json"
    corpus.write_text(json.dumps({"bid": "c", "functions": [{"fid": "f", "code": "int f(){ a = b; }"}]}))
    names = tmp_path / "n.json"
    names.write_text(json.dumps({"f": {"a": "ptr", "b": "msg"}}))
    assert run("--out-dir", tmp_path, "correlations", corpus, "--names", names) == 0
    assert read_json(tmp_path / "correlations.json") == {
        "f": {
            "a": [{"name": "ptr", "src_fid": "f", "src_vid": "a"}, {"name": "msg", "src_fid": "f", "src_vid": "b"}],
            "b": [{"name": "msg", "src_fid": "f", "src_vid": "b"}, {"name": "ptr", "src_fid": "f", "src_vid": "a"}],
        }
    }


def test_export_corpus(tmp_path):
    out = tmp_path / "train.jsonl"
    assert run("export-corpus", "--corpus", FIX / "ctxdemo.json", "--gt", FIX / "ctxdemo.names.json",
               "--pred", FIX / "ctxdemo.names.json", "--out", out) == 0
    records = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(records) == 4
    foo = next(r for r in records if r["resp"] == {"a1": "id", "a2": "name", "v3": "res"})
    assert "err_location" in foo["query"] and "fp" in foo["query"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "varrecover", "--out-dir", str(tmp_path), "parse", str(KEY)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_bad_flag_values(tmp_path):
    assert run("--jobs", 0, "parse", KEY) == 1
    assert run("--out-dir", tmp_path, "infer", KEY, "--candidates", KEY_CANDS, "--rounds", 0) == 1
    assert run("--out-dir", tmp_path, "split", KEY, "--ratio", "nine") == 1
    with pytest.raises(SystemExit):
        run("infer", KEY, "--provider", "magic")
