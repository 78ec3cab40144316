import csv
import json

import numpy as np
import pytest

from anytime_bow.cli import main, parse_rules
from anytime_bow.descriptors import load_dataset
from anytime_bow.eval import oracle_cosine, tie_aware_order
from anytime_bow.stopping import Never, Rule1, Rule3
from anytime_bow.vocabulary import load_vocabulary

SYNTH = ["--num-images", "40", "--features-per-image", "30", "--dimension", "8",
         "--num-clusters", "48", "--confuser-count", "3", "--clusters-per-image", "6"]


@pytest.fixture(scope="module")
def built(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    paths = {k: str(d / f) for k, f in
             (("ds", "ds.bowd"), ("voc", "v.bowv"), ("ix", "i.bowi"))}
    assert main(["synth", *SYNTH, "--out", paths["ds"], "--seed", "7"]) == 0
    assert main(["train-vocab", "--input", paths["ds"], "--k", "40", "--seed", "7", "--out", paths["voc"]]) == 0
    assert main(["build-index", "--vocab", paths["voc"], "--input", paths["ds"], "--out", paths["ix"]]) == 0
    return d, paths


def _engine(paths):
    return ["--index", paths["ix"], "--vocab", paths["voc"], "--dataset", paths["ds"]]


def test_synth_twice_identical(tmp_path):
    a, b = tmp_path / "a.bowd", tmp_path / "b.bowd"
    assert main(["synth", "--num-images", "200", "--out", str(a), "--seed", "7"]) == 0
    assert main(["synth", "--num-images", "200", "--out", str(b), "--seed", "7"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.gt.csv").read_bytes() == (tmp_path / "b.gt.csv").read_bytes()
    info = json.loads((tmp_path / "a.synth.json").read_text())
    assert info["seed"] == 7


def test_bench_without_index_is_usage_error(built, capsys):
    d, p = built
    rc = main(["bench", "--vocab", p["voc"], "--dataset", p["ds"], "--rules", "never", "--out", str(d / "x.csv")])
    assert rc == 1
    err = capsys.readouterr().err
    assert "usage:" in err and "--index" in err


def test_io_error_exit_code(tmp_path, capsys):
    rc = main(["build-index", "--vocab", str(tmp_path / "nope.bowv"), "--input", str(tmp_path / "x"),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_corrupt_input_exit_code(tmp_path):
    bad = tmp_path / "bad.bowd"
    bad.write_bytes(b"garbage")
    assert main(["train-vocab", "--input", str(bad), "--k", "3", "--out", str(tmp_path / "v")]) == 2


def test_validation_error_exit_code(built):
    d, p = built
    assert main(["query", *_engine(p), "--query-id", "25", "--rule", "rule1", "--threshold", "-1"]) == 1
    assert main(["query", *_engine(p), "--query-id", "9999", "--rule", "never"]) == 1
    assert main([]) == 1
    assert main(["frobnicate"]) == 1


def test_end_to_end_recall_matches_oracle(built):
    d, p = built
    out = d / "never.csv"
    assert main(["bench", *_engine(p), "--rules", "never", "--n", "1", "--runs", "2",
                 "--precision-floor", "0", "--out", str(out)]) == 0
    row = next(csv.DictReader(open(out)))
    ds, v = load_dataset(p["ds"]), load_vocabulary(p["voc"])
    ids = np.array([im.image_id for im in ds.database])
    hits = []
    for q in ds.queries:
        cos = oracle_cosine(v, ds.database, q)
        best = tie_aware_order(cos, ids)[0]
        hits.append(cos.max() > 0 and best in ds.ground_truth[q.image_id])
    assert float(row["recall"]) == pytest.approx(np.mean(hits), abs=1e-6)
    assert float(row["mean_fraction"]) == 1.0


def test_query_json_and_trace(built, capsys):
    d, p = built
    trace = d / "trace.csv"
    assert main(["query", *_engine(p), "--query-id", "25", "--rule", "rule3", "--patience", "5",
                 "--n", "4", "--seed", "2", "--trace", str(trace)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["query_id"] == 25 and len(out["ranked"]) == 4
    assert out["stop_reason"] in ("rule_fired", "exhausted")
    rows = list(csv.reader(open(trace)))
    assert rows[0] == ["step", "word_id", "argmax", "gap", "max", "mean"]
    assert len(rows) - 1 == out["features_processed"]


def test_query_hoeffding_and_rule2(built, capsys):
    d, p = built
    assert main(["query", *_engine(p), "--query-id", "30", "--rule", "hoeffding", "--delta", "0.05"]) == 0
    assert main(["query", *_engine(p), "--query-id", "30", "--rule", "rule2", "--threshold", "1.5"]) == 0


def _pipeline_outputs(root, threads):
    root.mkdir()
    ds, voc, ix = root / "ds.bowd", root / "v.bowv", root / "i.bowi"
    main(["synth", *SYNTH, "--out", str(ds), "--seed", "3"])
    main(["train-vocab", "--input", str(ds), "--k", "40", "--seed", "3", "--out", str(voc)])
    main(["build-index", "--vocab", str(voc), "--input", str(ds), "--out", str(ix)])
    eng = ["--index", str(ix), "--vocab", str(voc), "--dataset", str(ds), "--threads", str(threads)]
    main(["bench", *eng, "--rules", "never", "rule1:0.05,0.02", "rule3:5", "--runs", "3",
          "--out", str(root / "bench.csv")])
    main(["sweep", *eng, "--family", "rule2", "--thresholds", "3,1", "--runs", "2",
          "--out", str(root / "sweep.csv")])
    main(["profile", *eng, "--out", str(root / "prof.csv"), "--per-query", str(root / "pq.csv")])
    main(["race", "--mu1", "0.6", "--mu2", "0.4", "--delta", "0.05", "--trials", "50",
          "--out", str(root / "race.csv")])
    return {f.name: f.read_bytes() for f in sorted(root.iterdir())}


def test_pipeline_byte_identical_across_threads(tmp_path):
    a = _pipeline_outputs(tmp_path / "a", 1)
    b = _pipeline_outputs(tmp_path / "b", 4)
    assert set(a) == set(b) and len(a) >= 9
    for name in a:
        assert a[name] == b[name], name


def test_inputs_not_mutated(built):
    d, p = built
    before = {k: open(v, "rb").read() for k, v in p.items()}
    main(["bench", *_engine(p), "--rules", "rule1:0.05", "--runs", "1", "--out", str(d / "m.csv")])
    main(["profile", *_engine(p), "--out", str(d / "mp.csv")])
    assert before == {k: open(v, "rb").read() for k, v in p.items()}


def test_config_file_and_precedence(built, tmp_path):
    d, p = built
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"index": p["ix"], "vocab": p["voc"], "dataset": p["ds"],
                               "rules": ["rule1:0.05"], "runs": 1, "n": "3"}))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["bench", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["bench", "--config", str(cfg), "--runs", "2", "--out", str(b)]) == 0
    ra, rb = next(csv.DictReader(open(a))), next(csv.DictReader(open(b)))
    assert (ra["run_count"], rb["run_count"]) == ("1", "2")
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["bench", "--config", str(cfg), "--out", str(a)]) == 1


def test_bench_race_alias(tmp_path, capsys):
    assert main(["bench", "race", "--mu1", "1.0", "--mu2", "0.0", "--delta", "0.05", "--trials", "10"]) == 0
    rows = list(csv.reader(capsys.readouterr().out.splitlines()))
    assert rows[0][5] == "error_rate" and float(rows[1][5]) == 0.0


def test_parse_rules():
    assert parse_rules(["never", "rule1:0.25,0.2", "rule3:20"]) == (Never(), Rule1(0.25), Rule1(0.2), Rule3(20))
