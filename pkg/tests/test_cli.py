import csv
import json

import pytest

from stableaml.cli import run
from stableaml.features import FEATURE_NAMES


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    corpus, feats, model = root / "corpus", root / "feats", root / "model"
    assert run(["synth", "--wallets", "300", "--seed", "7", "--out", str(corpus)]) == 0
    assert run(["featurize", "--in", str(corpus), "--out", str(feats)]) == 0
    assert run(["train", "--model", "gbm", "--features", str(feats / "features.csv"),
                "--labels", str(corpus / "labels.csv"), "--out", str(model),
                "--param", "n_estimators=20", "--param", "max_depth=3", "--seed", "1"]) == 0
    return root


def _last_error(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    assert len(lines) == 1
    return lines[0]


def test_synth_writes_corpus_and_manifest(pipeline):
    files = sorted(p.name for p in (pipeline / "corpus").iterdir())
    assert files == ["labels.csv", "manifest.json", "metadata.csv", "registry.csv", "transfers.csv"]
    manifest = json.loads((pipeline / "corpus" / "manifest.json").read_text())
    assert manifest["run"]["command"] == "synth" and manifest["run"]["seed"] == 7


def test_featurize_outputs(pipeline):
    feats = pipeline / "feats"
    header = (feats / "features.csv").read_text().splitlines()[0]
    assert header == ",".join(["address", *FEATURE_NAMES])
    assert len(json.loads((feats / "catalog.json").read_text())["features"]) == 68
    assert (feats / "edges.csv").exists()
    inputs = json.loads((feats / "manifest.json").read_text())["inputs"]
    assert any(k.endswith("transfers.csv") for k in inputs)


def test_evaluate_binary_report(pipeline, capsys):
    out = pipeline / "eval"
    assert run(["evaluate", "--model", str(pipeline / "model"), "--binary", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["binary"]["class_names"] == ["normal", "suspicious"]
    assert report["macro_f1"] == pytest.approx(sum(c["f1"] for c in report["per_class"]) / 3)
    assert "suspicious" in capsys.readouterr().out


def test_explain_consensus_table(pipeline):
    out = pipeline / "imp"
    assert run(["explain", "--model", str(pipeline / "model"), "--methods", "builtin,permutation,shap",
                "--consensus", "--repeats", "2", "--out", str(out)]) == 0
    with open(out / "importance.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 68
    assert sorted(int(r["consensus_rank"]) for r in rows) == list(range(1, 69))
    assert {"gbm_builtin", "gbm_permutation", "gbm_shap"} <= set(rows[0])
    sig = (out / "signatures.csv").read_text().splitlines()
    assert sig[0] == "feature,normal,cybercrime,blocklisted" and len(sig) == 69


def test_report_and_dump(pipeline, capsys):
    assert run(["report", "--model", str(pipeline / "model"), "--binary"]) == 0
    assert "gbm" in capsys.readouterr().out
    assert run(["--dump-model", str(pipeline / "model")]) == 0
    dump = capsys.readouterr().out
    assert dump.startswith("kind: gbm") and "leaf" in dump


def test_train_is_byte_reproducible(pipeline):
    again = pipeline / "model2"
    assert run(["train", "--model", "gbm", "--features", str(pipeline / "feats" / "features.csv"),
                "--labels", str(pipeline / "corpus" / "labels.csv"), "--out", str(again),
                "--param", "n_estimators=20", "--param", "max_depth=3", "--seed", "1"]) == 0
    first = (pipeline / "model" / "model.saml-model").read_bytes()
    assert (again / "model.saml-model").read_bytes() == first
    assert (again / "split.json").read_text() == (pipeline / "model" / "split.json").read_text()


def test_config_file_and_precedence(pipeline, tmp_path):
    cfg = tmp_path / "run.conf"
    cfg.write_text("# synthetic corpus\nwallets = 40\nseed = 3\nout = %s\n" % (tmp_path / "a"))
    assert run(["synth", "--config", str(cfg)]) == 0
    assert run(["synth", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "b")]) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert (a["run"]["seed"], b["run"]["seed"]) == (3, 4)


def test_seed_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("STABLEAML_SEED", "9")
    assert run(["synth", "--wallets", "30", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["run"]["seed"] == 9


def test_exit_codes(tmp_path, capsys):
    assert run(["frobnicate"]) == 1
    assert _last_error(capsys).startswith("error usage:")
    assert run(["synth", "--bogus"]) == 1
    capsys.readouterr()
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "transfers.csv").write_text("tx_hash,log_index,token,from,to,amount,timestamp\n0x1,0,USDT,0x2,0x3,1,0\n")
    assert run(["ingest", "--in", str(bad)]) == 2
    assert _last_error(capsys).startswith("error row_error:")
    assert run(["evaluate", "--model", str(tmp_path / "missing")]) == 2
    assert _last_error(capsys).startswith("error ")


def test_numeric_failure_exit_code(pipeline, tmp_path, capsys):
    # a single-class label file cannot train a classifier
    labels = tmp_path / "labels.csv"
    rows = (pipeline / "corpus" / "labels.csv").read_text().splitlines()
    labels.write_text("\n".join([rows[0]] + [r.rsplit(",", 1)[0] + ",normal" for r in rows[1:]]) + "\n")
    code = run(["train", "--model", "logreg", "--features", str(pipeline / "feats" / "features.csv"),
                "--labels", str(labels), "--out", str(tmp_path / "m"), "--no-stratify"])
    assert code == 3
    assert _last_error(capsys).startswith("error degenerate_labels:")


def test_ingest_and_graph_stats(pipeline, capsys):
    out = pipeline / "ingested"
    assert run(["ingest", "--in", str(pipeline / "corpus"), "--out", str(out)]) == 0
    assert json.loads((out / "validation.json").read_text())["events"] > 0
    assert run(["graph-stats", "--in", str(pipeline / "corpus")]) == 0
    assert "density" in capsys.readouterr().out
