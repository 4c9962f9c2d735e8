import json

import pytest

from picot import cli
from picot import trainer as tr
from picot.ontology import parse_type

TINY = {"dim": 8, "n_layers": 1, "n_heads": 2, "ffn_dim": 8, "dropout": 0.0, "max_epochs": 1}


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = root / "spec.json"
    spec.write_text(json.dumps({"n_train": 24, "n_dev": 12, "n_test": 12, "seed": 3}))
    assert cli.main(["synth", "--spec", str(spec), "--out", str(root / "data")]) == 0
    (root / "tiny.json").write_text(json.dumps(TINY))
    return root


@pytest.fixture(scope="module")
def trained(data_dir):
    out = data_dir / "run"
    assert cli.main(["train", "--config", str(data_dir / "tiny.json"), "--data", str(data_dir / "data"),
                     "--out", str(out)]) == 0
    return out


def test_synth_outputs_and_determinism(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--out", str(tmp_path / "a"))
    assert code == 0
    first = json.loads(out)
    assert sorted(p.name for p in (tmp_path / "a").iterdir()) == [
        "descriptions.jsonl", "dev.jsonl", "taxonomy.txt", "test.jsonl", "train.jsonl"]
    _, out, _ = run(capsys, "synth", "--out", str(tmp_path / "b"))
    assert json.loads(out)["hashes"] == first["hashes"]
    assert first["counts"] == {"train": 600, "dev": 100, "test": 100}


def test_synth_invalid_spec(capsys, caplog, tmp_path):
    spec = tmp_path / "s.json"
    spec.write_text(json.dumps({"n_fine_per_coarse": 0}))
    code, out, _ = run(capsys, "synth", "--spec", str(spec), "--out", str(tmp_path / "x"))
    assert code == 2 and out == "" and "invalid spec" in caplog.text


def test_train_run_directory(trained):
    assert sorted(p.name for p in trained.iterdir()) == ["manifest.json", "model.pict", "model.pict.json",
                                                         "train_log.jsonl"]
    manifest = json.loads((trained / "manifest.json").read_text())
    assert set(manifest) >= {"config", "corpus_hashes", "seed", "version", "out_dir"}
    assert set(manifest["corpus_hashes"]) == {"train.jsonl", "dev.jsonl", "test.jsonl", "taxonomy.txt",
                                              "descriptions.jsonl"}
    log = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in log] == [1]


def test_train_zero_lambdas_and_flags(capsys, data_dir, monkeypatch):
    monkeypatch.setenv("PICOT_SEED", "7")
    out_dir = data_dir / "ablate"
    code, out, _ = run(capsys, "train", "--config", str(data_dir / "tiny.json"), "--data", str(data_dir / "data"),
                       "--out", str(out_dir), "--lambda-f", "0", "--lambda-c", "0",
                       "--ent-position", "after-cls", "--no-descriptions")
    assert code == 0 and "checkpoint" in json.loads(out)
    log = json.loads((out_dir / "train_log.jsonl").read_text().splitlines()[0])
    assert log["l_f_plus"] == log["l_f_minus"] == log["l_c_plus"] == log["l_c_minus"] == 0.0
    assert log["total"] == log["l_cls"]
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["config"]["ent_position"] == "after-cls"
    assert manifest["config"]["use_descriptions"] is False
    assert manifest["seed"] == 7


def test_train_accepts_paper_weights(capsys, data_dir):
    code, _, _ = run(capsys, "train", "--config", str(data_dir / "tiny.json"), "--data", str(data_dir / "data"),
                     "--out", str(data_dir / "paper"), "--lambda-f", "0.1", "--lambda-c", "0.1")
    assert code == 0
    cfg = json.loads((data_dir / "paper" / "manifest.json").read_text())["config"]
    assert (cfg["lambda_f"], cfg["lambda_c"]) == (0.1, 0.1)


@pytest.mark.parametrize("bad", [{"batch_size": 1}, {"nope": 1}])
def test_train_bad_config(capsys, data_dir, tmp_path, bad):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(bad))
    code, _, _ = run(capsys, "train", "--config", str(cfg), "--data", str(data_dir / "data"), "--out", str(tmp_path / "o"))
    assert code == 2


def test_bad_seed_env(capsys, data_dir, tmp_path, monkeypatch):
    monkeypatch.setenv("PICOT_SEED", "abc")
    code, _, _ = run(capsys, "train", "--data", str(data_dir / "data"), "--out", str(tmp_path / "o"))
    assert code == 2


def test_train_divergence_exit_code(capsys, caplog, data_dir, tmp_path, monkeypatch):
    def boom(*_, **__):
        raise tr.TrainingDiverged("non-finite")

    monkeypatch.setattr(cli, "fit", boom)
    code, _, _ = run(capsys, "train", "--config", str(data_dir / "tiny.json"), "--data", str(data_dir / "data"),
                     "--out", str(tmp_path / "o"))
    assert code == 3 and "diverged" in caplog.text


def test_eval_report(capsys, data_dir, trained):
    code, out, _ = run(capsys, "eval", "--checkpoint", str(trained / "model.pict"),
                       "--data", str(data_dir / "data" / "test.jsonl"))
    assert code == 0
    report = json.loads(out)
    assert set(report) == {"macro_p", "macro_r", "macro_f1", "micro_p", "micro_r", "micro_f1", "n_examples"}
    _, again, _ = run(capsys, "eval", "--checkpoint", str(trained / "model.pict"),
                      "--data", str(data_dir / "data" / "test.jsonl"))
    assert again == out


def test_eval_bbn_rules_applied(capsys, data_dir, trained, monkeypatch):
    both = frozenset({parse_type("/person"), parse_type("/organization")})
    monkeypatch.setattr(tr, "predict_many", lambda examples, model, *a, **k: [both] * len(examples))
    gold_file = data_dir / "org.jsonl"
    gold_file.write_text(json.dumps({"tokens": ["x"], "entity_start": 0, "entity_end": 1,
                                     "types": ["/organization"]}) + "\n")
    tax = data_dir / "bbn_tax.txt"
    tax.write_text("/organization\n/person\n")
    monkeypatch.setattr(cli, "_load_model", lambda p: type("M", (), {
        "types": (parse_type("/organization"), parse_type("/person")), "config": tr.TrainConfig()})())
    _, plain, _ = run(capsys, "eval", "--checkpoint", "x", "--data", str(gold_file), "--taxonomy", str(tax))
    _, ruled, _ = run(capsys, "eval", "--checkpoint", "x", "--data", str(gold_file), "--taxonomy", str(tax),
                      "--bbn-rules")
    assert json.loads(plain)["macro_p"] == 0.5
    assert json.loads(ruled)["macro_f1"] == 1.0


def test_eval_mismatches(capsys, data_dir, trained, tmp_path):
    tax = tmp_path / "t.txt"
    tax.write_text("/a\n/b\n")
    code, _, _ = run(capsys, "eval", "--checkpoint", str(trained / "model.pict"),
                     "--data", str(data_dir / "data" / "test.jsonl"), "--taxonomy", str(tax))
    assert code == 4
    broken = tmp_path / "broken.pict"
    broken.write_bytes(b"junk")
    (tmp_path / "broken.pict.json").write_text((trained / "model.pict.json").read_text())
    code, _, _ = run(capsys, "eval", "--checkpoint", str(broken), "--data", str(data_dir / "data" / "test.jsonl"))
    assert code == 4


def test_embed(capsys, data_dir, trained, tmp_path):
    code, out, err = run(capsys, "embed", "--checkpoint", str(trained / "model.pict"),
                         "--data", str(data_dir / "data" / "dev.jsonl"), "--kinds", "ts,tr,desc",
                         "--out", str(tmp_path / "e.csv"))
    assert code == 0
    assert "silhouette ent_fine" in err
    summary = json.loads(out)
    assert summary["rows"] > 0 and set(summary["silhouette"]) == {"ent_coarse", "ent_fine", "cls_coarse", "cls_fine"}
    code, _, _ = run(capsys, "embed", "--checkpoint", str(trained / "model.pict"),
                     "--data", str(data_dir / "data" / "dev.jsonl"), "--kinds", "ts,zz", "--out", str(tmp_path / "f.csv"))
    assert code == 2


def test_usage_errors(capsys):
    assert run(capsys, "bogus")[0] == 2
    assert run(capsys, "train")[0] == 2


def test_sweep_grid(capsys, data_dir, monkeypatch):
    calls = []

    def fake(cfg, corpus, data, out):
        calls.append((cfg.lambda_f, cfg.lambda_c))
        return {"best_dev_macro_f1": 0.5, "test": {"macro_f1": 0.4, "micro_f1": 0.3}}

    monkeypatch.setattr(cli, "run_training", fake)
    code, out, _ = run(capsys, "sweep", "--data", str(data_dir / "data"), "--out", str(data_dir / "sweep"))
    assert code == 0
    grid = json.loads(out)["grid"]
    assert len(grid) == 9 and sorted(calls) == sorted((a, b) for a in cli.SWEEP_GRID for b in cli.SWEEP_GRID)
