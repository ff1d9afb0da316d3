import csv
import io
import json

import pytest

from weakparse.cli import main
from weakparse.data import read_dataset
from weakparse.index import CandidateIndex


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    assert main(["gen-data", "--seed", "5", "--train", "60", "--test", "20", "--out-dir", str(root / "data")]) == 0
    assert main(["build-index", "--out", str(root / "index")]) == 0
    return root


def tiny_train(ws, out, *extra):
    cfg = ws / "tiny.json"
    cfg.write_text(json.dumps({"epochs": 2, "curriculum": "7:2", "train": str(ws / "data/train.tsv"),
                               "test": str(ws / "data/test.tsv")}))
    return main(["train", "--config", str(cfg), "--out", str(out), *extra])


def test_gen_data_is_reproducible_and_disjoint(workspace, tmp_path):
    assert main(["gen-data", "--seed", "5", "--train", "60", "--test", "20", "--out-dir", str(tmp_path)]) == 0
    for name in ("train.tsv", "test.tsv"):
        assert (tmp_path / name).read_bytes() == (workspace / "data" / name).read_bytes()
    train = read_dataset(workspace / "data/train.tsv")
    test = read_dataset(workspace / "data/test.tsv")
    assert len(train) == 60 and len(test) == 20
    assert not {str(r.utterance) for r in train} & {str(r.utterance) for r in test}


def test_gen_data_rejects_oversized_request(tmp_path, capsys):
    assert main(["gen-data", "--train", "42000", "--test", "101", "--out-dir", str(tmp_path)]) == 1
    assert "exceeds" in capsys.readouterr().err


def test_index_rows_and_rebuild(workspace, tmp_path):
    idx = CandidateIndex.load(workspace / "index/index.brackets.tsv")
    assert len(idx.lookup(3, 2)) == 7
    assert main(["build-index", "--brackets", "on", "--out", str(tmp_path / "again.tsv")]) == 0
    assert (tmp_path / "again.tsv").read_bytes() == (workspace / "index/index.brackets.tsv").read_bytes()
    for record in read_dataset(workspace / "data/train.tsv"):
        assert idx.lookup(record.denotation, record.utterance.operand_count)


def test_train_eval_report(workspace, tmp_path, capsys):
    out = tmp_path / "run"
    code = tiny_train(workspace, out, "--supervision", "denotation", "--brackets", "off",
                      "--index", str(workspace / "index/index.flat.tsv"), "--seed", "3")
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["grammar"] == "flat" and summary["config"]["seed"] == 3
    assert all(t == c for t, c in summary["consistency"])
    capsys.readouterr()

    assert main(["eval", "--checkpoint", str(out / "model.ckpt"), "--test", str(workspace / "data/test.tsv")]) == 0
    printed = capsys.readouterr().out
    assert printed.startswith("accuracy ") and "grammar=flat" in printed

    assert main(["report", str(out)]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["epoch", "mean_loss", "returned_correct_fraction", "denotation_accuracy", "skipped"]
    metrics_lines = (out / "metrics.tsv").read_text().splitlines()
    assert [r for r in rows[1:]] == [line.split("\t") for line in metrics_lines]


def test_report_summary_table(workspace, tmp_path, capsys):
    gold = tmp_path / "gold"
    assert tiny_train(workspace, gold, "--supervision", "gold", "--brackets", "on") == 0
    flat = tmp_path / "flat"
    assert tiny_train(workspace, flat, "--supervision", "gold", "--brackets", "off") == 0
    capsys.readouterr()
    assert main(["report", str(gold), str(flat), "--csv", str(tmp_path / "all.csv")]) == 0
    table = capsys.readouterr().out.splitlines()
    assert len(table) == 3
    assert "with brackets" in table[0] and "no brackets" in table[0]
    assert table[1].startswith("gold") and table[1].count("%") == 2
    assert table[2].startswith("denotation") and "%" not in table[2]
    rows = list(csv.reader(open(tmp_path / "all.csv")))
    assert rows[0][:4] == ["run", "supervision", "brackets", "seed"]
    assert len(rows) == 1 + 4


def test_flags_override_config(workspace, tmp_path):
    out = tmp_path / "run"
    assert tiny_train(workspace, out, "--supervision", "gold", "--epochs", "1", "--curriculum", "7:1") == 0
    assert len((out / "metrics.tsv").read_text().splitlines()) == 1


def test_identical_flags_identical_files(workspace, tmp_path):
    for name in ("a", "b"):
        assert tiny_train(workspace, tmp_path / name, "--supervision", "gold", "--brackets", "off") == 0
    for name in ("metrics.tsv", "model.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_missing_index_is_io_error(workspace, tmp_path, capsys):
    code = tiny_train(workspace, tmp_path / "run", "--supervision", "denotation",
                      "--index", str(tmp_path / "nowhere.tsv"))
    assert code == 2
    assert "nowhere.tsv" in capsys.readouterr().err


@pytest.mark.parametrize("extra", [
    ["--supervision", "denotation"],                      # no index given
    ["--curriculum", "3:200,7:100"],                     # exceeds the epoch budget
    ["--curriculum", "nonsense"],
])
def test_validation_errors_exit_one(workspace, tmp_path, extra):
    assert tiny_train(workspace, tmp_path / "run", *extra) == 1


def test_index_grammar_mismatch(workspace, tmp_path):
    code = tiny_train(workspace, tmp_path / "run", "--supervision", "denotation", "--brackets", "on",
                      "--index", str(workspace / "index/index.flat.tsv"))
    assert code == 1


def test_bad_dataset_line(workspace, tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("one plus two <eos>\tGo [ 1 + 2 ] End\tGo 1 + 2 End\t4/1\n")
    assert main(["train", "--train", str(bad), "--test", str(bad), "--out", str(tmp_path / "r"),
                 "--supervision", "gold", "--epochs", "1", "--curriculum", "3:1"]) == 1
    assert "bad.tsv:1" in capsys.readouterr().err


def test_bad_config_file(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"epochz": 3}')
    assert main(["train", "--config", str(cfg)]) == 1


def test_report_missing_file(tmp_path):
    assert main(["report", str(tmp_path / "missing")]) == 2
