import csv
import hashlib
import json

import pytest

from compvqa.cli import main
from compvqa.config import RUN_KEYS, SYNTH_KEYS

SYNTH = ["--n_base_combos", "12", "--n_novel_combos", "3", "--examples_per_base", "40", "--novel_pool", "10",
         "--val_per_base", "2", "--val_per_novel", "4", "--d_obj", "8", "--n_objects", "4", "--seed", "7"]
TINY = ["--c_dim", "8", "--k_dim", "8", "--embed_dim", "4", "--glimpses_image", "1", "--glimpses_question", "1",
        "--m_max", "8", "--n_objects", "4", "--d_obj", "8", "--batch_size", "64"]


def checksums(path):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.iterdir())}


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-synth", "--out", str(root / "data"), *SYNTH]) == 0
    assert main(["train-base", "--data_dir", str(root / "data"), "--run_dir", str(root / "base"),
                 "--epochs", "2", *TINY]) == 0
    assert main(["train-novel", "--data_dir", str(root / "data"), "--run_dir", str(root / "novel"),
                 "--base_run", str(root / "base"), "--shots", "1", *TINY]) == 0
    return root


def test_gen_synth_is_reproducible(tmp_path, capsys):
    assert main(["gen-synth", "--out", str(tmp_path / "a"), *SYNTH]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["base_answers"] == 12 and summary["novel_answers"] == 3
    assert main(["gen-synth", "--out", str(tmp_path / "b"), *SYNTH]) == 0
    assert checksums(tmp_path / "a") == checksums(tmp_path / "b")


def test_gen_synth_refuses_non_empty_dir_without_force(tmp_path, capsys):
    out = tmp_path / "d"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["gen-synth", "--out", str(out), *SYNTH]) == 1
    assert "--force" in capsys.readouterr().err
    assert (out / "keep.txt").exists()
    assert main(["gen-synth", "--out", str(out), "--force", *SYNTH]) == 0
    assert not (out / "keep.txt").exists()


def test_gen_synth_from_config_file(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("n_base_combos=12\nn_novel_combos=3\nexamples_per_base=40\nnovel_pool=10\n"
                   "val_per_base=1\nval_per_novel=1\nd_obj=4\nn_objects=4\nseed=1\n")
    assert main(["gen-synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    assert "seed=1" in (tmp_path / "o" / "synth.cfg").read_text()


def test_bad_config_key_is_usage_error(tmp_path, capsys):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("colour=red\n")
    assert main(["gen-synth", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "colour" in capsys.readouterr().err


def test_build_splits_on_empty_annotation_file(tmp_path, capsys):
    (tmp_path / "a.json").write_text("")
    assert main(["build-splits", str(tmp_path / "a.json"), "--out", str(tmp_path / "m.json")]) == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["base"] == [] and m["novel"] == []


def test_build_splits_writes_split_files(tmp_path):
    anns, qs = [], []
    for qid in range(1, 61):
        answer = "red apple" if qid <= 45 else "apple red"
        anns.append({"question_id": qid, "image_id": qid, "answer_type": "other",
                     "answers": [{"answer": answer}] * 3})
        qs.append({"question_id": qid, "question": "What is it?"})
    (tmp_path / "a.json").write_text(json.dumps({"annotations": anns}))
    (tmp_path / "q.json").write_text(json.dumps({"questions": qs}))
    out = tmp_path / "data" / "manifest.json"
    assert main(["build-splits", str(tmp_path / "a.json"), "--questions", str(tmp_path / "q.json"),
                 "--out", str(out), "--shots", "1,5"]) == 0
    m = json.loads(out.read_text())
    assert m["base"] == ["red apple"] and m["novel"] == ["apple red"] and set(m["shots"]) == {"1", "5"}
    lines = (tmp_path / "data" / "train_novel.jsonl").read_text().splitlines()
    assert [json.loads(x)["qid"] for x in lines] == list(range(46, 61))
    assert json.loads(lines[0])["tokens"] == ["what", "is", "it"]


def test_build_splits_malformed_json_is_data_error(tmp_path, capsys):
    (tmp_path / "a.json").write_text('{"annotations": [1,,]}')
    assert main(["build-splits", str(tmp_path / "a.json"), "--out", str(tmp_path / "m.json")]) == 2
    assert "byte offset" in capsys.readouterr().err


def test_build_splits_missing_file(tmp_path):
    assert main(["build-splits", str(tmp_path / "nope.json"), "--out", str(tmp_path / "m.json")]) == 1


def test_gradcheck_passes(capsys):
    assert main(["gradcheck", "--c_dim", "6", "--glimpses", "1"]) == 0
    out = capsys.readouterr().out
    assert out.strip().splitlines()[-1].startswith("PASS")
    assert "base/head.base_emb" in out and "novel/head.novel_emb" in out


def test_train_novel_without_base_checkpoint(tmp_path, runs, capsys):
    code = main(["train-novel", "--data_dir", str(runs / "data"), "--run_dir", str(tmp_path / "n"),
                 "--base_run", str(tmp_path / "missing"), *TINY])
    assert code != 0 and "train-base" in capsys.readouterr().err


def test_train_base_outputs(runs):
    base = runs / "base"
    assert {p.name for p in base.iterdir()} >= {"config.cfg", "checkpoint.cvqa", "metrics.csv", "report.json"}
    rows = list(csv.DictReader((base / "metrics.csv").open()))
    assert [r["split"] for r in rows] == ["train", "train", "val_base"]
    report = json.loads((base / "report.json").read_text())
    assert 0.0 <= report["val_base"]["top1"] <= report["val_base"]["top5"] <= 1.0


def test_novel_run_records_frozen_digest_and_eval_matches(runs, capsys):
    report = json.loads((runs / "novel" / "report.json").read_text())
    assert report["frozen_digest"] and "head.novel_emb" not in report["frozen_digest"]
    assert main(["eval", "--run_dir", str(runs / "novel")]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["top1"] == pytest.approx(report["val_novel"]["top1"])
    assert (runs / "novel" / "eval_val_novel.csv").exists() and (runs / "novel" / "eval_val_novel.json").exists()


def test_eval_base_exact_mode(runs, tmp_path, capsys):
    assert main(["eval", "--run_dir", str(runs / "base"), "--mode", "exact", "--out", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "eval_val_base.json").read_text())
    assert payload["mode"] == "exact" and payload["n"] == 24


def test_eval_requires_run_dir(tmp_path):
    assert main(["eval", "--run_dir", str(tmp_path)]) == 1


def test_dump_attention(runs, tmp_path):
    out = tmp_path / "att.csv"
    assert main(["dump-attention", "--run_dir", str(runs / "base"), "--graph", "image", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["glimpse", "query_index", "key_index", "weight"]
    sums = {}
    for r in rows:
        key = (r["glimpse"], r["query_index"])
        sums[key] = sums.get(key, 0.0) + float(r["weight"])
    assert all(abs(s - 1.0) < 1e-6 for s in sums.values())
    assert main(["dump-attention", "--run_dir", str(runs / "base"), "--index", "999",
                 "--out", str(out)]) == 1


@pytest.mark.parametrize("command,schema", [("train-base", RUN_KEYS), ("train-novel", RUN_KEYS),
                                            ("gen-synth", SYNTH_KEYS)])
def test_help_lists_every_key(command, schema, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    assert all(f"--{k}" in text for k in schema)


def test_bad_arguments_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train-base", "--no-such-flag"])
    assert exc.value.code == 1
