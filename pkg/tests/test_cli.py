import json

import pytest

from spokenlm import pipeline
from spokenlm.cli import main
from spokenlm.errors import ConfigError

SMALL = ["--set", "corpus.num_utterances=200", "--set", "corpus.abx_groups=20", "--set", "corpus.word_pairs=20",
         "--set", "corpus.sentence_pairs=20", "--set", "corpus.simi_pairs=20", "--set", "train.steps=30",
         "--set", "probe.epochs=2"]


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen", "--out", str(root / "c")] + SMALL) == 0
    assert main(["quantize", "--corpus", str(root / "c"), "--out", str(root / "u")] + SMALL) == 0
    assert main(["train", "--corpus", str(root / "c"), "--codebook", str(root / "u" / "codebook.zcbk"),
                 "--out", str(root / "m.zmlm")] + SMALL) == 0
    return root


def test_config_defaults_and_overrides(tmp_path):
    cfg = pipeline.load_config()
    assert cfg["sweep"]["k"] == [20, 50, 100, 200, 500, 1000, 2000]
    cfg = pipeline.load_config(overrides=["train.lr=0.05", "sweep.k=[4, 8]", "model.use_positions=false"])
    assert cfg["train"]["lr"] == 0.05 and cfg["sweep"]["k"] == [4, 8] and cfg["model"]["use_positions"] is False
    (tmp_path / "c.yaml").write_text("seed: 7\ntrain:\n  steps: 12\n")
    cfg = pipeline.load_config(tmp_path / "c.yaml", ["train.steps=13"])
    assert cfg["seed"] == 7 and cfg["train"]["steps"] == 13


@pytest.mark.parametrize("override,key", [("train.nope=1", "train.nope"), ("windows.sizes=[]", "windows.sizes"),
                                          ("masking.coverage=2", "masking.coverage"), ("jobs=0", "jobs"),
                                          ("model.heads=3", "model.heads"), ("corpus.num_phones=2", "num_phones"),
                                          ("poolings.poolings=[median]", "poolings")])
def test_config_errors_name_the_key(override, key):
    with pytest.raises(ConfigError) as err:
        pipeline.load_config(overrides=[override])
    assert key in str(err.value)


def test_bad_override_syntax(capsys):
    assert main(["grad-check", "--set", "novalue"]) == 2
    assert "key=value" in capsys.readouterr().err


def test_reports_embed_config_and_seed(run_dir):
    rep = json.loads((run_dir / "m.json").read_text())
    assert rep["hyperparameters"]["config"]["train"]["steps"] == 30
    assert rep["hyperparameters"]["seed"] == 0
    assert (run_dir / "m.tsv").exists() and (run_dir / "m.txt").exists()
    assert (run_dir / "u" / "train.units").exists() and (run_dir / "u" / "report.json").exists()


def test_eval_commands(run_dir, tmp_path, capsys):
    c, cb, m = str(run_dir / "c"), str(run_dir / "u" / "codebook.zcbk"), str(run_dir / "m.zmlm")
    assert main(["eval-pairs", "--corpus", c, "--model", m, "--codebook", cb, "--task", "sblimp",
                 "--report", str(tmp_path / "sb")] + SMALL) == 0
    rep = json.loads((tmp_path / "sb.json").read_text())
    assert rep["metric_name"] == "sblimp" and "window_size" in rep["hyperparameters"]
    assert main(["eval-simi", "--corpus", c, "--model", m, "--codebook", cb, "--report", str(tmp_path / "s")]) == 0
    assert main(["eval-abx", "--corpus", c, "--part", "dev", "--report", str(tmp_path / "a"), "--jobs", "2"]) == 0
    assert json.loads((tmp_path / "a.json").read_text())["hyperparameters"]["config"]["jobs"] == 2
    assert main(["align-units", "--corpus", c, "--codebook", cb, "--out", str(tmp_path / "al.tsv")]) == 0
    assert (tmp_path / "al.tsv").read_text().startswith("unit\tcount")
    assert (tmp_path / "al.report.json").exists()
    assert main(["probe-speaker", "--corpus", c, "--report", str(tmp_path / "p")] + SMALL) == 0
    assert "speaker_probe" in capsys.readouterr().out


def test_empty_manifest_is_an_error(run_dir, tmp_path, capsys):
    empty = tmp_path / "empty.tsv"
    empty.write_text("item_id\tfile_ref\tkind\tspeaker_id\tcategory_label\tgroup_id\tsubset_name\thuman_score\n")
    code = main(["eval-pairs", "--corpus", str(run_dir / "c"), "--model", str(run_dir / "m.zmlm"), "--codebook",
                 str(run_dir / "u" / "codebook.zcbk"), "--dev-manifest", str(empty)])
    assert code != 0
    assert "empty manifest" in capsys.readouterr().err
    code = main(["eval-abx", "--corpus", str(run_dir / "c"), "--manifest", str(empty)])
    assert code != 0 and "empty manifest" in capsys.readouterr().err


def test_loss_target_mismatch_fails_before_compute(run_dir, monkeypatch, capsys):
    def boom(*a, **k):
        raise AssertionError("corpus was read")
    monkeypatch.setattr(pipeline, "read_corpus", boom)
    code = main(["train", "--corpus", str(run_dir / "c"), "--out", str(run_dir / "x.zmlm"), "--set",
                 "model.loss=NLL-l", "--set", "model.target_mode=continuous"])
    assert code == 2
    assert "model.loss" in capsys.readouterr().err


def test_missing_inputs(run_dir, tmp_path, capsys):
    assert main(["train", "--corpus", str(run_dir / "c"), "--out", str(tmp_path / "m.zmlm")]) == 2
    assert "codebook" in capsys.readouterr().err
    assert main(["quantize", "--corpus", str(tmp_path / "nothing"), "--out", str(tmp_path / "u")]) == 2
    assert "corpus" in capsys.readouterr().err
    assert main(["gen", "--out", str(tmp_path), "--config", str(tmp_path / "none.yaml")]) == 2


def test_sweep_rows_and_failure_row(run_dir, tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", "--corpus", str(run_dir / "c"), "--out", str(out), "--set", "sweep.k=[20, 50, 5000]",
                 "--set", "quantizer.sample_frames=3000"] + SMALL)
    assert code == 0
    lines = (tmp_path / "sweep.table.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["k", "status", "spk_probe", "abx", "swuggy", "sblimp", "simi"]
    rows = [line.split("\t") for line in lines[1:]]
    assert [r[0] for r in rows] == ["20", "50", "5000"]
    assert rows[0][1] == rows[1][1] == "ok" and all(rows[0][2:]) and all(rows[1][2:])
    assert rows[2][1].startswith("failed") and not any(rows[2][2:])
    rep = json.loads((tmp_path / "sweep.json").read_text())
    assert rep["value"] == 2.0 and rep["notes"]


def test_grad_check_command(tmp_path):
    assert main(["grad-check", "--report", str(tmp_path / "g")]) == 0
    rep = json.loads((tmp_path / "g.json").read_text())
    assert rep["value"] < 1e-3 and len(rep["breakdown"]) == 10
