import numpy as np
import pytest

from faerec.cli import main
from faerec.data import read_dataset
from faerec.model import FAERecModel
from faerec.params import read_frec
from faerec.config import RunConfig
from faerec.training import split_checkpoint


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--output", str(d / "log.tsv"), "--users", "60", "--items", "30", "--seed", "1"]) == 0
    assert main(["preprocess", "--input", str(d / "log.tsv"), "--output", str(d / "data.fdat")]) == 0
    assert main(["synth-embed", "--dataset", str(d / "data.fdat"), "--output", str(d / "emb.femb"),
                 "--d-llm", "16", "--clusters", "4", "--by-key"]) == 0
    (d / "run.cfg").write_text("model.d = 8\nmodel.max_len = 20\ntrain.batch_size = 16\n", encoding="utf-8")
    return d


def train_args(ws, out, *extra):
    return ["train", "--dataset", str(ws / "data.fdat"), "--embeddings", str(ws / "emb.femb"),
            "--config", str(ws / "run.cfg"), "--out-dir", str(out), *extra]


def test_preprocess_summary_and_idempotence(workspace, tmp_path, capsys):
    out = tmp_path / "again.fdat"
    assert main(["preprocess", "--input", str(workspace / "log.tsv"), "--output", str(out)]) == 0
    line = capsys.readouterr().out.strip()
    ds = read_dataset(out)
    assert line == f"users={ds.n_users} items={ds.n_items} head={int(ds.head_flag.sum())}"
    assert out.read_bytes() == (workspace / "data.fdat").read_bytes()


def test_preprocess_strict_error(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("u1\ti1\t1\nu1,i2,2\n", encoding="utf-8")
    assert main(["preprocess", "--input", str(bad), "--output", str(tmp_path / "x.fdat"), "--strict"]) == 2
    assert "line 2" in capsys.readouterr().err


def test_synth_embed_repeatable(workspace, tmp_path):
    out = tmp_path / "e.femb"
    assert main(["synth-embed", "--dataset", str(workspace / "data.fdat"), "--output", str(out),
                 "--d-llm", "16", "--clusters", "4", "--by-key"]) == 0
    assert out.read_bytes() == (workspace / "emb.femb").read_bytes()


def test_synth_embed_too_many_clusters(workspace, tmp_path, capsys):
    code = main(["synth-embed", "--dataset", str(workspace / "data.fdat"), "--output", str(tmp_path / "e.femb"),
                 "--clusters", "500"])
    assert code == 2
    assert "clusters" in capsys.readouterr().err


def test_train_zero_epochs_is_init(workspace, tmp_path):
    out = tmp_path / "run"
    assert main(train_args(workspace, out, "--epochs", "0", "--seed", "3")) == 0
    ds = read_dataset(workspace / "data.fdat")
    from faerec.semantic import load_semantic

    cfg = RunConfig.build(out / "config.txt")
    init = FAERecModel(cfg.model_config(), ds.n_items, load_semantic(workspace / "emb.femb"), seed=3).params.arrays()
    params, _, _ = split_checkpoint(read_frec(out / "best.frec"))
    assert set(params) == set(init)
    for k in init:
        np.testing.assert_array_equal(params[k], init[k])


def test_ablation_flags(workspace, tmp_path):
    out = tmp_path / "abl"
    assert main(train_args(workspace, out, "--epochs", "0", "--ablation", "ila", "--ablation", "cls",
                           "--ablation", "agf")) == 0
    text = (out / "config.txt").read_text()
    assert "align.mode = no_ila+no_cls" in text
    assert "model.fusion = equal" in text


def test_train_resume_and_eval(workspace, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(train_args(workspace, out, "--epochs", "2")) == 0
    assert main(train_args(workspace, out, "--epochs", "3", "--resume")) == 0
    rows = (out / "metrics.csv").read_text().strip().splitlines()
    assert [r.split(",")[0] for r in rows[1:]] == ["0", "1", "2"]
    capsys.readouterr()
    csv_path = tmp_path / "report.csv"
    code = main(["eval", "--dataset", str(workspace / "data.fdat"), "--embeddings", str(workspace / "emb.femb"),
                 "--checkpoint", str(out / "best.frec"), "--k", "5,10", "--csv", str(csv_path)])
    assert code == 0
    table = capsys.readouterr().out
    assert "Overall" in table and "Tail" in table and "H@10" in table
    assert csv_path.read_text().startswith("split,")

    dump = tmp_path / "emb.tsv"
    assert main(["dump-embeddings", "--dataset", str(workspace / "data.fdat"), "--embeddings",
                 str(workspace / "emb.femb"), "--checkpoint", str(out / "best.frec"), "--output", str(dump)]) == 0
    lines = dump.read_text().splitlines()
    assert len(lines) == read_dataset(workspace / "data.fdat").n_items + 1
    assert len(lines[1].split("\t")[3].split(",")) == 8


def test_untrained_checkpoint_evaluates(workspace, tmp_path, capsys):
    out = tmp_path / "zero"
    assert main(train_args(workspace, out, "--epochs", "0")) == 0
    assert main(["eval", "--dataset", str(workspace / "data.fdat"), "--embeddings", str(workspace / "emb.femb"),
                 "--checkpoint", str(out / "best.frec")]) == 0


def test_unknown_key_is_user_error(workspace, tmp_path, capsys):
    assert main(train_args(workspace, tmp_path / "x", "--set", "model.depth=3")) == 2
    assert "model.depth" in capsys.readouterr().err


def test_help_lists_every_key(capsys):
    from faerec.config import KEYS

    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for key, (_, default, _) in KEYS.items():
        assert key in text and default in text


def test_seed_env_override(monkeypatch):
    monkeypatch.setenv("FAEREC_SEED", "17")
    assert RunConfig.build()["train.seed"] == 17
    assert RunConfig.build(overrides={"train.seed": "2"})["train.seed"] == 2
