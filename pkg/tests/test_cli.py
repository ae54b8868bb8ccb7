import hashlib
import json

import pytest

from rvos.cli import main

SMALL = ["--set", "d_model=16", "--set", "text_dim=16", "--set", "heads=2", "--set", "num_queries=4",
         "--set", "num_frames=3", "--set", "height=32", "--set", "width=32", "--set", "num_encoder_layers=1",
         "--set", "num_decoder_layers=1", "--set", "num_voc_layers=1", "--set", "text_layers=1",
         "--set", "n_train=4", "--set", "n_val=2", "--set", "epochs=1"]


def digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(root).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_unknown_key_exits_2(capsys):
    assert main(["gen", "--set", "bogus_key=1"]) == 2
    assert "bogus_key" in capsys.readouterr().err


def test_malformed_set_exits_2():
    assert main(["gen", "--set", "novalue"]) == 2


def test_config_file_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("num_queries = 4\nwidth_px = 3\n")
    assert main(["gen", "--config", str(cfg)]) == 2
    assert "width_px" in capsys.readouterr().err


def test_gen_is_deterministic(tmp_path):
    assert main(["gen", *SMALL, "--seed", "4", "--out", str(tmp_path / "a")]) == 0
    assert main(["gen", *SMALL, "--seed", "4", "--out", str(tmp_path / "b")]) == 0
    assert main(["gen", *SMALL, "--seed", "5", "--out", str(tmp_path / "c")]) == 0
    assert digest(tmp_path / "a") == digest(tmp_path / "b")
    assert digest(tmp_path / "a") != digest(tmp_path / "c")


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, run = root / "data", root / "run"
    assert main(["gen", *SMALL, "--out", str(data)]) == 0
    assert main(["train", *SMALL, "--data", str(data), "--out", str(run)]) == 0
    return data, run


def test_train_outputs(trained):
    _, run = trained
    for name in ("model.ckpt", "train_log.csv", "loss_curves.png", "config.txt"):
        assert (run / name).stat().st_size > 0


def test_eval_writes_report_and_figure(trained, tmp_path):
    data, run = trained
    out = tmp_path / "eval"
    args = ["eval", *SMALL, "--data", str(data), "--checkpoint", str(run / "model.ckpt"), "--out", str(out)]
    assert main(args) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["num_videos"] == 2
    assert 0.0 <= report["j_mean"] <= 1.0
    assert (out / "report.tsv").read_text().startswith("metric\t")
    assert (out / "report.png").stat().st_size > 0


def test_infer_writes_masks_and_figures(trained, tmp_path):
    data, run = trained
    out = tmp_path / "infer"
    args = ["infer", *SMALL, "--data", str(data), "--checkpoint", str(run / "model.ckpt"), "--out", str(out),
            "--limit", "1", "--expression", "the red circle"]
    assert main(args) == 0
    rows = (out / "predictions.tsv").read_text().splitlines()
    assert rows[0] == "id\tquery\texpression" and rows[1].endswith("the red circle")
    assert len(list((out / "figures").glob("*.png"))) == 1
    assert (out / "predictions.rle").read_text().count("\n") == 3


def test_checkpoint_mismatch_exits_1(trained, tmp_path, capsys):
    data, run = trained
    args = ["eval", *SMALL, "--set", "num_queries=5", "--data", str(data), "--checkpoint",
            str(run / "model.ckpt"), "--out", str(tmp_path)]
    assert main(args) == 1
    assert "query_content" in capsys.readouterr().err


def test_missing_data_exits_1(tmp_path, capsys):
    assert main(["train", *SMALL, "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path)]) == 1
    assert "nowhere" in capsys.readouterr().err
