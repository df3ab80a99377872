import json
import subprocess
import sys

import pytest

from wildpose.cli import main
from wildpose.skeleton import SkeletonModel
from wildpose.synthdata import GenConfig, generate_dataset

from conftest import small_run_config


@pytest.fixture()
def workspace(tmp_path, data_dir):
    for name in ("train.pld", "train.plds", "heldout.pld", "heldout.plds"):
        (tmp_path / name).write_bytes((data_dir / name).read_bytes())
    cfg = small_run_config()
    (tmp_path / "run.json").write_text(cfg.to_json())
    return tmp_path


def test_gen(tmp_path, capsys):
    (tmp_path / "gen.json").write_text(json.dumps({"sample_count": 6, "fraction_only2d": 0.5}))
    out = tmp_path / "g.pld"
    assert main(["gen", "--config", str(tmp_path / "gen.json"), "--seed", "3", "--out", str(out)]) == 0
    assert out.exists() and (tmp_path / "g.plds").exists()
    assert "3 Only2D" in capsys.readouterr().out


def test_gen_rejects_unknown_key(tmp_path):
    (tmp_path / "gen.json").write_text(json.dumps({"samples": 6}))
    assert main(["gen", "--config", str(tmp_path / "gen.json"), "--out", str(tmp_path / "g.pld")]) == 1


def test_missing_config_file_is_io_error(tmp_path):
    assert main(["pretrain", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "p.pwt")]) == 2


def test_invalid_config_is_validation_error(tmp_path):
    (tmp_path / "run.json").write_text(json.dumps({"stage2": {"lr": -1}}))
    assert main(["pretrain", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "p.pwt")]) == 1
    (tmp_path / "run.json").write_text("{not json")
    assert main(["pretrain", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "p.pwt")]) == 1


def test_pretrain_train_eval_pipeline(workspace):
    cfg = str(workspace / "run.json")
    pre = workspace / "pre.pwt"
    assert main(["pretrain", "--config", cfg, "--seed", "5", "--out", str(pre)]) == 0
    assert main(["train", "--config", cfg, "--seed", "5", "--init", str(pre), "--out", str(workspace / "run")]) == 0
    ckpt = workspace / "run" / "full.pwt"
    assert ckpt.exists()
    rc = main(["eval", "--config", cfg, "--checkpoint", str(ckpt), "--protocol", "procrustes",
               "--out", str(workspace / "report")])
    assert rc == 0
    report = json.loads((workspace / "report" / "report.json").read_text())
    assert report["protocol"] == "procrustes" and report["sample_count"] == 12
    assert (workspace / "report" / "pck_curve.csv").read_text().startswith("threshold_mm,pck")


def test_train_from_missing_checkpoint(workspace):
    rc = main(["train", "--config", str(workspace / "run.json"), "--init", str(workspace / "none.pwt"),
               "--out", str(workspace / "run")])
    assert rc == 2


def test_eval_joint_count_mismatch(workspace, capsys):
    cfg = str(workspace / "run.json")
    pre = workspace / "pre.pwt"
    main(["pretrain", "--config", cfg, "--out", str(pre)])
    main(["train", "--config", cfg, "--init", str(pre), "--until", "1", "--out", str(workspace / "run")])
    small = SkeletonModel((0, 0, 1), (0.0, 300.0, 300.0), ("root", "a", "b"))
    other = generate_dataset(GenConfig(sample_count=3, fraction_only2d=0.0), small, workspace / "k3.pld")
    capsys.readouterr()
    rc = main(["eval", "--checkpoint", str(workspace / "run" / "full.pwt"), "--dataset", str(other),
               "--out", str(workspace / "r")])
    assert rc == 1
    assert "ConfigMismatch" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out
    assert "conv2d" in out and "loss_bone_2d" in out and "(ok)" in out


def test_ablate_produces_four_rows(workspace, capsys):
    rc = main(["ablate", "--config", str(workspace / "run.json"), "--out", str(workspace / "abl")])
    assert rc == 0
    table = capsys.readouterr().out.strip().splitlines()
    assert table[0].split()[0] == "Method" and len(table) == 5
    assert table[1].startswith("Baseline (direct 3D prediction + bone loss)")
    assert table[4].startswith("+ 2D latent loss + 2D-only data + 3D-to-2D projection")
    for key in "abcd":
        assert (workspace / "abl" / key / "report.json").exists()


def test_ablate_without_only2d_data_fails_fast(workspace):
    generate_dataset(GenConfig(sample_count=8, fraction_only2d=0.0), None, workspace / "train.pld")
    rc = main(["ablate", "--config", str(workspace / "run.json"), "--out", str(workspace / "abl")])
    assert rc == 1
    assert not (workspace / "abl").exists()


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "wildpose", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("gen", "pretrain", "train", "eval", "gradcheck", "ablate"):
        assert cmd in res.stdout
