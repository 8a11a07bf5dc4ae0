import json
from dataclasses import asdict

import pytest
import yaml
from click.testing import CliRunner

from conftest import make_tiny_config
from motiondiff.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Shared scratch tree: dataset, config, then checkpoints built in order."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    r = runner.invoke(main, [
        "synth-data", "--out", str(root / "clips"),
        "--clips", "2", "--frames", "8", "--size", "32", "--seed", "0",
    ])
    assert r.exit_code == 0, r.output

    cfg = {
        "model": asdict(make_tiny_config()),
        "stages": {
            1: {"steps": 2, "batch_size": 2},
            2: {"steps": 2, "batch_size": 2, "mask_ratio": 0.3, "gan": True},
            3: {"steps": 1, "batch_size": 1, "mask_ratio": 0.3, "seq_len": 3},
        },
    }
    (root / "config.yaml").write_text(yaml.safe_dump(cfg))
    return root, runner


def test_train_all_stages(workdir):
    root, runner = workdir
    args = ["--config", str(root / "config.yaml"),
            "--data", str(root / "clips"), "--out", str(root / "run")]
    r = runner.invoke(main, ["train", "--stage", "1", *args])
    assert r.exit_code == 0, r.output
    assert (root / "run" / "stage1.ckpt").exists()

    r = runner.invoke(main, [
        "train", "--stage", "2", "--init", str(root / "run" / "stage1.ckpt"), *args
    ])
    assert r.exit_code == 0, r.output

    r = runner.invoke(main, [
        "train", "--stage", "3", "--init", str(root / "run" / "stage2.ckpt"), *args
    ])
    assert r.exit_code == 0, r.output
    losses = json.loads((root / "run" / "stage3_losses.json").read_text())
    assert losses[-1]["stage"] == 3


def test_train_stage2_requires_init(workdir):
    root, runner = workdir
    r = runner.invoke(main, [
        "train", "--stage", "2", "--config", str(root / "config.yaml"),
        "--data", str(root / "clips"), "--out", str(root / "run2"),
    ])
    assert r.exit_code != 0


def test_animate_cli(workdir):
    root, runner = workdir
    out = root / "anim"
    r = runner.invoke(main, [
        "animate",
        "--ref", str(root / "clips" / "clip_0000" / "frame_0000.png"),
        "--driving", str(root / "clips" / "clip_0001"),
        "--ckpt", str(root / "run" / "stage2.ckpt"),
        "--out", str(out), "--steps", "2", "--max-frames", "2", "--seed", "1",
    ])
    assert r.exit_code == 0, r.output
    assert len(list(out.glob("frame_*.png"))) == 2
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["seed"] == 1
    assert manifest["sampler"]["ddim_steps"] == 2


def test_interpolate_cli(workdir):
    root, runner = workdir
    out = root / "interp"
    clip = root / "clips" / "clip_0000"
    r = runner.invoke(main, [
        "interpolate",
        "--ref", str(clip / "frame_0000.png"),
        "--key-a", str(clip / "frame_0001.png"),
        "--key-b", str(clip / "frame_0005.png"),
        "--frames", "3", "--steps", "2",
        "--ckpt", str(root / "run" / "stage2.ckpt"),
        "--out", str(out),
    ])
    assert r.exit_code == 0, r.output
    assert len(list(out.glob("frame_*.png"))) == 3
    manifest = json.loads((out / "run_manifest.json").read_text())
    assert manifest["alphas"] == [0.0, 0.5, 1.0]


def test_eval_cli(workdir):
    root, runner = workdir
    r = runner.invoke(main, [
        "eval", "--mode", "self",
        "--gen", str(root / "anim"), "--drv", str(root / "anim"),
        "--out", str(root / "eval"),
    ])
    assert r.exit_code == 0, r.output
    report = json.loads((root / "eval" / "report.json").read_text())
    assert report["aggregates"]["l1"] == pytest.approx(0.0, abs=1e-9)


def test_outpaint_cli(workdir):
    root, runner = workdir
    out = root / "outp"
    r = runner.invoke(main, [
        "outpaint",
        "--ref", str(root / "clips" / "clip_0000" / "frame_0000.png"),
        "--driving", str(root / "clips" / "clip_0001"),
        "--horizon", "4", "--fit-steps", "5", "--steps", "2",
        "--ckpt", str(root / "run" / "stage2.ckpt"),
        "--out", str(out),
    ])
    assert r.exit_code == 0, r.output
    # 8 prefix frames + 4 extended
    assert len(list(out.glob("frame_*.png"))) == 12
    assert json.loads((out / "run_manifest.json").read_text())["horizon"] == 4


def test_outpaint_rejects_bad_horizon(workdir):
    root, runner = workdir
    r = runner.invoke(main, [
        "outpaint",
        "--ref", str(root / "clips" / "clip_0000" / "frame_0000.png"),
        "--driving", str(root / "clips" / "clip_0001"),
        "--horizon", "3",
        "--ckpt", str(root / "run" / "stage2.ckpt"),
        "--out", str(root / "x"),
    ])
    assert r.exit_code != 0
