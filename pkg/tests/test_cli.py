"""End-to-end CLI checks: exit codes, run-directory layout, reproducibility."""

import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from robustvad.attacks import format_eps, parse_eps
from robustvad.cli import main
from robustvad.videostore.io import load_dataset


SCENE = ["--height", "16", "--width", "16", "--channels", "2", "--frames", "32",
         "--train-normal", "3", "--train-abnormal", "3",
         "--test-normal", "2", "--test-abnormal", "2"]


def _run_chain(root, name, seed="0"):
    base = ["--run", name, "--run-root", str(root), "--seed", seed]
    assert main(["gen-data", *base, *SCENE]) == 0
    assert main(["train-phase1", *base, "--epochs", "2", "--batch-size", "4"]) == 0
    assert main(["pseudo-label", *base]) == 0
    assert main(["gen-srd", *base, "--p-srd", "1.0"]) == 0
    assert main(["train-phase2", *base, "--epochs", "1", "--batch-size", "4",
                 "--inner-iters", "1", "--phase2-mode", "pseudo_only"]) == 0
    assert main(["attack-eval", *base, "--checkpoint", "phase2",
                 "--attack-family", "pgd", "--iters", "3", "--tag", "t"]) == 0
    assert main(["report", *base]) == 0
    return root / name


@pytest.fixture(scope="module")
def run_once(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    return _run_chain(root, "main")


def test_layout(run_once):
    rd = run_once
    for rel in ("config", "data/manifest.json", "data/pseudo_labels.json",
                "data/srd/srd_manifest.json", "checkpoints/phase1.rvc",
                "checkpoints/phase2.rvc", "reports/phase1_metrics.csv",
                "reports/phase2_metrics.csv", "reports/eval_t.csv",
                "reports/records_t.json", "reports/report.csv"):
        assert (rd / rel).exists(), rel


def test_config_snapshot_merges_sections(run_once):
    doc = json.loads((run_once / "config").read_text())
    assert {"gen-data", "train-phase1", "pseudo-label", "gen-srd",
            "train-phase2", "attack-eval:t"} <= set(doc)
    assert doc["gen-data"]["counts"]["train_normal"] == 3
    assert doc["train-phase1"]["aborted"] is False


def test_config_snapshot_eps_canonical(run_once):
    doc = json.loads((run_once / "config").read_text())
    assert doc["train-phase2"]["eps"] == format_eps(parse_eps("0.5/255"))
    assert doc["attack-eval:t"]["eps"] == format_eps(parse_eps("0.5/255"))


def test_report_csv_has_rows(run_once):
    lines = (run_once / "reports" / "report.csv").read_text().strip().splitlines()
    assert lines[0].startswith("tag,attack,")
    assert len(lines) == 2 and lines[1].startswith("t,")


def test_records_json_consistent(run_once):
    doc = json.loads((run_once / "reports" / "records_t.json").read_text())
    assert doc["attack"] == "pgd" and doc["iters"] == 3
    test_split = load_dataset(run_once / "data" / "manifest.json")["test"]
    assert {r["video_id"] for r in doc["records"]} == {v.id for v in test_split}
    for r in doc["records"]:
        v = next(v for v in test_split if v.id == r["video_id"])
        assert len(r["frame_scores"]) == v.n_frames
        np.testing.assert_array_equal(r["frame_labels"], v.frame_labels)


def test_srd_manifest_loadable_and_labeled(run_once):
    videos = load_dataset(run_once / "data" / "srd" / "srd_manifest.json")["train"]
    assert len(videos) == 3  # p_srd=1.0 over 3 normals
    for v in videos:
        assert v.video_label == 1
        assert v.frame_labels is not None and v.frame_labels.any()
        assert v.pixels.shape == (32, 16, 16, 2)


def test_chain_is_reproducible(tmp_path_factory, run_once):
    root = tmp_path_factory.mktemp("cli_again")
    other = _run_chain(root, "main")
    for rel in ("checkpoints/phase1.rvc", "checkpoints/phase2.rvc", "config",
                "reports/report.csv", "reports/records_t.json",
                "data/pseudo_labels.json"):
        assert filecmp.cmp(run_once / rel, other / rel, shallow=False), rel


def test_exit_2_without_dataset(tmp_path):
    rc = main(["train-phase1", "--run", "empty", "--run-root", str(tmp_path),
               "--epochs", "1"])
    assert rc == 2


def test_exit_2_on_unknown_command(capsys):
    assert main(["frobnicate"]) == 2
    capsys.readouterr()


def test_exit_2_on_bad_flag_value(run_once, capsys):
    rc = main(["pseudo-label", "--run", run_once.name,
               "--run-root", str(run_once.parent), "--tau", "1.5"])
    assert rc == 2
    capsys.readouterr()


def test_exit_2_on_missing_checkpoint(run_once, capsys):
    rc = main(["attack-eval", "--run", run_once.name,
               "--run-root", str(run_once.parent), "--checkpoint", "nope",
               "--attack-family", "clean"])
    assert rc == 2
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_3_on_divergence(tmp_path):
    base = ["--run", "div", "--run-root", str(tmp_path)]
    assert main(["gen-data", *base, *SCENE]) == 0
    rc = main(["train-phase1", *base, "--epochs", "3", "--lr", "1e150",
               "--batch-size", "2"])
    assert rc == 3
    doc = json.loads((tmp_path / "div" / "config").read_text())
    assert doc["train-phase1"]["aborted"] is True


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "robustvad.cli", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen-data", "train-phase1", "attack-eval", "run-all"):
        assert cmd in out.stdout
