import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from styleretouch.cli import build_parser, main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A tiny dataset, a briefly trained model and a library, built through the CLI."""
    w = tmp_path_factory.mktemp("cli")
    ds = w / "ds"
    assert main(["make-dataset", "--out", str(ds), "--n-images", "12", "--size", "16", "--presets", "4",
                 "--k", "3", "--heldout-clusters", "1", "--heldout-presets", "1",
                 "--presets-per-cluster", "2", "--seed", "1"]) == 0
    assert main(["train", "--manifest", str(ds / "manifest.jsonl"), "--out", str(w / "run"), "--steps", "6",
                 "--batch-size", "2", "--crop", "8", "--checkpoint-every", "3", "--seed", "2"]) == 0
    assert main(["build-library", "--model", str(w / "run" / "model.irtc"), "--manifest",
                 str(ds / "manifest.jsonl"), "--out", str(w / "lib.bin")]) == 0
    return w


def test_help_documents_defaults(capsys):
    parser = build_parser()
    for cmd, needles in [("retouch", ["default: 3", "default: 0.1"]), ("train", ["--batch-size", "default: 8"])]:
        with pytest.raises(SystemExit) as exc:
            parser.parse_args([cmd, "--help"])
        assert exc.value.code == 0
        out = " ".join(capsys.readouterr().out.split())
        for n in needles:
            assert n in out
    for cmd in ("make-dataset", "build-library", "select-refs", "style-transfer", "eval", "grad-check"):
        with pytest.raises(SystemExit):
            parser.parse_args([cmd, "--help"])
        assert "--seed" in capsys.readouterr().out


def test_dataset_and_training_outputs(workspace):
    assert (workspace / "ds" / "manifest.jsonl").exists()
    run = workspace / "run"
    for name in ("model.irtc", "loss.csv", "loss.png"):
        assert (run / name).stat().st_size > 0
    assert len((run / "loss.csv").read_text().splitlines()) == 7


def test_train_is_idempotent(workspace, tmp_path):
    args = ["train", "--manifest", str(workspace / "ds" / "manifest.jsonl"), "--out", str(tmp_path),
            "--steps", "6", "--batch-size", "2", "--crop", "8", "--checkpoint-every", "3", "--seed", "2"]
    assert main(args) == 0
    for name in ("model.irtc", "loss.csv", "loss.png"):
        assert (tmp_path / name).read_bytes() == (workspace / "run" / name).read_bytes()


def test_retouch_prints_ids_and_weights(workspace, capsys):
    q = sorted((workspace / "ds" / "inputs").iterdir())[0]
    outs = []
    for i in range(2):
        out = workspace / f"o{i}.png"
        assert main(["retouch", "--library", str(workspace / "lib.bin"), "--model",
                     str(workspace / "run" / "model.irtc"), "--input", str(q), "--out", str(out),
                     "--top-k", "3", "--tau", "0.1", "--figure", str(workspace / f"w{i}.png")]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "id\tsimilarity\tweight" and len(lines) == 8
    weights = [float(line.split("\t")[2]) for line in lines[1:4]]
    assert sum(weights) == pytest.approx(1.0, abs=1e-5)
    assert (workspace / "w0.png").read_bytes() == (workspace / "w1.png").read_bytes()


def test_style_transfer_and_cube(workspace):
    imgs = sorted((workspace / "ds" / "inputs").iterdir())
    assert main(["style-transfer", "--model", str(workspace / "run" / "model.irtc"), "--content", str(imgs[0]),
                 "--style", str(imgs[1]), "--out", str(workspace / "st.png"),
                 "--cube", str(workspace / "st.cube"), "--lut-size", "5"]) == 0
    assert (workspace / "st.png").exists()
    assert "LUT_3D_SIZE 5" in (workspace / "st.cube").read_text()


def test_select_refs(workspace):
    out = workspace / "refs.json"
    assert main(["select-refs", "--pool", str(workspace / "ds" / "manifest.jsonl"), "--k", "4",
                 "--out", str(out), "--split", "train"]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["files"]) == 4 == len(set(doc["indices"]))
    assert main(["select-refs", "--pool", str(workspace / "ds" / "inputs"), "--k", "2",
                 "--out", str(workspace / "refs_dir.json")]) == 0
    assert main(["build-library", "--model", str(workspace / "run" / "model.irtc"), "--manifest",
                 str(workspace / "ds" / "manifest.jsonl"), "--refs", str(out),
                 "--out", str(workspace / "lib4.bin")]) == 0


def test_eval_identical_dirs(workspace, capsys):
    src = workspace / "ds" / "inputs"
    copy = workspace / "copy"
    shutil.copytree(src, copy, dirs_exist_ok=True)
    assert main(["eval", "--pred", str(copy), "--gt", str(src), "--out", str(workspace / "ev")]) == 0
    rows = (workspace / "ev" / "metrics.csv").read_text().splitlines()[1:]
    assert len(rows) == 12
    for r in rows:
        _, p, s = r.split(",")
        assert p == "inf" and float(s) == 1.0
    assert json.loads((workspace / "ev" / "summary.json").read_text())["ssim_mean"] == 1.0
    assert (workspace / "ev" / "metrics.png").exists()
    assert "psnr inf" in capsys.readouterr().out


def test_grad_check_exit_codes(workspace, capsys):
    model = str(workspace / "run" / "model.irtc")
    assert main(["grad-check", "--model", model, "--sample", "10"]) == 0
    assert "max rel-err" in capsys.readouterr().out
    assert main(["grad-check", "--model", model, "--sample", "10", "--tol", "1e-300"]) == 1


def test_usage_errors_exit_2(capsys):
    for argv in (["retouch", "--library", "x"], ["retouch", "--library", "l", "--model", "m", "--input", "i",
                                                  "--out", "o", "--top-k", "0"],
                 ["train", "--manifest", "m", "--out", "o", "--lr", "-1"], ["nope"], ["eval", "--bogus"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 2


def test_runtime_errors_exit_1(workspace, tmp_path, capsys):
    assert main(["retouch", "--library", str(workspace / "lib.bin"), "--model", str(tmp_path / "missing.irtc"),
                 "--input", "x.png", "--out", str(tmp_path / "o.png")]) == 1
    assert "error" in capsys.readouterr().err
    other = tmp_path / "other"
    assert main(["train", "--manifest", str(workspace / "ds" / "manifest.jsonl"), "--out", str(other),
                 "--steps", "1", "--batch-size", "1", "--crop", "8", "--seed", "9"]) == 0
    q = sorted((workspace / "ds" / "inputs").iterdir())[0]
    assert main(["retouch", "--library", str(workspace / "lib.bin"), "--model", str(other / "model.irtc"),
                 "--input", str(q), "--out", str(tmp_path / "o.png")]) == 1
    assert "library was built with model" in capsys.readouterr().err
    assert main(["select-refs", "--pool", str(workspace / "ds" / "inputs"), "--k", "99",
                 "--out", str(tmp_path / "r.json")]) == 1


def test_console_entry_point(tmp_path):
    exe = shutil.which("styleretouch")
    cmd = [exe] if exe else [sys.executable, "-m", "styleretouch.cli"]
    gt = tmp_path / "gt"
    gt.mkdir()
    from styleretouch.colorlab import save_image

    save_image(gt / "a.png", np.random.default_rng(0).random((12, 12, 3)))
    r = subprocess.run(cmd + ["eval", "--pred", str(gt), "--gt", str(gt), "--out", str(tmp_path / "ev")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    r = subprocess.run(cmd + ["eval"], capture_output=True, text=True)
    assert r.returncode == 2 and "required" in r.stderr
