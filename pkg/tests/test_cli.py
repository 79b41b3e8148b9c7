import subprocess
import sys

import pytest

from cvtrack.cli import main

SMALL = ["--height", "24", "--width", "24", "--n-objects", "2", "--n-frames", "5",
         "--box-min", "16", "--box-max", "20"]


@pytest.fixture
def scene(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--seed", "7", *SMALL]) == 0
    return tmp_path / "s"


def tree(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_synth_is_byte_identical(tmp_path, scene):
    assert main(["synth", "--out", str(tmp_path / "t"), "--seed", "7", *SMALL]) == 0
    assert tree(scene) == tree(tmp_path / "t")
    assert len(list((scene / "frames").iterdir())) == 5


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["dance", "--out", str(tmp_path)]) == 2
    assert main(["synth", "--out", str(tmp_path), "--bogus", "1"]) == 2
    assert main(["synth"]) == 2
    assert main(["track", "--out", str(tmp_path)]) == 2  # --scene missing
    (tmp_path / "bad.cfg").write_text("colour=blue\n")
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "bad.cfg")]) == 2
    (tmp_path / "bad2.cfg").write_text("seed=abc\n")
    assert main(["synth", "--out", str(tmp_path), "--config", str(tmp_path / "bad2.cfg")]) == 2


def test_missing_files_exit_1(tmp_path, scene):
    assert main(["train", "--out", str(tmp_path / "o"), "--scene", str(tmp_path / "none")]) == 1
    assert main(["eval", "--out", str(tmp_path / "o"), "--gt", str(tmp_path / "x.txt"),
                 "--hyp", str(tmp_path / "y.txt")]) == 1
    assert main(["track", "--out", str(tmp_path / "o"), "--scene", str(scene),
                 "--weights", str(tmp_path / "w.tdsw")]) == 1


def test_flag_beats_config_beats_default(tmp_path):
    (tmp_path / "c.cfg").write_text("seed=5\nn-frames=3\nnoise=0.2\n")
    out = tmp_path / "o"
    assert main(["synth", "--out", str(out), "--config", str(tmp_path / "c.cfg"), "--seed", "9",
                 "--height", "24", "--width", "24", "--n-objects", "1", "--box-min", "16",
                 "--box-max", "20"]) == 0
    echoed = dict(line.split("=", 1) for line in (out / "synth.cfg").read_text().splitlines())
    assert echoed["seed"] == "9" and echoed["n_frames"] == "3" and echoed["noise"] == "0.2"
    assert echoed["stride"] == "4"
    assert len(list((out / "frames").iterdir())) == 3


def test_eval_perfect_hypothesis(tmp_path, scene, capsys):
    gt = scene / "gt.txt"
    assert main(["eval", "--out", str(tmp_path / "e"), "--gt", str(gt), "--hyp", str(gt)]) == 0
    out = capsys.readouterr().out
    assert "mota=1.000000" in out
    for name in ("report.txt", "report.json", "timeline.png"):
        assert (tmp_path / "e" / name).exists()


def test_full_pipeline(tmp_path, scene, capsys):
    w = tmp_path / "w"
    assert main(["train", "--out", str(w), "--scene", str(scene), "--steps", "3", "--hidden", "8",
                 "--dim", "8"]) == 0
    assert (w / "losses.csv").read_text().startswith("step,loss\n1,")
    assert (w / "loss.png").exists() and (w / "train.cfg").exists()
    for mode in ("cva", "baseline"):
        t = tmp_path / mode
        assert main(["track", "--out", str(t), "--scene", str(scene), "--weights",
                     str(w / "weights.tdsw"), "--mode", mode]) == 0
        assert (t / "results.txt").read_text()
    i = tmp_path / "i"
    assert main(["inspect-offsets", "--out", str(i), "--scene", str(scene), "--weights",
                 str(w / "weights.tdsw"), "--frame", "2"]) == 0
    assert (i / "offsets_00002.ppm").read_bytes().startswith(b"P6\n96 96\n255\n")
    assert (i / "offsets_00002.png").exists()
    assert main(["inspect-offsets", "--out", str(i), "--scene", str(scene), "--weights",
                 str(w / "weights.tdsw"), "--frame", "0"]) == 2


def test_bad_choice_values(tmp_path, scene):
    assert main(["track", "--out", str(tmp_path / "o"), "--scene", str(scene),
                 "--mode", "kalman"]) == 2
    assert main(["track", "--out", str(tmp_path / "o"), "--scene", str(scene),
                 "--mode", "cva"]) == 2  # no weights


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-c", "import sys; from cvtrack.cli import main; "
                           "sys.exit(main(['--help']))"], capture_output=True, text=True)
    assert proc.returncode == 0 and "inspect-offsets" in proc.stdout
