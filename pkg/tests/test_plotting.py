import numpy as np

from cvtrack.cva import OffsetField
from cvtrack.metrics import evaluate
from cvtrack.plotting import plot_eval_timeline, plot_loss_curve, plot_offsets, render_offset_arrows


def test_png_files_are_reproducible(tmp_path):
    for name in ("a.png", "b.png"):
        plot_loss_curve([3.0, 1.0, 0.5], tmp_path / name)
    a, b = (tmp_path / "a.png").read_bytes(), (tmp_path / "b.png").read_bytes()
    assert a.startswith(b"\x89PNG") and a == b


def test_loss_curve_with_zero(tmp_path):
    assert plot_loss_curve([1.0, 0.0], tmp_path / "z.png").exists()


def test_offsets_and_timeline(tmp_path):
    heat = np.zeros((8, 8))
    heat[3, 3] = 1.0
    plot_offsets(heat, OffsetField(np.ones((8, 8, 2)), 4), tmp_path / "o.png")
    gt = {1: {1: (0, 0, 4, 4)}, 2: {1: (0, 0, 4, 4)}}
    plot_eval_timeline(evaluate(gt, {1: {1: (0, 0, 4, 4)}}), tmp_path / "t.png")
    assert (tmp_path / "o.png").stat().st_size > 0 and (tmp_path / "t.png").stat().st_size > 0


def test_arrow_raster():
    heat = np.zeros((4, 4))
    heat[2, 2] = 1.0
    o = np.zeros((4, 4, 2))
    o[2, 2] = [0.0, -8.0]  # points two cells left at stride 4
    img = render_offset_arrows(heat, OffsetField(o, 4))
    assert img.shape == (16, 16, 3) and img.dtype == np.uint8
    assert tuple(img[10, 10]) == (255, 255, 255)
    assert tuple(img[10, 2]) == (0, 255, 255)
    assert img[0, 0].tolist() == [0, 0, 0]
