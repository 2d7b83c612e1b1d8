import math

import numpy as np

from styleretouch.decoder import lattice
from styleretouch.plotting import (plot_image_strip, plot_loss_curve, plot_lut_curves, plot_metric_distribution,
                                   plot_retrieval)
from styleretouch.rar import Neighbor

PNG = b"\x89PNG"


def test_figures_are_png_and_reproducible(tmp_path):
    hist = [(i, 1.0 / i) for i in range(1, 200)]
    rows = [{"psnr": 30.0 + i, "ssim": 0.9} for i in range(5)] + [{"psnr": math.inf, "ssim": 1.0}]
    nb = [Neighbor(0, 4, 0.9), Neighbor(1, 2, 0.7)]
    imgs = [np.random.default_rng(i).random((8, 8, 3)) for i in range(3)]
    for run in ("a", "b"):
        plot_loss_curve(hist, tmp_path / f"loss_{run}.png")
        plot_metric_distribution(rows, tmp_path / f"m_{run}.png")
        plot_retrieval(nb, [0.88, 0.12], tmp_path / f"r_{run}.png")
        plot_image_strip(imgs, ["x", "y", "out"], tmp_path / f"s_{run}.png")
        plot_lut_curves(lattice(5), tmp_path / f"l_{run}.png")
    for stem in ("loss", "m", "r", "s", "l"):
        a = (tmp_path / f"{stem}_a.png").read_bytes()
        assert a.startswith(PNG)
        assert a == (tmp_path / f"{stem}_b.png").read_bytes()


def test_all_infinite_psnr(tmp_path):
    plot_metric_distribution([{"psnr": math.inf, "ssim": 1.0}], tmp_path / "m.png")
    assert (tmp_path / "m.png").read_bytes().startswith(PNG)
