import math

import numpy as np
import pytest
import torch

from uqdm import evaluation as ev
from uqdm.data import swirl
from uqdm.diffusion import UQDM


def test_psnr_examples():
    x = np.zeros(100)
    assert ev.psnr(x, x) == float("inf")
    assert ev.psnr(np.zeros(4), np.ones(4), peak=255) == pytest.approx(48.1308036, abs=1e-6)
    a, b = np.random.default_rng(0).normal(size=(2, 50))
    assert ev.psnr(2 * a, 2 * b, peak=4.0) == pytest.approx(ev.psnr(a, b, peak=2.0), abs=1e-12)
    with pytest.raises(ValueError):
        ev.psnr(np.zeros(3), np.zeros(4))


def test_sw_identity_and_symmetry(rng):
    a = rng.normal(size=(500, 2))
    b = rng.normal(size=(500, 2)) + 0.3
    assert ev.sliced_wasserstein(a, a) == 0.0
    assert ev.sliced_wasserstein(a, b) == ev.sliced_wasserstein(b, a)


def test_sw_shifted_gaussians_1d(rng):
    a = rng.normal(size=(200_000, 1))
    b = rng.normal(size=(200_000, 1)) + 0.7
    assert ev.sliced_wasserstein(a, b, n_projections=4) == pytest.approx(0.7, abs=0.01)


def test_sw_rotation_invariance(rng):
    a = rng.normal(size=(2000, 2)) * [1.0, 0.3]
    b = rng.normal(size=(2000, 2)) * [0.5, 0.5] + [0.2, 0.0]
    th = 0.9
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    d0 = ev.sliced_wasserstein(a, b, n_projections=2048)
    d1 = ev.sliced_wasserstein(a @ rot.T, b @ rot.T, n_projections=2048)
    assert d1 == pytest.approx(d0, rel=0.05)


def test_sw_errors():
    with pytest.raises(ValueError):
        ev.sliced_wasserstein(np.zeros((0, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        ev.sliced_wasserstein(np.zeros((3, 2)), np.zeros((3, 2)), n_projections=0)


def test_sw_unequal_sizes(rng):
    a = rng.normal(size=(1000, 2))
    assert ev.sliced_wasserstein(a, a[::2]) < 0.1


def test_progressive_curve_shape():
    torch.manual_seed(0)
    m = UQDM(2, T=3, hidden=16)
    x = swirl(256, 0)
    rows = ev.progressive_curve(m, x)
    assert [r["step"] for r in rows] == [0, 1, 2, 3, 4]
    bits = [r["bits_cum"] for r in rows]
    assert bits[0] == 0 and bits == sorted(bits)
    assert rows[-1]["psnr"] == float("inf") and rows[-1]["sw"] == 0.0


def test_sweep_csv_regenerates(tmp_path):
    cfg = ev.SweepConfig(T_values=[2], variances=["fixed", "learned"], steps=5, eval_points=64,
                         cache_dir=None)
    a = ev.sweep_T("swirl", cfg, tmp_path / "a.csv")
    b = ev.sweep_T("swirl", cfg, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_text() == (tmp_path / "b.csv").read_text()
    header = (tmp_path / "a.csv").read_text().splitlines()[0]
    assert header == ",".join(ev.CSV_COLUMNS)
    assert len(a) == 2 * 4
    with pytest.raises(ValueError):
        ev.sweep_T("cifar", cfg)


def test_train_swirl_cache(tmp_path):
    a = ev.train_swirl(2, "learned", 3, cache_dir=tmp_path, hidden=8)
    assert sorted(p.suffix for p in tmp_path.iterdir()) == [".ckpt", ".json"]
    assert ev.training_log(next(tmp_path.glob("*.ckpt")))["seconds"] > 0
    b = ev.train_swirl(2, "learned", 3, cache_dir=tmp_path, hidden=8)
    for k, v in a.state_dict().items():
        assert torch.equal(v, b.state_dict()[k])
