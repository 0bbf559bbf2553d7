import numpy as np
import pytest
import torch

from uqdm import checkpoint
from uqdm.data import (FormatError, encode_pnm, grid_index, grid_values, load_image, parse_pnm,
                       pixels_to_data, quantize_to_grid, save_image, swirl, synthetic_images)
from uqdm.diffusion import UQDM


def test_swirl_range_and_determinism():
    a = swirl(5000, 0)
    assert a.shape == (5000, 2)
    assert np.all(np.abs(a) <= 1.0)
    np.testing.assert_array_equal(a, swirl(5000, 0))
    raw_a, raw_b = swirl(5000, 0, levels=None), swirl(5000, 1, levels=None)
    assert not set(map(tuple, raw_a)) & set(map(tuple, raw_b))
    grid_index(a)  # on the 256-level grid


def test_swirl_radius_grows_with_angle():
    # replay the angle draws: radius follows the linear law up to the small noise
    from uqdm.data import SWIRL_EXTENT, SWIRL_TURNS
    theta = np.random.default_rng(3).uniform(0.0, SWIRL_TURNS, 2000)
    law = 0.15 + 0.85 * theta / SWIRL_TURNS
    r = np.hypot(*swirl(2000, 3, levels=None).T) * SWIRL_EXTENT
    assert np.max(np.abs(r - law)) < 0.06
    assert np.all(np.diff(law[np.argsort(theta)]) >= 0)


def test_swirl_rejects_empty():
    with pytest.raises(ValueError):
        swirl(0, 0)


def test_grid_levels():
    v = grid_values(256)
    assert quantize_to_grid(-1.0)[()] == v[0]
    assert quantize_to_grid(1.0)[()] == v[-1]
    np.testing.assert_array_equal(pixels_to_data(np.arange(256)), v)


def test_quantize_idempotent_and_half_cell_error(rng):
    x = rng.uniform(-1, 1, 100_000)
    q = quantize_to_grid(x, 256)
    np.testing.assert_array_equal(quantize_to_grid(q, 256), q)
    assert np.max(np.abs(q - x)) <= 1.0 / 256 + 1e-15
    for V in (2, 3, 17):
        qv = quantize_to_grid(x, V)
        assert np.max(np.abs(qv - x)) <= 1.0 / V + 1e-15


def test_quantize_rejects_out_of_range():
    with pytest.raises(ValueError):
        quantize_to_grid(np.array([1.01]))
    with pytest.raises(ValueError):
        quantize_to_grid(np.array([np.nan]))
    with pytest.raises(ValueError):
        grid_index(np.array([0.0]))


def test_pgm_example_header():
    img = parse_pnm(b"P5\n2 2\n255\n" + bytes([0, 64, 128, 255]))
    assert img.shape == (2, 2)
    assert img.tolist() == [[0, 64], [128, 255]]


def test_pnm_comments_and_rgb():
    img = parse_pnm(b"P6 # rgb\n# size next\n1 2\n255\n" + bytes(range(6)))
    assert img.shape == (2, 1, 3)


def test_truncated_raster_names_offset():
    with pytest.raises(FormatError, match="offset 11"):
        parse_pnm(b"P5\n2 2\n255\n" + bytes([1, 2]))


def test_pnm_rejections():
    with pytest.raises(FormatError):
        parse_pnm(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(FormatError):
        parse_pnm(b"P5\n2 2\n65535\n" + bytes(8))
    with pytest.raises(FormatError):
        parse_pnm(b"P5\n2 2")


def test_image_round_trip(tmp_path):
    path = tmp_path / "a.pgm"
    raw = b"P5\n2 2\n255\n" + bytes([9, 8, 7, 6])
    path.write_bytes(raw)
    img = load_image(path)
    save_image(tmp_path / "b.pgm", img)
    assert (tmp_path / "b.pgm").read_bytes() == raw
    rgb = synthetic_images(1, 0, 4)[0][..., None].repeat(3, axis=2)
    assert np.array_equal(parse_pnm(encode_pnm(rgb)), rgb)


def test_synthetic_images_deterministic():
    a = synthetic_images(4, 7)
    assert a.dtype == np.uint8 and a.shape == (4, 16, 16)
    np.testing.assert_array_equal(a, synthetic_images(4, 7))


def test_checkpoint_round_trip_and_digest(tmp_path):
    torch.manual_seed(0)
    m = UQDM(2, T=3, hidden=16)
    with torch.no_grad():
        m.denoiser.head.weight.normal_()
    path = tmp_path / "m.ckpt"
    digest = checkpoint.save(m, path)
    back = checkpoint.load(path)
    assert checkpoint.to_bytes(back) == path.read_bytes()
    assert checkpoint.model_digest(back) == digest
    for k, v in m.state_dict().items():
        assert torch.equal(back.state_dict()[k], v.to(torch.float64))
    assert back.config == m.config


def test_digest_changes_on_single_weight_byte():
    torch.manual_seed(0)
    buf = bytearray(checkpoint.to_bytes(UQDM(2, T=2, hidden=8)))
    base = checkpoint.digest(bytes(buf))
    buf[-3] ^= 1
    assert checkpoint.digest(bytes(buf)) != base


def test_checkpoint_rejections():
    buf = checkpoint.to_bytes(UQDM(2, T=2, hidden=8))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(b"NOTACKPT" + buf[8:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(buf[:-8])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(buf + b"\0")
    bad_version = buf[:8] + b"\x02\x00" + buf[10:]
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(bad_version)
