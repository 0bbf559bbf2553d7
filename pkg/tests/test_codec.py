import struct
import subprocess
import sys

import numpy as np
import pytest
import torch

from uqdm import checkpoint, codec
from uqdm.data import grid_values, pixels_to_data, swirl, synthetic_images
from uqdm.diffusion import UQDM


def perturbed(model_seed=0, data_dim=2, T=4, hidden=32, **kw):
    """Untrained model with a random output layer, so predictions are not trivial."""
    torch.manual_seed(model_seed)
    m = UQDM(data_dim, T=T, hidden=hidden, **kw)
    with torch.no_grad():
        m.denoiser.head.weight.normal_(0.0, 0.05)
    return checkpoint.from_bytes(checkpoint.to_bytes(m))


@pytest.fixture(scope="module")
def model():
    return perturbed()


@pytest.fixture(scope="module")
def image_model():
    return perturbed(data_dim=256, T=3, hidden=32)


def test_lossless_swirl(model):
    for seed in range(10):
        x = swirl(100, seed)
        out = codec.decompress(codec.compress(x, model, seed), model)
        assert not out.lossy
        np.testing.assert_array_equal(out.x, x)


def test_lossless_images(image_model):
    imgs = pixels_to_data(synthetic_images(16, 5))
    stream = codec.compress(imgs, image_model, 3)
    out = codec.decompress(stream, image_model)
    np.testing.assert_array_equal(out.x, imgs)
    assert out.x.shape == (16, 16, 16)


def test_lossless_extreme_values(model):
    v = grid_values(256)
    x = np.array([[v[0], v[-1]], [v[-1], v[0]], [v[127], v[128]]])
    np.testing.assert_array_equal(codec.decompress(codec.compress(x, model, 0), model).x, x)


def test_deterministic(model):
    x = swirl(64, 1)
    assert codec.compress(x, model, 9) == codec.compress(x, model, 9)
    assert codec.compress(x, model, 9) != codec.compress(x, model, 10)


def test_header_round_trip(model):
    x = swirl(8, 0)
    buf = codec.compress(x, model, 2**63 + 5, recon="flow")
    h = codec.read_header(buf)
    assert h.shape == (8, 2) and h.T == 4 and h.levels == 256 and h.data_dim == 2
    assert h.seed == 2**63 + 5
    assert h.recon_mode == "flow"
    assert h.flags & codec.FLAG_LEARNED
    assert h.digest == checkpoint.model_digest(model)
    assert h.gamma_min == model.schedule.frozen().gamma_min


def test_prefixes_decode_consistent_latents(model):
    x = swirl(50, 4)
    buf = codec.compress(x, model, 1)
    full = codec.decode_latents(buf, model)
    assert len(full) == model.T + 1
    co = {k: v.detach().numpy() for k, v in model.coefficients().items()}
    for t in range(model.T, 0, -1):
        # decoded z_{t-1} is within half a cell of the encoder's target mean
        mu_q = co["b"][t] * full[model.T - t] + co["c"][t] * x
        assert np.all(np.abs(full[model.T - t + 1] - mu_q) <= co["delta"][t] / 2 + 1e-9)
    prof = codec.rate_profile(buf)
    cut = prof["header_bits"] // 8
    for j, bits in enumerate(prof["step_bits"]):
        cut += bits // 8
        part = codec.decode_latents(buf[:cut], model)
        assert len(part) == j + 2
        for a, b in zip(part, full):
            np.testing.assert_array_equal(a, b)


def test_truncation_mid_chunk(model):
    x = swirl(40, 2)
    buf = codec.compress(x, model, 0)
    prof = codec.rate_profile(buf)
    two_chunks = (prof["header_bits"] + sum(prof["step_bits"][:2])) // 8
    out = codec.decompress(buf[: two_chunks + 3], model)
    assert out.lossy and out.t == model.T - 2
    assert out.bits_received == 8 * two_chunks
    assert np.all(np.abs(out.x) <= 1.0)


def test_stop_at_T_is_zero_bit_point(model):
    x = swirl(40, 2)
    buf = codec.compress(x, model, 0)
    header_only = buf[: codec.rate_profile(buf)["header_bits"] // 8]
    a = codec.decompress(buf, model, stop_at=model.T)
    b = codec.decompress(header_only, model)
    assert a.t == b.t == model.T
    np.testing.assert_array_equal(a.x, b.x)
    assert a.bits_received == len(header_only) * 8


@pytest.mark.parametrize("mode", ["denoise", "ancestral", "flow"])
def test_lossy_modes_stay_on_grid(model, mode):
    x = swirl(40, 2)
    buf = codec.compress(x, model, 0)
    out = codec.decompress(buf, model, stop_at=2, recon=mode)
    assert out.lossy and out.t == 2 and out.x.shape == x.shape
    np.testing.assert_array_equal(grid_values(256)[np.rint((out.x + 1) * 128 - 0.5).astype(int)], out.x)


def test_stop_at_zero_is_lossy_but_close(model):
    x = swirl(40, 2)
    out = codec.decompress(codec.compress(x, model, 0), model, stop_at=0)
    assert out.lossy and out.t == 0


def test_rejects_wrong_weights(model):
    buf = codec.compress(swirl(8, 0), model, 0)
    other = perturbed(model_seed=1)
    with pytest.raises(codec.DigestMismatch):
        codec.decompress(buf, other)


def test_rejects_garbage_and_bad_stop(model):
    buf = codec.compress(swirl(8, 0), model, 0)
    with pytest.raises(codec.CodecError):
        codec.decompress(b"JUNK" + buf[4:], model)
    with pytest.raises(codec.CodecError):
        codec.decompress(buf[:20], model)
    with pytest.raises(ValueError):
        codec.decompress(buf, model, stop_at=model.T + 1)
    hdr = codec.rate_profile(buf)["header_bits"] // 8
    corrupt = bytearray(buf)
    corrupt[hdr + 6] ^= 0xFF
    with pytest.raises(codec.CodecError):
        codec.decompress(bytes(corrupt), model)


def test_rejects_off_grid_and_ragged(model):
    with pytest.raises(ValueError):
        codec.compress(np.array([[0.5, 0.1]]), model, 0)
    with pytest.raises(codec.CodecError):
        codec.compress(grid_values(256)[:3], model, 0)


def test_rate_profile_accounting(model):
    buf = codec.compress(swirl(64, 3), model, 0)
    prof = codec.rate_profile(buf)
    assert len(prof["step_bits"]) == model.T
    assert prof["header_bits"] + sum(prof["step_bits"]) + prof["tail_bits"] == 8 * len(buf)
    assert prof["total_bits"] == 8 * len(buf)


def test_empty_data_gives_header_only_stream(model):
    buf = codec.compress(np.zeros((0, 2)), model, 0)
    prof = codec.rate_profile(buf)
    assert prof["step_bits"] == [] and prof["tail_bits"] == 0
    assert prof["header_bits"] == 8 * len(buf)
    out = codec.decompress(buf, model)
    assert out.x.shape == (0, 2) and not out.lossy


def test_fixed_variance_step_rate_floor():
    m = perturbed(variance="fixed", T=3)
    x = swirl(2048, 0)
    prof = codec.rate_profile(codec.compress(x, m, 0))
    for bits in prof["step_bits"]:
        assert (bits - 32) / x.size >= 1.0 / 3.0 - 0.02


def test_gaussian_density_round_trip():
    m = perturbed(density="gaussian")
    x = swirl(30, 1)
    buf = codec.compress(x, m, 0)
    assert codec.read_header(buf).flags & codec.FLAG_GAUSSIAN
    np.testing.assert_array_equal(codec.decompress(buf, m).x, x)


DECODER = """
import sys, numpy as np
from uqdm import checkpoint, codec
m = checkpoint.load(sys.argv[1])
out = codec.decompress(open(sys.argv[2], "rb").read(), m)
np.save(sys.argv[3], out.x)
"""


def test_independent_decoder_process(tmp_path, model):
    ckpt = tmp_path / "m.ckpt"
    checkpoint.save(model, ckpt)
    x = swirl(200, 8)
    stream = tmp_path / "s.uqdm"
    stream.write_bytes(codec.compress(x, checkpoint.load(ckpt), 4))
    subprocess.run([sys.executable, "-c", DECODER, str(ckpt), str(stream), str(tmp_path / "x.npy")],
                   check=True)
    np.testing.assert_array_equal(np.load(tmp_path / "x.npy"), x)
