import numpy as np
import pytest
import torch

from conftest import tiny_config
from voxsr.errors import NumericalError
from voxsr.field import make_hr_grid, trilinear_interpolate
from voxsr.inference import SRRequest, encode_tiled, super_resolve
from voxsr.networks import encoder_forward, init_model
from voxsr.volume_io import Volume


@pytest.fixture
def lr_volume(rng):
    return Volume(rng.random((6, 7, 5)), (2.0, 2.0, 3.0))


@pytest.mark.parametrize("k,shape", [(2, (12, 14, 10)), (2.5, (15, 17, 12)), (3, (18, 21, 15)),
                                     (3.5, (21, 24, 17)), (4, (24, 28, 20)), (1, (6, 7, 5))])
def test_floor_rule_shapes(tiny_model, lr_volume, k, shape):
    assert super_resolve(tiny_model, lr_volume, SRRequest(k)).shape == shape


def test_non_integer_scale(tiny_model, rng):
    assert super_resolve(tiny_model, Volume(rng.random((10, 10, 10))), SRRequest(3.2)).shape == (32, 32, 32)


def test_chunk_invariance_bitwise(tiny_model, lr_volume):
    ref = super_resolve(tiny_model, lr_volume, SRRequest(2.5, chunk_size=4096)).data
    for chunk in (1, 7, 256, 1000):
        out = super_resolve(tiny_model, lr_volume, SRRequest(2.5, chunk_size=chunk)).data
        assert out.tobytes() == ref.tobytes(), chunk


def test_matches_pointwise_pipeline(tiny_model, lr_volume):
    """Chunked reconstruction equals interpolate+decode over the HR grid (up to GEMM rounding)."""
    out = super_resolve(tiny_model, lr_volume, SRRequest(2))
    with torch.no_grad():
        grid = encoder_forward(tiny_model, lr_volume)
        batch = make_hr_grid(lr_volume.shape, 2)
        ref = tiny_model.decode(batch.coords, trilinear_interpolate(grid, batch))
    np.testing.assert_allclose(out.data.ravel(), ref.numpy(), rtol=1e-5, atol=1e-6)


def test_deterministic(tiny_model, lr_volume):
    a = super_resolve(tiny_model, lr_volume, SRRequest(3))
    b = super_resolve(tiny_model, lr_volume, SRRequest(3))
    assert a.data.tobytes() == b.data.tobytes()


def test_monotone_shapes(tiny_model, lr_volume):
    prev = None
    for k in np.linspace(1, 4, 13):
        shape = super_resolve(tiny_model, lr_volume, SRRequest(float(k), chunk_size=65536)).shape
        if prev is not None:
            assert all(a <= b for a, b in zip(prev, shape))
        prev = shape


def test_voxel_size_follows_realized_ratio(tiny_model, lr_volume):
    out = super_resolve(tiny_model, lr_volume, SRRequest(2.5))
    # (6,7,5) -> (15,17,12)
    assert out.voxel_size_mm == pytest.approx((2.0 * 6 / 15, 2.0 * 7 / 17, 3.0 * 5 / 12), rel=1e-6)


def test_clamp(lr_volume):
    m = init_model(tiny_config(), 0)
    with torch.no_grad():
        m.decoder.layers[-1].bias.fill_(5.0)
    raw = super_resolve(m, lr_volume, SRRequest(2))
    assert raw.data.max() > 1
    clamped = super_resolve(m, lr_volume, SRRequest(2, clamp_output=True))
    assert clamped.data.min() >= 0 and clamped.data.max() <= 1
    np.testing.assert_array_equal(clamped.data, np.clip(raw.data, 0, 1))


def test_non_finite_output(lr_volume):
    m = init_model(tiny_config(), 0)
    with torch.no_grad():
        m.decoder.layers[-1].bias.fill_(float("inf"))
    with pytest.raises(NumericalError):
        super_resolve(m, lr_volume, SRRequest(2))


@pytest.mark.parametrize("variant", ["rdn", "srresnet_style", "rescnn_style"])
def test_tiled_encoding_matches_whole(variant, rng):
    m = init_model(tiny_config(variant), 0)
    lr = Volume(rng.random((13, 11, 9)))
    with torch.no_grad():
        whole = encoder_forward(m, lr).features
        tiled = encode_tiled(m, lr, core=4).features
    torch.testing.assert_close(tiled, whole, rtol=1e-5, atol=1e-5)


def test_memory_budget_path(tiny_model, rng):
    lr = Volume(rng.random((12, 12, 12)))
    full = super_resolve(tiny_model, lr, SRRequest(2))
    budget = super_resolve(tiny_model, lr, SRRequest(2, max_encode_voxels=1000))
    np.testing.assert_allclose(budget.data, full.data, rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("kw", [dict(scale=0.5), dict(scale=2, chunk_size=0)])
def test_request_validation(kw):
    with pytest.raises(ValueError):
        SRRequest(**kw)
