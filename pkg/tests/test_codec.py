import numpy as np
import pytest
from hypothesis import given, strategies as st

from avisam.codec import Codec, GeometryError, LatentFrames, n_frames
from avisam.tensor import InputTooShortError, Tensor


@given(st.integers(40, 5000))
def test_frame_count_formula(L):
    T = n_frames(L, 40, 20)
    assert T == (L - 40) // 20 + 1
    assert 20 * (T - 1) + 40 <= L


def test_short_input_rejected():
    with pytest.raises(InputTooShortError):
        n_frames(39, 40, 20)


def test_encode_decode_shapes_and_rectification(rng):
    codec = Codec.init(16, 40, 20, rng, np.float64)
    wave = rng.standard_normal((3, 1000))
    lat = codec.encode(wave)
    assert lat.frames.shape == (3, 16, n_frames(1000, 40, 20))
    assert np.all(lat.frames.data >= 0)
    assert codec.decode(lat).shape == (3, 1000)


def test_latent_geometry_checked():
    with pytest.raises(GeometryError):
        LatentFrames(Tensor(np.zeros((4, 10))), 20, 40, 1000)


def test_decode_rejects_foreign_geometry(rng):
    a = Codec.init(8, 40, 20, rng, np.float64)
    b = Codec.init(8, 32, 16, rng, np.float64)
    with pytest.raises(GeometryError):
        b.decode(a.encode(rng.standard_normal(400)))


def test_decode_is_linear_in_latent(rng):
    codec = Codec.init(8, 40, 20, rng, np.float64)
    lat = codec.encode(rng.standard_normal(500))
    twice = LatentFrames(Tensor(2 * lat.frames.data), 20, 40, 500)
    np.testing.assert_allclose(codec.decode(twice).data, 2 * codec.decode(lat).data, rtol=1e-12)
