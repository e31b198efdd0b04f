import numpy as np
import pytest
from hypothesis import given, strategies as st

from avisam.mixsim import synth_speech_like
from avisam.visual import (BASELINE, ID_DIM, VIS_DIM, AlignmentError, VisualEncoder, encode_visual,
                           synth_visual, upsample_factor, video_frames_for)


def _stream(level=1.0, seed=3):
    wave = synth_speech_like(seed, 1.0) * level
    wave[8000:] = 0.0
    return synth_visual([(0, 8000)], wave, identity_seed=seed)


def test_layout_and_frame_count():
    vs = _stream()
    assert vs.frames.shape == (video_frames_for(16000), VIS_DIM) == (25, 12)
    assert np.all(vs.frames[:, :ID_DIM] == vs.frames[0, :ID_DIM])


def test_inactive_frames_sit_at_baseline():
    vs = _stream()
    assert np.all(vs.energy[13:] == BASELINE)
    assert np.all(vs.energy[:12] > 0.3)


def test_energy_ignores_level():
    np.testing.assert_allclose(_stream(1.0).energy, _stream(0.01).energy, atol=1e-5)


def test_identity_differs_between_speakers():
    assert not np.allclose(_stream(seed=1).frames[0, :ID_DIM], _stream(seed=2).frames[0, :ID_DIM])


def test_interval_past_end_rejected():
    with pytest.raises(AlignmentError):
        synth_visual([(0, 20000)], np.ones(16000), 0)


@given(st.integers(1, 40000))
def test_video_frame_count_covers_audio(n):
    f = video_frames_for(n)
    assert (f - 1) * 640 < n <= f * 640


def test_upsample_factor():
    assert upsample_factor(800.0) == 32
    with pytest.raises(ValueError):
        upsample_factor(810.0)


def test_encode_visual_trims_and_extends(rng):
    enc = VisualEncoder.init(VIS_DIM, 8, rng, np.float64)
    frames = _stream().frames
    assert encode_visual(frames, enc).shape == (25 * 32, 8)
    assert encode_visual(frames, enc, n_frames=799).shape == (799, 8)
    ext = encode_visual(frames, enc, n_frames=805).data
    np.testing.assert_array_equal(ext[800:], np.repeat(ext[799:800], 5, axis=0))


def test_encode_visual_repeats_each_video_frame(rng):
    enc = VisualEncoder.init(VIS_DIM, 8, rng, np.float64)
    out = encode_visual(_stream().frames, enc).data
    np.testing.assert_array_equal(out[:32], np.repeat(out[:1], 32, axis=0))
    assert not np.array_equal(out[31], out[32])
