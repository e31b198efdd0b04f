import struct
import wave

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from avisam import io
from avisam.extractor import ExtractorConfig, ExtractorModel
from avisam.trainer import TrainConfig
from avisam.visual import synth_visual


@given(hnp.arrays(np.int16, st.integers(1, 400)))
def test_wav_roundtrip_is_byte_exact(tmp_path_factory, pcm):
    d = tmp_path_factory.mktemp("wav")
    samples = pcm.astype(np.float64) / 32768.0
    io.write_wav(d / "a.wav", samples)
    back = io.read_wav(d / "a.wav")
    np.testing.assert_array_equal(back, samples)
    io.write_wav(d / "b.wav", back)
    assert (d / "a.wav").read_bytes() == (d / "b.wav").read_bytes()


def test_pcm_conversion_clips():
    np.testing.assert_array_equal(io.to_pcm16([2.0, -2.0, 0.5]), [32767, -32768, 16384])


def _raw_wav(path, channels=1, width=2, rate=16000, frames=b"\x00\x00" * 4):
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(width)
        w.setframerate(rate)
        w.writeframes(frames)


@pytest.mark.parametrize("kw,msg", [({"channels": 2}, "channel"), ({"width": 1, "frames": b"\x00" * 4}, "16-bit"),
                                    ({"rate": 8000}, "Hz")])
def test_wav_format_checks(tmp_path, kw, msg):
    _raw_wav(tmp_path / "x.wav", **kw)
    with pytest.raises(io.WavFormatError, match=msg):
        io.read_wav(tmp_path / "x.wav")


def test_malformed_wav(tmp_path):
    (tmp_path / "bad.wav").write_bytes(b"RIFF\x00\x00")
    with pytest.raises(io.WavFormatError):
        io.read_wav(tmp_path / "bad.wav")


def _model():
    return ExtractorModel(ExtractorConfig(n_filters=8, d_emb=8, hidden=8, n_blocks=1))


def test_checkpoint_roundtrip_is_byte_exact(tmp_path):
    state = _model().state()
    state["extra.f64"] = np.arange(6, dtype=np.float64).reshape(2, 3)
    io.save_checkpoint(tmp_path / "a.ckpt", state)
    back = io.load_checkpoint(tmp_path / "a.ckpt")
    assert list(back) == list(state)
    for k in state:
        assert back[k].dtype == state[k].dtype
        np.testing.assert_array_equal(back[k], state[k])
    io.save_checkpoint(tmp_path / "b.ckpt", back)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_checkpoint_corruption_detected(tmp_path):
    io.save_checkpoint(tmp_path / "a.ckpt", {"w": np.ones(3, np.float32)})
    blob = (tmp_path / "a.ckpt").read_bytes()
    (tmp_path / "trail.ckpt").write_bytes(blob + b"\x00")
    (tmp_path / "short.ckpt").write_bytes(blob[:-1])
    (tmp_path / "magic.ckpt").write_bytes(b"X" + blob[1:])
    (tmp_path / "ver.ckpt").write_bytes(blob[:8] + struct.pack("<I", 99) + blob[12:])
    for name in ("trail", "short", "magic", "ver"):
        with pytest.raises(io.CheckpointError):
            io.load_checkpoint(tmp_path / f"{name}.ckpt")


def test_checkpoint_rejects_integer_arrays(tmp_path):
    with pytest.raises(io.CheckpointError):
        io.save_checkpoint(tmp_path / "a.ckpt", {"n": np.arange(3)})


def test_visual_roundtrip(tmp_path):
    vs = synth_visual([(0, 8000)], np.sin(np.arange(16000) * 0.1), identity_seed=77)
    io.write_visual(tmp_path / "v.vis", vs)
    back = io.read_visual(tmp_path / "v.vis")
    np.testing.assert_array_equal(back.frames, vs.frames)
    assert back.identity_seed == 77 and back.fps == 25
    (tmp_path / "t.vis").write_bytes((tmp_path / "v.vis").read_bytes()[:-4])
    with pytest.raises(ValueError):
        io.read_visual(tmp_path / "t.vis")


def test_config_roundtrip(tmp_path):
    cfg = TrainConfig(lr_max=2e-4, crop_seconds=1.0, grad_clip=None, adam_betas=(0.8, 0.99))
    io.write_config(tmp_path / "c.ini", {"train": vars(cfg)})
    back = io.coerce_dataclass(TrainConfig, io.read_config(tmp_path / "c.ini")["train"])
    assert back == cfg
    with pytest.raises(ValueError, match="unknown"):
        io.coerce_dataclass(TrainConfig, {"learning_rate": "1"})
    with pytest.raises(ValueError, match="batch_size"):
        io.coerce_dataclass(TrainConfig, {"batch_size": "eight"})


def test_manifest_and_table_roundtrip(tmp_path):
    recs = [{"id": "a", "x": [1, 2]}, {"id": "b", "x": []}]
    io.write_manifest(tmp_path / "m.jsonl", recs)
    assert list(io.iter_manifest(tmp_path / "m.jsonl")) == recs
    io.write_table(tmp_path / "t.csv", ["id", "v"], [{"id": "a,b", "v": 1}])
    assert io.read_table(tmp_path / "t.csv") == [{"id": "a,b", "v": "1"}]
    (tmp_path / "bad.jsonl").write_text("{not json\n")
    with pytest.raises(ValueError, match=":1:"):
        list(io.iter_manifest(tmp_path / "bad.jsonl"))


def test_shipped_desk_config_matches_directional_setup():
    from pathlib import Path

    from avisam.experiment import DirectionalSetup

    sections = io.read_config(Path(__file__).parents[1] / "configs" / "desk.ini")
    model = io.coerce_dataclass(ExtractorConfig, sections["model"])
    train = io.coerce_dataclass(TrainConfig, sections["train"])
    setup = DirectionalSetup()
    assert model == ExtractorConfig()
    assert (train.lr_max, train.warmup_n, train.crop_seconds) == (setup.lr_max, setup.warmup_n, setup.crop_seconds)
    assert train.time_budget_s == 60 * setup.budget_min
