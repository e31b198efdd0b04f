"""Synthetic per-speaker visual streams and the visual encoder.

A stream stands in for a tracked face: every 40 ms frame carries a fixed
identity code, the speaker's smoothed log-energy (a speech activity cue) and a
few low-amplitude noise channels.  The energy is measured on the
level-normalized source, so a stream reveals *when* its speaker talks but not
how loud that speaker is in the mixture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor

FPS = 25
ID_DIM = 8
NOISE_DIM = 3
VIS_DIM = ID_DIM + 1 + NOISE_DIM
ENERGY_FLOOR = 1e-4
BASELINE = 0.0
_SMOOTH = np.array([0.25, 0.5, 0.25])


class AlignmentError(ValueError):
    pass


@dataclass
class VisualStream:
    frames: np.ndarray  # [T_video, d_vis]
    identity_seed: int
    fps: int = FPS

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def energy(self) -> np.ndarray:
        return self.frames[:, ID_DIM]


def video_frames_for(n_samples: int, sample_rate: int = 16000) -> int:
    return math.ceil(n_samples * FPS / sample_rate)


def identity_code(identity_seed: int) -> np.ndarray:
    return np.random.default_rng([int(identity_seed), 1]).normal(0.0, 0.5, ID_DIM)


def frame_log_energy(wave: np.ndarray, sample_rate: int = 16000) -> np.ndarray:
    """Per video frame log10 power, zero-padded at the tail."""
    hop = sample_rate // FPS
    n = video_frames_for(len(wave), sample_rate)
    padded = np.zeros(n * hop)
    padded[: len(wave)] = wave
    power = np.mean(padded.reshape(n, hop) ** 2, axis=1)
    return np.log10(power + ENERGY_FLOOR)


def synth_visual(intervals: Sequence[tuple[int, int]], source_wave, identity_seed: int,
                 sample_rate: int = 16000, noise_seed: int | None = None) -> VisualStream:
    """Build the stand-in face stream for one speaker."""
    wave = np.asarray(source_wave, dtype=np.float64)
    hop = sample_rate // FPS
    n = video_frames_for(len(wave), sample_rate)
    active = np.zeros(len(wave), dtype=bool)
    for a, b in intervals:
        if b > len(wave):
            raise AlignmentError(f"interval ({a}, {b}) exceeds waveform of {len(wave)} samples")
        active[a:b] = True
    frame_active = np.zeros(n * hop, dtype=bool)
    frame_active[: len(wave)] = active
    frame_active = frame_active.reshape(n, hop).any(axis=1)

    energy = np.full(n, BASELINE)
    if active.any() and np.any(wave[active]):
        level = np.mean(wave[active] ** 2)
        log_e = frame_log_energy(wave / np.sqrt(level), sample_rate)
        # rescale so silence sits at 0 and a typical active frame near 1
        rel = (log_e - np.log10(ENERGY_FLOOR)) / -np.log10(ENERGY_FLOOR)
        smooth = np.convolve(np.pad(rel, 1, mode="edge"), _SMOOTH, mode="valid")
        energy = np.where(frame_active, smooth, BASELINE)

    nrng = np.random.default_rng([int(identity_seed if noise_seed is None else noise_seed), 2])
    noise = nrng.normal(0.0, 0.05, (n, NOISE_DIM))
    ident = np.broadcast_to(identity_code(identity_seed), (n, ID_DIM))
    frames = np.concatenate([ident, energy[:, None], noise], axis=1)
    return VisualStream(frames.astype(np.float32), int(identity_seed))


@dataclass
class VisualEncoder:
    w_in: Tensor
    b_in: Tensor
    rnn: tn.RecurrentParams

    @classmethod
    def init(cls, d_vis: int, d_emb: int, rng: np.random.Generator, dtype=np.float32):
        if d_emb % 2:
            raise ValueError("d_emb must be even for the bidirectional visual encoder")
        w = Tensor(rng.normal(0, 1 / np.sqrt(d_vis), (d_vis, d_emb)), requires_grad=True, dtype=dtype)
        b = Tensor(np.zeros(d_emb), requires_grad=True, dtype=dtype)
        rnn = tn.RecurrentParams(tn.init_gru(d_emb, d_emb // 2, rng, dtype), tn.init_gru(d_emb, d_emb // 2, rng, dtype))
        return cls(w, b, rnn)

    def parameters(self, prefix: str = "visual") -> dict[str, Tensor]:
        out = {f"{prefix}.w_in": self.w_in, f"{prefix}.b_in": self.b_in}
        names = ("w_x", "w_h", "b_x", "b_h")
        for direction, g in (("fwd", self.rnn.forward), ("bwd", self.rnn.backward)):
            for nm, t in zip(names, g.tensors()):
                out[f"{prefix}.rnn.{direction}.{nm}"] = t
        return out


def upsample_factor(frame_rate: float) -> int:
    ratio = frame_rate / FPS
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError(f"audio frame rate {frame_rate}/s is not an integer multiple of {FPS} fps")
    return int(round(ratio))


def encode_visual(frames, encoder: VisualEncoder, frame_rate: float = 800.0, n_frames: int | None = None) -> Tensor:
    """Visual embedding [..., T_audio, d_emb] at the audio latent frame rate.

    ``frames`` is a VisualStream, an array [T_video, d_vis] or a stacked array
    [S, T_video, d_vis].  Upsampling repeats each video frame; ``n_frames``
    trims (or edge-extends) the result to a given audio frame count.
    """
    if isinstance(frames, VisualStream):
        frames = frames.frames
    factor = upsample_factor(frame_rate)
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=encoder.w_in.dtype))
    h = tn.tanh(tn.linear(x, encoder.w_in, encoder.b_in))
    h = tn.recurrent_layer(h, encoder.rnn, "bidirectional")
    up = tn.repeat(h, factor, axis=-2)
    if n_frames is None:
        return up
    have = up.shape[-2]
    if have >= n_frames:
        return up[..., :n_frames, :]
    tail = tn.repeat(up[..., have - 1:have, :], n_frames - have, axis=-2)
    return tn.concat([up, tail], axis=-2)
