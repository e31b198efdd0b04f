"""Learned time-domain analysis / synthesis filterbank."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import InputTooShortError, Tensor

SAMPLE_RATE = 16000


class GeometryError(ValueError):
    pass


def n_frames(source_len: int, kernel_len: int, stride: int) -> int:
    if source_len < kernel_len:
        raise InputTooShortError(f"input of {source_len} samples is shorter than kernel {kernel_len}")
    return (source_len - kernel_len) // stride + 1


@dataclass
class LatentFrames:
    frames: Tensor  # [..., N, T_frames]
    frame_stride: int
    kernel_len: int
    source_len: int

    def __post_init__(self):
        expected = n_frames(self.source_len, self.kernel_len, self.frame_stride)
        if self.frames.shape[-1] != expected:
            raise GeometryError(
                f"{self.frames.shape[-1]} frames recorded, geometry "
                f"({self.source_len}, {self.kernel_len}, {self.frame_stride}) implies {expected}"
            )


@dataclass
class Codec:
    analysis: Tensor   # [N, 1, L]
    synthesis: Tensor  # [N, L]
    stride: int

    @property
    def kernel_len(self) -> int:
        return self.analysis.shape[-1]

    @property
    def n_filters(self) -> int:
        return self.analysis.shape[0]

    @classmethod
    def init(cls, n_filters: int, kernel_len: int, stride: int, rng: np.random.Generator, dtype=np.float32):
        scale = 1.0 / np.sqrt(kernel_len)
        analysis = Tensor(rng.normal(0, scale, (n_filters, 1, kernel_len)), requires_grad=True, dtype=dtype)
        synthesis = Tensor(rng.normal(0, scale, (n_filters, kernel_len)), requires_grad=True, dtype=dtype)
        return cls(analysis, synthesis, stride)

    def parameters(self) -> dict[str, Tensor]:
        return {"codec.analysis": self.analysis, "codec.synthesis": self.synthesis}

    def encode(self, wave) -> LatentFrames:
        """Rectified learned filterbank: [..., T] -> frames [..., N, T_frames]."""
        w = wave if isinstance(wave, Tensor) else Tensor(np.asarray(wave, dtype=self.analysis.dtype))
        x = tn.reshape(w, w.shape[:-1] + (1, w.shape[-1]))
        frames = tn.relu(tn.conv1d(x, self.analysis, self.stride))
        return LatentFrames(frames, self.stride, self.kernel_len, w.shape[-1])

    def decode(self, latent: LatentFrames) -> Tensor:
        """Overlap-add synthesis back to ``latent.source_len`` samples."""
        if latent.kernel_len != self.kernel_len or latent.frame_stride != self.stride:
            raise GeometryError(
                f"latent geometry (L={latent.kernel_len}, stride={latent.frame_stride}) does not "
                f"match codec (L={self.kernel_len}, stride={self.stride})"
            )
        if latent.frames.shape[-2] != self.n_filters:
            raise GeometryError(f"latent has {latent.frames.shape[-2]} channels, codec has {self.n_filters}")
        return tn.conv_transpose1d(latent.frames, self.synthesis, self.stride, latent.source_len)
