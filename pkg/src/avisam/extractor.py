"""Dual-path audio-visual speaker extractor with inter-speaker attention.

All on-screen speakers of a mixture are processed as rows of one batch.  Each
of the R repeated blocks runs a dual-path recurrent stage on every row
independently, then the inter-speaker attention module (ISAM) lets each row
attend to the other rows of the same mixture, frame by frame.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .codec import Codec, SAMPLE_RATE, n_frames as latent_frames
from .tensor import Tensor
from .visual import VIS_DIM, AlignmentError, VisualEncoder, VisualStream, encode_visual


class ConfigError(ValueError):
    pass


@dataclass
class ExtractorConfig:
    n_filters: int = 64
    kernel_len: int = 40
    stride: int = 20
    d_emb: int = 64
    hidden: int = 64
    n_blocks: int = 2
    chunk_size: int = 50
    chunk_hop: int = 25
    d_vis: int = VIS_DIM
    sample_rate: int = SAMPLE_RATE
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError("n_blocks must be >= 1")
        if self.chunk_size % 2:
            raise ConfigError(f"chunk_size must be even, got {self.chunk_size}")
        if self.chunk_hop != self.chunk_size // 2:
            raise ConfigError("chunk_hop must be half of chunk_size")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.stride

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


# -- chunking -------------------------------------------------------------------

def n_chunks(T: int, chunk_size: int, hop: int) -> int:
    return 1 + -(-(T + 2 * hop - chunk_size) // hop)


def segment_chunks(x: Tensor, chunk_size: int, hop: int) -> Tensor:
    """[..., T, d] -> [..., n_chunks, chunk_size, d] with 50 % overlap.

    The sequence is padded by ``hop`` zeros in front and at least ``hop`` at
    the back, so every original frame falls in exactly two chunks.
    """
    if chunk_size % 2 or hop * 2 != chunk_size:
        raise ConfigError(f"need an even chunk size with hop = chunk/2, got ({chunk_size}, {hop})")
    *lead, T, d = x.shape
    C = n_chunks(T, chunk_size, hop)
    Tp = hop * (C + 1)
    padded = np.zeros((*lead, Tp, d), dtype=x.dtype)
    padded[..., hop: hop + T, :] = x.data
    halves = padded.reshape(*lead, C + 1, hop, d)
    out = np.concatenate([halves[..., :-1, :, :], halves[..., 1:, :, :]], axis=-2)

    def bw(g):
        gh = np.zeros((*lead, C + 1, hop, d), dtype=g.dtype)
        gh[..., :-1, :, :] += g[..., :hop, :]
        gh[..., 1:, :, :] += g[..., hop:, :]
        return (gh.reshape(*lead, Tp, d)[..., hop: hop + T, :],)

    return tn._make(out, (x,), bw)


def merge_chunks(chunks: Tensor, T: int, hop: int) -> Tensor:
    """Inverse of :func:`segment_chunks`: overlap-add divided by coverage (2)."""
    *lead, C, K, d = chunks.shape
    if K != 2 * hop:
        raise ConfigError(f"chunk length {K} does not match hop {hop}")
    cd = chunks.data
    acc = np.zeros((*lead, C + 1, hop, d), dtype=cd.dtype)
    acc[..., :-1, :, :] += cd[..., :hop, :]
    acc[..., 1:, :, :] += cd[..., hop:, :]
    out = acc.reshape(*lead, (C + 1) * hop, d)[..., hop: hop + T, :] * 0.5

    def bw(g):
        full = np.zeros((*lead, (C + 1) * hop, d), dtype=g.dtype)
        full[..., hop: hop + T, :] = g * 0.5
        gh = full.reshape(*lead, C + 1, hop, d)
        return (np.concatenate([gh[..., :-1, :, :], gh[..., 1:, :, :]], axis=-2),)

    return tn._make(np.ascontiguousarray(out), (chunks,), bw)


# -- parameter containers ---------------------------------------------------------

def _param(rng, shape, scale, dtype) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True, dtype=dtype)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True, dtype=dtype)


def _ones(shape, dtype) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True, dtype=dtype)


@dataclass
class PathStage:
    rnn: tn.RecurrentParams
    w_proj: Tensor
    b_proj: Tensor
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, d: int, hidden: int, rng, dtype):
        rnn = tn.RecurrentParams(tn.init_gru(d, hidden, rng, dtype), tn.init_gru(d, hidden, rng, dtype))
        return cls(rnn, _param(rng, (2 * hidden, d), 1 / np.sqrt(2 * hidden), dtype),
                   _zeros(d, dtype), _ones(d, dtype), _zeros(d, dtype))

    def named(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for direction, g in (("fwd", self.rnn.forward), ("bwd", self.rnn.backward)):
            for nm, t in zip(("w_x", "w_h", "b_x", "b_h"), g.tensors()):
                out[f"{prefix}.rnn.{direction}.{nm}"] = t
        out.update({f"{prefix}.w_proj": self.w_proj, f"{prefix}.b_proj": self.b_proj,
                    f"{prefix}.norm.gamma": self.gamma, f"{prefix}.norm.beta": self.beta})
        return out

    def __call__(self, x: Tensor) -> Tensor:
        h = tn.recurrent_layer(x, self.rnn, "bidirectional")
        return tn.layer_norm(tn.linear(h, self.w_proj, self.b_proj), self.gamma, self.beta)


@dataclass
class DualPathParams:
    intra: PathStage
    inter: PathStage

    @classmethod
    def init(cls, d: int, hidden: int, rng, dtype):
        return cls(PathStage.init(d, hidden, rng, dtype), PathStage.init(d, hidden, rng, dtype))

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {**self.intra.named(f"{prefix}.intra"), **self.inter.named(f"{prefix}.inter")}


@dataclass
class ISAMParams:
    """One attention head over the speaker axis, a 2x feedforward and a layer norm.

    Keys carry no bias: it would add the same amount to every score of a
    query, which the softmax cancels, so it could never receive a gradient.
    """

    w_q: Tensor
    b_q: Tensor
    w_k: Tensor
    w_v: Tensor
    b_v: Tensor
    w_o: Tensor
    b_o: Tensor
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor
    gamma: Tensor
    beta: Tensor

    @classmethod
    def init(cls, d: int, rng, dtype):
        s = 1 / np.sqrt(d)
        return cls(
            _param(rng, (d, d), s, dtype), _zeros(d, dtype),
            _param(rng, (d, d), s, dtype),
            _param(rng, (d, d), s, dtype), _zeros(d, dtype),
            _param(rng, (d, d), s, dtype), _zeros(d, dtype),
            _param(rng, (d, 2 * d), s, dtype), _zeros(2 * d, dtype),
            _param(rng, (2 * d, d), 1 / np.sqrt(2 * d), dtype), _zeros(d, dtype),
            _ones(d, dtype), _zeros(d, dtype),
        )

    def named(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{k}": v for k, v in self.__dict__.items()}


# -- operations -------------------------------------------------------------------

def dual_path_block(x: Tensor, params: DualPathParams, chunk_size: int, hop: int) -> Tensor:
    """Intra-chunk then inter-chunk bidirectional GRU, each with norm + residual."""
    *lead, T, d = x.shape
    ch = segment_chunks(x, chunk_size, hop)  # [..., C, K, d]
    C = ch.shape[-3]
    rows = int(np.prod(lead)) if lead else 1
    flat = tn.reshape(ch, (rows * C, chunk_size, d))
    intra = tn.add(tn.reshape(params.intra(flat), (rows, C, chunk_size, d)),
                   tn.reshape(ch, (rows, C, chunk_size, d)))
    across = tn.reshape(tn.transpose(intra, (0, 2, 1, 3)), (rows * chunk_size, C, d))
    inter = tn.reshape(params.inter(across), (rows, chunk_size, C, d))
    inter = tn.add(tn.transpose(inter, (0, 2, 1, 3)), intra)
    merged = merge_chunks(inter, T, hop)
    return tn.reshape(merged, tuple(lead) + (T, d))


def fuse_visual(audio: Tensor, visual: Tensor, w_audio: Tensor, w_visual: Tensor, bias: Tensor) -> Tensor:
    """ReLU(concat(audio, visual) @ W + b), with W split into audio/visual halves.

    ``audio`` may lack the speaker axis of ``visual`` (shared mixture features).
    """
    if audio.shape[-2] != visual.shape[-2]:
        raise AlignmentError(f"audio has {audio.shape[-2]} frames, visual has {visual.shape[-2]}")
    return tn.relu(tn.add(tn.add(tn.matmul(visual, w_visual), tn.matmul(audio, w_audio)), bias))


@dataclass
class SpeakerBatch:
    embeddings: Tensor  # [S, T, d], target first
    presence_mask: list[bool] = field(default_factory=list)

    def __post_init__(self):
        S = self.embeddings.shape[0]
        if S < 1:
            raise ValueError("SpeakerBatch needs at least one speaker")
        if not self.presence_mask:
            self.presence_mask = [True] * S
        if len(self.presence_mask) != S:
            raise ValueError(f"presence mask of length {len(self.presence_mask)} for {S} speakers")
        if not self.presence_mask[0]:
            raise ValueError("the target speaker (index 0) must be present")


def _isam_core(x: Tensor, p: ISAMParams) -> Tensor:
    """ISAM on [S, T, d] with every row present."""
    d = x.shape[-1]
    xt = tn.transpose(x, (1, 0, 2))  # [T, S, d]
    q = tn.linear(xt, p.w_q, p.b_q)
    k = tn.linear(xt, p.w_k)
    v = tn.linear(xt, p.w_v, p.b_v)
    scores = tn.mul(tn.matmul(q, tn.transpose(k, (0, 2, 1))), 1.0 / np.sqrt(d))
    attn = tn.matmul(tn.softmax(scores, axis=-1), v)
    y = tn.add(xt, tn.linear(attn, p.w_o, p.b_o))
    z = tn.add(y, tn.linear(tn.relu(tn.linear(y, p.w_1, p.b_1)), p.w_2, p.b_2))
    return tn.transpose(tn.layer_norm(z, p.gamma, p.beta), (1, 0, 2))


def isam_forward(batch: SpeakerBatch, params: ISAMParams, bypass: bool = False) -> SpeakerBatch:
    """Self-attention across speakers at each frame; absent speakers pass unchanged."""
    if bypass:
        return batch
    x = batch.embeddings
    present = [i for i, keep in enumerate(batch.presence_mask) if keep]
    if len(present) == x.shape[0]:
        return SpeakerBatch(_isam_core(x, params), list(batch.presence_mask))
    sub = _isam_core(tn.getitem(x, np.array(present)), params)
    rows = []
    pos = {s: j for j, s in enumerate(present)}
    for i in range(x.shape[0]):
        rows.append(sub[pos[i]] if i in pos else x[i])
    return SpeakerBatch(tn.stack(rows, axis=0), list(batch.presence_mask))


# -- model ------------------------------------------------------------------------

class ExtractorModel:
    def __init__(self, cfg: ExtractorConfig):
        self.cfg = cfg
        dt = cfg.np_dtype
        rng = np.random.default_rng(cfg.seed)
        d, N = cfg.d_emb, cfg.n_filters
        self.codec = Codec.init(N, cfg.kernel_len, cfg.stride, rng, dt)
        self.enc_gamma, self.enc_beta = _ones(N, dt), _zeros(N, dt)
        self.visual = VisualEncoder.init(cfg.d_vis, d, rng, dt)
        self.fuse_w_audio = _param(rng, (N, d), 1 / np.sqrt(N + d), dt)
        self.fuse_w_visual = _param(rng, (d, d), 1 / np.sqrt(N + d), dt)
        self.fuse_b = _zeros(d, dt)
        self.blocks = [DualPathParams.init(d, cfg.hidden, rng, dt) for _ in range(cfg.n_blocks)]
        self.isams = [ISAMParams.init(d, rng, dt) for _ in range(cfg.n_blocks)]
        self.mask_w = _param(rng, (d, N), 1 / np.sqrt(d), dt)
        self.mask_b = _zeros(N, dt)

    def parameters(self) -> "OrderedDict[str, Tensor]":
        out: OrderedDict[str, Tensor] = OrderedDict()
        out.update(self.codec.parameters())
        out["enc_norm.gamma"], out["enc_norm.beta"] = self.enc_gamma, self.enc_beta
        out.update(self.visual.parameters("visual"))
        out["fusion.w_audio"], out["fusion.w_visual"], out["fusion.b"] = self.fuse_w_audio, self.fuse_w_visual, self.fuse_b
        for r, (blk, isam) in enumerate(zip(self.blocks, self.isams)):
            out.update(blk.named(f"block{r}"))
            out.update(isam.named(f"isam{r}"))
        out["mask.w"], out["mask.b"] = self.mask_w, self.mask_b
        return out

    def isam_parameters(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.parameters().items() if k.startswith("isam")}

    def n_parameters(self, isam_only: bool = False) -> int:
        params = self.isam_parameters() if isam_only else self.parameters()
        return int(sum(p.size for p in params.values()))

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks parameters: {sorted(missing)[:5]}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.data) for k, v in self.parameters().items())

    # -- forward ------------------------------------------------------------------
    def forward(self, mixtures: np.ndarray, visuals: Sequence[Sequence[np.ndarray]],
                bypass: Sequence[bool] | bool = False) -> Tensor:
        """Estimates [sum_b S_b, L] for equal-length mixtures [B, L].

        ``visuals[b]`` lists the visual frame arrays of mixture b's on-screen
        speakers (target first); rows of the output follow the same order.
        """
        cfg = self.cfg
        mixtures = np.atleast_2d(np.asarray(mixtures, dtype=cfg.np_dtype))
        B, L = mixtures.shape
        if len(visuals) != B:
            raise ValueError(f"{B} mixtures but {len(visuals)} visual lists")
        if isinstance(bypass, bool):
            bypass = [bypass] * B
        counts = [len(v) for v in visuals]
        if min(counts) < 1:
            raise ValueError("every mixture needs at least one visual stream")
        T = latent_frames(L, cfg.kernel_len, cfg.stride)
        t_video = {np.asarray(f).shape[0] for v in visuals for f in v}
        expected_video = int(np.ceil(L * 25 / cfg.sample_rate))
        if t_video != {expected_video}:
            raise AlignmentError(f"visual streams have {sorted(t_video)} frames, mixture of {L} samples needs {expected_video}")

        enc = self.codec.encode(Tensor(mixtures))           # [B, N, T]
        enc_t = tn.transpose(enc.frames, (0, 2, 1))          # [B, T, N]
        audio = tn.layer_norm(enc_t, self.enc_gamma, self.enc_beta)
        audio_proj = tn.matmul(audio, self.fuse_w_audio)     # [B, T, d]

        vis = np.stack([np.asarray(f, dtype=cfg.np_dtype) for v in visuals for f in v])
        vemb = encode_visual(vis, self.visual, cfg.frame_rate, n_frames=T)  # [R, T, d]
        h = tn.relu(tn.add(tn.add(tn.matmul(vemb, self.fuse_w_visual), _expand_rows(audio_proj, counts)), self.fuse_b))

        offsets = np.concatenate([[0], np.cumsum(counts)])
        for blk, isam in zip(self.blocks, self.isams):
            h = dual_path_block(h, blk, cfg.chunk_size, cfg.chunk_hop)
            if all(bypass):
                continue
            parts = []
            for b in range(B):
                sl = h if B == 1 else h[offsets[b]: offsets[b + 1]]
                parts.append(isam_forward(SpeakerBatch(sl), isam, bypass=bypass[b]).embeddings)
            h = parts[0] if B == 1 else tn.concat(parts, axis=0)

        mask = tn.relu(tn.linear(h, self.mask_w, self.mask_b))  # [R, T, N]
        est = tn.mul(mask, _expand_rows(enc_t, counts))
        frames = tn.transpose(est, (0, 2, 1))
        return self.codec.decode(type(enc)(frames, enc.frame_stride, enc.kernel_len, L))


def _expand_rows(x: Tensor, counts: Sequence[int]) -> Tensor:
    """Repeat row b of x [B, ...] counts[b] times along axis 0."""
    if len(counts) == 1:
        return tn.repeat(x, counts[0], axis=0) if counts[0] > 1 else x
    parts = [tn.repeat(x[b: b + 1], c, axis=0) for b, c in enumerate(counts)]
    return tn.concat(parts, axis=0)


def extract(mixture, visuals: Sequence[VisualStream | np.ndarray], model: ExtractorModel,
            isam_bypass: bool = False) -> list[np.ndarray]:
    """One waveform per visual stream, each the length of the mixture."""
    if not visuals:
        raise ValueError("extract needs at least one visual stream")
    frames = [v.frames if isinstance(v, VisualStream) else np.asarray(v) for v in visuals]
    est = model.forward(np.asarray(mixture)[None, :], [frames], bypass=isam_bypass)
    return [row.astype(np.float64) for row in est.data]


def config_dict(cfg: ExtractorConfig) -> dict:
    return asdict(cfg)
