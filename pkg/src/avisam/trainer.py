"""Training loop: warmup schedule, plateau halving, early stop, ISAM visibility sampling."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as tn
from .extractor import ExtractorModel
from .mixsim import MixtureSample, SimConfig, simulate_sample
from .objectives import loss_multi
from .visual import FPS, synth_visual

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr_max: float = 1e-3
    warmup_n: int = 15000
    batch_size: int = 8
    max_epochs: int = 100
    plateau_patience: int = 6
    stop_patience: int = 10
    isam_bypass_prob: float = 0.5
    face_dropout_prob: float = 0.25
    seed: int = 0
    grad_clip: float | None = 5.0
    crop_seconds: float | None = None
    time_budget_s: float | None = None
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("isam_bypass_prob", "face_dropout_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.warmup_n < 1:
            raise ValueError("warmup_n must be >= 1")


def lr_at(step_n: int, cfg: TrainConfig, plateau_multiplier: float = 1.0) -> float:
    """Linear warmup  lr_max / 0.001 / sqrt(64) * step * warmup^-1.5, then hold x multiplier."""
    if step_n < 1:
        raise ValueError("step_n starts at 1")
    s = min(step_n, cfg.warmup_n)
    lr = cfg.lr_max / 0.001 / math.sqrt(64.0) * s * cfg.warmup_n ** -1.5
    return lr if step_n <= cfg.warmup_n else lr * plateau_multiplier


@dataclass
class PlateauState:
    """Validation-driven halving and early stopping.

    The multiplier halves every ``plateau_patience`` non-improving epochs;
    training stops once ``plateau_patience + stop_patience`` non-improving
    epochs have accumulated.  Nothing is counted before warmup has finished.
    """

    plateau_patience: int = 6
    stop_patience: int = 10
    best: float = math.inf
    bad_epochs: int = 0
    multiplier: float = 1.0
    stopped: bool = False

    def update(self, val_loss: float, warmup_done: bool = True) -> str:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            return "improved"
        if not warmup_done:
            return "warmup"
        self.bad_epochs += 1
        event = "stale"
        if self.bad_epochs % self.plateau_patience == 0:
            self.multiplier *= 0.5
            event = "halved"
        if self.bad_epochs >= self.plateau_patience + self.stop_patience:
            self.stopped = True
            event = "stop"
        return event


@dataclass
class TrainState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    plateau: PlateauState = field(default_factory=PlateauState)
    best_params: dict[str, np.ndarray] | None = None

    @property
    def best_val(self) -> float:
        return self.plateau.best


def sample_visibility(n_interferers: int, cfg: TrainConfig, rng: np.random.Generator) -> tuple[bool, list[bool]]:
    """Draw (isam_bypass, presence_mask) for one training mixture."""
    if n_interferers < 1:
        raise ValueError("need at least one interferer")
    if rng.random() < cfg.isam_bypass_prob:
        return True, [True] + [False] * n_interferers
    keep = rng.random(n_interferers) >= cfg.face_dropout_prob
    return False, [True] + [bool(k) for k in keep]


@dataclass
class Example:
    mixture: np.ndarray
    sources: list[np.ndarray]
    visuals: list[np.ndarray]  # per speaker [T_video, d_vis]
    sample_id: str = ""

    @property
    def n_speakers(self) -> int:
        return len(self.sources)

    def crop(self, start: int, length: int, sample_rate: int = 16000) -> "Example":
        hop = sample_rate // FPS
        f0, nf = start // hop, -(-length // hop)
        return Example(self.mixture[start:start + length], [s[start:start + length] for s in self.sources],
                       [v[f0:f0 + nf] for v in self.visuals], self.sample_id)


def make_example(sample: MixtureSample, sample_id: str = "") -> Example:
    seeds = sample.meta.get("speaker_seeds", list(range(sample.n_speakers)))
    visuals = [synth_visual(sample.schedule.intervals[k], sample.sources[k], seeds[k]).frames
               for k in range(sample.n_speakers)]
    return Example(sample.mixture, list(sample.sources), visuals, sample_id)


def make_dataset(global_seed: int, n: int, cfg: SimConfig, offset: int = 0) -> list[Example]:
    return [make_example(simulate_sample(global_seed, offset + i, cfg), f"{global_seed}-{offset + i}")
            for i in range(n)]


def _random_crop(ex: Example, seconds: float, rng: np.random.Generator, sample_rate: int = 16000) -> Example:
    hop = sample_rate // FPS
    length = int(round(seconds * sample_rate)) // hop * hop
    if length >= len(ex.mixture):
        return ex
    n_starts = (len(ex.mixture) - length) // hop + 1
    for _ in range(8):
        start = int(rng.integers(n_starts)) * hop
        cropped = ex.crop(start, length, sample_rate)
        if np.any(cropped.sources[0]):
            return cropped
    return ex


def batch_loss(model: ExtractorModel, examples: Sequence[Example], bypass: Sequence[bool],
               presence: Sequence[Sequence[bool]]) -> tn.Tensor:
    """Mean over mixtures of the per-mixture multi-speaker loss."""
    visuals, refs_per = [], []
    for ex, mask in zip(examples, presence):
        rows = [k for k, keep in enumerate(mask) if keep]
        visuals.append([ex.visuals[k] for k in rows])
        refs_per.append([ex.sources[k] for k in rows])
    est = model.forward(np.stack([ex.mixture for ex in examples]), visuals, bypass=list(bypass))
    total = None
    row = 0
    for refs in refs_per:
        ests = [est[row + j] for j in range(len(refs))]
        # speakers silent in this excerpt stay visible to ISAM but carry no loss term
        scored = [bool(np.any(r)) for r in refs]
        term = loss_multi(refs, ests, scored)
        total = term if total is None else total + term
        row += len(refs)
    return total * (1.0 / len(refs_per))


def _adam(params: dict[str, tn.Tensor], state: TrainState, cfg: TrainConfig, lr: float) -> float:
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    scale = 1.0
    if cfg.grad_clip is not None and norm > cfg.grad_clip:
        scale = cfg.grad_clip / norm
    b1, b2 = cfg.adam_betas
    t = state.step
    for k, p in params.items():
        g = grads[k] * scale
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p.data)
            state.v[k] = np.zeros_like(p.data)
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.data -= (lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)).astype(p.dtype)
    return norm


def train_step(model: ExtractorModel, batch: Sequence[Example], state: TrainState, cfg: TrainConfig,
               rng: np.random.Generator) -> tuple[float, TrainState]:
    """Sample visibility, forward, loss, backward and one Adam update."""
    bypass, presence = [], []
    for ex in batch:
        b, mask = sample_visibility(ex.n_speakers - 1, cfg, rng)
        bypass.append(b)
        presence.append(mask)
    if cfg.crop_seconds:
        batch = [_random_crop(ex, cfg.crop_seconds, rng) for ex in batch]
    params = model.parameters()
    tn.zero_grad(params.values())
    loss = batch_loss(model, batch, bypass, presence)
    value = float(loss.data)
    if not math.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value} at step {state.step + 1}")
    tn.backward(loss)
    state.step += 1
    lr = lr_at(state.step, cfg, state.plateau.multiplier)
    _adam(params, state, cfg, lr)
    return value, state


def validation_loss(model: ExtractorModel, examples: Sequence[Example], batch_size: int = 8) -> float:
    """Mean of target-only (bypass) and all-faces losses."""
    losses = []
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        n = len(chunk)
        alone = batch_loss(model, chunk, [True] * n, [[True] + [False] * (ex.n_speakers - 1) for ex in chunk])
        full = batch_loss(model, chunk, [False] * n, [[True] * ex.n_speakers for ex in chunk])
        losses.append(0.5 * (float(alone.data) + float(full.data)) * n)
    return sum(losses) / len(examples)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float
    multiplier: float

    FIELDS = ("epoch", "train_loss", "val_loss", "lr", "multiplier")


def fit(model: ExtractorModel, train_set: Sequence[Example], val_set: Sequence[Example], cfg: TrainConfig,
        state: TrainState | None = None) -> tuple[ExtractorModel, list[EpochRecord], TrainState]:
    """Epoch loop with validation, plateau halving, early stop and best-checkpoint restore.

    Passing a ``state`` from an earlier run continues it (fine-tuning).
    """
    if not train_set or not val_set:
        raise ValueError("fit needs non-empty training and validation sets")
    lens = {len(ex.mixture) for ex in list(train_set) + list(val_set)}
    if len(lens) != 1:
        raise ValueError(f"mixtures must share one length, got {sorted(lens)}")
    if any(v.shape[1] != model.cfg.d_vis for ex in train_set for v in ex.visuals):
        raise ValueError("visual feature size does not match the model configuration")
    state = state or TrainState(plateau=PlateauState(cfg.plateau_patience, cfg.stop_patience))
    rng = np.random.default_rng([cfg.seed, 7])
    history: list[EpochRecord] = []
    started = time.process_time()
    out_of_time = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(train_set))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            batch = [train_set[j] for j in order[i:i + cfg.batch_size]]
            loss, state = train_step(model, batch, state, cfg, rng)
            losses.append(loss)
            if cfg.time_budget_s is not None and time.process_time() - started > cfg.time_budget_s:
                out_of_time = True
                break
        val = validation_loss(model, val_set, cfg.batch_size)
        event = state.plateau.update(val, warmup_done=state.step >= cfg.warmup_n)
        if event == "improved":
            state.best_params = {k: v.copy() for k, v in model.state().items()}
        rec = EpochRecord(epoch, float(np.mean(losses)), val, lr_at(max(state.step, 1), cfg, state.plateau.multiplier),
                          state.plateau.multiplier)
        history.append(rec)
        log.info("epoch %d train %.3f val %.3f lr %.2e (%s)", epoch, rec.train_loss, val, rec.lr, event)
        if state.plateau.stopped or out_of_time:
            break
    if state.best_params is not None:
        model.load_state(state.best_params)
    return model, history, state
