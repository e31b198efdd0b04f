"""Multi-talker mixture simulation with exact SNR control."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SAMPLE_RATE = 16000
MIN_SEGMENT = 800  # 50 ms


class SchedulingError(ValueError):
    pass


class DegenerateSourceError(ValueError):
    pass


@dataclass
class ActivitySchedule:
    intervals: list[list[tuple[int, int]]]
    total_len: int

    def __post_init__(self):
        if not self.intervals:
            raise SchedulingError("schedule has no speakers")
        for spk, ivs in enumerate(self.intervals):
            if not ivs:
                raise SchedulingError(f"speaker {spk} has no active interval")
            prev_end = 0
            for a, b in ivs:
                if not (0 <= a < b <= self.total_len):
                    raise SchedulingError(f"speaker {spk}: interval ({a}, {b}) outside [0, {self.total_len})")
                if a < prev_end:
                    raise SchedulingError(f"speaker {spk}: intervals overlap or are unsorted")
                prev_end = b

    @property
    def n_speakers(self) -> int:
        return len(self.intervals)

    def activity(self) -> np.ndarray:
        """Boolean [n_speakers, total_len] activity matrix."""
        act = np.zeros((self.n_speakers, self.total_len), dtype=bool)
        for spk, ivs in enumerate(self.intervals):
            for a, b in ivs:
                act[spk, a:b] = True
        return act

    def overlap_fraction(self) -> float:
        return float(np.mean(self.activity().sum(axis=0) >= 2))

    @classmethod
    def full(cls, n_speakers: int, total_len: int) -> "ActivitySchedule":
        return cls([[(0, total_len)] for _ in range(n_speakers)], total_len)


@dataclass
class MixtureSample:
    mixture: np.ndarray
    sources: list[np.ndarray]
    schedule: ActivitySchedule
    snrs_db: list[float]
    sample_rate: int = SAMPLE_RATE
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.sources) < 2:
            raise ValueError("a mixture needs at least two speakers")

    @property
    def n_speakers(self) -> int:
        return len(self.sources)

    def scaled(self, factor: float) -> "MixtureSample":
        return MixtureSample(self.mixture * factor, [s * factor for s in self.sources],
                             self.schedule, list(self.snrs_db), self.sample_rate, dict(self.meta))


def snr_scale(target, interferer, snr_db: float) -> float:
    """Gain for ``interferer`` so that target/interferer power ratio is ``snr_db``."""
    e_t = float(np.mean(np.square(np.asarray(target, dtype=np.float64))))
    e_i = float(np.mean(np.square(np.asarray(interferer, dtype=np.float64))))
    if e_t <= 0 or e_i <= 0:
        raise DegenerateSourceError("snr_scale needs two signals with positive energy")
    return float(np.sqrt(e_t / e_i) * 10.0 ** (-snr_db / 20.0))


def measured_snr_db(target, interferer) -> float:
    t = np.asarray(target, dtype=np.float64)
    i = np.asarray(interferer, dtype=np.float64)
    return float(10 * np.log10(np.mean(t * t) / np.mean(i * i)))


def mix_dense(clips: Sequence[np.ndarray], snrs_db: Sequence[float]) -> MixtureSample:
    """Truncate to the shortest clip and mix interferers at the requested SNRs."""
    if len(clips) < 2:
        raise ValueError("mix_dense needs at least two clips")
    if len(snrs_db) != len(clips) - 1:
        raise ValueError(f"{len(clips) - 1} interferers but {len(snrs_db)} SNR values")
    n = min(len(c) for c in clips)
    clips = [np.asarray(c[:n], dtype=np.float64) for c in clips]
    target = clips[0]
    sources = [target.copy()]
    for clip, snr_db in zip(clips[1:], snrs_db):
        sources.append(clip * snr_scale(target, clip, snr_db))
    mixture = np.sum(sources, axis=0)
    return MixtureSample(mixture, sources, ActivitySchedule.full(len(clips), n), [float(s) for s in snrs_db])


def make_sparse_schedule(total_len: int, n_speakers: int, overlap_fraction: float, rng_seed) -> ActivitySchedule:
    """Conversation-like turn schedule with a controlled overlapped fraction.

    The timeline is a chain of turns whose speakers cycle through a seeded
    order.  Neighbouring turns overlap at their junction, and the junction
    lengths add up to ``round(overlap_fraction * total_len)``.  Junctions are
    disjoint, so no sample has three active speakers and the overlapped
    fraction is exact up to rounding.
    """
    if not 0.0 <= overlap_fraction <= 1.0:
        raise SchedulingError(f"overlap_fraction must lie in [0, 1], got {overlap_fraction}")
    if n_speakers < 1:
        raise SchedulingError("need at least one speaker")
    rng = np.random.default_rng(rng_seed)
    n_turns = n_speakers + int(rng.integers(1, 4)) if n_speakers > 1 else 1
    if total_len < n_turns * MIN_SEGMENT:
        n_turns = n_speakers
    if total_len < n_turns * MIN_SEGMENT:
        raise SchedulingError(f"{total_len} samples cannot hold {n_speakers} speakers of >= {MIN_SEGMENT} samples")
    if n_speakers == 1:
        return ActivitySchedule([[(0, total_len)]], total_len)

    order = list(rng.permutation(n_speakers))
    speakers = [order[k % n_speakers] for k in range(n_turns)]
    overlap = int(round(overlap_fraction * total_len))
    single = total_len - overlap
    n_junctions = n_turns - 1

    # seeded jittered split of the single-talk and overlap budgets
    u = _split(single, n_turns, rng)
    o = _split(overlap, n_junctions, rng)
    pos = 0
    bounds = []
    for k in range(n_turns):
        pos += u[k]
        if k < n_junctions:
            bounds.append((pos, pos + o[k]))
            pos += o[k]
    # each turn is active from the start of the junction before it to the end of the junction after it
    starts = [0] + [b[0] for b in bounds]
    ends = [b[1] for b in bounds] + [total_len]
    intervals: list[list[tuple[int, int]]] = [[] for _ in range(n_speakers)]
    for k in range(n_turns):
        a, b = starts[k], ends[k]
        if b <= a:
            continue
        ivs = intervals[speakers[k]]
        if ivs and ivs[-1][1] >= a:
            ivs[-1] = (ivs[-1][0], b)
        else:
            ivs.append((a, b))
    if any(not ivs for ivs in intervals):
        raise SchedulingError("parameters leave a speaker without any active samples")
    return ActivitySchedule(intervals, total_len)


def _split(total: int, parts: int, rng: np.random.Generator) -> list[int]:
    if parts <= 0:
        return []
    w = rng.dirichlet(np.full(parts, 4.0))
    raw = np.floor(w * total).astype(int)
    raw[-1] += total - raw.sum()
    return [int(v) for v in raw]


def mix_sparse(segments: Sequence[np.ndarray], schedule: ActivitySchedule, snrs_db: Sequence[float]) -> MixtureSample:
    """Place source material into each speaker's intervals and mix.

    Interferer gains are set from power over each speaker's own active
    samples, so silent stretches do not distort the SNR.
    """
    n = schedule.n_speakers
    if len(segments) != n:
        raise SchedulingError(f"{len(segments)} source streams for {n} scheduled speakers")
    if len(snrs_db) != n - 1:
        raise ValueError(f"{n - 1} interferers but {len(snrs_db)} SNR values")
    act = schedule.activity()
    placed = []
    for spk in range(n):
        need = int(act[spk].sum())
        material = np.asarray(segments[spk], dtype=np.float64)
        if len(material) < need:
            raise SchedulingError(f"speaker {spk}: {len(material)} samples of material, {need} needed")
        wave = np.zeros(schedule.total_len)
        wave[act[spk]] = material[:need]
        placed.append(wave)
    target_active = placed[0][act[0]]
    sources = [placed[0]]
    for spk, snr_db in zip(range(1, n), snrs_db):
        sources.append(placed[spk] * snr_scale(target_active, placed[spk][act[spk]], snr_db))
    mixture = np.sum(sources, axis=0)
    return MixtureSample(mixture, sources, schedule, [float(s) for s in snrs_db])


def active_region_snr_db(sample: MixtureSample, interferer: int) -> float:
    act = sample.schedule.activity()
    return measured_snr_db(sample.sources[0][act[0]], sample.sources[interferer][act[interferer]])


def synth_speech_like(seed: int, duration: float, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Deterministic pseudo-speech: harmonic voice with gliding pitch and syllabic AM.

    The fundamental wanders slowly inside 80-300 Hz, harmonic amplitudes follow
    two seeded formant bumps, and a 2-8 Hz syllable envelope gates the voice.
    The result is peak-normalized to 0.5.
    """
    if duration < 0.5:
        raise ValueError(f"duration must be at least 0.5 s, got {duration}")
    rng = np.random.default_rng([int(seed), 0x5EED])
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate

    base = rng.uniform(95.0, 250.0)
    drift = np.zeros(n)
    for _ in range(3):
        rate = rng.uniform(0.3, 2.5)
        drift += rng.uniform(0.03, 0.1) * np.sin(2 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
    f0 = np.clip(base * (1.0 + drift), 80.0, 300.0)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    formants = rng.uniform([300.0, 900.0], [900.0, 2600.0])
    widths = rng.uniform([80.0, 150.0], [250.0, 450.0])
    tilt = rng.uniform(0.5, 1.5)
    voice = np.zeros(n)
    n_harm = int(4000 // 80)
    for k in range(1, n_harm + 1):
        fk = k * f0
        gain = (np.exp(-0.5 * ((fk - formants[0]) / widths[0]) ** 2)
                + 0.6 * np.exp(-0.5 * ((fk - formants[1]) / widths[1]) ** 2)
                + 0.05 / k**tilt)
        gain = np.where(fk < 0.45 * sample_rate, gain, 0.0)
        voice += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))

    syl_rate = rng.uniform(2.0, 8.0)
    syl_phase = 2 * np.pi * np.cumsum(syl_rate * (1 + 0.2 * np.sin(2 * np.pi * 0.7 * t + rng.uniform(0, 6.3)))) / sample_rate
    env = (0.5 * (1 - np.cos(syl_phase + rng.uniform(0, 2 * np.pi)))) ** 1.5
    env = 0.15 + 0.85 * env
    wave = voice * env
    return 0.5 * wave / np.max(np.abs(wave))


def max_normalized_xcorr(a: np.ndarray, b: np.ndarray) -> float:
    """Maximum over lags of |cross-correlation| / (|a| |b|)."""
    n = len(a) + len(b) - 1
    nfft = 1 << (n - 1).bit_length()
    xc = np.fft.irfft(np.fft.rfft(a, nfft) * np.conj(np.fft.rfft(b, nfft)), nfft)
    return float(np.max(np.abs(xc)) / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass
class SimConfig:
    n_speakers: int = 2
    duration: float = 2.0
    mode: str = "sparse"
    overlap: float = 0.3
    snr_low: float = -10.0
    snr_high: float = 10.0
    sample_rate: int = SAMPLE_RATE


def simulate_sample(global_seed: int, index: int, cfg: SimConfig) -> MixtureSample:
    """One mixture as a pure function of (global_seed, index, cfg)."""
    rng = np.random.default_rng([int(global_seed), int(index)])
    speaker_seeds = [int(s) for s in rng.integers(0, 2**31 - 1, size=cfg.n_speakers)]
    snrs = [float(v) for v in rng.uniform(cfg.snr_low, cfg.snr_high, size=cfg.n_speakers - 1)]
    total = int(round(cfg.duration * cfg.sample_rate))
    if cfg.mode == "dense":
        clips = [synth_speech_like(s, cfg.duration, cfg.sample_rate) for s in speaker_seeds]
        sample = mix_dense(clips, snrs)
    elif cfg.mode == "sparse":
        schedule = make_sparse_schedule(total, cfg.n_speakers, cfg.overlap, int(rng.integers(0, 2**31 - 1)))
        material = [synth_speech_like(s, cfg.duration, cfg.sample_rate) for s in speaker_seeds]
        sample = mix_sparse(material, schedule, snrs)
    else:
        raise ValueError(f"unknown mixing mode {cfg.mode!r}")
    peak = float(np.max(np.abs(sample.mixture)))
    if peak > 0.9:
        sample = sample.scaled(0.9 / peak)
    sample.meta.update(seed=int(global_seed), index=int(index), speaker_seeds=speaker_seeds)
    return sample
