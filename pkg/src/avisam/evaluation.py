"""Per-visibility-mode evaluation of a trained extractor."""

from __future__ import annotations

from collections import defaultdict
from typing import Iterable, Sequence

import numpy as np

from .extractor import ExtractorModel
from .objectives import MetricsRow, improvement
from .trainer import Example

MODES = ("1-spk", "2-spk", "3-spk")


def visible_count(mode: str) -> int:
    if mode not in MODES:
        raise ValueError(f"unknown visibility mode {mode!r}; expected one of {MODES}")
    return int(mode[0])


def evaluate(model: ExtractorModel, examples: Sequence[Example], modes: Iterable[str] = ("1-spk", "2-spk"),
             batch_size: int = 8) -> list[MetricsRow]:
    """Target-speaker SI-SNRi/SNRi for each example under each visibility mode.

    In k-spk mode the model sees the target face plus the first k-1 interferer
    faces; 1-spk runs with ISAM bypassed.
    """
    rows: list[MetricsRow] = []
    for mode in modes:
        k = visible_count(mode)
        for i in range(0, len(examples), batch_size):
            chunk = [ex for ex in examples[i:i + batch_size] if ex.n_speakers >= k]
            if not chunk:
                continue
            est = model.forward(np.stack([ex.mixture for ex in chunk]), [ex.visuals[:k] for ex in chunk],
                                bypass=(k == 1))
            row = 0
            for ex in chunk:
                target_est = est.data[row].astype(np.float64)
                si, sn = improvement(ex.sources[0], target_est, ex.mixture)
                rows.append(MetricsRow(ex.sample_id, mode, si, sn))
                row += k
    return rows


def summarize(rows: Sequence[MetricsRow]) -> dict[str, dict[str, float]]:
    acc: dict[str, list[MetricsRow]] = defaultdict(list)
    for r in rows:
        acc[r.visibility_mode].append(r)
    return {
        mode: {
            "si_snri_db": float(np.mean([r.si_snri_db for r in rs])),
            "snri_db": float(np.mean([r.snri_db for r in rs])),
            "n": len(rs),
        }
        for mode, rs in sorted(acc.items())
    }
