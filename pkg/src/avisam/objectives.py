"""SI-SNR objective and improvement metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as tn
from .tensor import Tensor

EPS = 1e-8
CAP_DB = 60.0
_DB = 10.0 / np.log(10.0)


class DegenerateReferenceError(ValueError):
    pass


def _check_pair(s: np.ndarray, est_shape: tuple) -> None:
    if s.shape != tuple(est_shape):
        raise ValueError(f"reference {s.shape} and estimate {tuple(est_shape)} differ in shape")
    if not np.any(s):
        raise DegenerateReferenceError("reference signal has zero energy")


def si_snr(s, est, zero_mean: bool = False):
    """Scale-invariant SNR in dB, clamped to [-60, 60].

    ``est`` may be a Tensor (differentiable result) or an array (float result).
    Denominators are floored at eps rather than offset, so exact cases stay
    exact.  Clamped values carry no gradient.
    """
    s = np.asarray(s, dtype=np.float64)
    if isinstance(est, Tensor):
        return _si_snr_graph(s, est, zero_mean)
    est = np.asarray(est, dtype=np.float64)
    _check_pair(s, est.shape)
    if zero_mean:
        s = s - s.mean()
        est = est - est.mean()
    alpha = np.dot(est, s) / max(np.dot(s, s), EPS)
    proj = alpha * s
    res = est - proj
    p2 = max(np.dot(proj, proj), EPS**2)
    r2 = max(np.dot(res, res), EPS**2)
    return float(np.clip(_DB * (np.log(p2) - np.log(r2)), -CAP_DB, CAP_DB))


def _si_snr_graph(s: np.ndarray, est: Tensor, zero_mean: bool) -> Tensor:
    _check_pair(s, est.shape)
    if zero_mean:
        s = s - s.mean()
        est = est - est.mean()
    s_t = s.astype(est.dtype)
    alpha = tn.tsum(est * s_t) * (1.0 / max(float(np.dot(s, s)), EPS))
    proj = alpha * s_t
    res = est - proj
    p2 = tn.clip(tn.tsum(proj * proj), lo=EPS**2)
    r2 = tn.clip(tn.tsum(res * res), lo=EPS**2)
    return tn.clip((tn.log(p2) - tn.log(r2)) * _DB, -CAP_DB, CAP_DB)


def snr(s, est) -> float:
    """Plain SNR in dB (no projection), same clamp as :func:`si_snr`."""
    s = np.asarray(s, dtype=np.float64)
    est = np.asarray(est, dtype=np.float64)
    _check_pair(s, est.shape)
    d = est - s
    num = max(np.dot(s, s), EPS**2)
    den = max(np.dot(d, d), EPS**2)
    return float(np.clip(_DB * (np.log(num) - np.log(den)), -CAP_DB, CAP_DB))


def loss_multi(refs: Sequence, ests: Sequence[Tensor], presence_mask: Sequence[bool] | None = None,
               zero_mean: bool = False) -> Tensor:
    """Mean negative SI-SNR over present speakers (index 0 is the target)."""
    if len(refs) != len(ests):
        raise ValueError(f"{len(refs)} references vs {len(ests)} estimates")
    if presence_mask is None:
        presence_mask = [True] * len(refs)
    terms = [si_snr(r, e, zero_mean) for r, e, keep in zip(refs, ests, presence_mask) if keep]
    if not terms:
        raise ValueError("loss_multi: no present speaker")
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (-1.0 / len(terms))


def improvement(ref, est, mixture) -> tuple[float, float]:
    """(SI-SNRi, SNRi) of ``est`` relative to the unprocessed mixture."""
    return si_snr(ref, est) - si_snr(ref, mixture), snr(ref, est) - snr(ref, mixture)


@dataclass
class MetricsRow:
    sample_id: str
    visibility_mode: str
    si_snri_db: float
    snri_db: float

    FIELDS = ("sample_id", "visibility_mode", "si_snri_db", "snri_db")

    def as_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "visibility_mode": self.visibility_mode,
            "si_snri_db": f"{self.si_snri_db:.4f}",
            "snri_db": f"{self.snri_db:.4f}",
        }
