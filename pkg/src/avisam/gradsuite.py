"""Finite-difference checks for every differentiable op plus a miniature pipeline."""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable

import numpy as np

from . import tensor as tn
from .extractor import (ExtractorConfig, ExtractorModel, ISAMParams, SpeakerBatch, isam_forward,
                        merge_chunks, segment_chunks)
from .objectives import loss_multi, si_snr
from .tensor import GradReport, Tensor, check_parameters
from .visual import synth_visual

TOL = 1e-4
# The pipeline has thousands of ReLU units.  A 1e-5 step now and then carries
# one across its kink; 1e-6 rarely does and still keeps roundoff (loss ~30,
# float64) well under the tolerance.
PIPELINE_STEP = 1e-6


def _t(rng, *shape, lo=None):
    x = rng.standard_normal(shape)
    if lo is not None:  # keep clear of kinks
        x = np.sign(x) * (np.abs(x) + lo)
    return Tensor(x)


def _weighted(y: Tensor, seed: int = 99) -> Tensor:
    """Scalarize with fixed random weights so every output entry matters."""
    w = np.random.default_rng(seed).standard_normal(y.shape)
    return tn.tsum(tn.mul(y, Tensor(w)))


def op_cases(rng: np.random.Generator) -> "OrderedDict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]":
    """name -> (scalar loss closure, the float64 inputs it depends on)."""
    cases: OrderedDict = OrderedDict()

    def case(name, fn, **inputs):
        cases[name] = (lambda: _weighted(fn(**inputs)), inputs)

    case("add", lambda a, b: tn.add(a, b), a=_t(rng, 3, 4), b=_t(rng, 4))
    case("sub", lambda a, b: tn.sub(a, b), a=_t(rng, 3, 4), b=_t(rng, 3, 4))
    case("mul", lambda a, b: tn.mul(a, b), a=_t(rng, 2, 3, 4), b=_t(rng, 3, 4))
    case("div", lambda a, b: tn.div(a, b), a=_t(rng, 3, 4), b=_t(rng, 3, 4, lo=0.5))
    case("power", lambda a: tn.power(a, 3.0), a=_t(rng, 5))
    case("exp", lambda a: tn.exp(a), a=_t(rng, 5))
    case("log", lambda a: tn.log(a), a=Tensor(rng.uniform(0.5, 2.0, 6)))
    case("sqrt", lambda a: tn.sqrt(a), a=Tensor(rng.uniform(0.5, 2.0, 6)))
    case("relu", lambda a: tn.relu(a), a=_t(rng, 8, lo=0.1))
    case("sigmoid", lambda a: tn.sigmoid(a), a=_t(rng, 8))
    case("tanh", lambda a: tn.tanh(a), a=_t(rng, 8))
    # half the entries inside the clip range, half saturated
    clip_in = np.concatenate([rng.uniform(-0.4, 0.4, 4), rng.choice([-1.0, 1.0], 4) * rng.uniform(0.6, 1.0, 4)])
    case("clip", lambda a: tn.clip(a, -0.5, 0.5), a=Tensor(clip_in))
    case("sum", lambda a: tn.tsum(a, axis=1, keepdims=True), a=_t(rng, 3, 4))
    case("mean", lambda a: tn.mean(a, axis=0), a=_t(rng, 3, 4))
    case("reshape", lambda a: tn.reshape(a, (4, 3)), a=_t(rng, 3, 4))
    case("transpose", lambda a: tn.transpose(a, (2, 0, 1)), a=_t(rng, 2, 3, 4))
    case("swapaxes", lambda a: tn.swapaxes(a, 0, 2), a=_t(rng, 2, 3, 4))
    case("getitem_basic", lambda a: a[1:, ::2], a=_t(rng, 3, 4))
    case("getitem_advanced", lambda a: tn.getitem(a, np.array([0, 2, 0])), a=_t(rng, 3, 4))
    case("concat", lambda a, b: tn.concat([a, b], axis=1), a=_t(rng, 2, 3), b=_t(rng, 2, 2))
    case("stack", lambda a, b: tn.stack([a, b], axis=0), a=_t(rng, 2, 3), b=_t(rng, 2, 3))
    case("repeat", lambda a: tn.repeat(a, 3, axis=0), a=_t(rng, 2, 3))
    case("matmul", lambda a, b: tn.matmul(a, b), a=_t(rng, 2, 3, 4), b=_t(rng, 4, 5))
    case("matmul_batched", lambda a, b: tn.matmul(a, b), a=_t(rng, 2, 3, 4), b=_t(rng, 2, 4, 5))
    case("linear", lambda x, w, b: tn.linear(x, w, b), x=_t(rng, 3, 4), w=_t(rng, 4, 2), b=_t(rng, 2))
    case("softmax", lambda a: tn.softmax(a, axis=-1), a=_t(rng, 3, 5))
    case("layer_norm", lambda x, g, b: tn.layer_norm(x, g, b), x=_t(rng, 3, 6), g=_t(rng, 6), b=_t(rng, 6))
    case("conv1d", lambda x, k: tn.conv1d(x, k, stride=3), x=_t(rng, 2, 1, 20), k=_t(rng, 4, 1, 6))
    case("conv_transpose1d", lambda x, k: tn.conv_transpose1d(x, k, stride=3, out_len=20),
         x=_t(rng, 2, 4, 5), k=_t(rng, 4, 6))
    g = tn.init_gru(3, 4, rng, np.float64)
    gru_in = dict(x=_t(rng, 5, 2, 3), w_x=g.w_x, w_h=g.w_h, b_x=g.b_x, b_h=g.b_h)
    case("gru", lambda x, w_x, w_h, b_x, b_h: tn.gru(x, w_x, w_h, b_x, b_h), **gru_in)
    case("gru_reverse", lambda x, w_x, w_h, b_x, b_h: tn.gru(x, w_x, w_h, b_x, b_h, reverse=True), **gru_in)
    case("segment_chunks", lambda x: segment_chunks(x, 4, 2), x=_t(rng, 2, 9, 3))
    case("merge_chunks", lambda c: merge_chunks(c, 9, 2), c=_t(rng, 2, 5, 4, 3))
    ip = ISAMParams.init(4, rng, np.float64)
    isam_in = {"x": _t(rng, 3, 5, 4), **{f"isam.{k}": v for k, v in vars(ip).items()}}
    case("isam", lambda x, **_: isam_forward(SpeakerBatch(x), ip).embeddings, **isam_in)
    case("isam_absent", lambda x, **_: isam_forward(SpeakerBatch(x, [True, False, True]), ip).embeddings, **isam_in)
    ref = rng.standard_normal(32)
    est = Tensor(ref + 0.5 * rng.standard_normal(32))
    cases["si_snr"] = (lambda: si_snr(ref, est), {"est": est})
    cases["si_snr_centered"] = (lambda: si_snr(ref, est, zero_mean=True), {"est": est})
    return cases


def miniature_model(seed: int = 0) -> ExtractorModel:
    cfg = ExtractorConfig(n_filters=8, d_emb=8, hidden=8, n_blocks=1, dtype="float64", seed=seed)
    return ExtractorModel(cfg)


def miniature_loss(model: ExtractorModel, seed: int = 0, bypass: bool = False) -> Callable[[], Tensor]:
    """Full pipeline on a 0.25 s two-speaker mixture."""
    rng = np.random.default_rng(seed)
    L = 4000
    sources = [rng.standard_normal(L) * 0.1 for _ in range(2)]
    mixture = sources[0] + sources[1]
    visuals = [synth_visual([(0, L)], s, identity_seed=k, noise_seed=seed).frames for k, s in enumerate(sources)]

    def loss() -> Tensor:
        est = model.forward(mixture[None], [visuals], bypass=bypass)
        return loss_multi(sources, [est[0], est[1]])
    return loss


def run_gradient_suite(seed: int | None = 0, tol: float = TOL, max_entries: int = 4) -> "OrderedDict[str, GradReport]":
    rng = np.random.default_rng(seed)
    reports: OrderedDict[str, GradReport] = OrderedDict()
    for name, (fn, inputs) in op_cases(rng).items():
        reports[name] = check_parameters(fn, inputs, tol=tol, max_entries=None)
    model = miniature_model(seed or 0)
    reports["pipeline"] = check_parameters(miniature_loss(model, seed or 0), model.parameters(), tol=tol,
                                           max_entries=max_entries, seed=seed or 0, step=PIPELINE_STEP)
    return reports
