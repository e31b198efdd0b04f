"""Command-line entry point: simulate, train, eval, extract, gradcheck."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

from . import io
from .evaluation import MODES, evaluate, summarize
from .extractor import ExtractorConfig, ExtractorModel, extract
from .mixsim import SimConfig, simulate_sample
from .objectives import MetricsRow
from .trainer import EpochRecord, Example, TrainConfig, TrainState, fit
from .visual import synth_visual

SEED_ENV = "AVISAM_SEED"


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"usage: {message}")


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV, "0")
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV}={raw!r} is not an integer") from None


# -- simulate -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SimConfig(n_speakers=args.speakers, duration=args.duration, mode=args.mode, overlap=args.overlap)
    records = []
    for i in range(args.n):
        sample = simulate_sample(args.seed, i, cfg)
        sid = f"s{i:05d}"
        rec = {"id": sid, "seed": args.seed, "index": i, "mode": cfg.mode, "sample_rate": sample.sample_rate,
               "snrs_db": [round(s, 6) for s in sample.snrs_db],
               "schedule": [[list(iv) for iv in ivs] for ivs in sample.schedule.intervals],
               "mixture": f"{sid}_mix.wav", "sources": [], "visuals": []}
        io.write_wav(out / rec["mixture"], sample.mixture)
        for k, src in enumerate(sample.sources):
            name = f"{sid}_spk{k}.wav"
            io.write_wav(out / name, src)
            vis = synth_visual(sample.schedule.intervals[k], src, sample.meta["speaker_seeds"][k])
            vname = f"{sid}_spk{k}.vis"
            io.write_visual(out / vname, vis)
            rec["sources"].append(name)
            rec["visuals"].append(vname)
        records.append(rec)
    io.write_manifest(out / "manifest.jsonl", records)
    print(f"wrote {len(records)} samples to {out / 'manifest.jsonl'}")
    return 0


def load_examples(manifest: Path) -> list[Example]:
    root = manifest.parent
    examples = []
    for rec in io.iter_manifest(manifest):
        try:
            mix = io.read_wav(root / rec["mixture"])
            srcs = [io.read_wav(root / s) for s in rec["sources"]]
            vis = [io.read_visual(root / v).frames for v in rec["visuals"]]
        except FileNotFoundError as err:
            raise CliError(f"missing file referenced by manifest: {err.filename}") from None
        except KeyError as err:
            raise CliError(f"manifest record lacks field {err}") from None
        examples.append(Example(mix, srcs, vis, rec.get("id", str(len(examples)))))
    if not examples:
        raise CliError(f"{manifest}: no records")
    return examples


# -- train ----------------------------------------------------------------------

def _configs_from_file(path: Path):
    sections = io.read_config(path)
    unknown = set(sections) - {"model", "train", "data"}
    if unknown:
        raise CliError(f"{path}: unknown config sections {sorted(unknown)}")
    try:
        model_cfg = io.coerce_dataclass(ExtractorConfig, sections.get("model", {}))
        train_cfg = io.coerce_dataclass(TrainConfig, sections.get("train", {}))
    except ValueError as err:
        raise CliError(f"{path}: {err}") from None
    return model_cfg, train_cfg, sections.get("data", {})


def load_model(path: Path) -> ExtractorModel:
    sidecar = Path(str(path) + ".ini")
    if not sidecar.exists():
        raise CliError(f"checkpoint config sidecar {sidecar} not found")
    model_cfg = io.coerce_dataclass(ExtractorConfig, io.read_config(sidecar).get("model", {}))
    model = ExtractorModel(model_cfg)
    model.load_state(io.load_checkpoint(path))
    return model


def cmd_train(args) -> int:
    model_cfg, train_cfg, data = _configs_from_file(Path(args.config))
    if args.seed is not None:
        train_cfg.seed = args.seed
    train_manifest = args.train or data.get("train")
    val_manifest = args.val or data.get("val")
    if not train_manifest or not val_manifest:
        raise CliError("train and validation manifests are required ([data] train/val or --train/--val)")
    train_set = load_examples(Path(train_manifest))
    val_set = load_examples(Path(val_manifest))
    if args.init:
        model = load_model(Path(args.init))
    else:
        model = ExtractorModel(model_cfg)
    try:
        model, history, _ = fit(model, train_set, val_set, train_cfg, TrainState())
    except ValueError as err:
        raise CliError(f"training setup: {err}") from None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.save_checkpoint(out, model.state(), {"model": asdict(model.cfg), "train": asdict(train_cfg)})
    io.write_table(str(out) + ".history.csv", EpochRecord.FIELDS, [asdict(h) for h in history])
    print(f"trained {len(history)} epochs; checkpoint {out}")
    return 0


# -- eval -----------------------------------------------------------------------

def cmd_eval(args) -> int:
    model = load_model(Path(args.model))
    examples = load_examples(Path(args.manifest))
    modes = args.visibility or [m for m in MODES if int(m[0]) <= min(ex.n_speakers for ex in examples)]
    rows = evaluate(model, examples, modes)
    if args.out:
        io.write_table(args.out, MetricsRow.FIELDS, [r.as_record() for r in rows])
    print("visibility  n  SI-SNRi  SNRi")
    for mode, s in summarize(rows).items():
        print(f"{mode:<10s} {s['n']:>3d}  {s['si_snri_db']:6.2f}  {s['snri_db']:6.2f}")
    return 0


# -- extract --------------------------------------------------------------------

def cmd_extract(args) -> int:
    model = load_model(Path(args.model))
    mixture = io.read_wav(args.mixture)
    visuals = [io.read_visual(v) for v in args.visual]
    outs = extract(mixture, visuals, model, isam_bypass=len(visuals) == 1 or args.bypass)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, wav in enumerate(outs):
        io.write_wav(out_dir / f"speaker{k}.wav", wav)
    print(f"wrote {len(outs)} waveforms to {out_dir}")
    return 0


# -- gradcheck ------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    from .gradsuite import run_gradient_suite

    reports = run_gradient_suite(seed=args.seed)
    ok = True
    for name, rep in reports.items():
        print(f"{'PASS' if rep.passed else 'FAIL'}  {name:<28s} max_rel_err={rep.max_error:.2e}")
        ok &= rep.passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="avisam", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic mixture dataset and manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--speakers", type=int, default=2)
    p.add_argument("--overlap", type=float, default=0.3)
    p.add_argument("--mode", choices=("sparse", "dense"), default="sparse")
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train from a sectioned config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--train")
    p.add_argument("--val")
    p.add_argument("--init", help="checkpoint to fine-tune from")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics table per visibility mode")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--visibility", action="append", choices=MODES)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("extract", help="per-speaker waveforms from a mixture and visual streams")
    p.add_argument("--model", required=True)
    p.add_argument("--mixture", required=True)
    p.add_argument("--visual", action="append", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bypass", action="store_true", help="skip ISAM even with several faces")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)
    return ap


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "seed", None) is None and args.command in ("simulate", "gradcheck"):
            args.seed = _default_seed()
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"error: {type(err).__name__}: {err}".replace("\n", " "), file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
