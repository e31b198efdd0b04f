"""Bit-exact file formats: WAV, visual streams, checkpoints, manifests, configs."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import json
import struct
import wave
from collections import OrderedDict
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .visual import VisualStream

WAV_RATE = 16000


class WavFormatError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# -- WAV ----------------------------------------------------------------------

def read_wav(path) -> np.ndarray:
    """Mono 16-bit PCM at 16 kHz -> float64 samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as w:
            channels, width, rate, n = w.getnchannels(), w.getsampwidth(), w.getframerate(), w.getnframes()
            raw = w.readframes(n)
    except (wave.Error, EOFError, struct.error) as err:
        raise WavFormatError(f"{path}: malformed RIFF/WAVE file ({err})") from err
    if channels != 1:
        raise WavFormatError(f"{path}: expected 1 channel, found {channels}")
    if width != 2:
        raise WavFormatError(f"{path}: expected 16-bit samples, found {8 * width}-bit")
    if rate != WAV_RATE:
        raise WavFormatError(f"{path}: expected {WAV_RATE} Hz, found {rate} Hz")
    if len(raw) != 2 * n:
        raise WavFormatError(f"{path}: data chunk holds {len(raw)} bytes, header promises {2 * n}")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def to_pcm16(samples) -> np.ndarray:
    x = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    return np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")


def write_wav(path, samples) -> None:
    pcm = to_pcm16(samples)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(WAV_RATE)
        w.writeframes(pcm.tobytes())


# -- visual streams -------------------------------------------------------------

_VIS_MAGIC = b"AVISVIS1"
_VIS_HEADER = struct.Struct("<8sIIIq")


def write_visual(path, stream: VisualStream) -> None:
    frames = np.ascontiguousarray(stream.frames, dtype="<f4")
    t, d = frames.shape
    with open(path, "wb") as f:
        f.write(_VIS_HEADER.pack(_VIS_MAGIC, t, d, stream.fps, stream.identity_seed))
        f.write(frames.tobytes())


def read_visual(path) -> VisualStream:
    blob = Path(path).read_bytes()
    if len(blob) < _VIS_HEADER.size:
        raise ValueError(f"{path}: truncated visual header")
    magic, t, d, fps, seed = _VIS_HEADER.unpack_from(blob)
    if magic != _VIS_MAGIC:
        raise ValueError(f"{path}: not a visual stream file")
    body = blob[_VIS_HEADER.size:]
    if len(body) != 4 * t * d:
        raise ValueError(f"{path}: expected {4 * t * d} payload bytes, found {len(body)}")
    frames = np.frombuffer(body, dtype="<f4").reshape(t, d).astype(np.float32)
    return VisualStream(frames, seed, fps)


# -- checkpoints ------------------------------------------------------------------

CKPT_MAGIC = b"AVISCKPT"
CKPT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


def save_checkpoint(path, state: "OrderedDict[str, np.ndarray]", config: dict | None = None) -> None:
    """Header (magic, version, table of name/dtype/shape) then raw little-endian payloads.

    ``config`` goes to a human-readable sidecar ``<path>.ini``.
    """
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        key = name.encode("utf-8")
        parts.append(struct.pack("<H", len(key)) + key)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for arr in state.values():
        arr = np.asarray(arr)
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    Path(path).write_bytes(b"".join(parts))
    if config is not None:
        write_config(str(path) + ".ini", config)


def load_checkpoint(path) -> "OrderedDict[str, np.ndarray]":
    blob = Path(path).read_bytes()
    if blob[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    version, count = struct.unpack_from("<II", blob, 8)
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, reader supports {CKPT_VERSION}")
    off = 16
    table = []
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + klen].decode("utf-8")
        off += klen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        shape = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        if code not in _DTYPES:
            raise CheckpointError(f"{path}: unknown dtype code {code} for {name}")
        table.append((name, _DTYPES[code], shape))
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    for name, dt, shape in table:
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for {name}")
        out[name] = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return out


# -- config files ---------------------------------------------------------------

def write_config(path, sections: dict[str, dict]) -> None:
    cp = configparser.ConfigParser()
    for section, values in sections.items():
        cp[section] = {k: _fmt(v) for k, v in values.items()}
    with open(path, "w") as f:
        cp.write(f)


def _fmt(v) -> str:
    if isinstance(v, (list, tuple)):
        return ", ".join(str(x) for x in v)
    return "none" if v is None else str(v)


def read_config(path) -> dict[str, dict[str, str]]:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise FileNotFoundError(path)
    return {s: dict(cp[s]) for s in cp.sections()}


def coerce_dataclass(cls, values: dict[str, str]):
    """Build dataclass ``cls`` from string values, converting by field type."""
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    defaults = cls()
    kwargs = {}
    for key, raw in values.items():
        current = getattr(defaults, key)
        kwargs[key] = _parse_like(raw, current, known[key].type, key)
    return cls(**kwargs)


def _parse_like(raw: str, current, type_hint, key: str):
    raw = raw.strip()
    hint = str(type_hint)
    if raw.lower() == "none":
        if "None" in hint:
            return None
        raise ValueError(f"{key} may not be none")
    try:
        if isinstance(current, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(current, tuple):
            return tuple(float(x) for x in raw.split(","))
        if isinstance(current, int) and "float" not in hint:
            return int(raw)
        if isinstance(current, float) or "float" in hint:
            return float(raw)
        return raw
    except ValueError as err:
        raise ValueError(f"{key}: cannot parse {raw!r}") from err


# -- manifests ------------------------------------------------------------------

def write_manifest(path, records: Iterable[dict]) -> None:
    with open(path, "w") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def iter_manifest(path) -> Iterator[dict]:
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as err:
                raise ValueError(f"{path}:{lineno}: invalid manifest record ({err.msg})") from err


def write_table(path, header: Iterable[str], rows: Iterable[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(header), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_table(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
