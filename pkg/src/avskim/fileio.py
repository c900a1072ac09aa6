"""Binary weight/feature containers, WAV helpers and JSON manifests.

All binary formats are little-endian regardless of host::

    weights   "AVSEW001" u32 count, then per tensor:
              u16 name_len, name (UTF-8), u8 rank, rank * u32 dims, float32 data
    features  "AVSEV001" u32 frames, u16 H, u16 W, u16 fps, float32 frames in [0, 1]
"""

from __future__ import annotations

import json
import struct
import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .nn_core import F32
from .weights import WeightStore

WEIGHT_MAGIC = b"AVSEW001"
FEATURE_MAGIC = b"AVSEV001"
SAMPLE_RATE = 16000
_LE_F32 = np.dtype("<f4")


class FormatError(ValueError):
    """A file is malformed or violates a format constraint."""


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.path}: truncated file (wanted {n} bytes at offset {self.pos})")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))


# -- weights ------------------------------------------------------------------


def save_weights(path, weights) -> None:
    parts = [WEIGHT_MAGIC, struct.pack("<I", len(weights))]
    for name in sorted(weights):
        arr = np.asarray(weights[name], F32)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(_LE_F32).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> WeightStore:
    r = _Reader(_read(path), path)
    if r.take(8) != WEIGHT_MAGIC:
        raise FormatError(f"{path}: not a weight file (bad magic)")
    (count,) = r.unpack("I")
    tensors = {}
    for _ in range(count):
        (n,) = r.unpack("H")
        name = r.take(n).decode("utf-8")
        (rank,) = r.unpack("B")
        dims = r.unpack(f"{rank}I")
        size = int(np.prod(dims, dtype=np.int64))
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = np.frombuffer(r.take(4 * size), _LE_F32).astype(F32).reshape(dims)
    if r.pos != len(r.data):
        raise FormatError(f"{path}: {len(r.data) - r.pos} trailing bytes")
    return WeightStore(tensors)


# -- visual features -------------------------------------------------------------


def save_features(path, frames: np.ndarray, fps) -> None:
    frames = np.asarray(frames, F32)
    if frames.ndim != 3:
        raise FormatError("features must be [T, H, W]")
    if float(fps) != int(fps) or int(fps) <= 0:
        raise FormatError(f"feature files store a positive integer fps, got {fps}")
    if frames.size and (frames.min() < 0 or frames.max() > 1):
        raise FormatError("feature values must lie in [0, 1]")
    t, h, w = frames.shape
    header = FEATURE_MAGIC + struct.pack("<IHHH", t, h, w, int(fps))
    Path(path).write_bytes(header + frames.astype(_LE_F32).tobytes())


def load_features(path):
    """Return ``(frames[T, H, W], fps)``."""
    r = _Reader(_read(path), path)
    if r.take(8) != FEATURE_MAGIC:
        raise FormatError(f"{path}: not a feature file (bad magic)")
    t, h, w, fps = r.unpack("IHHH")
    if fps == 0:
        raise FormatError(f"{path}: fps must be positive")
    expected = 4 * t * h * w
    if len(r.data) - r.pos != expected:
        raise FormatError(f"{path}: payload is {len(r.data) - r.pos} bytes, header implies {expected}")
    frames = np.frombuffer(r.take(expected), _LE_F32).astype(F32).reshape(t, h, w)
    return frames, fps


# -- audio -----------------------------------------------------------------------


def save_wav(path, x: np.ndarray, sample_rate: int = SAMPLE_RATE, pcm16: bool = False) -> None:
    x = np.asarray(x, F32).reshape(-1)
    if pcm16:
        data = np.clip(np.round(x.astype(np.float64) * 32768.0), -32768, 32767).astype(np.int16)
    else:
        data = x
    wavfile.write(str(path), sample_rate, data)


def load_wav(path, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Mono 16-bit PCM (scaled by 1/32768) or 32-bit float WAV; no resampling."""
    _read(path)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(str(path))
    except (ValueError, EOFError, struct.error) as exc:
        raise FormatError(f"{path}: unreadable WAV ({exc})") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: {data.shape[1]} channels; only mono audio is supported")
    if rate != sample_rate:
        raise FormatError(f"{path}: sample rate {rate} Hz; expected {sample_rate} Hz (resampling is not performed)")
    if data.dtype == np.int16:
        return (data.astype(np.float64) / 32768.0).astype(F32)
    if data.dtype == np.float32:
        return data.astype(F32)
    raise FormatError(f"{path}: sample format {data.dtype} unsupported; use 16-bit PCM or 32-bit float")


# -- manifests ---------------------------------------------------------------------


def save_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def load_json(path):
    try:
        return json.loads(_read(path).decode("utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def _read(path) -> bytes:
    return Path(path).read_bytes()
