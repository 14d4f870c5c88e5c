"""WAV file reading/writing and the in-memory audio buffer types.

Only uncompressed RIFF/WAVE is supported: 16-bit integer PCM and 32-bit
IEEE float, optionally wrapped in WAVE_FORMAT_EXTENSIBLE. Multichannel
files are reduced to channel 0.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CANONICAL_RATE = 48000

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
# Trailing 14 bytes shared by the KSDATAFORMAT_SUBTYPE_* GUIDs.
_GUID_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


class WavError(ValueError):
    """Raised for malformed or unsupported WAV data."""


def _frozen(samples) -> np.ndarray:
    arr = np.array(samples, dtype=np.float64, copy=True).reshape(-1)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    """Mono float64 samples (nominal full scale +-1.0) at ``sample_rate`` Hz."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be a positive integer, got {self.sample_rate!r}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))
        object.__setattr__(self, "samples", _frozen(self.samples))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.samples)))


@dataclass(frozen=True, eq=False)
class ImpulseResponse(AudioBuffer):
    """An AudioBuffer holding a car impulse response; ``label`` is the car id."""

    label: str = field(default="")

    def __post_init__(self):
        super().__post_init__()
        if len(self) == 0:
            raise ValueError("impulse response must be nonempty")
        if not self.is_finite():
            raise ValueError("impulse response contains non-finite samples")


def _read_chunks(data: bytes):
    if len(data) < 12:
        raise WavError("file too short for a RIFF header")
    riff, riff_size, wave = struct.unpack("<4sI4s", data[:12])
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavError("not a RIFF/WAVE file")
    if riff_size + 8 > len(data):
        raise WavError(f"truncated file: RIFF size {riff_size + 8} > {len(data)} bytes")
    pos, end = 12, riff_size + 8
    chunks = {}
    while pos < end:
        if pos + 8 > end:
            raise WavError("truncated chunk header")
        cid, size = struct.unpack("<4sI", data[pos:pos + 8])
        body_start = pos + 8
        if body_start + size > end:
            raise WavError(f"truncated {cid!r} chunk")
        chunks.setdefault(cid, data[body_start:body_start + size])
        pos = body_start + size + (size & 1)
    return chunks


def _parse_fmt(fmt: bytes):
    if len(fmt) < 16:
        raise WavError("fmt chunk too short")
    tag, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 40:
            raise WavError("extensible fmt chunk too short")
        guid = fmt[24:40]
        if guid[2:] != _GUID_TAIL:
            raise WavError("unsupported extensible sub-format")
        tag = struct.unpack("<H", guid[:2])[0]
    if channels < 1:
        raise WavError("fmt chunk declares zero channels")
    if rate <= 0:
        raise WavError("fmt chunk declares zero sample rate")
    if (tag, bits) == (WAVE_FORMAT_PCM, 16):
        dtype = np.dtype("<i2")
    elif (tag, bits) == (WAVE_FORMAT_IEEE_FLOAT, 32):
        dtype = np.dtype("<f4")
    else:
        raise WavError(f"unsupported codec/bit depth: format tag {tag:#06x}, {bits} bits")
    if block_align != channels * dtype.itemsize:
        raise WavError(f"inconsistent block_align {block_align}")
    return dtype, channels, rate


def read_wav(path, expected_rate: int | None = CANONICAL_RATE) -> AudioBuffer:
    """Read a 16-bit PCM or 32-bit float WAV file into an AudioBuffer.

    Integer samples are divided by 32768. If ``expected_rate`` is given
    (the default is 48 kHz) files at any other rate are rejected, since
    resampling is not supported.
    """
    data = Path(path).read_bytes()
    chunks = _read_chunks(data)
    if b"fmt " not in chunks:
        raise WavError("missing fmt chunk")
    if b"data" not in chunks:
        raise WavError("missing data chunk")
    dtype, channels, rate = _parse_fmt(chunks[b"fmt "])
    raw = chunks[b"data"]
    frame = channels * dtype.itemsize
    if len(raw) == 0:
        raise WavError("zero-length data chunk")
    if len(raw) % frame:
        raise WavError("data chunk is not a whole number of frames")
    if expected_rate is not None and rate != expected_rate:
        raise WavError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (resampling is not supported)")
    frames = np.frombuffer(raw, dtype=dtype).reshape(-1, channels)
    if channels > 1:
        log.warning("%s: %d channels, using channel 0 only", path, channels)
    mono = frames[:, 0].astype(np.float64)
    if dtype.kind == "i":
        mono /= 32768.0
    if not np.all(np.isfinite(mono)):
        raise WavError(f"{path}: non-finite samples")
    return AudioBuffer(mono, rate)


def write_wav(path, buf: AudioBuffer, format: str = "float32") -> None:
    """Write ``buf`` as a mono WAV file, ``format`` is 'pcm16' or 'float32'.

    pcm16 rounds to nearest and saturates; samples beyond +-1.0 only
    produce a warning.
    """
    x = buf.samples
    if not np.all(np.isfinite(x)):
        raise ValueError("cannot write non-finite samples")
    if x.size and np.max(np.abs(x)) > 1.0:
        log.warning("%s: %d samples exceed full scale", path, int(np.sum(np.abs(x) > 1.0)))
    if format == "pcm16":
        payload = np.clip(np.rint(x * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = WAVE_FORMAT_PCM, 16
    elif format == "float32":
        payload = x.astype("<f4").tobytes()
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
    else:
        raise ValueError(f"unknown WAV format {format!r}")
    width = bits // 8
    fmt = struct.pack("<HHIIHH", tag, 1, buf.sample_rate, buf.sample_rate * width, width, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload
    if len(payload) & 1:
        body += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
