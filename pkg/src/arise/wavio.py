"""Minimal RIFF/WAVE reader and writer.

float32 (format 3) is the default interchange format so metric checks are
free of quantization effects; pcm16 (format 1) is supported for interop.
Samples are exchanged as (channels, samples) arrays; files store frames
interleaved as usual.
"""

import struct

import numpy as np

from .errors import FileFormatError

FORMAT_FLOAT32 = "float32"
FORMAT_PCM16 = "pcm16"

_FMT_CODES = {FORMAT_PCM16: 1, FORMAT_FLOAT32: 3}


def write_wav(path, samples, sample_rate: int, fmt: str = FORMAT_FLOAT32) -> None:
    """Write (channels, samples) or (samples,) real data as a WAV file."""
    if fmt not in _FMT_CODES:
        raise FileFormatError(f"unsupported format {fmt!r}")
    data = np.asarray(samples)
    if data.ndim == 1:
        data = data[np.newaxis, :]
    if data.ndim != 2:
        raise FileFormatError(f"samples must be 1-D or 2-D, got shape {data.shape}")
    channels, _ = data.shape
    interleaved = np.ascontiguousarray(data.T)

    if fmt == FORMAT_FLOAT32:
        payload = interleaved.astype("<f4").tobytes()
        bits = 32
    else:
        clipped = np.clip(interleaved.astype(np.float64), -1.0, 1.0)
        payload = np.round(clipped * 32767.0).astype("<i2").tobytes()
        bits = 16

    code = _FMT_CODES[fmt]
    block_align = channels * bits // 8
    byte_rate = sample_rate * block_align
    fmt_chunk = struct.pack("<HHIIHH", code, channels, sample_rate, byte_rate, block_align, bits)

    chunks = [b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk]
    if fmt == FORMAT_FLOAT32:
        chunks.append(b"fact" + struct.pack("<II", 4, interleaved.shape[0]))
    if len(payload) % 2:
        payload += b"\x00"
    chunks.append(b"data" + struct.pack("<I", len(payload)) + payload)

    body = b"".join(chunks)
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE")
        fh.write(body)


def read_wav(path):
    """Read a WAV file.

    Return:
        (samples, sample_rate, fmt) with samples shaped (channels, n);
        float32 files keep their exact payload, pcm16 is scaled to [-1, 1].
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != b"RIFF" or blob[8:12] != b"WAVE":
        raise FileFormatError(f"{path}: not a RIFF/WAVE file")

    fmt_chunk = None
    data = None
    offset = 12
    while offset + 8 <= len(blob):
        tag = blob[offset : offset + 4]
        (size,) = struct.unpack("<I", blob[offset + 4 : offset + 8])
        start = offset + 8
        if start + size > len(blob):
            raise FileFormatError(f"{path}: chunk {tag!r} overruns the file")
        if tag == b"fmt ":
            fmt_chunk = blob[start : start + size]
        elif tag == b"data":
            data = blob[start : start + size]
        offset = start + size + (size % 2)
    if fmt_chunk is None or data is None:
        raise FileFormatError(f"{path}: missing fmt or data chunk")
    if len(fmt_chunk) < 16:
        raise FileFormatError(f"{path}: short fmt chunk")

    code, channels, sample_rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt_chunk[:16])
    if channels < 1 or block_align != channels * bits // 8:
        raise FileFormatError(f"{path}: inconsistent fmt chunk")
    if len(data) % block_align:
        raise FileFormatError(f"{path}: data chunk is not a whole number of frames")

    if code == 3 and bits == 32:
        flat = np.frombuffer(data, dtype="<f4")
        fmt = FORMAT_FLOAT32
    elif code == 1 and bits == 16:
        flat = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32767.0
        fmt = FORMAT_PCM16
    else:
        raise FileFormatError(f"{path}: unsupported format code {code} / {bits} bits")

    frames = flat.reshape(-1, channels)
    return np.ascontiguousarray(frames.T), sample_rate, fmt
