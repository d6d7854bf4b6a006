"""Streaming STFT analysis and overlap-add synthesis.

Square-root Hann windows are used for both analysis and synthesis.  At the
default 50% overlap their product sums to one across hops, so a round trip
through analyze/synthesize reconstructs the signal exactly (up to float
rounding) on the interior region.  Signals are zero-padded by
``window_len - hop`` on both ends so that the first frame exists and the
interior covers the whole original signal.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError, LengthMismatchError, NonFiniteError, ShapeMismatchError

WINDOW_SQRT_HANN = "sqrt_hann"


@dataclass(frozen=True)
class StftConfig:
    """Framing parameters.  Defaults give 20 ms windows, 10 ms hop, 161 bins."""

    sample_rate: int = 16000
    window_len: int = 320
    hop: int = 160
    fft_len: int = 0  # 0 means "same as window_len"
    window: str = WINDOW_SQRT_HANN

    def __post_init__(self):
        if self.window != WINDOW_SQRT_HANN:
            raise ConfigError(f"unsupported window {self.window!r}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.window_len <= 0 or self.hop <= 0:
            raise ConfigError("window_len and hop must be positive")
        if self.window_len % self.hop != 0:
            raise ConfigError(
                f"hop ({self.hop}) must divide window_len ({self.window_len})"
            )
        if self.n_fft < self.window_len:
            raise ConfigError("fft_len must be >= window_len")

    @property
    def n_fft(self) -> int:
        return self.fft_len if self.fft_len else self.window_len

    @property
    def num_bins(self) -> int:
        return self.n_fft // 2 + 1

    @property
    def pad(self) -> int:
        """Zero padding applied to each end of the signal before framing."""
        return self.window_len - self.hop


def sqrt_hann(window_len: int) -> np.ndarray:
    """Periodic square-root Hann window of the given length."""
    n = np.arange(window_len)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / window_len))


@lru_cache(maxsize=8)
def _window(window_len):
    return sqrt_hann(window_len)


def analyze_frame(cfg: StftConfig, samples) -> np.ndarray:
    """Transform one windowed frame of real samples.

    Arguments:
        samples: (window_len,) or (channels, window_len) real samples
    Return:
        (num_bins,) or (channels, num_bins) complex bins
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.shape[-1] != cfg.window_len:
        raise LengthMismatchError(
            f"expected {cfg.window_len} samples per channel, got {x.shape[-1]}"
        )
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("frame contains non-finite samples")
    return np.fft.rfft(x * _window(cfg.window_len), n=cfg.n_fft, axis=-1)


def analyze(cfg: StftConfig, signal) -> np.ndarray:
    """Full-signal STFT.

    Arguments:
        signal: (num_samples,) or (channels, num_samples) real samples
    Return:
        (frames, num_bins) or (channels, frames, num_bins) complex spectrogram
    """
    x = np.asarray(signal, dtype=np.float64)
    mono = x.ndim == 1
    x = np.atleast_2d(x)
    if x.ndim != 2 or x.shape[1] == 0:
        raise ShapeMismatchError(f"signal must be 1-D or 2-D and nonempty, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("signal contains non-finite samples")

    num = x.shape[1]
    rounded = -(-num // cfg.hop) * cfg.hop  # round up to a hop multiple
    xp = np.pad(x, ((0, 0), (cfg.pad, cfg.pad + rounded - num)))
    frames = np.lib.stride_tricks.sliding_window_view(xp, cfg.window_len, axis=1)
    frames = frames[:, :: cfg.hop, :]
    spec = np.fft.rfft(frames * _window(cfg.window_len), n=cfg.n_fft, axis=-1)
    return spec[0] if mono else spec


def synthesize(cfg: StftConfig, spec) -> np.ndarray:
    """Overlap-add synthesis of a single-channel spectrogram.

    Arguments:
        spec: (frames, num_bins) complex
    Return:
        ((frames - 1) * hop + window_len,) real samples, un-trimmed
    """
    s = np.asarray(spec, dtype=np.complex128)
    if s.ndim != 2:
        raise ShapeMismatchError(f"spectrogram must be 2-D, got shape {s.shape}")
    if s.shape[1] != cfg.num_bins:
        raise ShapeMismatchError(
            f"expected {cfg.num_bins} bins per frame, got {s.shape[1]}"
        )
    win = _window(cfg.window_len)
    frames = np.fft.irfft(s, n=cfg.n_fft, axis=-1)[:, : cfg.window_len] * win
    num_frames = frames.shape[0]
    out = np.zeros((num_frames - 1) * cfg.hop + cfg.window_len)
    for t in range(num_frames):
        out[t * cfg.hop : t * cfg.hop + cfg.window_len] += frames[t]
    return out


def reconstruct(cfg: StftConfig, spec, num_samples: int) -> np.ndarray:
    """Synthesize and trim back to the original signal region.

    Inverts ``analyze`` for a signal of ``num_samples`` samples.
    """
    y = synthesize(cfg, spec)
    out = y[cfg.pad : cfg.pad + num_samples]
    if out.shape[0] < num_samples:
        out = np.pad(out, (0, num_samples - out.shape[0]))
    return out
