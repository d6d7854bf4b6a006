"""Complex ratio masks: construction, magnitude clipping, application.

The mask at the reference channel scales every channel of the mixture when
forming the multichannel target estimate, so one mask instance per frame is
shared across channels.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatchError
from .validation import as_multichannel_spectrogram, as_spectrogram

DEFAULT_CLIP_MAG = 5.0

# Mixture bins below this magnitude are treated as silent: the ratio mask is
# defined as 0 there instead of dividing by a vanishing value.
NEAR_ZERO_MIXTURE = 1e-12


def clip_magnitude(values, clip_mag: float) -> np.ndarray:
    """Scale complex values so their magnitude never exceeds ``clip_mag``.

    Values already within the bound are returned bit-exactly; an infinite
    ``clip_mag`` disables clipping.
    """
    v = np.asarray(values, dtype=np.complex128)
    if np.isinf(clip_mag):
        return v.copy()
    if clip_mag <= 0:
        raise ValueError("clip_mag must be positive")
    mag = np.abs(v)
    over = mag > clip_mag
    if not np.any(over):
        return v.copy()
    scale = np.ones_like(mag)
    scale[over] = clip_mag / mag[over]
    return v * scale


@dataclass
class ComplexMask:
    """Per-T-F complex ratio mask, magnitude-clipped at construction."""

    values: np.ndarray
    clip_mag: float = DEFAULT_CLIP_MAG

    def __post_init__(self):
        self.values = clip_magnitude(np.asarray(self.values, np.complex128), self.clip_mag)

    @property
    def shape(self):
        return self.values.shape


def oracle_crm(x_ref, y_ref, clip_mag: float = DEFAULT_CLIP_MAG) -> ComplexMask:
    """Oracle complex ratio mask ``X(t,f) / Y(t,f)`` at the reference channel.

    Bins where the mixture magnitude is below NEAR_ZERO_MIXTURE yield mask 0.
    """
    x = as_spectrogram(x_ref, "target spectrogram")
    y = as_spectrogram(y_ref, "mixture spectrogram")
    if x.shape != y.shape:
        raise ShapeMismatchError(f"target/mixture shapes differ: {x.shape} vs {y.shape}")
    live = np.abs(y) >= NEAR_ZERO_MIXTURE
    ratio = np.zeros_like(y)
    np.divide(x, y, out=ratio, where=live)
    return ComplexMask(ratio, clip_mag)


def apply_mask(mask, y, channel: int = 0) -> np.ndarray:
    """Apply a reference-channel mask to channel ``channel`` of the mixture.

    Arguments:
        mask: ComplexMask or (frames, bins) complex array
        y: (channels, frames, bins) complex mixture spectrogram
    Return:
        (frames, bins) complex masked spectrogram
    """
    values = mask.values if isinstance(mask, ComplexMask) else np.asarray(mask, np.complex128)
    spec = as_multichannel_spectrogram(y, "mixture spectrogram")
    if not 0 <= channel < spec.shape[0]:
        raise ShapeMismatchError(f"channel {channel} out of range for {spec.shape[0]} channels")
    if values.shape != spec.shape[1:]:
        raise ShapeMismatchError(
            f"mask shape {values.shape} does not match frames/bins {spec.shape[1:]}"
        )
    return spec[channel] * values
