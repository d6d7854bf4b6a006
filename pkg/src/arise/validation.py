"""Input validation helpers used by the estimator API and the DSP modules."""

import numpy as np

from .errors import NonFiniteError, ShapeMismatchError


def ensure_finite(name, arr):
    """Raise NonFiniteError if ``arr`` contains NaN or infinities."""
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite values")
    return arr


def as_waveform(x, name="signal"):
    """Coerce to a float64 1-D waveform and validate it."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatchError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeMismatchError(f"{name} is empty")
    ensure_finite(name, arr)
    return arr


def as_multichannel(x, name="signal", min_channels=1):
    """Coerce to a float64 (channels, samples) waveform and validate it.

    A 1-D input is promoted to a single channel.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[np.newaxis, :]
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be (channels, samples), got {arr.shape}")
    if arr.shape[0] < min_channels:
        raise ShapeMismatchError(
            f"{name} needs at least {min_channels} channels, got {arr.shape[0]}"
        )
    if arr.shape[1] == 0:
        raise ShapeMismatchError(f"{name} is empty")
    ensure_finite(name, arr)
    return arr


def as_spectrogram(x, name="spectrogram"):
    """Coerce to a complex128 (frames, bins) spectrogram and validate it."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"{name} must be (frames, bins), got {arr.shape}")
    ensure_finite(name, arr)
    return arr


def as_multichannel_spectrogram(x, name="spectrogram"):
    """Coerce to a complex128 (channels, frames, bins) spectrogram and validate it."""
    arr = np.asarray(x, dtype=np.complex128)
    if arr.ndim != 3:
        raise ShapeMismatchError(
            f"{name} must be (channels, frames, bins), got {arr.shape}"
        )
    if min(arr.shape) == 0:
        raise ShapeMismatchError(f"{name} has an empty dimension: {arr.shape}")
    ensure_finite(name, arr)
    return arr
