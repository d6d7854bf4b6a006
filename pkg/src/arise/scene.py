"""Synthetic multi-channel scene generation.

A far-field plane-wave model stands in for room simulation: each source is
steered onto the array with pure relative delays (windowed-sinc fractional
delay filters), optionally followed by an exponential-decay tail that mimics
reverberant smearing.  This keeps every scene verifiable with closed-form
oracles while still exercising spatial diversity.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import AriseError, ConfigError, DegenerateSceneError, ShapeMismatchError
from .validation import as_waveform, ensure_finite

SPEED_OF_SOUND = 343.0

# Fractional delays use a 33-tap Hann-windowed sinc (< 0.1 dB in-band ripple).
_DELAY_TAPS = 33
_DELAY_CENTER = 16

# Generated scenes are normalized so the reference-channel mixture sits at
# this RMS level; trained estimators therefore see a consistent input scale.
NOMINAL_MIXTURE_RMS = 0.1

SOURCE_KINDS = ("speech_like", "tonal", "white", "babble_like")

_DEFAULT_NOISE_AZIMUTHS = (0.7, 2.2, 3.6, 5.1)


@dataclass(frozen=True)
class ArrayGeometry:
    """Microphone positions in meters, shape (M, 3)."""

    mic_positions: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.mic_positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ConfigError(f"mic_positions must be (M, 3), got {pos.shape}")
        if pos.shape[0] < 2:
            raise ConfigError("need at least 2 microphones")
        deltas = pos[:, None, :] - pos[None, :, :]
        dist = np.sqrt(np.sum(deltas**2, axis=-1))
        if np.any(dist[~np.eye(pos.shape[0], dtype=bool)] == 0.0):
            raise ConfigError("microphone positions must be distinct")
        object.__setattr__(self, "mic_positions", pos)

    @classmethod
    def uniform_circular(cls, num_mics: int = 6, radius: float = 0.08) -> "ArrayGeometry":
        """Uniform circular array in the z=0 plane."""
        angles = 2.0 * np.pi * np.arange(num_mics) / num_mics
        pos = np.stack(
            [radius * np.cos(angles), radius * np.sin(angles), np.zeros(num_mics)], axis=1
        )
        return cls(pos)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    def max_aperture(self) -> float:
        deltas = self.mic_positions[:, None, :] - self.mic_positions[None, :, :]
        return float(np.sqrt(np.sum(deltas**2, axis=-1)).max())


@dataclass(frozen=True)
class SceneSpec:
    """One synthetic scene: a target source, noise sources, an SNR."""

    target_azimuth: float = 0.0
    noise_azimuths: tuple = _DEFAULT_NOISE_AZIMUTHS
    snr_db: float = 0.0
    duration: float = 2.0
    t60_s: float | None = None  # optional exponential decay tail
    seed: int = 0

    def __post_init__(self):
        if not math.isfinite(self.snr_db):
            raise ConfigError("snr_db must be finite")
        if self.duration <= 0:
            raise ConfigError("duration must be positive")
        if self.t60_s is not None and self.t60_s <= 0:
            raise ConfigError("t60_s must be positive when given")
        object.__setattr__(self, "noise_azimuths", tuple(float(a) for a in self.noise_azimuths))


@dataclass
class Scene:
    """Generated multichannel signals satisfying mixture = target + noise."""

    mixture: np.ndarray  # (M, L)
    target: np.ndarray   # (M, L) direct-path target
    noise: np.ndarray    # (M, L) everything else
    spec: SceneSpec
    sample_rate: int


def _fractional_delay_kernel(frac: float) -> np.ndarray:
    """Hann-windowed sinc delaying by (_DELAY_CENTER + frac) samples."""
    u = np.arange(_DELAY_TAPS) - (_DELAY_CENTER + frac)
    half = _DELAY_TAPS / 2.0  # 16.5: window reaches zero just outside the taps
    window = np.where(np.abs(u) < half, 0.5 + 0.5 * np.cos(np.pi * u / half), 0.0)
    return np.sinc(u) * window


def steer(geometry: ArrayGeometry, azimuth: float, source, sample_rate: int) -> np.ndarray:
    """Delay a mono source onto every microphone as a far-field plane wave.

    The per-channel delay is -(d . p_m) / c with d the unit vector pointing
    toward the source, normalized so the earliest channel has zero delay.
    All channels share a constant _DELAY_CENTER-sample filter latency.

    Return:
        (M, len(source) + margin) array; the margin absorbs the filter tail.
    """
    src = as_waveform(source, "source")
    direction = np.array([np.cos(azimuth), np.sin(azimuth), 0.0])
    delays = -(geometry.mic_positions @ direction) / SPEED_OF_SOUND
    delays -= delays.min()
    delay_samples = delays * sample_rate

    margin = _DELAY_TAPS + int(np.ceil(geometry.max_aperture() / SPEED_OF_SOUND * sample_rate))
    out = np.zeros((geometry.num_mics, src.shape[0] + margin))
    for m in range(geometry.num_mics):
        whole = int(np.floor(delay_samples[m]))
        kernel = _fractional_delay_kernel(delay_samples[m] - whole)
        shifted = np.convolve(src, kernel)
        out[m, whole : whole + shifted.shape[0]] = shifted
    return out


def mix(target, noises, snr_db: float):
    """Scale the noise sum to hit the requested reference-channel SNR.

    Arguments:
        target: (M, L) direct-path target
        noises: list of (M, L) noise signals (at least one)
        snr_db: 10*log10(P_target / P_noise) at channel 0
    Return:
        (mixture, target, noise) with mixture = target + noise exactly.
    """
    x = np.asarray(target, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"target must be (M, L), got {x.shape}")
    if not noises:
        raise DegenerateSceneError("scene needs at least one noise source")
    n_sum = np.zeros_like(x)
    for i, nz in enumerate(noises):
        nz = np.asarray(nz, dtype=np.float64)
        if nz.shape != x.shape:
            raise ShapeMismatchError(
                f"noise {i} shape {nz.shape} does not match target {x.shape}"
            )
        n_sum += nz
    if not math.isfinite(snr_db):
        raise AriseError("snr_db must be finite")

    p_target = float(np.mean(x[0] ** 2))
    p_noise = float(np.mean(n_sum[0] ** 2))
    if p_target <= 0.0 or p_noise <= 0.0:
        raise DegenerateSceneError("zero-power target or noise at the reference channel")
    gain = math.sqrt(p_target / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixture = x + gain * n_sum
    # the returned noise is mixture - target by construction, so the
    # three-way identity holds bit-exactly
    return mixture, x.copy(), mixture - x


def _band_limit(x: np.ndarray, sample_rate: int) -> np.ndarray:
    """Flat passband up to 0.88 Nyquist with a cosine roll-off to 0.90.

    The band edge stays inside the fractional-delay filters' passband so
    steering remains energy-preserving, while the flat region still covers
    7 kHz at a 16 kHz rate.
    """
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(x.shape[0], 1.0 / sample_rate)
    nyq = sample_rate / 2.0
    lo, hi = 0.88 * nyq, 0.90 * nyq
    gain = np.ones_like(freqs)
    ramp = (freqs >= lo) & (freqs < hi)
    gain[ramp] = 0.5 + 0.5 * np.cos(np.pi * (freqs[ramp] - lo) / (hi - lo))
    gain[freqs >= hi] = 0.0
    return np.fft.irfft(spec * gain, x.shape[0])


def _speech_like(num, sample_rate, rng):
    """Amplitude-modulated harmonic bursts separated by silent gaps.

    Bursts last 0.15-0.35 s and every gap is at least 0.12 s, so any 2 s
    stretch contains at least one full silent gap.
    """
    out = np.zeros(num)
    nyq = sample_rate / 2.0
    pos = 0
    while pos < num:
        burst = int(rng.uniform(0.15, 0.35) * sample_rate)
        gap = int(rng.uniform(0.12, 0.28) * sample_rate)
        f0 = rng.uniform(110.0, 220.0)
        drift = rng.uniform(-0.12, 0.12)
        tt = np.arange(burst) / sample_rate
        inst = f0 * (1.0 + drift * tt / max(tt[-1], 1e-9)) if burst > 1 else np.full(burst, f0)
        phase = 2.0 * np.pi * np.cumsum(inst) / sample_rate
        sig = np.zeros(burst)
        max_harm = max(1, min(24, int(0.85 * nyq / f0)))
        resonance = rng.uniform(300.0, 2500.0)
        for k in range(1, max_harm + 1):
            fk = k * f0
            shaping = 1.0 / k * (1.0 + 1.5 * np.exp(-((fk - resonance) / 400.0) ** 2))
            sig += shaping * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
        attack = max(1, int(0.02 * sample_rate))
        env = np.ones(burst)
        env[:attack] = np.linspace(0.0, 1.0, attack)
        env[-attack:] *= np.linspace(1.0, 0.0, attack)
        env *= 1.0 + 0.3 * np.sin(2.0 * np.pi * rng.uniform(2.0, 5.0) * tt + rng.uniform(0, 2 * np.pi))
        chunk = (sig * env)[: num - pos]
        out[pos : pos + chunk.shape[0]] = chunk
        pos += burst + gap
    return out


def synth_source(kind: str, duration: float, seed: int, sample_rate: int = 16000) -> np.ndarray:
    """Deterministic mono test source, peak-normalized to 1.

    Kinds: speech_like (harmonic bursts with pauses), tonal (few steady
    sinusoids), white (flat band-limited noise), babble_like (overlapped
    speech-like streams).
    """
    if kind not in SOURCE_KINDS:
        raise ConfigError(f"unknown source kind {kind!r}; choose one of {SOURCE_KINDS}")
    if duration <= 0:
        raise ConfigError("duration must be positive")
    num = int(round(duration * sample_rate))
    rng = np.random.default_rng(seed)

    if kind == "white":
        x = _band_limit(rng.standard_normal(num), sample_rate)
    elif kind == "tonal":
        tt = np.arange(num) / sample_rate
        x = np.zeros(num)
        for _ in range(4):
            freq = rng.uniform(200.0, 0.35 * sample_rate)
            x += rng.uniform(0.4, 1.0) * np.sin(2.0 * np.pi * freq * tt + rng.uniform(0, 2 * np.pi))
    elif kind == "speech_like":
        x = _speech_like(num, sample_rate, rng)
    else:  # babble_like
        x = np.zeros(num)
        for _ in range(5):
            stream = _speech_like(num, sample_rate, np.random.default_rng(rng.integers(2**31)))
            x += np.roll(stream, int(rng.integers(num)))

    peak = np.max(np.abs(x))
    if peak > 0:
        x = x / peak
    return x


def _fft_convolve(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = a.shape[0] + b.shape[0] - 1
    size = 1 << (n - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(a, size) * np.fft.rfft(b, size), size)[:n]


def _decay_tail(channels: np.ndarray, t60_s: float, sample_rate: int, rng) -> np.ndarray:
    """Per-channel diffuse tail: noise shaped by a -60 dB/t60 exponential.

    Returns the tail component only (direct path excluded), truncated to the
    input length.
    """
    num_mics, num = channels.shape
    onset = max(1, int(0.002 * sample_rate))
    length = min(num, int(1.1 * t60_s * sample_rate))
    decay = 10.0 ** (-3.0 * np.arange(length) / (t60_s * sample_rate))
    tail_energy = min(2.0, 1.8 * t60_s)
    out = np.zeros_like(channels)
    for m in range(num_mics):
        impulse = rng.standard_normal(length) * decay
        impulse[:onset] = 0.0
        power = float(np.sum(impulse**2))
        if power > 0:
            impulse *= math.sqrt(tail_energy / power)
        out[m] = _fft_convolve(channels[m], impulse)[:num]
    return out


def simulate_scene(geometry: ArrayGeometry, spec: SceneSpec,
                   sample_rate: int = 16000) -> Scene:
    """Build one scene: steered target + steered noises mixed at the SNR.

    The target's optional reverberant tail counts as noise, so the identity
    mixture = direct-target + noise holds exactly and the SNR contract is
    measured against the direct path.
    """
    rng = np.random.default_rng(spec.seed)
    seeds = rng.integers(0, 2**31 - 1, size=2 + len(spec.noise_azimuths))

    target_src = synth_source("speech_like", spec.duration, int(seeds[0]), sample_rate)
    target = steer(geometry, spec.target_azimuth, target_src, sample_rate)

    noise_kinds = ["white", "babble_like", "tonal"]
    noises = []
    for i, azimuth in enumerate(spec.noise_azimuths):
        kind = noise_kinds[i % len(noise_kinds)]
        src = synth_source(kind, spec.duration, int(seeds[1 + i]), sample_rate)
        noises.append(steer(geometry, azimuth, src, sample_rate))

    if spec.t60_s is not None:
        tail_rng = np.random.default_rng(int(seeds[-1]))
        noises = [nz + _decay_tail(nz, spec.t60_s, sample_rate, tail_rng) for nz in noises]
        noises.append(_decay_tail(target, spec.t60_s, sample_rate, tail_rng))

    mixture, target, noise = mix(target, noises, spec.snr_db)

    rms = float(np.sqrt(np.mean(mixture[0] ** 2)))
    gain = NOMINAL_MIXTURE_RMS / rms
    target *= gain
    noise *= gain
    mixture = target + noise

    ensure_finite("scene", mixture)
    return Scene(mixture=mixture, target=target, noise=noise, spec=spec, sample_rate=sample_rate)
