"""Frame-online auto-regressive inference loop.

Per frame: (1) beamform the mixture with the weights carried from the
previous frame, (2) run the mask estimator on the mixture frame plus the
gated auto-regressive features, (3) scale every channel by the clipped mask
to form the target estimate, (4) fold the estimate into the running SCMs,
(5) recompute the beamformer weights for the next frame.  Weights used at
frame t therefore always derive from data up to frame t-1 only.

With ``ar_inputs`` set so the beamformed feature is never consumed the SCM
and weight updates are skipped entirely and the loop reduces to plain
frame-wise masking.
"""

import time
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from . import stft as tfx
from .beamforming import (
    BF_CURR_FRAME,
    BF_OPTIONS,
    BeamformerWeights,
    DEFAULT_DIAG_LOAD,
    ScmPair,
    apply_bf,
    mvdr_weights,
    scm_update,
)
from .errors import AriseError, NonFiniteError, ShapeMismatchError
from .estimator import EstimatorInput
from .masking import DEFAULT_CLIP_MAG, clip_magnitude
from .validation import as_multichannel_spectrogram

AR_BF_ONLY = "bf_only"
AR_NN_ONLY = "nn_only"
AR_BOTH = "both"
AR_NONE = "none"
AR_OPTIONS = (AR_BF_ONLY, AR_NN_ONLY, AR_BOTH, AR_NONE)


@dataclass(frozen=True)
class ArConfig:
    """Inference-loop knobs mirroring the ablation axes.

    ``weight_stride`` recomputes the beamformer every k-th frame instead of
    every frame; it exists for latency experiments and defaults to the
    per-frame behaviour.
    """

    bf_option: str = BF_CURR_FRAME
    ar_inputs: str = AR_BOTH
    diag_load: float = DEFAULT_DIAG_LOAD
    clip_mag: float = DEFAULT_CLIP_MAG
    forgetting: float = 1.0
    ref_channel: int = 0
    weight_stride: int = 1

    def __post_init__(self):
        if self.bf_option not in BF_OPTIONS:
            raise AriseError(f"unknown bf_option {self.bf_option!r}")
        if self.ar_inputs not in AR_OPTIONS:
            raise AriseError(f"unknown ar_inputs {self.ar_inputs!r}")
        if self.clip_mag <= 0:
            raise AriseError("clip_mag must be positive")
        if not 0.0 < self.forgetting <= 1.0:
            raise AriseError("forgetting must be in (0, 1]")
        if self.diag_load < 0:
            raise AriseError("diag_load must be non-negative")
        if self.weight_stride < 1:
            raise AriseError("weight_stride must be at least 1")

    @property
    def uses_bf_feature(self) -> bool:
        return self.ar_inputs in (AR_BF_ONLY, AR_BOTH)

    @property
    def uses_prev_estimate(self) -> bool:
        return self.ar_inputs in (AR_NN_ONLY, AR_BOTH)


@dataclass
class ArState:
    """Loop-carried state.  ``weights.frames_seen`` always equals
    ``frame_index``: the weights were computed from the frames before the
    one about to be processed."""

    scm: ScmPair
    weights: BeamformerWeights
    prev_est: np.ndarray   # (F,) previous reference-channel estimate
    prev_y: np.ndarray     # (M, F) previous mixture frame
    frame_index: int
    est_state: Any


def initial_state(cfg: ArConfig, est, num_mics: int, num_bins: int) -> ArState:
    return ArState(
        scm=ScmPair.zeros(num_bins, num_mics, forgetting=cfg.forgetting),
        weights=BeamformerWeights.inactive(num_bins, num_mics, cfg.ref_channel),
        prev_est=np.zeros(num_bins, dtype=np.complex128),
        prev_y=np.zeros((num_mics, num_bins), dtype=np.complex128),
        frame_index=0,
        est_state=est.init_state(num_bins),
    )


def _frame_step(state: ArState, cfg: ArConfig, est, y_frame):
    y = np.asarray(y_frame, dtype=np.complex128)
    num_mics, num_bins = state.prev_y.shape
    if y.shape != (num_mics, num_bins):
        raise ShapeMismatchError(f"expected frame {(num_mics, num_bins)}, got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise NonFiniteError("mixture frame contains non-finite values")

    zeros = np.zeros(num_bins, dtype=np.complex128)
    if cfg.uses_bf_feature:
        bf = apply_bf(state.weights, state.prev_y, y, cfg.bf_option)
    else:
        bf = zeros
    est_in = EstimatorInput(
        y_frame=y,
        bf_frame=bf,
        prev_est_frame=state.prev_est if cfg.uses_prev_estimate else zeros,
    )
    mask, est_state = est.step(state.est_state, est_in)
    if getattr(est, "emits_clipped", False):
        z = np.asarray(mask, dtype=np.complex128)
    else:
        z = clip_magnitude(mask, cfg.clip_mag)
    x_hat = y * z[np.newaxis, :]
    estimate = x_hat[cfg.ref_channel]

    if cfg.uses_bf_feature:
        scm = scm_update(state.scm, x_hat, y)
        if scm.frames_seen % cfg.weight_stride == 0:
            weights = mvdr_weights(scm, cfg.ref_channel, cfg.diag_load)
        else:
            weights = state.weights
    else:
        scm, weights = state.scm, state.weights

    new_state = ArState(
        scm=scm,
        weights=weights,
        prev_est=estimate,
        prev_y=y,
        frame_index=state.frame_index + 1,
        est_state=est_state,
    )
    return estimate, new_state, np.asarray(mask, dtype=np.complex128), bf


def process_frame(state: ArState, cfg: ArConfig, est, y_frame):
    """Advance the loop one frame.

    Arguments:
        y_frame: (M, F) complex mixture frame
    Return:
        (estimate, new_state): the (F,) reference-channel estimate for this
        frame and the carried state for the next one.
    """
    estimate, new_state, _, _ = _frame_step(state, cfg, est, y_frame)
    return estimate, new_state


@dataclass
class EngineTrace:
    """Per-frame intermediates from a full run."""

    estimates: np.ndarray  # (T, F) reference-channel estimates
    masks: np.ndarray      # (T, F) raw estimator outputs (pre-clip)
    bf: np.ndarray         # (T, F) beamformed features (zeros when skipped)


def process_utterance(cfg: ArConfig, est, y_spec, return_trace: bool = False):
    """Run the loop over a whole spectrogram with fresh state.

    Arguments:
        y_spec: (M, T, F) complex mixture spectrogram
    Return:
        (T, F) estimate spectrogram, or (estimates, EngineTrace) when
        ``return_trace`` is set.
    """
    y = as_multichannel_spectrogram(y_spec, "mixture spectrogram")
    num_mics, num_frames, num_bins = y.shape
    state = initial_state(cfg, est, num_mics, num_bins)

    estimates = np.empty((num_frames, num_bins), dtype=np.complex128)
    masks = np.empty_like(estimates) if return_trace else None
    bfs = np.empty_like(estimates) if return_trace else None
    for t in range(num_frames):
        estimates[t], state, mask_raw, bf = _frame_step(state, cfg, est, y[:, t, :])
        if return_trace:
            masks[t] = mask_raw
            bfs[t] = bf

    if return_trace:
        return estimates, EngineTrace(estimates=estimates.copy(), masks=masks, bf=bfs)
    return estimates


def enhance_waveform(stft_cfg: tfx.StftConfig, cfg: ArConfig, est, mixture):
    """Waveform-in/waveform-out enhancement: STFT, loop, inverse STFT."""
    x = np.asarray(mixture, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatchError(f"mixture must be (channels, samples), got {x.shape}")
    spec = tfx.analyze(stft_cfg, x)
    estimates = process_utterance(cfg, est, spec)
    return tfx.reconstruct(stft_cfg, estimates, x.shape[1])


@dataclass
class LatencyStats:
    median_s: float
    p95_s: float
    frames: int


@dataclass
class LatencyReport:
    ar_on: LatencyStats
    ar_off: LatencyStats
    num_mics: int
    num_bins: int


def _per_frame_times(cfg: ArConfig, est, num_mics, num_bins, frames, trials, seed):
    rng = np.random.default_rng(seed)
    times = []
    for _ in range(trials):
        y = rng.standard_normal((num_mics, frames, num_bins)) + 1j * rng.standard_normal(
            (num_mics, frames, num_bins)
        )
        state = initial_state(cfg, est, num_mics, num_bins)
        for t in range(frames):
            tic = time.perf_counter()
            _, state = process_frame(state, cfg, est, y[:, t, :])
            times.append(time.perf_counter() - tic)
    return np.asarray(times)


def latency_report(cfg: ArConfig, est_factory, num_mics: int, num_bins: int,
                   frames: int = 50, trials: int = 3, seed: int = 0) -> LatencyReport:
    """Measure per-frame wall-clock cost with and without the AR path.

    ``est_factory`` builds a fresh estimator for a given channel count so
    both configurations run the same model.
    """
    on_cfg = replace(cfg, ar_inputs=AR_BOTH)
    off_cfg = replace(cfg, ar_inputs=AR_NONE)
    on = _per_frame_times(on_cfg, est_factory(num_mics), num_mics, num_bins, frames, trials, seed)
    off = _per_frame_times(off_cfg, est_factory(num_mics), num_mics, num_bins, frames, trials, seed)
    return LatencyReport(
        ar_on=LatencyStats(float(np.median(on)), float(np.percentile(on, 95)), on.size),
        ar_off=LatencyStats(float(np.median(off)), float(np.percentile(off, 95)), off.size),
        num_mics=num_mics,
        num_bins=num_bins,
    )
