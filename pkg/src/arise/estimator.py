"""Pluggable mask estimators.

The inference loop only needs ``init_state`` and ``step``:

    mask_frame, new_state = estimator.step(state, EstimatorInput(...))

``CompactEstimator`` is a small trainable cell: per frequency bin it runs an
input projection, a tanh recurrence, and a linear head emitting the mask's
real/imaginary parts.  Parameters are shared across bins, so the parameter
count is independent of both the frame count and the bin count.  Gradients
are computed analytically (no autodiff); the auto-regressive input slots are
treated as constants during sequence backprop.

``OracleEstimator`` wraps the ground-truth complex ratio mask and ignores
its inputs; it is the upper-bound estimator used for pipeline verification.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import AriseError, FileFormatError, NonFiniteError, ShapeMismatchError
from .masking import DEFAULT_CLIP_MAG, oracle_crm

CHECKPOINT_MAGIC = b"ARSE"
CHECKPOINT_VERSION = 1

PARAM_NAMES = ("w_in", "w_h", "b_h", "w_out", "b_out")


@dataclass
class EstimatorInput:
    """Per-frame estimator features, all complex.

    Arguments: (for M: num_mics, F: num_bins)
        y_frame: (M, F) mixture frame
        bf_frame: (F,) beamformed feature, exact zeros when absent
        prev_est_frame: (F,) previous estimate, exact zeros at the first frame
    """

    y_frame: np.ndarray
    bf_frame: np.ndarray
    prev_est_frame: np.ndarray


def feature_matrix(est_in: EstimatorInput) -> np.ndarray:
    """Stack real/imag parts of the M+2 complex inputs into (F, 2*(M+2))."""
    y = np.asarray(est_in.y_frame, dtype=np.complex128)
    parts = [y[m] for m in range(y.shape[0])]
    parts.append(np.asarray(est_in.bf_frame, dtype=np.complex128))
    parts.append(np.asarray(est_in.prev_est_frame, dtype=np.complex128))
    num_bins = parts[0].shape[0]
    feats = np.empty((num_bins, 2 * len(parts)))
    for i, p in enumerate(parts):
        if p.shape != (num_bins,):
            raise ShapeMismatchError("estimator inputs disagree on bin count")
        feats[:, 2 * i] = p.real
        feats[:, 2 * i + 1] = p.imag
    return feats


def sequence_features(y_spec, bf_seq, prev_seq) -> np.ndarray:
    """Whole-utterance feature tensor (T, F, 2*(M+2)), laid out exactly like
    per-frame ``feature_matrix`` calls."""
    y = np.asarray(y_spec, dtype=np.complex128)
    bf = np.asarray(bf_seq, dtype=np.complex128)
    prev = np.asarray(prev_seq, dtype=np.complex128)
    num_mics, num_frames, num_bins = y.shape
    if bf.shape != (num_frames, num_bins) or prev.shape != bf.shape:
        raise ShapeMismatchError("feature sequences disagree with the mixture shape")
    feats = np.empty((num_frames, num_bins, 2 * (num_mics + 2)))
    for m in range(num_mics):
        feats[:, :, 2 * m] = y[m].real
        feats[:, :, 2 * m + 1] = y[m].imag
    feats[:, :, 2 * num_mics] = bf.real
    feats[:, :, 2 * num_mics + 1] = bf.imag
    feats[:, :, 2 * num_mics + 2] = prev.real
    feats[:, :, 2 * num_mics + 3] = prev.imag
    return feats


class CompactEstimator:
    """Per-bin shared-parameter recurrent mask estimator.

    Cell equations per bin (D = 2*(M+2), H = hidden size):
        a_t = W_in u_t + W_h h_{t-1} + b_h
        h_t = tanh(a_t)
        o_t = W_out h_t + b_out          # (2,) -> mask = o[0] + i o[1]
    """

    emits_clipped = False

    def __init__(self, w_in, w_h, b_h, w_out, b_out):
        self.w_in = np.asarray(w_in, dtype=np.float64)
        self.w_h = np.asarray(w_h, dtype=np.float64)
        self.b_h = np.asarray(b_h, dtype=np.float64)
        self.w_out = np.asarray(w_out, dtype=np.float64)
        self.b_out = np.asarray(b_out, dtype=np.float64)
        hidden, feat = self.w_in.shape
        if self.w_h.shape != (hidden, hidden) or self.b_h.shape != (hidden,):
            raise ShapeMismatchError("recurrence parameters disagree with hidden size")
        if self.w_out.shape != (2, hidden) or self.b_out.shape != (2,):
            raise ShapeMismatchError("output head must be (2, hidden) and (2,)")
        if feat % 2 != 0 or feat < 6:
            raise ShapeMismatchError(f"feature dimension {feat} is not 2*(M+2) with M >= 1")

    @classmethod
    def create(cls, num_channels: int, hidden: int = 16, seed: int = 0) -> "CompactEstimator":
        """Seeded initialization; the output head starts near zero so the
        initial mask is close to 0."""
        feat = 2 * (num_channels + 2)
        rng = np.random.default_rng(seed)
        return cls(
            w_in=rng.standard_normal((hidden, feat)) / np.sqrt(feat),
            w_h=rng.standard_normal((hidden, hidden)) * (0.5 / np.sqrt(hidden)),
            b_h=np.zeros(hidden),
            w_out=rng.standard_normal((2, hidden)) * (0.1 / np.sqrt(hidden)),
            b_out=np.zeros(2),
        )

    @property
    def hidden(self) -> int:
        return self.w_in.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def num_channels(self) -> int:
        return self.feature_dim // 2 - 2

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def zero_grads(self) -> dict:
        return {name: np.zeros_like(getattr(self, name)) for name in PARAM_NAMES}

    def init_state(self, num_bins: int) -> np.ndarray:
        """Fresh hidden state; reset between utterances."""
        return np.zeros((num_bins, self.hidden))

    # -- forward ---------------------------------------------------------

    def step(self, state, est_in: EstimatorInput):
        mask, new_state, _ = self.step_with_cache(state, est_in)
        return mask, new_state

    def step_with_cache(self, state, est_in: EstimatorInput):
        feats = feature_matrix(est_in)
        if not np.all(np.isfinite(feats)):
            raise NonFiniteError("estimator input contains non-finite values")
        if feats.shape[1] != self.feature_dim:
            raise ShapeMismatchError(
                f"expected {self.feature_dim} features, got {feats.shape[1]}"
            )
        if state.shape != (feats.shape[0], self.hidden):
            raise ShapeMismatchError(
                f"state shape {state.shape} does not match (bins, hidden)"
            )
        pre = feats @ self.w_in.T + state @ self.w_h.T + self.b_h
        new_state = np.tanh(pre)
        out = new_state @ self.w_out.T + self.b_out
        mask = out[:, 0] + 1j * out[:, 1]
        cache = {"feats": feats, "h_prev": state, "h": new_state}
        return mask, new_state, cache

    # -- backward --------------------------------------------------------

    def step_backward(self, cache, g_mask, g_h_next, grads):
        """Single-frame reverse pass.

        Arguments:
            g_mask: (F,) complex gradient of the loss w.r.t. the mask frame,
                stored as d/dRe + i d/dIm
            g_h_next: (F, H) gradient flowing back into h_t from frame t+1
            grads: dict accumulating parameter gradients in place
        Return:
            (g_h_prev, g_feats): gradients for h_{t-1} and the feature matrix
        """
        g_out = np.stack([np.real(g_mask), np.imag(g_mask)], axis=1)
        grads["w_out"] += g_out.T @ cache["h"]
        grads["b_out"] += g_out.sum(axis=0)
        g_h = g_out @ self.w_out + g_h_next
        g_pre = g_h * (1.0 - cache["h"] ** 2)
        grads["w_in"] += g_pre.T @ cache["feats"]
        grads["w_h"] += g_pre.T @ cache["h_prev"]
        grads["b_h"] += g_pre.sum(axis=0)
        g_h_prev = g_pre @ self.w_h
        g_feats = g_pre @ self.w_in
        return g_h_prev, g_feats

    def run_recorded(self, inputs):
        """Forward over a sequence of EstimatorInput, recording a tape."""
        if not inputs:
            raise AriseError("empty input sequence")
        num_bins = np.asarray(inputs[0].y_frame).shape[1]
        state = self.init_state(num_bins)
        masks = np.empty((len(inputs), num_bins), dtype=np.complex128)
        tape = []
        for t, est_in in enumerate(inputs):
            masks[t], state, cache = self.step_with_cache(state, est_in)
            tape.append(cache)
        return masks, tape

    def run_recorded_features(self, feats):
        """Forward over a precomputed (T, F, D) feature tensor (see
        ``sequence_features``); numerically identical to per-frame steps."""
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 3 or feats.shape[2] != self.feature_dim:
            raise ShapeMismatchError(
                f"expected (frames, bins, {self.feature_dim}) features, got {feats.shape}"
            )
        if not np.all(np.isfinite(feats)):
            raise NonFiniteError("estimator input contains non-finite values")
        num_frames, num_bins, _ = feats.shape
        state = self.init_state(num_bins)
        masks = np.empty((num_frames, num_bins), dtype=np.complex128)
        tape = []
        for t in range(num_frames):
            pre = feats[t] @ self.w_in.T + state @ self.w_h.T + self.b_h
            new_state = np.tanh(pre)
            out = new_state @ self.w_out.T + self.b_out
            masks[t] = out[:, 0] + 1j * out[:, 1]
            tape.append({"feats": feats[t], "h_prev": state, "h": new_state})
            state = new_state
        return masks, tape

    def backward(self, tape, g_masks) -> dict:
        """Parameter gradients for a recorded forward pass.

        Gradients stop at the input features: the auto-regressive slots are
        constants for this pass.
        """
        if not tape:
            raise AriseError("backward called without a recorded forward pass")
        g_masks = np.asarray(g_masks, dtype=np.complex128)
        if g_masks.shape[0] != len(tape):
            raise ShapeMismatchError("gradient sequence length does not match the tape")
        grads = self.zero_grads()
        g_h = np.zeros_like(tape[-1]["h"])
        for t in range(len(tape) - 1, -1, -1):
            g_h, _ = self.step_backward(tape[t], g_masks[t], g_h, grads)
        return grads


class OracleEstimator:
    """Emits the precomputed oracle mask frame regardless of its inputs."""

    emits_clipped = True

    def __init__(self, mask_values):
        self.values = np.asarray(mask_values, dtype=np.complex128)
        if self.values.ndim != 2:
            raise ShapeMismatchError("oracle mask must be (frames, bins)")

    def init_state(self, num_bins: int) -> int:
        if num_bins != self.values.shape[1]:
            raise ShapeMismatchError("oracle mask bin count does not match the stream")
        return 0

    def step(self, state, est_in: EstimatorInput):
        if state >= self.values.shape[0]:
            raise AriseError("oracle estimator stepped past its mask sequence")
        return self.values[state].copy(), state + 1


def oracle_estimator(x_ref, y_ref, clip_mag: float = DEFAULT_CLIP_MAG) -> OracleEstimator:
    """Upper-bound estimator delegating to the oracle complex ratio mask."""
    return OracleEstimator(oracle_crm(x_ref, y_ref, clip_mag).values)


class ReplayEstimator:
    """Replays a recorded mask sequence; used by the parallel trainers."""

    emits_clipped = False

    def __init__(self, mask_values):
        self.values = np.asarray(mask_values, dtype=np.complex128)

    def init_state(self, num_bins: int) -> int:
        return 0

    def step(self, state, est_in: EstimatorInput):
        return self.values[state].copy(), state + 1


# -- checkpoint I/O -------------------------------------------------------
#
# Layout (little-endian): magic "ARSE", version u32, hidden u32, channels
# u32, bin-independence flag u32 (1 = parameters shared across bins), then
# float32 blocks w_in, w_h, b_h, w_out, b_out in that order.


def save_checkpoint(path, est: CompactEstimator) -> None:
    header = CHECKPOINT_MAGIC + struct.pack(
        "<IIII", CHECKPOINT_VERSION, est.hidden, est.num_channels, 1
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for name in PARAM_NAMES:
            fh.write(np.ascontiguousarray(getattr(est, name), dtype="<f4").tobytes())


def load_checkpoint(path) -> CompactEstimator:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FileFormatError("not an estimator checkpoint (bad magic)")
    if len(blob) < 20:
        raise FileFormatError("checkpoint header truncated")
    version, hidden, channels, shared = struct.unpack("<IIII", blob[4:20])
    if version != CHECKPOINT_VERSION:
        raise FileFormatError(f"unsupported checkpoint version {version}")
    if shared != 1:
        raise FileFormatError("per-bin parameter blocks are not supported")
    feat = 2 * (channels + 2)
    shapes = {
        "w_in": (hidden, feat),
        "w_h": (hidden, hidden),
        "b_h": (hidden,),
        "w_out": (2, hidden),
        "b_out": (2,),
    }
    offset = 20
    blocks = {}
    for name in PARAM_NAMES:
        count = int(np.prod(shapes[name]))
        end = offset + 4 * count
        if end > len(blob):
            raise FileFormatError(f"checkpoint truncated in block {name}")
        blocks[name] = np.frombuffer(blob[offset:end], dtype="<f4").reshape(shapes[name])
        offset = end
    if offset != len(blob):
        raise FileFormatError("trailing bytes after parameter blocks")
    return CompactEstimator(**{k: v.astype(np.float64) for k, v in blocks.items()})
