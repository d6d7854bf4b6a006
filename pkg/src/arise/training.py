"""Training regimes for the mask estimator.

Three methods train the same model and leave the inference loop untouched:

* ``train_step_paris``: two forward iterations per step.  Iteration one runs
  the inference loop with the auto-regressive features forced to zero and
  derives the beamformed features from its estimates; iteration two re-runs
  the model on the mixture plus those frozen features and is the only pass
  that records gradients.
* ``train_epoch_rds``: each utterance trains against auto-regressive
  features cached from the previous epoch's model (zeros on the first
  epoch); after every epoch the cache is regenerated by a no-gradient
  inference pass of the current model.
* ``train_step_bptt``: the slow exact baseline.  Gradients flow through the
  unrolled loop including mask application, the covariance sums, and the
  per-bin matrix solve (inverse gradients via d(A^-1) = -A^-1 dA A^-1).

Both parallel methods avoid back-propagating through the auto-regressive
connections; only the model's own hidden recurrence is unrolled.
"""

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import stft as tfx
from .beamforming import BF_PREV_FRAME, BeamformerWeights, _mvdr_solve, apply_bf, scm_update
from .engine import AR_BF_ONLY, AR_NONE, ArConfig, initial_state, process_utterance
from .errors import AriseError, FileFormatError, ShapeMismatchError
from .estimator import CompactEstimator, EstimatorInput, sequence_features
from .masking import clip_magnitude

CACHE_MAGIC = b"ARSC"
CACHE_VERSION = 1

BPTT_MAX_FRAMES = 64


@dataclass(frozen=True)
class TrainConfig:
    method: str = "rds"            # paris | rds | bptt
    epochs: int = 10
    steps: int = 200
    learning_rate: float = 0.001
    batch: int = 4
    seed: int = 0
    bptt_max_frames: int = BPTT_MAX_FRAMES

    def __post_init__(self):
        if self.method not in ("paris", "rds", "bptt"):
            raise AriseError(f"unknown training method {self.method!r}")
        if self.learning_rate <= 0:
            raise AriseError("learning_rate must be positive")
        if self.batch < 1 or self.epochs < 1 or self.steps < 1:
            raise AriseError("batch, epochs and steps must be positive")


@dataclass
class Utterance:
    """One training example in the T-F domain."""

    utt_id: str
    mixture_spec: np.ndarray  # (M, T, F) complex
    target_spec: np.ndarray   # (T, F) complex reference-channel target


def utterance_from_waveforms(utt_id: str, mixture, target_ref,
                             stft_cfg: tfx.StftConfig) -> Utterance:
    """Build a training example from a multichannel mixture waveform and the
    reference-channel clean waveform."""
    return Utterance(
        utt_id=utt_id,
        mixture_spec=tfx.analyze(stft_cfg, np.asarray(mixture, dtype=np.float64)),
        target_spec=tfx.analyze(stft_cfg, np.asarray(target_ref, dtype=np.float64)),
    )


def utterance_from_scene(scene, stft_cfg: tfx.StftConfig, ref_channel: int = 0,
                         utt_id: str = "utt") -> Utterance:
    return utterance_from_waveforms(utt_id, scene.mixture, scene.target[ref_channel], stft_cfg)


# -- loss ------------------------------------------------------------------


def loss_l1(est_spec, target_spec):
    """Mean of |Re d| + |Im d| over all T-F bins, plus its gradient.

    The gradient is returned per bin as d/dRe + i d/dIm; the subgradient at
    exact zeros is 0.
    """
    est = np.asarray(est_spec, dtype=np.complex128)
    tgt = np.asarray(target_spec, dtype=np.complex128)
    if est.shape != tgt.shape:
        raise ShapeMismatchError(f"loss shapes differ: {est.shape} vs {tgt.shape}")
    delta = est - tgt
    loss = float(np.mean(np.abs(delta.real) + np.abs(delta.imag)))
    grad = (np.sign(delta.real) + 1j * np.sign(delta.imag)) / delta.size
    return loss, grad


# -- optimizer -------------------------------------------------------------


class Adam:
    """Plain Adam with bias correction, deterministic and dependency-free."""

    def __init__(self, params: dict, learning_rate: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, p in params.items():
            g = grads[key]
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (self.m[key] / bc1) / (
                np.sqrt(self.v[key] / bc2) + self.eps
            )


# -- shared pieces ---------------------------------------------------------


def _clip_backward(z_raw, clip_mag, g_clipped):
    """Gradient of magnitude clipping.  Pass-through inside the bound; on
    clipped bins the output moves on the |z| = clip_mag circle only."""
    if np.isinf(clip_mag):
        return g_clipped.copy()
    mag = np.abs(z_raw)
    over = mag > clip_mag
    g = g_clipped.copy()
    if np.any(over):
        zz = z_raw[over]
        rr = mag[over]
        ww = g_clipped[over]
        g[over] = (clip_mag / (2.0 * rr)) * (ww - (zz / rr) ** 2 * np.conj(ww))
    return g


def _shift_prev(seq):
    """prev[t] = seq[t-1] with exact zeros at t = 0."""
    prev = np.zeros_like(seq)
    prev[1:] = seq[:-1]
    return prev


def _gated_features(cfg: ArConfig, bf_seq, nn_seq):
    zeros = np.zeros_like(bf_seq)
    bf = bf_seq if cfg.uses_bf_feature else zeros
    prev = _shift_prev(nn_seq) if cfg.uses_prev_estimate else zeros
    return bf, prev


def _supervised_pass(model: CompactEstimator, utt: Utterance, cfg: ArConfig,
                     bf_seq, prev_seq):
    """Forward + backward with constant extra features; returns (loss, grads)."""
    feats = sequence_features(utt.mixture_spec, bf_seq, prev_seq)
    masks, tape = model.run_recorded_features(feats)
    z = clip_magnitude(masks, cfg.clip_mag)
    est = utt.mixture_spec[cfg.ref_channel] * z
    loss, g_est = loss_l1(est, utt.target_spec)
    g_z = g_est * np.conj(utt.mixture_spec[cfg.ref_channel])
    g_masks = _clip_backward(masks, cfg.clip_mag, g_z)
    grads = model.backward(tape, g_masks)
    return loss, grads


def _accumulate(total, grads, scale=1.0):
    for key in total:
        total[key] += scale * grads[key]


class _ZeroArInputs:
    """Feeds the wrapped model [Y(t), 0, 0] while the loop still derives the
    beamformed output from the model's own estimates."""

    emits_clipped = False

    def __init__(self, model):
        self._model = model

    def init_state(self, num_bins):
        return self._model.init_state(num_bins)

    def step(self, state, est_in: EstimatorInput):
        zeros = np.zeros_like(est_in.bf_frame)
        return self._model.step(
            state,
            EstimatorInput(y_frame=est_in.y_frame, bf_frame=zeros, prev_est_frame=zeros),
        )


def paris_features(model: CompactEstimator, utt: Utterance, cfg: ArConfig):
    """Iteration-one pass: estimates with zeroed AR inputs plus the derived
    beamformed features, both gated by the configured AR connections."""
    if cfg.uses_bf_feature:
        cfg_bf = replace(cfg, ar_inputs=AR_BF_ONLY)
        _, trace = process_utterance(
            cfg_bf, _ZeroArInputs(model), utt.mixture_spec, return_trace=True
        )
        bf_seq = trace.bf
    else:
        cfg_free = replace(cfg, ar_inputs=AR_NONE)
        _, trace = process_utterance(cfg_free, model, utt.mixture_spec, return_trace=True)
        bf_seq = np.zeros_like(trace.estimates)
    return _gated_features(cfg, bf_seq, trace.estimates)


def initial_training_loss(model: CompactEstimator, dataset, cfg: ArConfig) -> float:
    """Mean supervised loss with zero auto-regressive features and no
    updates: the loss both parallel schemes start from."""
    losses = []
    for utt in dataset:
        zeros = np.zeros_like(utt.target_spec)
        loss, _ = _supervised_pass(model, utt, cfg, zeros, zeros)
        losses.append(loss)
    return float(np.mean(losses))


def train_step_paris(model: CompactEstimator, batch, cfg: ArConfig, opt: Adam) -> float:
    """One two-iteration parallel step; only iteration two is optimized."""
    if not batch:
        raise AriseError("empty batch")
    total = model.zero_grads()
    losses = []
    for utt in batch:
        bf_seq, prev_seq = paris_features(model, utt, cfg)
        loss, grads = _supervised_pass(model, utt, cfg, bf_seq, prev_seq)
        _accumulate(total, grads, 1.0 / len(batch))
        losses.append(loss)
    opt.step(model.params(), total)
    return float(np.mean(losses))


# -- RDS cache -------------------------------------------------------------


@dataclass
class CacheRecord:
    utt_id: str
    est_nn: np.ndarray  # (T, F) complex64
    est_bf: np.ndarray  # (T, F) complex64
    epoch: int


@dataclass
class RdsCache:
    """Per-utterance model outputs from the previous epoch."""

    records: dict = field(default_factory=dict)
    epoch: int = 0

    def store(self, record: CacheRecord) -> None:
        existing = self.records.get(record.utt_id)
        if existing is not None and record.epoch < existing.epoch:
            raise AriseError("cache epoch stamps must be monotone")
        self.records[record.utt_id] = record

    def lookup(self, utt_id: str, num_frames: int, num_bins: int):
        """Return the record, or None (dropping it) when shapes mismatch."""
        record = self.records.get(utt_id)
        if record is None:
            return None
        if record.est_nn.shape != (num_frames, num_bins):
            del self.records[utt_id]
            return None
        return record

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<II", CACHE_VERSION, len(self.records)))
            for record in self.records.values():
                ident = record.utt_id.encode("utf-8")
                frames, bins_ = record.est_nn.shape
                fh.write(struct.pack("<I", len(ident)))
                fh.write(ident)
                fh.write(struct.pack("<II", frames, bins_))
                fh.write(np.ascontiguousarray(record.est_nn, dtype="<c8").tobytes())
                fh.write(np.ascontiguousarray(record.est_bf, dtype="<c8").tobytes())
                fh.write(struct.pack("<I", record.epoch))

    @classmethod
    def load(cls, path) -> "RdsCache":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:4] != CACHE_MAGIC:
            raise FileFormatError("not a feature cache (bad magic)")
        version, count = struct.unpack("<II", blob[4:12])
        if version != CACHE_VERSION:
            raise FileFormatError(f"unsupported cache version {version}")
        cache = cls()
        offset = 12
        epoch = 0
        for _ in range(count):
            (id_len,) = struct.unpack("<I", blob[offset : offset + 4])
            offset += 4
            utt_id = blob[offset : offset + id_len].decode("utf-8")
            offset += id_len
            frames, bins_ = struct.unpack("<II", blob[offset : offset + 8])
            offset += 8
            n = frames * bins_ * 8
            est_nn = np.frombuffer(blob[offset : offset + n], dtype="<c8").reshape(frames, bins_)
            offset += n
            est_bf = np.frombuffer(blob[offset : offset + n], dtype="<c8").reshape(frames, bins_)
            offset += n
            (epoch,) = struct.unpack("<I", blob[offset : offset + 4])
            offset += 4
            cache.store(CacheRecord(utt_id, est_nn.copy(), est_bf.copy(), epoch))
        if offset != len(blob):
            raise FileFormatError("trailing bytes after cache records")
        if cache.records:
            cache.epoch = max(r.epoch for r in cache.records.values())
        return cache


def rebuild_cache(model: CompactEstimator, dataset, cfg: ArConfig, epoch: int) -> RdsCache:
    """No-gradient inference pass over the whole dataset."""
    cache = RdsCache(epoch=epoch)
    for utt in dataset:
        _, trace = process_utterance(cfg, model, utt.mixture_spec, return_trace=True)
        cache.store(
            CacheRecord(
                utt_id=utt.utt_id,
                est_nn=trace.estimates.astype(np.complex64),
                est_bf=trace.bf.astype(np.complex64),
                epoch=epoch,
            )
        )
    return cache


def train_epoch_rds(model: CompactEstimator, dataset, cache: RdsCache,
                    cfg: ArConfig, train_cfg: TrainConfig, opt: Adam):
    """One epoch against cached features, then regenerate the cache.

    Return:
        (mean_loss, new_cache)
    """
    if not dataset:
        raise AriseError("empty dataset")
    losses = []
    for start in range(0, len(dataset), train_cfg.batch):
        batch = dataset[start : start + train_cfg.batch]
        total = model.zero_grads()
        for utt in batch:
            num_frames, num_bins = utt.target_spec.shape
            record = cache.lookup(utt.utt_id, num_frames, num_bins)
            if record is None:
                nn_seq = np.zeros((num_frames, num_bins), dtype=np.complex128)
                bf_raw = np.zeros_like(nn_seq)
            else:
                if record.epoch != cache.epoch:
                    raise AriseError("stale cache record (epoch stamp mismatch)")
                nn_seq = record.est_nn.astype(np.complex128)
                bf_raw = record.est_bf.astype(np.complex128)
            bf_seq, prev_seq = _gated_features(cfg, bf_raw, nn_seq)
            loss, grads = _supervised_pass(model, utt, cfg, bf_seq, prev_seq)
            _accumulate(total, grads, 1.0 / len(batch))
            losses.append(loss)
        opt.step(model.params(), total)
    new_cache = rebuild_cache(model, dataset, cfg, epoch=cache.epoch + 1)
    return float(np.mean(losses)), new_cache


# -- exact through-time baseline --------------------------------------------


def _hermitian(mats):
    return np.conj(np.swapaxes(mats, -1, -2))


def _bptt_forward(model: CompactEstimator, utt: Utterance, cfg: ArConfig):
    """Inference-loop forward pass recording every intermediate."""
    y = utt.mixture_spec
    num_mics, num_frames, num_bins = y.shape
    state = initial_state(cfg, model, num_mics, num_bins)
    records = []
    estimates = np.empty((num_frames, num_bins), dtype=np.complex128)
    zeros = np.zeros(num_bins, dtype=np.complex128)

    for t in range(num_frames):
        y_t = y[:, t, :]
        weights_used = state.weights
        if cfg.uses_bf_feature:
            bf = apply_bf(weights_used, state.prev_y, y_t, cfg.bf_option)
        else:
            bf = zeros
        est_in = EstimatorInput(
            y_frame=y_t,
            bf_frame=bf,
            prev_est_frame=state.prev_est if cfg.uses_prev_estimate else zeros,
        )
        mask, est_state, cell_cache = model.step_with_cache(state.est_state, est_in)
        z = clip_magnitude(mask, cfg.clip_mag)
        x_hat = y_t * z[np.newaxis, :]
        estimates[t] = x_hat[cfg.ref_channel]

        solve = None
        if cfg.uses_bf_feature:
            scm = scm_update(state.scm, x_hat, y_t)
            if scm.frames_seen < scm.num_mics:
                weights = BeamformerWeights.selector(
                    num_bins, num_mics, cfg.ref_channel, frames_seen=scm.frames_seen
                )
            else:
                w, valid, loaded, ratio, trace = _mvdr_solve(
                    scm.phi_x, scm.phi_n, cfg.ref_channel, cfg.diag_load
                )
                w = np.where(valid[:, None], w, 0.0)
                weights = BeamformerWeights(
                    w=w, valid=valid, ref_channel=cfg.ref_channel,
                    frames_seen=scm.frames_seen,
                )
                solve = {"loaded": loaded, "ratio": ratio, "trace": trace, "valid": valid}
        else:
            scm, weights = state.scm, state.weights

        records.append(
            {
                "y": y_t,
                "bf": bf,
                "weights_used": weights_used,
                "cell": cell_cache,
                "mask": mask,
                "x_hat": x_hat,
                "solve": solve,
            }
        )
        state = replace(
            state,
            scm=scm,
            weights=weights,
            prev_est=estimates[t],
            prev_y=y_t,
            frame_index=state.frame_index + 1,
            est_state=est_state,
        )
    return estimates, records


def _solve_backward(solve, g_w, ref_channel, diag_load, num_mics):
    """Gradients of the normalized solve w = (B^-1 P)[:, q] / tr(B^-1 P)
    back to (phi_x, phi_n).  Complex gradients are carried as
    d/dRe + i d/dIm; the inverse path uses d(B^-1) = -B^-1 dB B^-1."""
    valid = solve["valid"]
    ratio = solve["ratio"]
    trace = solve["trace"]
    loaded = solve["loaded"]

    g_w = np.where(valid[:, None], g_w, 0.0)
    safe_trace = np.where(valid, trace, 1.0)

    g_ratio = np.zeros_like(ratio)
    g_ratio[:, :, ref_channel] += g_w / np.conj(safe_trace)[:, None]
    g_trace = np.sum(g_w * np.conj(-ratio[:, :, ref_channel] / safe_trace[:, None] ** 2), axis=1)
    g_ratio += g_trace[:, None, None] * np.eye(num_mics)[None, :, :]

    binv = np.zeros_like(loaded)
    if np.any(valid):
        binv[valid] = np.linalg.inv(loaded[valid])
    binv_h = _hermitian(binv)
    g_phi_x = binv_h @ g_ratio
    g_loaded = -binv_h @ g_ratio @ _hermitian(ratio)
    g_phi_n = g_loaded + (diag_load / num_mics) * np.trace(
        g_loaded, axis1=1, axis2=2
    )[:, None, None] * np.eye(num_mics)[None, :, :]

    g_phi_x[~valid] = 0.0
    g_phi_n[~valid] = 0.0
    return g_phi_x, g_phi_n


def bptt_loss_and_grads(model: CompactEstimator, utt: Utterance, cfg: ArConfig,
                        max_frames: int = BPTT_MAX_FRAMES):
    """Exact loss gradients through the full unrolled auto-regressive loop."""
    num_mics, num_frames, num_bins = utt.mixture_spec.shape
    if num_frames > max_frames:
        raise AriseError(
            f"through-time training is limited to {max_frames} frames, got {num_frames}"
        )
    if cfg.weight_stride != 1:
        raise AriseError("the exact baseline only supports per-frame weight updates")
    estimates, records = _bptt_forward(model, utt, cfg)
    loss, g_est = loss_l1(estimates, utt.target_spec)

    grads = model.zero_grads()
    g_h = np.zeros((num_bins, model.hidden))
    g_prev_r = np.zeros(num_bins, dtype=np.complex128)
    g_w = None  # gradient w.r.t. the weights computed at the frame being visited
    g_phi_x = np.zeros((num_bins, num_mics, num_mics), dtype=np.complex128)
    g_phi_n = np.zeros_like(g_phi_x)

    for t in range(num_frames - 1, -1, -1):
        rec = records[t]

        # weights computed at the end of frame t (from the frame-t SCMs)
        if rec["solve"] is not None and g_w is not None:
            dpx, dpn = _solve_backward(
                rec["solve"], g_w, cfg.ref_channel, cfg.diag_load, num_mics
            )
            g_phi_x += dpx
            g_phi_n += dpn

        # SCM accumulation at frame t
        g_xhat = np.zeros((num_bins, num_mics), dtype=np.complex128)
        if cfg.uses_bf_feature:
            x_vec = rec["x_hat"].T  # (F, M)
            n_vec = (rec["y"] - rec["x_hat"]).T
            sym_x = g_phi_x + _hermitian(g_phi_x)
            sym_n = g_phi_n + _hermitian(g_phi_n)
            g_xhat += np.einsum("fij,fj->fi", sym_x, x_vec)
            g_nhat = np.einsum("fij,fj->fi", sym_n, n_vec)
            g_xhat -= g_nhat
            g_phi_x *= cfg.forgetting
            g_phi_n *= cfg.forgetting

        # loss at frame t plus the next frame's previous-estimate feature
        g_xhat[:, cfg.ref_channel] += g_est[t] + g_prev_r

        # mask application and clipping
        g_z = np.sum(g_xhat * np.conj(rec["y"].T), axis=1)
        g_mask = _clip_backward(rec["mask"], cfg.clip_mag, g_z)

        # estimator cell
        g_h, g_feats = model.step_backward(rec["cell"], g_mask, g_h, grads)

        # feature slots back to the loop-carried quantities
        g_prev_r = np.zeros(num_bins, dtype=np.complex128)
        if cfg.uses_prev_estimate:
            g_prev_r = g_feats[:, -2] + 1j * g_feats[:, -1]
        g_w = None
        if cfg.uses_bf_feature and t > 0:
            g_bf = g_feats[:, 2 * num_mics] + 1j * g_feats[:, 2 * num_mics + 1]
            weights_used = rec["weights_used"]
            if not weights_used.cold_start and weights_used.frames_seen >= num_mics:
                g_bf = np.where(weights_used.valid, g_bf, 0.0)
                y_sel = records[t - 1]["y"] if cfg.bf_option == BF_PREV_FRAME else rec["y"]
                g_w = np.conj(g_bf)[:, None] * y_sel.T

    return loss, grads


def train_step_bptt(model: CompactEstimator, batch, cfg: ArConfig, opt: Adam,
                    max_frames: int = BPTT_MAX_FRAMES) -> float:
    """One exact through-time step over a batch of short utterances."""
    if not batch:
        raise AriseError("empty batch")
    total = model.zero_grads()
    losses = []
    for utt in batch:
        loss, grads = bptt_loss_and_grads(model, utt, cfg, max_frames)
        _accumulate(total, grads, 1.0 / len(batch))
        losses.append(loss)
    opt.step(model.params(), total)
    return float(np.mean(losses))
