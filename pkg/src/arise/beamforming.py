"""Cumulative spatial covariance estimation and MVDR weight computation.

Per frequency bin the weights are
    w = [ (Phi_n + eps*tr(Phi_n)/M * I)^-1 Phi_x / tr(...) ] u_q
where Phi_x / Phi_n are running sums of outer products of the estimated
target / residual frames and u_q selects the reference channel.  The
inverse goes through a Hermitian positive-definite factorization per bin;
bins where the factorization fails or the trace is vanishing are flagged
invalid instead of aborting the stream.
"""

from dataclasses import dataclass

import numpy as np

from .errors import AriseError, NonFiniteError, ShapeMismatchError

DEFAULT_DIAG_LOAD = 1e-6

# A trace with magnitude below this cannot normalize the weights.
TRACE_FLOOR = 1e-12

BF_PREV_FRAME = "prev_frame"
BF_CURR_FRAME = "curr_frame"
BF_OPTIONS = (BF_PREV_FRAME, BF_CURR_FRAME)


@dataclass
class ScmPair:
    """Running target/noise spatial covariance matrices, one per bin.

    Arguments: (for M: num_mics, F: num_bins)
        phi_x, phi_n: (F, M, M) complex Hermitian
        frames_seen: number of frames accumulated
        forgetting: weight on the previous sums; 1.0 gives plain cumulative sums
    """

    phi_x: np.ndarray
    phi_n: np.ndarray
    frames_seen: int = 0
    forgetting: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.forgetting <= 1.0:
            raise AriseError(f"forgetting must be in (0, 1], got {self.forgetting}")
        if self.phi_x.shape != self.phi_n.shape or self.phi_x.ndim != 3:
            raise ShapeMismatchError("phi_x and phi_n must both be (F, M, M)")

    @classmethod
    def zeros(cls, num_bins: int, num_mics: int, forgetting: float = 1.0) -> "ScmPair":
        shape = (num_bins, num_mics, num_mics)
        return cls(
            phi_x=np.zeros(shape, dtype=np.complex128),
            phi_n=np.zeros(shape, dtype=np.complex128),
            frames_seen=0,
            forgetting=forgetting,
        )

    @property
    def num_bins(self) -> int:
        return self.phi_x.shape[0]

    @property
    def num_mics(self) -> int:
        return self.phi_x.shape[1]


@dataclass
class BeamformerWeights:
    """Per-frequency complex weight vectors with per-bin validity flags.

    ``frames_seen`` records how many frames of statistics produced the
    weights; it backs the causality assertions in the inference loop.
    """

    w: np.ndarray          # (F, M) complex
    valid: np.ndarray      # (F,) bool
    ref_channel: int
    frames_seen: int = 0
    cold_start: bool = False

    @classmethod
    def inactive(cls, num_bins: int, num_mics: int, ref_channel: int) -> "BeamformerWeights":
        """Weights before any data: every bin invalid, output forced to zero."""
        return cls(
            w=np.zeros((num_bins, num_mics), dtype=np.complex128),
            valid=np.zeros(num_bins, dtype=bool),
            ref_channel=ref_channel,
            frames_seen=0,
        )

    @classmethod
    def selector(cls, num_bins: int, num_mics: int, ref_channel: int,
                 frames_seen: int) -> "BeamformerWeights":
        """Reference-channel selector e_q: the beamformed output is the raw
        reference channel.  Used while the SCMs cannot be full rank."""
        w = np.zeros((num_bins, num_mics), dtype=np.complex128)
        w[:, ref_channel] = 1.0
        return cls(
            w=w,
            valid=np.ones(num_bins, dtype=bool),
            ref_channel=ref_channel,
            frames_seen=frames_seen,
            cold_start=True,
        )


def scm_update(state: ScmPair, x_hat_frame, y_frame) -> ScmPair:
    """Accumulate one frame into the running covariance sums.

    Arguments: (for M: num_mics, F: num_bins)
        x_hat_frame: (M, F) complex estimated target frame
        y_frame: (M, F) complex mixture frame
    Return:
        new ScmPair with phi_x += x x^H and phi_n += n n^H per bin,
        where n = y - x, each weighted by the forgetting factor.
    """
    x = np.asarray(x_hat_frame, dtype=np.complex128)
    y = np.asarray(y_frame, dtype=np.complex128)
    if x.shape != (state.num_mics, state.num_bins):
        raise ShapeMismatchError(
            f"expected frame shape {(state.num_mics, state.num_bins)}, got {x.shape}"
        )
    if y.shape != x.shape:
        raise ShapeMismatchError(f"mixture frame shape {y.shape} != estimate {x.shape}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteError("scm_update rejects non-finite frames")

    n = y - x
    # (F, M, M) outer products v v^H per bin
    xo = np.einsum("mf,nf->fmn", x, np.conj(x))
    no = np.einsum("mf,nf->fmn", n, np.conj(n))
    lam = state.forgetting
    return ScmPair(
        phi_x=lam * state.phi_x + xo,
        phi_n=lam * state.phi_n + no,
        frames_seen=state.frames_seen + 1,
        forgetting=lam,
    )


def _cholesky_batched(mats):
    """Lower Cholesky factors for a batch of Hermitian matrices.

    Arguments:
        mats: (F, M, M) complex Hermitian
    Return:
        (factors, ok): (F, M, M) lower-triangular factors and a (F,) bool
        mask; bins where a pivot is non-positive or non-finite are marked
        not-ok and their factor entries are unusable.
    """
    num_bins, m, _ = mats.shape
    factors = np.zeros_like(mats)
    ok = np.ones(num_bins, dtype=bool)
    for j in range(m):
        if j == 0:
            pivot = mats[:, 0, 0].real.copy()
        else:
            pivot = mats[:, j, j].real - np.einsum(
                "fk,fk->f", factors[:, j, :j], np.conj(factors[:, j, :j])
            ).real
        good = np.isfinite(pivot) & (pivot > 0.0)
        ok &= good
        diag = np.sqrt(np.where(good, pivot, 1.0))
        factors[:, j, j] = diag
        if j + 1 < m:
            below = mats[:, j + 1 :, j]
            if j > 0:
                below = below - np.einsum(
                    "fik,fk->fi", factors[:, j + 1 :, :j], np.conj(factors[:, j, :j])
                )
            factors[:, j + 1 :, j] = below / diag[:, np.newaxis]
    return factors, ok


def _solve_cholesky(factors, rhs):
    """Solve A X = rhs given the lower Cholesky factor of A, batched over bins.

    Arguments:
        factors: (F, M, M) lower-triangular
        rhs: (F, M, K)
    """
    _, m, _ = factors.shape
    z = np.empty_like(rhs)
    for i in range(m):
        acc = rhs[:, i, :]
        if i > 0:
            acc = acc - np.einsum("fk,fkr->fr", factors[:, i, :i], z[:, :i, :])
        z[:, i, :] = acc / factors[:, i, i, np.newaxis].real
    x = np.empty_like(rhs)
    for i in range(m - 1, -1, -1):
        acc = z[:, i, :]
        if i + 1 < m:
            acc = acc - np.einsum(
                "fk,fkr->fr", np.conj(factors[:, i + 1 :, i]), x[:, i + 1 :, :]
            )
        x[:, i, :] = acc / factors[:, i, i, np.newaxis].real
    return x


def _mvdr_solve(phi_x, phi_n, ref_channel, diag_load):
    """Raw per-bin MVDR solve, exposing intermediates for gradient code.

    Return:
        w: (F, M) weights (garbage on invalid bins)
        valid: (F,) bool
        loaded: (F, M, M) diagonally loaded noise SCM
        ratio: (F, M, M) loaded^-1 phi_x
        trace: (F,) complex trace of ratio
    """
    num_bins, m, _ = phi_n.shape
    eye = np.eye(m, dtype=np.complex128)
    loading = diag_load * np.trace(phi_n, axis1=1, axis2=2)[:, None, None] / m
    loaded = phi_n + loading * eye
    try:
        # positive-definiteness gate: every bin must factorize
        np.linalg.cholesky(loaded)
        ratio = np.linalg.solve(loaded, phi_x)
        ok = np.ones(num_bins, dtype=bool)
    except np.linalg.LinAlgError:
        # some bin is not positive definite: redo with per-bin flagging
        factors, ok = _cholesky_batched(loaded)
        ratio = _solve_cholesky(factors, phi_x)
    trace = np.trace(ratio, axis1=1, axis2=2)
    valid = ok & np.isfinite(trace) & (np.abs(trace) >= TRACE_FLOOR)
    safe_trace = np.where(valid, trace, 1.0)
    w = ratio[:, :, ref_channel] / safe_trace[:, None]
    valid &= np.all(np.isfinite(w), axis=-1)
    return w, valid, loaded, ratio, trace


def mvdr_weights(scm: ScmPair, ref_channel: int = 0,
                 diag_load: float = DEFAULT_DIAG_LOAD) -> BeamformerWeights:
    """Compute MVDR weights from the accumulated SCMs.

    Before ``frames_seen`` reaches the channel count the noise SCM cannot be
    full rank, so the weights fall back to the reference-channel selector.
    Failed bins are flagged invalid, never raised.
    """
    if scm.frames_seen < 1:
        raise AriseError("mvdr_weights requires at least one accumulated frame")
    if not 0 <= ref_channel < scm.num_mics:
        raise AriseError(f"reference channel {ref_channel} out of range")
    if diag_load < 0:
        raise AriseError("diag_load must be non-negative")

    if scm.frames_seen < scm.num_mics:
        return BeamformerWeights.selector(
            scm.num_bins, scm.num_mics, ref_channel, frames_seen=scm.frames_seen
        )

    w, valid, _, _, _ = _mvdr_solve(scm.phi_x, scm.phi_n, ref_channel, diag_load)
    w = np.where(valid[:, None], w, 0.0)
    return BeamformerWeights(
        w=w, valid=valid, ref_channel=ref_channel, frames_seen=scm.frames_seen
    )


def apply_bf(weights: BeamformerWeights, y_frame_prev, y_frame_curr,
             option: str = BF_CURR_FRAME) -> np.ndarray:
    """Apply beamformer weights to the previous or current mixture frame.

    Arguments: (for M: num_mics, F: num_bins)
        y_frame_prev, y_frame_curr: (M, F) complex mixture frames
        option: "prev_frame" applies w^H to the previous frame,
                "curr_frame" applies w^H to the current frame
    Return:
        (F,) complex beamformed frame; invalid bins output zero.
    """
    if option not in BF_OPTIONS:
        raise AriseError(f"unknown beamformer option {option!r}")
    y = np.asarray(y_frame_prev if option == BF_PREV_FRAME else y_frame_curr,
                   dtype=np.complex128)
    num_bins, num_mics = weights.w.shape
    if y.shape != (num_mics, num_bins):
        raise ShapeMismatchError(
            f"expected mixture frame {(num_mics, num_bins)}, got {y.shape}"
        )
    out = np.einsum("fm,mf->f", np.conj(weights.w), y)
    out[~weights.valid] = 0.0
    return out
