"""scikit-learn style front end for the enhancement pipeline.

``AriseEnhancer`` follows the estimator protocol (``get_params`` /
``set_params`` / ``clone``): ``fit`` trains the compact mask estimator on
(mixture, clean) waveform pairs and ``transform`` enhances multichannel
waveforms into mono estimates of the reference-channel target.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .engine import ArConfig, enhance_waveform
from .errors import AriseError, ShapeMismatchError
from .estimator import CompactEstimator
from .stft import StftConfig
from .training import (
    Adam,
    RdsCache,
    TrainConfig,
    train_epoch_rds,
    train_step_bptt,
    train_step_paris,
    utterance_from_waveforms,
)
from .validation import as_multichannel


def _as_list(x):
    if isinstance(x, np.ndarray) and x.ndim <= 2:
        return [x]
    return list(x)


class AriseEnhancer(BaseEstimator, TransformerMixin):
    """Trainable frame-online multi-channel speech enhancer.

    Parameters
    ----------
    sample_rate, window_len, hop : int
        STFT framing; defaults give 20 ms windows with 10 ms hop.
    bf_option : {'curr_frame', 'prev_frame'}
        Whether last frame's beamformer weights are applied to the current
        or the previous mixture frame when forming the feedback feature.
    ar_inputs : {'both', 'bf_only', 'nn_only', 'none'}
        Which auto-regressive features the mask estimator consumes.
    diag_load : float
        Relative diagonal loading applied to the noise covariance.
    clip_mag : float
        Magnitude bound on complex ratio masks.
    forgetting : float
        Covariance forgetting factor; 1.0 keeps plain cumulative sums.
    ref_channel : int
        Microphone whose clean signal is the training target.
    hidden : int
        Hidden size of the compact mask estimator.
    method : {'rds', 'paris', 'bptt'}
        Training regime used by :meth:`fit`.
    epochs, steps, batch, learning_rate, seed
        Training schedule; ``epochs`` drives 'rds', ``steps`` the others.
    """

    def __init__(self, *, sample_rate=16000, window_len=320, hop=160,
                 bf_option="curr_frame", ar_inputs="both", diag_load=1e-6,
                 clip_mag=5.0, forgetting=1.0, ref_channel=0, hidden=16,
                 method="rds", epochs=10, steps=200, batch=4,
                 learning_rate=0.001, seed=0):
        self.sample_rate = sample_rate
        self.window_len = window_len
        self.hop = hop
        self.bf_option = bf_option
        self.ar_inputs = ar_inputs
        self.diag_load = diag_load
        self.clip_mag = clip_mag
        self.forgetting = forgetting
        self.ref_channel = ref_channel
        self.hidden = hidden
        self.method = method
        self.epochs = epochs
        self.steps = steps
        self.batch = batch
        self.learning_rate = learning_rate
        self.seed = seed

    # -- configuration ----------------------------------------------------

    def _stft_config(self) -> StftConfig:
        return StftConfig(
            sample_rate=self.sample_rate, window_len=self.window_len, hop=self.hop
        )

    def _ar_config(self) -> ArConfig:
        return ArConfig(
            bf_option=self.bf_option,
            ar_inputs=self.ar_inputs,
            diag_load=self.diag_load,
            clip_mag=self.clip_mag,
            forgetting=self.forgetting,
            ref_channel=self.ref_channel,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            epochs=self.epochs,
            steps=self.steps,
            learning_rate=self.learning_rate,
            batch=self.batch,
            seed=self.seed,
        )

    # -- estimator protocol -------------------------------------------------

    def fit(self, X, y):
        """Train the mask estimator.

        Parameters
        ----------
        X : list of (channels, samples) arrays
            Multichannel mixtures.
        y : list of (samples,) or (channels, samples) arrays
            Clean targets; multichannel targets use ``ref_channel``.
        """
        if y is None:
            raise AriseError("fit requires clean targets")
        mixtures = [as_multichannel(m, "mixture", min_channels=2) for m in _as_list(X)]
        targets = _as_list(y)
        if len(mixtures) != len(targets):
            raise ShapeMismatchError(
                f"{len(mixtures)} mixtures but {len(targets)} targets"
            )
        stft_cfg = self._stft_config()
        ar_cfg = self._ar_config()
        train_cfg = self._train_config()

        utts = []
        for i, (mx, tg) in enumerate(zip(mixtures, targets)):
            tg = np.asarray(tg, dtype=np.float64)
            ref = tg if tg.ndim == 1 else tg[self.ref_channel]
            if ref.shape[0] != mx.shape[1]:
                raise ShapeMismatchError(f"pair {i}: target length differs from mixture")
            utts.append(utterance_from_waveforms(f"utt_{i:04d}", mx, ref, stft_cfg))

        model = CompactEstimator.create(
            mixtures[0].shape[0], hidden=self.hidden, seed=self.seed
        )
        opt = Adam(model.params(), learning_rate=self.learning_rate)
        rng = np.random.default_rng(self.seed)
        losses = []
        if train_cfg.method == "rds":
            cache = RdsCache()
            for _ in range(train_cfg.epochs):
                loss, cache = train_epoch_rds(model, utts, cache, ar_cfg, train_cfg, opt)
                losses.append(loss)
        else:
            step = train_step_paris if train_cfg.method == "paris" else train_step_bptt
            for _ in range(train_cfg.steps):
                picks = rng.integers(0, len(utts), size=train_cfg.batch)
                loss = step(model, [utts[int(i)] for i in picks], ar_cfg, opt)
                losses.append(loss)

        self.estimator_ = model
        self.n_channels_ = mixtures[0].shape[0]
        self.loss_curve_ = losses
        return self

    def transform(self, X):
        """Enhance mixtures into mono reference-channel estimates."""
        if not hasattr(self, "estimator_"):
            raise AriseError("transform called before fit (or set_estimator)")
        single = isinstance(X, np.ndarray) and X.ndim <= 2
        out = []
        for mx in _as_list(X):
            mx = as_multichannel(mx, "mixture", min_channels=2)
            if mx.shape[0] != self.n_channels_:
                raise ShapeMismatchError(
                    f"fitted for {self.n_channels_} channels, got {mx.shape[0]}"
                )
            out.append(
                enhance_waveform(self._stft_config(), self._ar_config(), self.estimator_, mx)
            )
        return out[0] if single else out

    def predict(self, X):
        return self.transform(X)

    def set_estimator(self, estimator, n_channels: int):
        """Adopt an already-trained mask estimator (e.g. from a checkpoint)."""
        self.estimator_ = estimator
        self.n_channels_ = n_channels
        self.loss_curve_ = []
        return self

    def score(self, X, y):
        """Mean SI-SDR (dB) of the enhanced output against the clean targets."""
        from .metrics import si_sdr

        targets = _as_list(y)
        enhanced = _as_list(self.transform(X))
        scores = []
        for est, tg in zip(enhanced, targets):
            tg = np.asarray(tg, dtype=np.float64)
            ref = tg if tg.ndim == 1 else tg[self.ref_channel]
            scores.append(si_sdr(est, ref))
        return float(np.mean(scores))
