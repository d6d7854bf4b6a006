"""Frame-online multi-channel speech enhancement with auto-regressive
beamforming feedback.

The inference loop estimates a complex ratio mask per frame, folds the
masked estimate into running spatial covariance matrices, recomputes an
MVDR beamformer, and feeds the beamformed mixture (and the previous
estimate) back to the mask estimator at the next frame.  Two parallel
training schemes avoid back-propagating through that feedback loop; an
exact through-time baseline is included for comparison.
"""

from .beamforming import (
    BF_CURR_FRAME,
    BF_PREV_FRAME,
    BeamformerWeights,
    ScmPair,
    apply_bf,
    mvdr_weights,
    scm_update,
)
from .engine import (
    AR_BF_ONLY,
    AR_BOTH,
    AR_NN_ONLY,
    AR_NONE,
    ArConfig,
    ArState,
    enhance_waveform,
    initial_state,
    latency_report,
    process_frame,
    process_utterance,
)
from .enhancer import AriseEnhancer
from .errors import (
    AriseError,
    ConfigError,
    DegenerateSceneError,
    DegenerateSignalError,
    FileFormatError,
    LengthMismatchError,
    NonFiniteError,
    ShapeMismatchError,
)
from .estimator import (
    CompactEstimator,
    EstimatorInput,
    OracleEstimator,
    load_checkpoint,
    oracle_estimator,
    save_checkpoint,
)
from .masking import ComplexMask, apply_mask, clip_magnitude, oracle_crm
from .metrics import MetricReport, UtteranceMetrics, seg_snr, si_sdr
from .scene import ArrayGeometry, Scene, SceneSpec, mix, simulate_scene, steer, synth_source
from .stft import StftConfig, analyze, analyze_frame, reconstruct, sqrt_hann, synthesize
from .training import (
    Adam,
    RdsCache,
    TrainConfig,
    Utterance,
    bptt_loss_and_grads,
    initial_training_loss,
    loss_l1,
    train_epoch_rds,
    train_step_bptt,
    train_step_paris,
    utterance_from_scene,
    utterance_from_waveforms,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
