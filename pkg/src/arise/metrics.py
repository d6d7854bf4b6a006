"""Desk-scale objective metrics: SI-SDR and segmental SNR.

SI-SDR projects the estimate onto the reference, so it is invariant to any
nonzero rescaling of the estimate.  Exact matches yield an infinite sentinel
rather than an error.  Segmental SNR averages per-frame estimate-to-error
ratios over voiced frames (reference frame power within 40 dB of the
utterance peak), clamped to [-10, 35] dB.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSignalError, ShapeMismatchError

SEG_SNR_FLOOR_DB = -10.0
SEG_SNR_CEIL_DB = 35.0
VOICED_THRESHOLD_DB = -40.0


def si_sdr(estimate, reference) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    Returns math.inf when the estimate is a perfect rescaling of the
    reference (zero residual).
    """
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise ShapeMismatchError(f"signals must be equal-length 1-D, got {est.shape} vs {ref.shape}")
    ref_power = float(np.dot(ref, ref))
    if ref_power <= 0.0:
        raise DegenerateSignalError("reference has zero power")
    alpha = float(np.dot(est, ref)) / ref_power
    target = alpha * ref
    residual = est - target
    num = float(np.dot(target, target))
    den = float(np.dot(residual, residual))
    if den == 0.0:
        return math.inf
    return 10.0 * math.log10(num / den)


def seg_snr(estimate, reference, frame_len: int = 320, hop: int = 160) -> float:
    """Mean per-frame SNR over voiced frames, clamped to [-10, 35] dB."""
    est = np.asarray(estimate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1:
        raise ShapeMismatchError(f"signals must be equal-length 1-D, got {est.shape} vs {ref.shape}")
    if est.shape[0] < frame_len:
        raise DegenerateSignalError("signal shorter than one frame")

    starts = range(0, est.shape[0] - frame_len + 1, hop)
    ref_powers = np.array([float(np.sum(ref[s : s + frame_len] ** 2)) for s in starts])
    peak = ref_powers.max()
    if peak <= 0.0:
        raise DegenerateSignalError("reference is silent")
    voiced = ref_powers > peak * 10.0 ** (VOICED_THRESHOLD_DB / 10.0)
    if not np.any(voiced):
        raise DegenerateSignalError("no voiced frames")

    values = []
    for s, is_voiced in zip(starts, voiced):
        if not is_voiced:
            continue
        seg_est = est[s : s + frame_len]
        err = seg_est - ref[s : s + frame_len]
        p_est = float(np.sum(seg_est**2))
        p_err = float(np.sum(err**2))
        if p_err == 0.0:
            snr = SEG_SNR_CEIL_DB
        elif p_est == 0.0:
            snr = SEG_SNR_FLOOR_DB
        else:
            snr = 10.0 * math.log10(p_est / p_err)
            snr = min(SEG_SNR_CEIL_DB, max(SEG_SNR_FLOOR_DB, snr))
        values.append(snr)
    return float(np.mean(values))


@dataclass
class UtteranceMetrics:
    utt_id: str
    snr_db: float
    t60_s: float
    si_sdr_mix: float
    si_sdr_enh: float
    seg_snr_mix: float
    seg_snr_enh: float


CSV_HEADER = ["id", "snr_db", "t60_s", "si_sdr_mix", "si_sdr_enh", "seg_snr_mix", "seg_snr_enh"]


@dataclass
class MetricReport:
    """Per-utterance rows plus (snr_db, t60_s) group means."""

    rows: list = field(default_factory=list)

    def add(self, row: UtteranceMetrics) -> None:
        self.rows.append(row)

    def mean(self, attr: str) -> float:
        if not self.rows:
            raise DegenerateSignalError("empty report")
        return float(np.mean([getattr(r, attr) for r in self.rows]))

    def grouped_means(self) -> dict:
        """Means of every metric keyed by (snr_db, t60_s)."""
        groups: dict = {}
        for row in self.rows:
            groups.setdefault((row.snr_db, row.t60_s), []).append(row)
        out = {}
        for key, members in sorted(groups.items()):
            out[key] = {
                attr: float(np.mean([getattr(r, attr) for r in members]))
                for attr in CSV_HEADER[3:]
            }
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for row in self.rows:
                writer.writerow(
                    [
                        row.utt_id,
                        repr(row.snr_db),
                        repr(row.t60_s),
                        repr(row.si_sdr_mix),
                        repr(row.si_sdr_enh),
                        repr(row.seg_snr_mix),
                        repr(row.seg_snr_enh),
                    ]
                )

    def format_lines(self) -> list:
        lines = [
            f"{row.utt_id}: si_sdr {row.si_sdr_mix:.2f} -> {row.si_sdr_enh:.2f} dB, "
            f"seg_snr {row.seg_snr_mix:.2f} -> {row.seg_snr_enh:.2f} dB"
            for row in self.rows
        ]
        for (snr, t60), means in self.grouped_means().items():
            lines.append(
                f"group snr={snr:g} t60={t60:g}: "
                + " ".join(f"{k}={v:.2f}" for k, v in means.items())
            )
        return lines
