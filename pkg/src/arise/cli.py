"""Command-line surface: simulate / enhance / train / evaluate.

Every run logs the fully resolved configuration (defaults included) to
stderr so results can be reproduced from the log alone.  The ARISE_THREADS
environment variable caps the worker count for the embarrassingly parallel
commands; outputs are deterministic regardless because every scene carries
its own seed and each file has a single writer.
"""

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import stft as tfx
from .engine import enhance_waveform
from .errors import AriseError, ConfigError, FileFormatError
from .estimator import CompactEstimator, load_checkpoint, oracle_estimator, save_checkpoint
from .metrics import MetricReport, UtteranceMetrics, seg_snr, si_sdr
from .runconfig import RunConfig, load_config
from .scene import SceneSpec, simulate_scene
from .training import (
    Adam,
    RdsCache,
    TrainConfig,
    train_epoch_rds,
    train_step_bptt,
    train_step_paris,
    utterance_from_waveforms,
)
from .wavio import read_wav, write_wav

_BF_ALIASES = {"prev": "prev_frame", "curr": "curr_frame"}
_AR_ALIASES = {"bf": "bf_only", "nn": "nn_only", "both": "both", "none": "none"}


def worker_count() -> int:
    """Default worker pool size, capped by ARISE_THREADS."""
    default = min(4, os.cpu_count() or 1)
    cap = os.environ.get("ARISE_THREADS")
    if cap is None:
        return default
    try:
        cap = int(cap)
    except ValueError as exc:
        raise ConfigError(f"ARISE_THREADS must be an integer, got {cap!r}") from exc
    return max(1, min(default, cap))


def _log_config(cfg: RunConfig) -> None:
    for line in cfg.format_lines():
        print(f"# config {line}", file=sys.stderr)


def _manifest_line(utt_id: str, spec: SceneSpec) -> str:
    azimuths = ",".join(f"{a:.6f}" for a in spec.noise_azimuths)
    return (
        f"id={utt_id} target_azimuth={spec.target_azimuth:.6f} "
        f"noise_azimuths={azimuths} snr_db={spec.snr_db:g} "
        f"t60_s={spec.t60_s if spec.t60_s is not None else 0:g} "
        f"duration={spec.duration:g} seed={spec.seed}"
    )


def parse_manifest(path):
    """Yield (utt_id, SceneSpec) pairs from a manifest file."""
    entries = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            values = {}
            for token in line.split():
                if "=" not in token:
                    raise FileFormatError(f"{path}:{lineno}: bad token {token!r}")
                key, text = token.split("=", 1)
                values[key] = text
            try:
                t60 = float(values.get("t60_s", "0"))
                spec = SceneSpec(
                    target_azimuth=float(values["target_azimuth"]),
                    noise_azimuths=tuple(
                        float(a) for a in values["noise_azimuths"].split(",") if a
                    ),
                    snr_db=float(values["snr_db"]),
                    duration=float(values.get("duration", "2.0")),
                    t60_s=t60 if t60 > 0 else None,
                    seed=int(values["seed"]),
                )
            except KeyError as exc:
                raise FileFormatError(f"{path}:{lineno}: missing field {exc}") from exc
            entries.append((values["id"], spec))
    return entries


def cmd_simulate(cfg: RunConfig, out_dir, count: int) -> int:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    geometry = cfg.geometry()
    master = np.random.default_rng(cfg.seed)
    specs = []
    for i in range(count):
        target_az = float(master.uniform(0.0, 2.0 * np.pi))
        noise_az = [float(master.uniform(0.0, 2.0 * np.pi)) for _ in range(cfg.num_noise_sources)]
        seed = int(master.integers(0, 2**31 - 1))
        specs.append((f"scene_{i:03d}", cfg.scene_spec(target_az, noise_az, seed)))

    def build(item):
        utt_id, spec = item
        scene = simulate_scene(geometry, spec, cfg.sample_rate)
        write_wav(out / f"{utt_id}.mix.wav", scene.mixture, cfg.sample_rate)
        write_wav(out / f"{utt_id}.target.wav", scene.target, cfg.sample_rate)
        write_wav(out / f"{utt_id}.noise.wav", scene.noise, cfg.sample_rate)
        return _manifest_line(utt_id, spec)

    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        lines = list(pool.map(build, specs))
    with open(out / "manifest.txt", "w") as fh:
        for line in lines:
            fh.write(line + "\n")
    print(f"wrote {count} scenes to {out}", file=sys.stderr)
    return 0


def _build_estimator(cfg: RunConfig, spec_kind: str, mixture, target_path):
    if spec_kind == "oracle":
        if target_path is None:
            raise ConfigError("--estimator oracle requires --target with the clean file")
        target, rate, _ = read_wav(target_path)
        if rate != cfg.sample_rate:
            raise ConfigError(f"target rate {rate} != configured {cfg.sample_rate}")
        stft_cfg = cfg.stft_config()
        x_ref = tfx.analyze(stft_cfg, target[cfg.ref_channel].astype(np.float64))
        y_ref = tfx.analyze(stft_cfg, mixture[cfg.ref_channel].astype(np.float64))
        return oracle_estimator(x_ref, y_ref, cfg.clip_mag)
    return load_checkpoint(spec_kind)


def cmd_enhance(cfg: RunConfig, in_wav, out_wav, estimator_spec: str, target_path=None) -> int:
    mixture, rate, _ = read_wav(in_wav)
    if mixture.shape[0] < 2:
        raise ConfigError(f"{in_wav}: enhancement needs at least 2 channels")
    if rate != cfg.sample_rate:
        raise ConfigError(f"{in_wav}: sample rate {rate} != configured {cfg.sample_rate}")
    est = _build_estimator(cfg, estimator_spec, mixture, target_path)
    enhanced = enhance_waveform(
        cfg.stft_config(), cfg.ar_config(), est, mixture.astype(np.float64)
    )
    write_wav(out_wav, enhanced, cfg.sample_rate)
    return 0


def _load_utterances(cfg: RunConfig, manifest_path):
    scene_dir = Path(manifest_path).parent
    stft_cfg = cfg.stft_config()
    utts = []
    for utt_id, _spec in parse_manifest(manifest_path):
        mixture, rate, _ = read_wav(scene_dir / f"{utt_id}.mix.wav")
        target, _, _ = read_wav(scene_dir / f"{utt_id}.target.wav")
        if rate != cfg.sample_rate:
            raise ConfigError(f"{utt_id}: sample rate {rate} != configured {cfg.sample_rate}")
        utts.append(
            utterance_from_waveforms(
                utt_id,
                mixture.astype(np.float64),
                target[cfg.ref_channel].astype(np.float64),
                stft_cfg,
            )
        )
    return utts


def cmd_train(cfg: RunConfig, manifest_path, out_checkpoint, method=None) -> int:
    train_cfg = cfg.train_config()
    if method:
        train_cfg = TrainConfig(
            method=method,
            epochs=train_cfg.epochs,
            steps=train_cfg.steps,
            learning_rate=train_cfg.learning_rate,
            batch=train_cfg.batch,
            seed=train_cfg.seed,
        )
    ar_cfg = cfg.ar_config()
    utts = _load_utterances(cfg, manifest_path)
    if not utts:
        raise AriseError("manifest lists no scenes")
    num_mics = utts[0].mixture_spec.shape[0]
    model = CompactEstimator.create(num_mics, hidden=cfg.hidden, seed=train_cfg.seed)
    opt = Adam(model.params(), learning_rate=train_cfg.learning_rate)
    rng = np.random.default_rng(train_cfg.seed)

    log_lines = []
    if train_cfg.method == "rds":
        cache = RdsCache()
        for epoch in range(train_cfg.epochs):
            loss, cache = train_epoch_rds(model, utts, cache, ar_cfg, train_cfg, opt)
            log_lines.append(f"epoch {epoch + 1} loss {loss:.6f}")
        cache.save(str(out_checkpoint) + ".cache")
    else:
        step_fn = train_step_paris if train_cfg.method == "paris" else train_step_bptt
        for step in range(train_cfg.steps):
            picks = rng.integers(0, len(utts), size=train_cfg.batch)
            batch = [utts[int(i)] for i in picks]
            loss = step_fn(model, batch, ar_cfg, opt)
            log_lines.append(f"step {step + 1} loss {loss:.6f}")

    save_checkpoint(out_checkpoint, model)
    log_path = str(out_checkpoint) + ".loss.log"
    with open(log_path, "w") as fh:
        for line in log_lines:
            fh.write(line + "\n")
    print(f"checkpoint {out_checkpoint}, loss log {log_path}", file=sys.stderr)
    return 0


def cmd_evaluate(cfg: RunConfig, manifest_path, enhanced_dir, report_path=None) -> int:
    scene_dir = Path(manifest_path).parent
    enhanced_dir = Path(enhanced_dir)
    report = MetricReport()
    missing = []
    for utt_id, spec in parse_manifest(manifest_path):
        enh_path = enhanced_dir / f"{utt_id}.enh.wav"
        if not enh_path.exists():
            missing.append(str(enh_path))
            continue
        mixture, _, _ = read_wav(scene_dir / f"{utt_id}.mix.wav")
        target, _, _ = read_wav(scene_dir / f"{utt_id}.target.wav")
        enhanced, _, _ = read_wav(enh_path)
        ref = target[cfg.ref_channel].astype(np.float64)
        mix_ref = mixture[cfg.ref_channel].astype(np.float64)
        enh = enhanced[0].astype(np.float64)[: ref.shape[0]]
        if enh.shape[0] < ref.shape[0]:
            enh = np.pad(enh, (0, ref.shape[0] - enh.shape[0]))
        report.add(
            UtteranceMetrics(
                utt_id=utt_id,
                snr_db=spec.snr_db,
                t60_s=spec.t60_s if spec.t60_s is not None else 0.0,
                si_sdr_mix=si_sdr(mix_ref, ref),
                si_sdr_enh=si_sdr(enh, ref),
                seg_snr_mix=seg_snr(mix_ref, ref, cfg.window_len, cfg.hop),
                seg_snr_enh=seg_snr(enh, ref, cfg.window_len, cfg.hop),
            )
        )
    if report.rows:
        out_csv = Path(report_path) if report_path else enhanced_dir / "report.csv"
        report.write_csv(out_csv)
        for line in report.format_lines():
            print(line)
        print(f"report written to {out_csv}", file=sys.stderr)
    for path in missing:
        print(f"missing enhanced file: {path}", file=sys.stderr)
    return 2 if missing else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="arise", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config key")

    p_sim = sub.add_parser("simulate", help="generate synthetic scenes")
    add_common(p_sim)
    p_sim.add_argument("--out-dir", required=True)
    p_sim.add_argument("--count", type=int, default=10)

    p_enh = sub.add_parser("enhance", help="enhance a multichannel WAV")
    add_common(p_enh)
    p_enh.add_argument("in_wav")
    p_enh.add_argument("out_wav")
    p_enh.add_argument("--bf-option", choices=sorted(_BF_ALIASES), default=None)
    p_enh.add_argument("--ar", choices=sorted(_AR_ALIASES), default=None)
    p_enh.add_argument("--estimator", required=True,
                       help="'oracle' or a checkpoint path")
    p_enh.add_argument("--target", default=None,
                       help="clean multichannel WAV (required for --estimator oracle)")

    p_tr = sub.add_parser("train", help="train a mask estimator")
    add_common(p_tr)
    p_tr.add_argument("manifest")
    p_tr.add_argument("out_checkpoint")
    p_tr.add_argument("--method", choices=["paris", "rds", "bptt"], default=None)

    p_ev = sub.add_parser("evaluate", help="score enhanced files against a manifest")
    add_common(p_ev)
    p_ev.add_argument("manifest")
    p_ev.add_argument("enhanced_dir")
    p_ev.add_argument("--report", default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.set)
    if getattr(args, "bf_option", None):
        overrides.append(f"bf_option={_BF_ALIASES[args.bf_option]}")
    if getattr(args, "ar", None):
        overrides.append(f"ar_inputs={_AR_ALIASES[args.ar]}")
    try:
        cfg = load_config(args.config, overrides)
        _log_config(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out_dir, args.count)
        if args.command == "enhance":
            return cmd_enhance(cfg, args.in_wav, args.out_wav, args.estimator, args.target)
        if args.command == "train":
            return cmd_train(cfg, args.manifest, args.out_checkpoint, args.method)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.manifest, args.enhanced_dir, args.report)
        raise ConfigError(f"unknown command {args.command!r}")
    except (AriseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
