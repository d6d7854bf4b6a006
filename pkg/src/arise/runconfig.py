"""Plain-text key=value run configuration with a strict schema.

One ``key=value`` pair per line; blank lines and ``#`` comments are allowed.
Unknown keys are rejected so a typo cannot silently fall back to a default.
"""

from dataclasses import dataclass, fields

from .errors import ConfigError
from .engine import AR_OPTIONS, ArConfig
from .beamforming import BF_OPTIONS
from .scene import ArrayGeometry, SceneSpec
from .stft import StftConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    # framing
    sample_rate: int = 16000
    window_len: int = 320
    hop: int = 160
    fft_len: int = 0
    # inference loop
    bf_option: str = "curr_frame"
    ar_inputs: str = "both"
    diag_load: float = 1e-6
    clip_mag: float = 5.0
    forgetting: float = 1.0
    ref_channel: int = 0
    weight_stride: int = 1  # recompute the beamformer every k-th frame
    # training
    method: str = "rds"
    epochs: int = 10
    steps: int = 200
    learning_rate: float = 0.001
    batch: int = 4
    seed: int = 0
    hidden: int = 16
    # scenes
    num_mics: int = 6
    radius: float = 0.08
    num_noise_sources: int = 4
    snr_db: float = 0.0
    duration: float = 2.0
    t60_s: float = 0.0  # 0 disables the decay tail

    def stft_config(self) -> StftConfig:
        return StftConfig(
            sample_rate=self.sample_rate,
            window_len=self.window_len,
            hop=self.hop,
            fft_len=self.fft_len,
        )

    def ar_config(self) -> ArConfig:
        return ArConfig(
            bf_option=self.bf_option,
            ar_inputs=self.ar_inputs,
            diag_load=self.diag_load,
            clip_mag=self.clip_mag,
            forgetting=self.forgetting,
            ref_channel=self.ref_channel,
            weight_stride=self.weight_stride,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            method=self.method,
            epochs=self.epochs,
            steps=self.steps,
            learning_rate=self.learning_rate,
            batch=self.batch,
            seed=self.seed,
        )

    def geometry(self) -> ArrayGeometry:
        return ArrayGeometry.uniform_circular(self.num_mics, self.radius)

    def scene_spec(self, target_azimuth, noise_azimuths, seed) -> SceneSpec:
        return SceneSpec(
            target_azimuth=target_azimuth,
            noise_azimuths=tuple(noise_azimuths),
            snr_db=self.snr_db,
            duration=self.duration,
            t60_s=self.t60_s if self.t60_s > 0 else None,
            seed=seed,
        )

    def format_lines(self):
        """Every resolved key=value pair, defaults included."""
        return [f"{f.name}={getattr(self, f.name)}" for f in fields(self)]


_CHOICES = {
    "bf_option": BF_OPTIONS,
    "ar_inputs": AR_OPTIONS,
    "method": ("paris", "rds", "bptt"),
}


def _parse_value(key: str, text: str, kind):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: cannot parse {text!r} as {kind.__name__}") from exc


def parse_overrides(pairs) -> dict:
    """Validate ``key=value`` strings against the RunConfig schema."""
    schema = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str}
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, text = pair.split("=", 1)
        key = key.strip()
        text = text.strip()
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r}")
        kind = schema[key]
        if isinstance(kind, str):
            kind = types[kind]
        value = _parse_value(key, text, kind)
        if key in _CHOICES and value not in _CHOICES[key]:
            raise ConfigError(
                f"config key {key!r}: {value!r} not in {_CHOICES[key]}"
            )
        out[key] = value
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    """Read a config file (optional) and apply extra overrides on top."""
    pairs = []
    if path is not None:
        with open(path) as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                pairs.append(line)
    values = parse_overrides(pairs)
    values.update(parse_overrides(overrides))
    cfg = RunConfig(**values)
    cfg.stft_config()
    cfg.ar_config()
    cfg.train_config()
    return cfg
