import numpy as np
import pytest

from arise.scene import ArrayGeometry, SceneSpec, simulate_scene
from arise.stft import StftConfig
from arise.training import Utterance, utterance_from_scene

TOY_SR = 2000

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_stft_config():
    """Tiny 9-bin framing used by the training tests."""
    return StftConfig(sample_rate=TOY_SR, window_len=16, hop=8)


def make_toy_scene(seed, num_mics=2, snr_db=10.0, duration=1.0):
    rng = np.random.default_rng(seed)
    spec = SceneSpec(
        target_azimuth=float(rng.uniform(0.0, 2.0 * np.pi)),
        noise_azimuths=(
            float(rng.uniform(0.0, 2.0 * np.pi)),
            float(rng.uniform(0.0, 2.0 * np.pi)),
        ),
        snr_db=snr_db,
        duration=duration,
        seed=seed,
    )
    geometry = ArrayGeometry.uniform_circular(num_mics, 0.08)
    return simulate_scene(geometry, spec, TOY_SR)


def make_toy_dataset(count, first_seed=1000, num_mics=2, snr_db=10.0):
    stft_cfg = toy_stft_config()
    return [
        utterance_from_scene(
            make_toy_scene(first_seed + i, num_mics=num_mics, snr_db=snr_db),
            stft_cfg,
            0,
            f"toy_{i:03d}",
        )
        for i in range(count)
    ]


def random_utterance(rng, num_mics=2, frames=6, bins=5, utt_id="u"):
    shape = (num_mics, frames, bins)
    mixture = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    target = rng.standard_normal(shape[1:]) + 1j * rng.standard_normal(shape[1:])
    return Utterance(utt_id, mixture, target)

