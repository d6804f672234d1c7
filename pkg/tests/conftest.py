"""Shared fixtures: a tiny seeded synthetic dataset"""

import pytest

from eegshield.eeg_synth import SyntheticConfig, generate_synthetic


@pytest.fixture
def tiny_config():
    return SyntheticConfig(n_subjects=4, n_sessions=2, trials_per_task_per_session=8,
                           n_channels=8, n_samples=128, seed=3)


@pytest.fixture
def tiny_dataset(tiny_config):
    return generate_synthetic(tiny_config)
