import numpy as np
import pytest

from vacp import SynthConfig, generate


@pytest.fixture(scope="session")
def small_synth():
    """Shared small synthetic dataset: records, metadata, live-token mask."""
    config = SynthConfig(
        vocab_size=200,
        n_samples=120,
        dead_fraction=0.7,
        zipf_exponent=1.2,
        logit_noise_scale=1.0,
        seed=424242,
    )
    records, metadata, true_mask = generate(config)
    return config, records, metadata, true_mask


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
