import numpy as np
import pytest

from orfseg.imagecore import Sample
from orfseg.synthgen import SynthConfig, generate_sample


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def synth_samples(n, seed=0, **kw):
    cfg = SynthConfig(seed=seed, **kw)
    out = []
    for i in range(n):
        image, truth, label = generate_sample(cfg, i)
        out.append(Sample(f"img{i:04d}", image, label, truth))
    return out


@pytest.fixture(scope="session")
def small_samples():
    """Eight 64px noise-free images, cheap enough for pipeline tests."""
    return synth_samples(8, seed=3, image_size=64, gland_radius_range=(8, 14),
                         gland_count_range=(1, 3), noise_sigma=0.0)
