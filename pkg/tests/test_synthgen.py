import hashlib

import numpy as np
import pytest

from orfseg.imagecore import load_mask, read_manifest
from orfseg.postproc import border_background
from orfseg.synthgen import SynthConfig, generate_dataset, generate_sample


def test_no_glands_is_pure_negative():
    image, truth, label = generate_sample(SynthConfig(gland_count_range=(0, 0)), 3)
    assert truth.sum() == 0 and label.sum() == 0
    assert image.shape == (256, 256)


def test_full_annotation_limit():
    cfg = SynthConfig(label_fraction_range=(1.0, 1.0), gland_count_range=(2, 4), seed=5)
    for i in range(1, 4):
        _, truth, label = generate_sample(cfg, i)
        assert np.array_equal(label, truth)


def test_deterministic_and_out_of_order():
    cfg = SynthConfig(seed=9)
    a = generate_sample(cfg, 7)
    generate_sample(cfg, 2)
    b = generate_sample(cfg, 7)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_invariants_default_config():
    cfg = SynthConfig(seed=11)
    seen_pipe = False
    for i in range(25):
        image, truth, label = generate_sample(cfg, i)
        assert not np.any(label & (1 - truth))
        assert 0.0 <= image.min() and image.max() <= 1.0
        if truth.sum():
            frac = label.sum() / truth.sum()
            assert 0.2 <= frac <= 0.7
        # pipes: truth-negative pixels not reachable from the border
        enclosed = (truth == 0) & ~border_background(truth)
        if enclosed.any():
            seen_pipe = True
            assert not truth[enclosed].any()
    assert seen_pipe


def test_noise_free_intensities_match_regions():
    cfg = SynthConfig(noise_sigma=0.0, seed=2, gland_count_range=(3, 5))
    image, truth, _ = generate_sample(cfg, 1)
    assert np.all(image[truth == 1] == 0.45)
    assert set(np.unique(image[truth == 0])) <= {0.95, 0.90}


@pytest.mark.parametrize("kw", [
    dict(gland_radius_range=(10, 128)),
    dict(label_fraction_range=(0.9, 0.1)),
    dict(gland_count_range=(3, 1)),
    dict(gland_intensity=0.92),
])
def test_invalid_config(kw):
    with pytest.raises(ValueError):
        SynthConfig(**kw)


def _digest(d):
    h = hashlib.sha256()
    for p in sorted(d.rglob("*")):
        if p.is_file():
            h.update(p.relative_to(d).as_posix().encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_dataset_count_zero(tmp_path):
    m = generate_dataset(SynthConfig(), 0, tmp_path)
    assert read_manifest(m) == []


def test_dataset_deterministic(tmp_path):
    cfg = SynthConfig(seed=4, image_size=64, gland_radius_range=(6, 12))
    generate_dataset(cfg, 5, tmp_path / "a")
    generate_dataset(cfg, 5, tmp_path / "b")
    assert len(read_manifest(tmp_path / "a" / "manifest.jsonl")) == 5
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b")


def test_pure_negative_injection(tmp_path):
    cfg = SynthConfig(seed=7, image_size=64, gland_radius_range=(6, 12), gland_count_range=(0, 6))
    entries = read_manifest(generate_dataset(cfg, 40, tmp_path))
    pure = sum(load_mask(e.truth_path).sum() == 0 for e in entries)
    assert pure >= 2
