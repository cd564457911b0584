import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orfseg.imagecore import Sample
from orfseg.patching import (DatasetKind, PatchSpec, TilingConfig, area_threshold, build_dataset,
                             crop, grid, mosaic)


def brute_origins(cfg):
    return [(r, c) for r in range(cfg.s_ori) for c in range(cfg.s_ori)
            if r % cfg.stride == 0 and c % cfg.stride == 0
            and r + cfg.s_p <= cfg.s_ori and c + cfg.s_p <= cfg.s_ori]


def test_grid_large_image_geometry():
    assert len(grid(TilingConfig(2048, 512, 512))) == 16
    g = grid(TilingConfig(2048, 512, 256))
    assert len(g) == 49
    assert sorted({s.row0 for s in g}) == list(range(0, 1537, 256))


def test_grid_single_patch():
    assert grid(TilingConfig(64, 64, 16)) == [PatchSpec(0, 0)]


def test_grid_row_major():
    g = grid(TilingConfig(16, 8, 4))
    assert g == sorted(g)
    assert [(s.row0, s.col0) for s in g] == brute_origins(TilingConfig(16, 8, 4))


@pytest.mark.parametrize("args", [(16, 8, 3), (17, 8, 4), (8, 16, 4), (16, 8, 0)])
def test_tiling_rejects(args):
    with pytest.raises(ValueError):
        TilingConfig(*args)


@st.composite
def tilings(draw, max_side=96):
    stride = draw(st.integers(1, 16))
    s_p = stride * draw(st.integers(1, 6))
    s_ori = s_p + stride * draw(st.integers(0, 6))
    return TilingConfig(s_ori, s_p, stride)


@given(tilings())
def test_grid_count_formula(cfg):
    n = ((cfg.s_ori - cfg.s_p) // cfg.stride + 1) ** 2
    assert len(grid(cfg)) == n == len(brute_origins(cfg))


def test_area_threshold_values():
    assert area_threshold(np.ones((8, 8))) == 1.0
    assert area_threshold(np.zeros((8, 8))) == 0.0
    m = np.zeros((512, 512), np.uint8)
    m.flat[:131072] = 1
    assert area_threshold(m) == 0.5


@given(st.integers(0, 2 ** 16 - 1))
def test_area_threshold_transpose(bits):
    m = np.array([(bits >> k) & 1 for k in range(16)], dtype=np.uint8).reshape(4, 4)
    mu = area_threshold(m)
    assert 0.0 <= mu <= 1.0
    assert mu == area_threshold(m.T)


def test_crop_and_partition(rng):
    raster = rng.random((16, 16))
    assert np.array_equal(crop(raster, PatchSpec(0, 0), 8), raster[:8, :8])
    assert np.all(crop(np.full((16, 16), 0.3), PatchSpec(4, 8), 8) == 0.3)
    cfg = TilingConfig(16, 4, 4)
    rebuilt = mosaic([(s, crop(raster, s, 4)) for s in grid(cfg)], raster.shape)
    assert np.array_equal(rebuilt, raster)
    with pytest.raises(IndexError):
        crop(raster, PatchSpec(12, 0), 8)


def _sample(label, sid="s"):
    return Sample(sid, np.full(label.shape, 0.5), label.astype(np.uint8))


def test_build_dataset_empty_label():
    s = _sample(np.zeros((16, 16)))
    cfg = TilingConfig(16, 8, 4)
    assert len(build_dataset([s], cfg, "mix", 0.5)) == 0
    seq = build_dataset([s], cfg, DatasetKind.SEQUENTIAL)
    assert len(seq) == 9
    assert [p.spec for p in seq.patches] == grid(cfg)


def test_build_dataset_left_half():
    label = np.zeros((16, 16), np.uint8)
    label[:, :8] = 1
    cfg = TilingConfig(16, 8, 4)
    ds = build_dataset([_sample(label)], cfg, "mix", 0.5)
    # brute force: mu per window
    expected = [s for s in grid(cfg) if label[s.row0:s.row0 + 8, s.col0:s.col0 + 8].mean() >= 0.5]
    assert [p.spec for p in ds.patches] == expected
    # col0=0 (mu=1) and col0=4 (mu=0.5, tie retained) for each of 3 rows
    assert len(ds) == 6
    assert all(p.source_id == "s" and p.image.shape == (8, 8) for p in ds.patches)


def test_mix_subset_of_sequential(rng):
    samples = [_sample(rng.integers(0, 2, (16, 16)) * (rng.random() < 0.7), f"s{i}")
               for i in range(5)]
    cfg = TilingConfig(16, 8, 4)
    for thr in (0.3, 0.5, 0.6):
        mix = set(build_dataset(samples, cfg, "mix", thr).keys())
        seq = set(build_dataset(samples, cfg, "sequential").keys())
        assert mix <= seq


def test_build_dataset_dimension_mismatch():
    s = Sample("x", np.zeros((16, 16)), np.zeros((16, 8), np.uint8))
    with pytest.raises(ValueError):
        build_dataset([s], TilingConfig(16, 8, 4), "sequential")
