"""Overlapped region forecast: predict every grid patch, superpose, normalise.

Each pixel of the stitched belief map is the mean of all patch beliefs that
cover it.  The per-pixel coverage is counted exactly during accumulation; it
factors into a product of 1-D counts, which are checked against each other.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import uniform_filter
from sklearn.base import BaseEstimator

from ._validation import check_belief, check_fraction, check_image, check_odd_kernel
from .patching import PatchSpec, TilingConfig, check_conforms, crop, grid, grid_origins
from .postproc import HoleMode, flood_fill_holes
from .predictor import PatchPredictor


@dataclass
class Gallery:
    """Patch beliefs of one image, stacked in grid order.

    ``beliefs[k]`` is the ``(s_p, s_p)`` map predicted for ``grid(config)[k]``.
    """

    source_id: str
    config: TilingConfig
    beliefs: np.ndarray

    @property
    def specs(self) -> List[PatchSpec]:
        return grid(self.config)

    @property
    def entries(self) -> List[Tuple[PatchSpec, np.ndarray]]:
        return list(zip(grid(self.config), self.beliefs))

    def validate(self) -> None:
        s = self.config.s_p
        expected = (self.config.n_patches, s, s)
        if np.shape(self.beliefs) != expected:
            raise ValueError(
                f"gallery {self.source_id!r} holds beliefs of shape {np.shape(self.beliefs)}; "
                f"expected {expected}"
            )


@dataclass
class Superposition:
    sum: np.ndarray
    count: np.ndarray


def build_gallery(image: np.ndarray, config: TilingConfig, predictor: PatchPredictor,
                  source_id: str = "", threads: int = 1) -> Gallery:
    """Predict a belief map for every grid patch of ``image``."""
    image = check_image(image)
    check_conforms(image, config)
    specs = grid(config)

    def _one(spec: PatchSpec) -> np.ndarray:
        belief = np.asarray(predictor.predict_proba(crop(image, spec, config.s_p), spec),
                            dtype=np.float64)
        if belief.shape != (config.s_p, config.s_p):
            raise ValueError(
                f"predictor returned shape {belief.shape} for a {config.s_p}px patch"
            )
        return check_belief(belief)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            beliefs = list(pool.map(_one, specs))
    else:
        beliefs = [_one(s) for s in specs]
    return Gallery(source_id, config, np.stack(beliefs))


def coverage_count_1d(p: int, config: TilingConfig) -> int:
    """Number of windows ``[k*stride, k*stride + s_p)`` that contain pixel ``p``."""
    if not 0 <= p < config.s_ori:
        raise IndexError(f"pixel {p} outside [0, {config.s_ori})")
    last = config.steps - 1
    k_hi = min(p // config.stride, last)
    k_lo = max(0, -(-(p - config.s_p + 1) // config.stride))
    return max(0, k_hi - k_lo + 1)


def coverage_closed_form(n: int, config: TilingConfig) -> int:
    """Closed form ``min(ceil(n / stride), s_p / stride)`` with 1-based ``n``.

    Exact for pixels up to ``s_ori - s_p``; it does not decay at the far border.
    """
    return min(math.ceil(n / config.stride), config.s_p // config.stride)


def coverage_profile(config: TilingConfig) -> np.ndarray:
    return np.array([coverage_count_1d(p, config) for p in range(config.s_ori)], dtype=np.int64)


# upper bound on belief values gathered per accumulation chunk
_CHUNK_VALUES = 1 << 22


def superpose(gallery: Gallery) -> Superposition:
    """Accumulate patch beliefs and per-pixel coverage counts.

    Each pixel receives its belief contributions in grid order, exactly as a
    loop over the patches would add them.  Counts are accumulated as +-1 at
    every patch's corners followed by two cumulative sums.
    """
    gallery.validate()
    cfg = gallery.config
    s, side = cfg.s_p, cfg.s_ori
    origins = grid_origins(cfg)
    start_index = origins[:, 0] * side + origins[:, 1]
    local = (np.arange(s)[:, None] * side + np.arange(s)[None, :]).ravel()
    total = np.zeros(side * side, dtype=np.float64)
    per_chunk = max(1, _CHUNK_VALUES // (s * s))
    for start in range(0, len(origins), per_chunk):
        stop = start + per_chunk
        index = (start_index[start:stop, None] + local[None, :]).ravel()
        weights = np.asarray(gallery.beliefs[start:stop], dtype=np.float64).ravel()
        total += np.bincount(index, weights=weights, minlength=side * side)
    corners = np.zeros((side + 1, side + 1), dtype=np.int64)
    r0, c0 = origins[:, 0], origins[:, 1]
    np.add.at(corners, (r0, c0), 1)
    np.add.at(corners, (r0, c0 + s), -1)
    np.add.at(corners, (r0 + s, c0), -1)
    np.add.at(corners, (r0 + s, c0 + s), 1)
    count = corners.cumsum(axis=0).cumsum(axis=1)[:side, :side]
    return Superposition(total.reshape(side, side), count)


def stitch(gallery: Gallery) -> np.ndarray:
    """Average overlapping patch beliefs into one map covering the image."""
    sup = superpose(gallery)
    profile = coverage_profile(gallery.config)
    if not np.array_equal(sup.count, np.outer(profile, profile)):
        raise AssertionError("coverage counts are not separable; grid is inconsistent")
    return np.clip(sup.sum / sup.count, 0.0, 1.0)


def smooth(belief: np.ndarray, kernel: int = 11) -> np.ndarray:
    """Mean filter with replicated borders."""
    kernel = check_odd_kernel(kernel)
    belief = check_belief(belief)
    if kernel == 1:
        return belief.copy()
    return np.clip(uniform_filter(belief, size=kernel, mode="nearest"), 0.0, 1.0)


def binarize(belief: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where ``belief >= threshold``."""
    check_fraction(threshold, "threshold", open_low=True, open_high=True)
    return (check_belief(belief) >= threshold).astype(np.uint8)


class OverlappedRegionForecaster(BaseEstimator):
    """Whole-image inference around a patch predictor.

    Parameters
    ----------
    predictor : PatchPredictor
    patch_size, stride : int
        Window side and step; ``stride == patch_size`` is a plain mosaic.
    smooth_kernel : int
        Side of the mean filter applied after stitching (1 disables it).
    threshold : float
        Belief cut for :meth:`predict`.
    hole_mode : {"fill", "keep"}
    min_hole_area : int
    threads : int
        Patch predictions run concurrently; the output does not depend on it.
    """

    def __init__(self, predictor=None, patch_size=64, stride=16, smooth_kernel=11,
                 threshold=0.5, hole_mode="fill", min_hole_area=0, threads=1):
        self.predictor = predictor
        self.patch_size = patch_size
        self.stride = stride
        self.smooth_kernel = smooth_kernel
        self.threshold = threshold
        self.hole_mode = hole_mode
        self.min_hole_area = min_hole_area
        self.threads = threads

    def tiling(self, image: np.ndarray) -> TilingConfig:
        h, w = np.asarray(image).shape[:2]
        if h != w:
            raise ValueError(f"images must be square, got {h}x{w}")
        return TilingConfig(h, self.patch_size, self.stride)

    def fit(self, X=None, y=None):
        return self

    def gallery(self, image: np.ndarray, source_id: str = "",
                predictor: Optional[PatchPredictor] = None) -> Gallery:
        return build_gallery(image, self.tiling(image), predictor or self.predictor,
                             source_id=source_id, threads=self.threads)

    def predict_proba(self, image: np.ndarray, predictor: Optional[PatchPredictor] = None) -> np.ndarray:
        """Smoothed stitched belief map."""
        return smooth(stitch(self.gallery(image, predictor=predictor)), self.smooth_kernel)

    def predict(self, image: np.ndarray, predictor: Optional[PatchPredictor] = None) -> np.ndarray:
        mask = binarize(self.predict_proba(image, predictor), self.threshold)
        return flood_fill_holes(mask, HoleMode(self.hole_mode), self.min_hole_area)
