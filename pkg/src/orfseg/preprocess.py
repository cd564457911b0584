"""Background and pipe suppression in training labels via binarization."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._validation import check_fraction, check_mask, check_same_shape
from .imagecore import luminance

HIST_BINS = 256


class BinarizeMethod(str, enum.Enum):
    OTSU = "otsu"
    FIXED = "fixed"


@dataclass(frozen=True)
class BinarizeConfig:
    method: BinarizeMethod = BinarizeMethod.OTSU
    fixed_threshold: float = 0.8

    def __post_init__(self):
        object.__setattr__(self, "method", BinarizeMethod(self.method))
        check_fraction(self.fixed_threshold, "fixed_threshold")


def intensity_bins(values: np.ndarray) -> np.ndarray:
    """Histogram bin index of each intensity: bin k covers [k/256, (k+1)/256)."""
    return np.minimum(np.floor(values * HIST_BINS), HIST_BINS - 1).astype(np.int64)


def otsu_threshold(values: np.ndarray) -> float:
    """Otsu's threshold over a 256-bin histogram of intensities in [0, 1].

    Pixels with intensity ``>= threshold`` form the bright class.  The class
    means use the raw intensities that fall in each bin, not bin centres.
    When only one bin is occupied its lower edge is returned, so everything
    falls in the bright class.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    bins = intensity_bins(values)
    counts = np.bincount(bins, minlength=HIST_BINS).astype(np.float64)
    sums = np.bincount(bins, weights=values, minlength=HIST_BINS)
    n = counts.sum()
    # candidate split t: dark class = bins < t, t in 1..255
    w0 = np.cumsum(counts)[:-1]
    s0 = np.cumsum(sums)[:-1]
    w1 = n - w0
    s1 = sums.sum() - s0
    valid = (w0 > 0) & (w1 > 0)
    if not valid.any():
        return float(np.flatnonzero(counts)[0]) / HIST_BINS
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between[~valid] = -1.0
    t = int(np.argmax(between)) + 1
    return t / HIST_BINS


def background_mask(patch: np.ndarray, config: BinarizeConfig = BinarizeConfig()) -> np.ndarray:
    """1 where a pixel is bright enough to be background or pipe."""
    lum = luminance(patch)
    if config.method is BinarizeMethod.OTSU:
        thr = otsu_threshold(lum)
    else:
        thr = config.fixed_threshold
    return (lum >= thr).astype(np.uint8)


def apply_background_mask(label: np.ndarray, bg: np.ndarray) -> np.ndarray:
    label = check_mask(label, "label")
    bg = check_mask(bg, "bg")
    check_same_shape(label, bg, "label and background mask")
    return label * (1 - bg)


def label_filter(config: BinarizeConfig = BinarizeConfig()):
    """Callable suitable for :func:`orfseg.patching.build_dataset`."""

    def _filter(image: np.ndarray, label: np.ndarray) -> np.ndarray:
        return apply_background_mask(label, background_mask(image, config))

    return _filter
