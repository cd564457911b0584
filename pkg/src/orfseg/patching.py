"""Tiling geometry, area-threshold patch selection and patch datasets."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence

import numpy as np

from ._validation import check_fraction, check_mask, check_same_shape
from .imagecore import Sample


class DatasetKind(str, enum.Enum):
    MIX = "mix"
    SEQUENTIAL = "sequential"


@dataclass(frozen=True)
class TilingConfig:
    """Square grid of ``s_p``-sized windows stepping by ``stride`` over an ``s_ori`` image."""

    s_ori: int
    s_p: int
    stride: int

    def __post_init__(self):
        if not 0 < self.stride <= self.s_p <= self.s_ori:
            raise ValueError(
                f"need 0 < stride <= s_p <= s_ori, got stride={self.stride}, "
                f"s_p={self.s_p}, s_ori={self.s_ori}"
            )
        if self.s_p % self.stride:
            raise ValueError(f"stride {self.stride} does not divide patch size {self.s_p}")
        if (self.s_ori - self.s_p) % self.stride:
            raise ValueError(
                f"stride {self.stride} does not divide the sliding extent {self.s_ori - self.s_p}"
            )

    @property
    def steps(self) -> int:
        """Window origins per axis."""
        return (self.s_ori - self.s_p) // self.stride + 1

    @property
    def n_patches(self) -> int:
        return self.steps ** 2

    def with_stride(self, stride: int) -> "TilingConfig":
        return TilingConfig(self.s_ori, self.s_p, stride)


@dataclass(frozen=True, order=True)
class PatchSpec:
    row0: int
    col0: int


@dataclass(frozen=True)
class LabeledPatch:
    image: np.ndarray
    label: np.ndarray
    source_id: str
    spec: PatchSpec


@dataclass
class PatchDataset:
    kind: DatasetKind
    patches: List[LabeledPatch] = field(default_factory=list)
    area_threshold: Optional[float] = None

    def __len__(self) -> int:
        return len(self.patches)

    def keys(self) -> List[tuple]:
        return [(p.source_id, p.spec) for p in self.patches]


def grid(config: TilingConfig) -> List[PatchSpec]:
    """Row-major window origins covering the image."""
    origins = range(0, config.s_ori - config.s_p + 1, config.stride)
    return [PatchSpec(r, c) for r in origins for c in origins]


def grid_origins(config: TilingConfig) -> np.ndarray:
    """The origins of :func:`grid` as an ``(n_patches, 2)`` integer array."""
    origins = np.arange(0, config.s_ori - config.s_p + 1, config.stride, dtype=np.int64)
    rows, cols = np.meshgrid(origins, origins, indexing="ij")
    return np.column_stack([rows.ravel(), cols.ravel()])


def area_threshold(label_patch: np.ndarray) -> float:
    """Fraction of annotated (positive) pixels in a label patch."""
    label_patch = check_mask(label_patch, "label_patch")
    return float(label_patch.sum()) / label_patch.size


def crop(raster: np.ndarray, spec: PatchSpec, s_p: int) -> np.ndarray:
    h, w = raster.shape[:2]
    if spec.row0 < 0 or spec.col0 < 0 or spec.row0 + s_p > h or spec.col0 + s_p > w:
        raise IndexError(f"patch {spec} of size {s_p} exceeds raster bounds {(h, w)}")
    return raster[spec.row0 : spec.row0 + s_p, spec.col0 : spec.col0 + s_p].copy()


def check_conforms(raster: np.ndarray, config: TilingConfig, what: str = "image") -> None:
    if raster.shape[:2] != (config.s_ori, config.s_ori):
        raise ValueError(
            f"{what} shape {raster.shape[:2]} does not match tiling s_ori={config.s_ori}"
        )


def build_dataset(
    samples: Sequence[Sample],
    config: TilingConfig,
    kind: DatasetKind | str,
    threshold: float = 0.5,
    labels: Optional[Sequence[np.ndarray]] = None,
    select_labels: Optional[Sequence[np.ndarray]] = None,
    label_filter=None,
) -> PatchDataset:
    """Slice samples into a training dataset.

    Parameters
    ----------
    samples
        Source images; ``sample.label`` is used unless ``labels`` overrides it.
    kind
        ``mix`` keeps windows whose annotated fraction is at least
        ``threshold``; ``sequential`` keeps every grid window.
    labels
        Optional per-sample label rasters replacing ``sample.label`` as the
        training target (e.g. enhanced labels during a review).
    select_labels
        Optional rasters against which the area threshold is measured;
        defaults to the training labels.
    label_filter
        Optional callable ``(image, label) -> label`` applied to each full
        label before cropping (background suppression).
    """
    kind = DatasetKind(kind)
    if kind is DatasetKind.MIX:
        threshold = check_fraction(threshold, "threshold")
    specs = grid(config)
    patches: List[LabeledPatch] = []
    for i, sample in enumerate(samples):
        label = check_mask(labels[i] if labels is not None else sample.label)
        check_conforms(sample.image, config)
        check_same_shape(sample.image, label, f"image and label of {sample.id!r}")
        select = check_mask(select_labels[i]) if select_labels is not None else label
        check_same_shape(sample.image, select, f"image and selection label of {sample.id!r}")
        target = label_filter(sample.image, label) if label_filter is not None else label
        for spec in specs:
            if kind is DatasetKind.MIX and area_threshold(crop(select, spec, config.s_p)) < threshold:
                continue
            patches.append(
                LabeledPatch(
                    image=crop(sample.image, spec, config.s_p),
                    label=crop(target, spec, config.s_p),
                    source_id=sample.id,
                    spec=spec,
                )
            )
    return PatchDataset(kind, patches, threshold if kind is DatasetKind.MIX else None)


def mosaic(patches: Iterable[tuple], shape) -> np.ndarray:
    """Place ``(spec, patch)`` pairs into a raster of ``shape`` (later patches overwrite)."""
    out = None
    for spec, patch in patches:
        if out is None:
            out = np.zeros(tuple(shape) + patch.shape[2:], dtype=patch.dtype)
        s = patch.shape[0]
        out[spec.row0 : spec.row0 + s, spec.col0 : spec.col0 + s] = patch
    return out
