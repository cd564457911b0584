"""Synthetic gland-like images with full ground truth and partial labels.

Glands are filled ellipses on a bright background; some glands contain a
concentric bright "pipe" that is negative in the ground truth.  The partial
label keeps a random subset of whole glands and at most one partially erased
gland, so that only a fraction of the true positive area is annotated.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Tuple

import numpy as np

from .imagecore import ManifestEntry, save_image, save_mask, write_manifest

PURE_NEGATIVE_PERIOD = 20
_PLACEMENT_ATTEMPTS = 50


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 256
    gland_count_range: Tuple[int, int] = (0, 6)
    gland_radius_range: Tuple[int, int] = (16, 44)
    pipe_probability: float = 0.5
    label_fraction_range: Tuple[float, float] = (0.2, 0.7)
    background_intensity: float = 0.95
    gland_intensity: float = 0.45
    pipe_intensity: float = 0.90
    noise_sigma: float = 0.05
    seed: int = 0

    def __post_init__(self):
        # tuples may arrive as lists from JSON
        for name in ("gland_count_range", "gland_radius_range", "label_fraction_range"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for name in ("gland_count_range", "gland_radius_range", "label_fraction_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} exceeds max {hi}")
        if self.image_size < 1:
            raise ValueError("image_size must be positive")
        if self.gland_count_range[0] < 0:
            raise ValueError("gland_count_range must be nonnegative")
        if self.gland_radius_range[0] < 1:
            raise ValueError("gland radii must be at least 1 pixel")
        if self.gland_radius_range[1] >= self.image_size / 2:
            raise ValueError(
                f"gland radius {self.gland_radius_range[1]} does not fit in a "
                f"{self.image_size}px image"
            )
        lo, hi = self.label_fraction_range
        if not (0.0 < lo and hi <= 1.0):
            raise ValueError("label_fraction_range must lie within (0, 1]")
        if not 0.0 <= self.pipe_probability <= 1.0:
            raise ValueError("pipe_probability must lie within [0, 1]")
        for name in ("background_intensity", "gland_intensity", "pipe_intensity"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie within [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        # background and pipe are both negative; only gland-vs-bright must separate
        gap = 2.0 * self.noise_sigma
        for name in ("background_intensity", "pipe_intensity"):
            if abs(getattr(self, name) - self.gland_intensity) < gap:
                raise ValueError(f"gland_intensity and {name} must differ by >= 2 * noise_sigma")

    @classmethod
    def from_json(cls, path) -> "SynthConfig":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Gland:
    cy: float
    cx: float
    ry: float
    rx: float
    theta: float
    pipe_scale: float  # 0 means no pipe
    region: np.ndarray = field(repr=False, default=None)
    pipe: np.ndarray = field(repr=False, default=None)


def _ellipse(shape, cy, cx, ry, rx, theta) -> np.ndarray:
    yy, xx = np.mgrid[0 : shape[0], 0 : shape[1]]
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def sample_rng(config: SynthConfig, index: int) -> np.random.Generator:
    """Counter-based generator: each (seed, index) pair is independent."""
    if index < 0:
        raise ValueError("index must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence([int(config.seed), int(index)]))


def _place_glands(config: SynthConfig, n: int, rng: np.random.Generator) -> List[_Gland]:
    size = config.image_size
    shape = (size, size)
    occupied = np.zeros(shape, dtype=bool)
    glands: List[_Gland] = []
    rmin, rmax = config.gland_radius_range
    for _ in range(n):
        for _attempt in range(_PLACEMENT_ATTEMPTS):
            ry = rng.uniform(rmin, rmax)
            rx = rng.uniform(rmin, rmax)
            theta = rng.uniform(0.0, np.pi)
            r = max(ry, rx)
            # keep a 1px margin so every gland is enclosed in the frame
            cy = rng.uniform(r + 1, size - r - 2)
            cx = rng.uniform(r + 1, size - r - 2)
            region = _ellipse(shape, cy, cx, ry, rx, theta)
            grown = _ellipse(shape, cy, cx, ry + 2, rx + 2, theta)
            if (grown & occupied).any() or not region.any():
                continue
            has_pipe = rng.uniform() < config.pipe_probability
            scale = rng.uniform(0.25, 0.5) if has_pipe else 0.0
            pipe = (
                _ellipse(shape, cy, cx, ry * scale, rx * scale, theta) & region
                if has_pipe
                else np.zeros(shape, dtype=bool)
            )
            glands.append(_Gland(cy, cx, ry, rx, theta, scale, region, pipe))
            occupied |= grown
            break
    return glands


def _partial_label(truth: np.ndarray, glands: List[_Gland], config: SynthConfig,
                   rng: np.random.Generator) -> np.ndarray:
    total = int(truth.sum())
    label = np.zeros_like(truth)
    if total == 0:
        return label
    lo, hi = config.label_fraction_range
    target = int(round(rng.uniform(lo, hi) * total))
    target = min(max(target, int(np.ceil(lo * total))), int(np.floor(hi * total)))
    order = rng.permutation(len(glands))
    kept = 0
    for gi in order:
        g = glands[gi]
        body = g.region & ~g.pipe
        area = int(body.sum())
        if kept + area <= target:
            label |= body
            kept += area
            continue
        need = target - kept
        if need > 0:
            # erase the far side of this gland along a random direction
            ys, xs = np.nonzero(body)
            phi = rng.uniform(0.0, 2.0 * np.pi)
            proj = np.cos(phi) * xs + np.sin(phi) * ys
            keep = np.argsort(proj, kind="stable")[:need]
            label[ys[keep], xs[keep]] = True
            kept += need
        break
    return label


def generate_sample(config: SynthConfig, index: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(image, truth, partial_label)`` for sample ``index``.

    When the gland-count range includes zero, every index that is a multiple
    of 20 is forced to be pure negative.
    """
    rng = sample_rng(config, index)
    size = config.image_size
    lo, hi = config.gland_count_range
    n = int(rng.integers(lo, hi + 1))
    if lo == 0 and index % PURE_NEGATIVE_PERIOD == 0:
        n = 0
    glands = _place_glands(config, n, rng)

    truth = np.zeros((size, size), dtype=bool)
    pipes = np.zeros((size, size), dtype=bool)
    for g in glands:
        truth |= g.region
        pipes |= g.pipe
    truth &= ~pipes

    label = _partial_label(truth, glands, config, rng)

    image = np.full((size, size), config.background_intensity, dtype=np.float64)
    image[truth] = config.gland_intensity
    image[pipes] = config.pipe_intensity
    if config.noise_sigma > 0:
        image = image + rng.normal(0.0, config.noise_sigma, size=image.shape)
    image = np.clip(image, 0.0, 1.0)
    return image, truth.astype(np.uint8), label.astype(np.uint8)


def generate_dataset(config: SynthConfig, count: int, out_dir) -> Path:
    """Write ``count`` samples as PNGs under ``out_dir`` and return the manifest path."""
    if count < 0:
        raise ValueError("count must be nonnegative")
    out = Path(out_dir)
    for sub in ("images", "labels", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        image, truth, label = generate_sample(config, i)
        sid = f"img{i:04d}"
        paths = {sub: out / sub / f"{sid}.png" for sub in ("images", "labels", "truth")}
        save_image(image, paths["images"])
        save_mask(label, paths["labels"])
        save_mask(truth, paths["truth"])
        entries.append(ManifestEntry(sid, paths["images"], paths["labels"], paths["truth"]))
    return write_manifest(entries, out / "manifest.jsonl")
