"""Raster containers, PNG I/O and the JSON-lines dataset manifest.

Rasters are plain numpy arrays:

* image  -- float64, shape ``(H, W)`` or ``(H, W, 3)``, intensities in [0, 1]
* mask   -- uint8, shape ``(H, W)``, values in {0, 1}
* belief -- float64, shape ``(H, W)``, probabilities in [0, 1]

The ``check_*`` helpers in :mod:`orfseg._validation` enforce these layouts.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

import numpy as np
from PIL import Image as PILImage

from ._validation import check_belief, check_image, check_mask

BELIEF_MAGIC = b"BMAPv1\x00\x00"
_BELIEF_HEADER = struct.Struct("<8sII")


class FormatError(ValueError):
    """A file exists but its content violates the expected format."""


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    image_path: Path
    label_path: Path
    truth_path: Optional[Path] = None

    def to_record(self, base: Path) -> dict:
        rec = {
            "id": self.id,
            "image_path": _relative(self.image_path, base),
            "label_path": _relative(self.label_path, base),
        }
        if self.truth_path is not None:
            rec["truth_path"] = _relative(self.truth_path, base)
        return rec


@dataclass(frozen=True)
class Sample:
    """An in-memory training/evaluation example loaded from a manifest entry."""

    id: str
    image: np.ndarray
    label: np.ndarray
    truth: Optional[np.ndarray] = None


def _relative(path: Path, base: Path) -> str:
    try:
        return Path(path).resolve().relative_to(Path(base).resolve()).as_posix()
    except ValueError:
        return Path(path).resolve().as_posix()


def _open_png(path) -> PILImage.Image:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such raster: {path}")
    img = PILImage.open(path)
    if img.format != "PNG":
        raise FormatError(f"{path}: not a PNG file")
    return img


def load_image(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG, scaled to [0, 1]."""
    img = _open_png(path)
    if img.mode not in ("L", "RGB"):
        raise FormatError(f"{path}: unsupported PNG mode {img.mode!r}")
    data = np.asarray(img, dtype=np.float64) / 255.0
    return data


def save_image(image: np.ndarray, path) -> None:
    image = check_image(image)
    data = np.rint(image * 255.0).astype(np.uint8)
    PILImage.fromarray(data).save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    img = _open_png(path)
    if img.mode != "L":
        raise FormatError(f"{path}: masks must be 8-bit grayscale, got {img.mode!r}")
    raw = np.asarray(img)
    bad = (raw != 0) & (raw != 255)
    if bad.any():
        value = int(raw[bad][0])
        raise FormatError(f"{path}: mask pixel value {value} not in {{0, 255}}")
    return (raw == 255).astype(np.uint8)


def save_mask(mask: np.ndarray, path) -> None:
    mask = check_mask(mask)
    PILImage.fromarray((mask * 255).astype(np.uint8)).save(path, format="PNG")


def save_belief(belief: np.ndarray, path, sidecar: bool = True) -> None:
    """Write ``belief`` as an 8-bit PNG and, optionally, the lossless ``.f32`` sidecar."""
    belief = check_belief(belief)
    png = np.rint(belief * 255.0).astype(np.uint8)
    PILImage.fromarray(png).save(path, format="PNG")
    if sidecar:
        write_belief_f32(belief, str(path) + ".f32")


def write_belief_f32(belief: np.ndarray, path) -> None:
    belief = check_belief(belief)
    h, w = belief.shape
    with open(path, "wb") as fh:
        fh.write(_BELIEF_HEADER.pack(BELIEF_MAGIC, w, h))
        fh.write(belief.astype("<f4").tobytes(order="C"))


def read_belief_f32(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < _BELIEF_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, w, h = _BELIEF_HEADER.unpack_from(blob)
    if magic != BELIEF_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = blob[_BELIEF_HEADER.size:]
    if len(body) != 4 * w * h:
        raise FormatError(f"{path}: expected {w * h} floats, found {len(body) // 4}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def read_manifest(path) -> List[ManifestEntry]:
    """Parse a JSON-lines manifest; relative paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    entries: List[ManifestEntry] = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                entry = ManifestEntry(
                    id=str(rec["id"]),
                    image_path=base / rec["image_path"],
                    label_path=base / rec["label_path"],
                    truth_path=base / rec["truth_path"] if rec.get("truth_path") else None,
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed manifest line ({exc})") from exc
            if entry.id in seen:
                raise FormatError(f"{path}:{lineno}: duplicate id {entry.id!r}")
            seen.add(entry.id)
            entries.append(entry)
    return entries


def write_manifest(entries: Iterable[ManifestEntry], path) -> Path:
    path = Path(path)
    base = path.parent
    lines = [json.dumps(e.to_record(base), sort_keys=True) for e in entries]
    ids = [json.loads(line)["id"] for line in lines]
    if len(ids) != len(set(ids)):
        raise ValueError("manifest ids must be unique")
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def load_sample(entry: ManifestEntry) -> Sample:
    image = load_image(entry.image_path)
    label = load_mask(entry.label_path)
    truth = load_mask(entry.truth_path) if entry.truth_path is not None else None
    shape = image.shape[:2]
    for name, raster in (("label", label), ("truth", truth)):
        if raster is not None and raster.shape != shape:
            raise ValueError(
                f"entry {entry.id!r}: {name} shape {raster.shape} differs from image shape {shape}"
            )
    return Sample(entry.id, image, label, truth)


def load_samples(entries: Sequence[ManifestEntry]) -> List[Sample]:
    return [load_sample(e) for e in entries]


def luminance(image: np.ndarray) -> np.ndarray:
    """Single-channel brightness (Rec. 601 weights for RGB)."""
    image = check_image(image)
    if image.ndim == 2:
        return image
    return image @ np.array([0.299, 0.587, 0.114])
