"""Flood-fill treatment of negative regions enclosed by positive pixels."""
from __future__ import annotations

import enum
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from ._validation import check_mask

_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class HoleMode(str, enum.Enum):
    FILL = "fill"
    KEEP = "keep"


def connected_components(mask: np.ndarray, connectivity: int = 4) -> Tuple[np.ndarray, List[int]]:
    """Label the positive regions of ``mask``.

    Returns ``(labels, areas)`` where ``labels`` is an int array with 0 for
    background and ``1..n`` numbered by first pixel in row-major order, and
    ``areas[k - 1]`` is the pixel count of region ``k``.
    """
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    select = check_mask(mask).astype(bool)
    labels, n = ndimage.label(select, structure=_STRUCTURE[connectivity])
    areas = np.bincount(labels.ravel(), minlength=n + 1)[1:]
    return labels.astype(np.int64), [int(a) for a in areas]


def border_background(mask: np.ndarray) -> np.ndarray:
    """Negative pixels 4-connected to the image border."""
    labels, _ = connected_components((check_mask(mask) == 0).astype(np.uint8), 4)
    edge = np.unique(np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]]))
    edge = edge[edge > 0]
    return np.isin(labels, edge)


def holes(mask: np.ndarray) -> Tuple[np.ndarray, List[int]]:
    """4-connected components of negative pixels not reachable from the border."""
    mask = check_mask(mask)
    enclosed = (mask == 0) & ~border_background(mask)
    return connected_components(enclosed.astype(np.uint8), connectivity=4)


def flood_fill_holes(mask: np.ndarray, mode: HoleMode | str = HoleMode.FILL,
                     min_hole_area: int = 0) -> np.ndarray:
    """Turn enclosed negative regions positive according to ``mode``.

    ``fill`` fills holes larger than ``min_hole_area``; ``keep`` preserves
    them and fills only holes of at most ``min_hole_area`` pixels.
    """
    mode = HoleMode(mode)
    if min_hole_area < 0:
        raise ValueError("min_hole_area must be nonnegative")
    mask = check_mask(mask)
    out = mask.copy()
    labels, areas = holes(mask)
    if not areas:
        return out
    areas = np.asarray(areas)
    if mode is HoleMode.FILL:
        chosen = np.flatnonzero(areas > min_hole_area) + 1
    else:
        chosen = np.flatnonzero(areas <= min_hole_area) + 1
    out[np.isin(labels, chosen)] = 1
    return out
