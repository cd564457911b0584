"""Input validation helpers shared by the estimators and functional API."""
from __future__ import annotations

import numpy as np


def check_image(image, name: str = "image") -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if not (arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 3)):
        raise ValueError(f"{name} must have shape (H, W) or (H, W, 3), got {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(f"{name} intensities must lie in [0, 1]")
    return arr


def check_mask(mask, name: str = "mask") -> np.ndarray:
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.dtype == bool:
        return arr.astype(np.uint8)
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} values must be exactly 0 or 1")
    return arr.astype(np.uint8)


def check_belief(belief, name: str = "belief") -> np.ndarray:
    arr = np.asarray(belief, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)) or (arr.size and (arr.min() < 0.0 or arr.max() > 1.0)):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if a.shape[:2] != b.shape[:2]:
        raise ValueError(f"{what} differ in shape: {a.shape[:2]} vs {b.shape[:2]}")


def check_fraction(value: float, name: str, low: float = 0.0, high: float = 1.0,
                   open_low: bool = False, open_high: bool = False) -> float:
    value = float(value)
    ok_low = value > low if open_low else value >= low
    ok_high = value < high if open_high else value <= high
    if not (ok_low and ok_high):
        lb = "(" if open_low else "["
        rb = ")" if open_high else "]"
        raise ValueError(f"{name}={value} outside {lb}{low}, {high}{rb}")
    return value


def check_odd_kernel(kernel: int, name: str = "kernel") -> int:
    if int(kernel) != kernel or kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"{name} must be an odd positive integer, got {kernel}")
    return int(kernel)
