"""Truncated-Gaussian kernel dilation of sparse binary masks into soft labels."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DilationParams:
    sigma: float = 1.0
    radius: int = 2

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if self.radius < 0 or int(self.radius) != self.radius:
            raise ValueError("radius must be a non-negative integer")


def kernel_offsets(p: DilationParams) -> list[tuple[int, int, float]]:
    """(du, dv, K) for every offset with du^2 + dv^2 <= R^2."""
    R = int(p.radius)
    out = []
    for du in range(-R, R + 1):
        for dv in range(-R, R + 1):
            d2 = du * du + dv * dv
            if d2 <= R * R:
                out.append((du, dv, math.exp(-d2 / (2.0 * p.sigma ** 2))))
    return out


def _shift(a: np.ndarray, du: int, dv: int, wrap_lon: bool) -> np.ndarray:
    """out[..., p, q] = a[..., p - du, q - dv]; zero fill in latitude."""
    out = np.zeros_like(a)
    r = a.shape[-2]
    if abs(du) >= r:
        return out
    src = slice(max(0, -du), r - max(0, du))
    dst = slice(max(0, du), r - max(0, -du))
    if wrap_lon:
        out[..., dst, :] = np.roll(a[..., src, :], dv, axis=-1)
        return out
    c = a.shape[-1]
    if abs(dv) >= c:
        return out
    srcc = slice(max(0, -dv), c - max(0, dv))
    dstc = slice(max(0, dv), c - max(0, -dv))
    out[..., dst, dstc] = a[..., src, srcc]
    return out


def dilate(mask: np.ndarray, p: DilationParams = DilationParams(), wrap_lon: bool = True) -> np.ndarray:
    """Soft labels from a binary mask of shape (..., r, c).

    A cell covered by one positive's neighbourhood takes that kernel value; a
    cell covered by several takes the minimum of the induced values. The
    result is then max-ed with the original mask, so positives stay at 1.
    """
    mask = np.asarray(mask)
    if not np.all((mask == 0) | (mask == 1)):
        raise ValueError("dilate expects a binary mask")
    mask = mask.astype(float)
    if p.radius == 0:
        return mask.copy()
    count = np.zeros_like(mask)
    induced = np.full_like(mask, np.inf)
    for du, dv, k in kernel_offsets(p):
        hit = _shift(mask, du, dv, wrap_lon) > 0
        count += hit
        induced = np.where(hit, np.minimum(induced, k), induced)
    induced = np.where(count > 0, induced, 0.0)
    return np.maximum(mask, induced)
