"""Generalized gradient-direction features.

Each image is filtered with 3x3 Sobel kernels one, two and three times
along rows and columns; the per-pixel ratio of column to row response is
squashed by a bounded S-shaped mapping ``phi(u * (k - v))``.  The three
mapped maps, flattened column-major, form a :class:`FeatureSet`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .imagekit import ImageMatrix, to_vector

__all__ = [
    "SOBEL_ROW",
    "SOBEL_COL",
    "MappingFunction",
    "FeatureSet",
    "sobel_gradients",
    "direction_ratio",
    "repeated_gradients",
    "extract_features",
    "intensity_feature",
]

# derivative along rows (d/dr) and along columns (d/dc); applied as
# correlations so that an increasing ramp gives a positive response
SOBEL_ROW = np.array([[-1.0, -2.0, -1.0],
                      [0.0, 0.0, 0.0],
                      [1.0, 2.0, 1.0]])
SOBEL_COL = SOBEL_ROW.T.copy()

_SQUASH = {
    "arctan": np.arctan,
    "tanh": np.tanh,
    "softsign": lambda k: k / (1.0 + np.abs(k)),
    "sigmoid": lambda k: 0.5 * (1.0 + np.tanh(0.5 * k)),
}

_RANGE = {
    "arctan": (-np.pi / 2, np.pi / 2),
    "tanh": (-1.0, 1.0),
    "softsign": (-1.0, 1.0),
    "sigmoid": (0.0, 1.0),
}


@dataclass(frozen=True)
class MappingFunction:
    """S-shaped squashing ``k -> phi(u * (k - v))``."""

    kind: str = "tanh"
    u: float = 7.3
    v: float = 0.51

    def __post_init__(self):
        if self.kind not in _SQUASH:
            raise ValueError(f"unknown mapping {self.kind!r}; choose from {sorted(_SQUASH)}")
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise ValueError("u and v must be finite")

    @property
    def codomain(self) -> Tuple[float, float]:
        return _RANGE[self.kind]

    def __call__(self, k):
        return _SQUASH[self.kind](self.u * (np.asarray(k, dtype=np.float64) - self.v))


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Per-order mapped direction vectors of one image."""

    orders: Tuple[np.ndarray, ...]
    shape: Tuple[int, int]

    def __post_init__(self):
        vecs = []
        for f in self.orders:
            f = np.array(f, dtype=np.float64)
            f.setflags(write=False)
            vecs.append(f)
        d = self.shape[0] * self.shape[1]
        if any(f.shape != (d,) for f in vecs):
            raise ValueError("every order vector must have length height*width")
        object.__setattr__(self, "orders", tuple(vecs))
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))

    def __getitem__(self, w):
        """Order-``w`` vector, 1-based."""
        return self.orders[w - 1]

    def __len__(self):
        return len(self.orders)


def _check_size(img: ImageMatrix):
    if img.height < 3 or img.width < 3:
        raise ValueError(f"image {img.height}x{img.width} is smaller than the 3x3 Sobel kernel")


def sobel_gradients(img: ImageMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """Row and column Sobel responses with replicate-padded borders."""
    _check_size(img)
    p = img.pixels
    g_r = ndimage.correlate(p, SOBEL_ROW, mode="nearest")
    g_c = ndimage.correlate(p, SOBEL_COL, mode="nearest")
    return g_r, g_c


def repeated_gradients(img: ImageMatrix, order: int) -> Tuple[np.ndarray, np.ndarray]:
    """Apply each directional kernel ``order`` times to the original image."""
    _check_size(img)
    if order < 1:
        raise ValueError("order must be >= 1")
    g_r = g_c = img.pixels
    for _ in range(order):
        g_r = ndimage.correlate(g_r, SOBEL_ROW, mode="nearest")
        g_c = ndimage.correlate(g_c, SOBEL_COL, mode="nearest")
    return g_r, g_c


def direction_ratio(g_r, g_c, eps: float = 1e-8) -> np.ndarray:
    """Elementwise ``g_c / g_r`` with small denominators replaced by ``+-eps``.

    ``sign(0)`` is taken as ``+1``.
    """
    g_r = np.asarray(g_r, dtype=np.float64)
    g_c = np.asarray(g_c, dtype=np.float64)
    if g_r.shape != g_c.shape:
        raise ValueError(f"shape mismatch: {g_r.shape} vs {g_c.shape}")
    if eps <= 0:
        raise ValueError("eps must be positive")
    sign = np.where(g_r < 0, -1.0, 1.0)
    denom = np.where(np.abs(g_r) < eps, sign * eps, g_r)
    return g_c / denom


def extract_features(
    img: ImageMatrix,
    mapping: MappingFunction = MappingFunction(),
    eps: float = 1e-8,
    orders: int = 3,
) -> FeatureSet:
    """Mapped gradient-direction vectors of orders ``1..orders``."""
    vecs = []
    for w in range(1, orders + 1):
        g_r, g_c = repeated_gradients(img, w)
        mapped = mapping(direction_ratio(g_r, g_c, eps))
        vecs.append(mapped.ravel(order="F"))
    return FeatureSet(tuple(vecs), img.shape)


def intensity_feature(img: ImageMatrix) -> np.ndarray:
    return to_vector(img)
