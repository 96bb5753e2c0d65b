"""Grayscale image ingestion, reshaping and synthetic occlusion.

Images are held as :class:`ImageMatrix` values: a float64 ``(height, width)``
array with entries in ``[0, 1]``.  Vectorization is column-major throughout
the package, so ``to_matrix(to_vector(img), h, w)`` is an exact inverse.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

__all__ = [
    "ImageMatrix",
    "OcclusionSpec",
    "load_grayscale",
    "read_pgm",
    "read_raster",
    "write_pgm",
    "resize_bilinear",
    "to_vector",
    "to_matrix",
    "unvec",
    "occluder_box",
    "apply_occlusion",
]

PathLike = Union[str, os.PathLike]

# ITU-R BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class ImageMatrix:
    """A grayscale raster with pixel values in [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        p = np.array(self.pixels, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError(f"pixels must be a non-empty 2-D grid, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise ValueError("pixels must be finite")
        if p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        p.setflags(write=False)
        object.__setattr__(self, "pixels", p)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.pixels.shape

    def __eq__(self, other):
        if not isinstance(other, ImageMatrix):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class OcclusionSpec:
    """How to paste an occluder onto a face.

    ``anchor`` is either a ``(row, col)`` top-left position or the string
    ``"random"``, in which case ``seed`` picks the position.
    """

    occluder: ImageMatrix
    occlusion_rate: float
    anchor: Union[Tuple[int, int], str] = "random"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.occlusion_rate < 1.0:
            raise ValueError(f"occlusion_rate must lie in (0, 1), got {self.occlusion_rate}")
        if isinstance(self.anchor, str):
            if self.anchor != "random":
                raise ValueError(f"anchor must be a (row, col) pair or 'random', got {self.anchor!r}")
        else:
            r, c = (int(a) for a in self.anchor)
            if r < 0 or c < 0:
                raise ValueError("anchor coordinates must be non-negative")
            object.__setattr__(self, "anchor", (r, c))
        if self.seed < 0:
            raise ValueError("seed must be unsigned")


# ---------------------------------------------------------------------------
# file readers / writers


def _pgm_tokens(data: bytes, count: int):
    """Return the first ``count`` header tokens and the offset just past them."""
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise ValueError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates header from raster
    return tokens, pos + 1


def read_pgm(path: PathLike) -> np.ndarray:
    """Read a binary (P5) PGM file into a float array scaled to [0, 1]."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise ValueError(f"{path}: malformed PGM header") from exc
    if width < 1 or height < 1 or not 0 < maxval <= 65535:
        raise ValueError(f"{path}: invalid PGM header values")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    nbytes = width * height * dtype.itemsize
    raster = data[offset:offset + nbytes]
    if len(raster) != nbytes:
        raise ValueError(f"{path}: truncated PGM raster")
    arr = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    return np.clip(arr.astype(np.float64) / maxval, 0.0, 1.0)


def write_pgm(img: ImageMatrix, path: PathLike) -> None:
    """Write an 8-bit binary PGM (debug export)."""
    raster = np.round(img.pixels * 255.0).astype(np.uint8)
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + raster.tobytes(order="C"))


def _read_png(path: PathLike) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as im:
        im.load()
        mode = im.mode
        if mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            scale = 65535.0 if arr.max(initial=0) > 255 or mode.startswith("I;16") else 255.0
            return np.clip(arr / scale, 0.0, 1.0)
        if mode == "P":
            im = im.convert("RGBA" if "transparency" in im.info else "RGB")
            mode = im.mode
        arr = np.asarray(im, dtype=np.float64) / 255.0
    if mode in ("L", "1"):
        return arr.astype(np.float64)
    if mode == "LA":
        return arr[..., 0]
    if mode in ("RGB", "RGBA"):
        return arr[..., :3] @ _LUMA
    raise ValueError(f"{path}: unsupported PNG mode {mode}")


def resize_bilinear(pixels: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping."""
    pixels = np.asarray(pixels, dtype=np.float64)
    h0, w0 = pixels.shape
    if (h0, w0) == (height, width):
        return pixels.copy()

    def _axis(n_in, n_out):
        pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1)
        lo = np.floor(pos).astype(np.intp)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = _axis(h0, height)
    c0, c1, fc = _axis(w0, width)
    top = pixels[r0][:, c0] * (1 - fc) + pixels[r0][:, c1] * fc
    bot = pixels[r1][:, c0] * (1 - fc) + pixels[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def read_raster(path: PathLike) -> np.ndarray:
    """Read a PGM (P5) or PNG file at native size as luminance in [0, 1]."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(8)
    try:
        if magic[:2] == b"P5":
            return read_pgm(path)
        if magic == b"\x89PNG\r\n\x1a\n":
            return _read_png(path)
        raise ValueError("unrecognized image format (expected PGM P5 or PNG)")
    except (ValueError, SyntaxError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc


def load_grayscale(path: PathLike, target_height: int, target_width: int) -> ImageMatrix:
    """Load a PGM (P5) or PNG file as a grayscale image of the target size.

    Color inputs are converted to BT.601 luminance before the bilinear
    resize; the result is scaled to [0, 1].

    Raises
    ------
    ValueError
        If a target dimension is not positive.
    OSError
        If the file is missing or cannot be decoded.
    """
    if int(target_height) < 1 or int(target_width) < 1:
        raise ValueError(f"target dimensions must be positive, got {target_height}x{target_width}")
    arr = read_raster(path)
    out = resize_bilinear(arr, int(target_height), int(target_width))
    return ImageMatrix(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# reshaping


def to_vector(img: ImageMatrix) -> np.ndarray:
    """Stack the columns of ``img`` into one vector (column-major order)."""
    return img.pixels.ravel(order="F").copy()


def to_matrix(v, height: int, width: int) -> ImageMatrix:
    """Inverse of :func:`to_vector`."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size != height * width:
        raise ValueError(f"vector of length {v.size} cannot be reshaped to {height}x{width}")
    return ImageMatrix(v.reshape((height, width), order="F"))


def unvec(v, shape) -> np.ndarray:
    """Column-major reshape of an arbitrary real vector (no range check)."""
    v = np.asarray(v, dtype=np.float64)
    h, w = shape
    if v.size != h * w:
        raise ValueError(f"vector of length {v.size} cannot be reshaped to {h}x{w}")
    return v.reshape((h, w), order="F")


# ---------------------------------------------------------------------------
# occlusion


def occluder_box(face_shape, occluder_shape, rate: float) -> Tuple[int, int]:
    """Size (rows, cols) of the pasted occluder for a given occlusion rate.

    The box follows the occluder's aspect ratio; when that would overflow
    the face along one axis the box is clamped there and stretched along
    the other so the area still matches.
    """
    H, W = face_shape
    oh, ow = occluder_shape
    area = rate * H * W
    aspect = oh / ow
    th = min(H, max(1, int(round(math.sqrt(area * aspect)))))
    tw = int(round(area / th))
    if tw > W:
        tw = W
        th = min(H, max(1, int(round(area / W))))
    tw = max(1, tw)
    return th, tw


def _fit_occluder(occ: np.ndarray, th: int, tw: int) -> np.ndarray:
    oh, ow = occ.shape
    scale = max(th / oh, tw / ow)
    sh = max(th, int(math.ceil(oh * scale - 1e-9)))
    sw = max(tw, int(math.ceil(ow * scale - 1e-9)))
    scaled = resize_bilinear(occ, sh, sw)
    r0 = (sh - th) // 2
    c0 = (sw - tw) // 2
    return scaled[r0:r0 + th, c0:c0 + tw]


def apply_occlusion(face: ImageMatrix, spec: OcclusionSpec) -> ImageMatrix:
    """Paste ``spec.occluder`` onto ``face`` covering ``occlusion_rate`` of its area."""
    if not 0.0 < spec.occlusion_rate < 1.0:
        raise ValueError(f"occlusion_rate must lie in (0, 1), got {spec.occlusion_rate}")
    H, W = face.shape
    th, tw = occluder_box(face.shape, spec.occluder.shape, spec.occlusion_rate)
    patch = _fit_occluder(spec.occluder.pixels, th, tw)
    if spec.anchor == "random":
        rng = np.random.default_rng(spec.seed)
        top = int(rng.integers(0, H - th + 1))
        left = int(rng.integers(0, W - tw + 1))
    else:
        top, left = spec.anchor
        if top + th > H or left + tw > W:
            raise ValueError(
                f"occluder of size {th}x{tw} at {spec.anchor} exceeds face bounds {H}x{W}"
            )
    out = face.pixels.copy()
    out[top:top + th, left:left + tw] = np.clip(patch, 0.0, 1.0)
    return ImageMatrix(out)
