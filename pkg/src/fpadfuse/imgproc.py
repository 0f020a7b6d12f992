"""Grayscale image substrate: PGM I/O, ROI segmentation, block decomposition,
orientation estimation, block rotation, and ridge/valley binarization.

All operations are pure functions of their inputs and safe to call
concurrently across blocks and images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    BlockTooSmall,
    FlatBlock,
    ImageTooSmall,
    NoForeground,
)

MIN_BLOCK = 8

# Sobel kernels, gradient convention: dx responds to horizontal intensity
# change (along columns), dy to vertical change (along rows).
_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0
_SOBEL_Y = _SOBEL_X.T.copy()


class GrayImage:
    """8-bit grayscale raster, row-major."""

    def __init__(self, data):
        arr = np.asarray(data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("GrayImage needs a non-empty 2-D array")
        self.data = arr.astype(np.uint8)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def as_float(self):
        """Pixels scaled to [0, 1] as float64."""
        return self.data.astype(np.float64) / 255.0

    def __eq__(self, other):
        return isinstance(other, GrayImage) and np.array_equal(self.data, other.data)

    @classmethod
    def from_pgm(cls, path):
        """Read a binary (P5) PGM file."""
        with open(path, "rb") as fh:
            raw = fh.read()
        return cls(_parse_pgm(raw))

    @classmethod
    def from_png(cls, path):
        """Read a PNG through Pillow (optional dependency)."""
        from PIL import Image

        with Image.open(path) as im:
            return cls(np.asarray(im.convert("L")))

    @classmethod
    def open(cls, path):
        p = str(path)
        if p.lower().endswith(".png"):
            return cls.from_png(p)
        return cls.from_pgm(p)

    def to_pgm(self, path):
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        with open(path, "wb") as fh:
            fh.write(header + self.data.tobytes())


def _parse_pgm(raw):
    from .errors import ParseError

    if raw[:2] != b"P5":
        raise ParseError("not a binary PGM (P5) file")
    # header = magic, width, height, maxval; '#' comments allowed between tokens
    tokens = []
    pos = 2
    while len(tokens) < 3 and pos < len(raw):
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    try:
        width, height, maxval = (int(t) for t in tokens)
    except (ValueError, TypeError):
        raise ParseError("malformed PGM header") from None
    if maxval != 255:
        raise ParseError(f"only 8-bit PGM supported, maxval={maxval}")
    pixels = raw[pos + 1 : pos + 1 + width * height]
    if len(pixels) != width * height:
        raise ParseError("PGM pixel payload truncated")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


@dataclass(frozen=True)
class RoiBox:
    """Half-open pixel box [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    def crop(self, img: GrayImage) -> GrayImage:
        return GrayImage(img.data[self.y0 : self.y1, self.x0 : self.x1])


@dataclass(frozen=True)
class Block:
    """A rectangular patch copied out of a GrayImage, intensities in [0, 1]."""

    origin: tuple  # (x, y) of the top-left pixel in the source image
    pixels: np.ndarray  # (m rows, n cols) float64 in [0, 1]

    @property
    def shape(self):
        return self.pixels.shape


@dataclass(frozen=True)
class Orientation:
    """Dominant ridge direction, radians in [0, pi)."""

    angle: float


RIDGE = 1
VALLEY = 0


@dataclass(frozen=True)
class BinaryBlock:
    """Per-pixel ridge/valley labels (RIDGE=1, VALLEY=0)."""

    labels: np.ndarray


def segment_roi(img: GrayImage, block: int = 32, var_threshold: float = 100.0) -> RoiBox:
    """Tightest box covering all blocks whose intensity variance passes the
    threshold (variance on the [0, 255] scale).

    Raises NoForeground when every block is too flat.
    """
    if block < MIN_BLOCK:
        raise ValueError(f"block size must be >= {MIN_BLOCK}")
    h, w = img.data.shape
    by, bx = h // block, w // block
    if by == 0 or bx == 0:
        raise ImageTooSmall(f"{w}x{h} image has no complete {block}px block")
    f = img.data.astype(np.float64)
    x0 = y0 = None
    x1 = y1 = 0
    for iy in range(by):
        for ix in range(bx):
            patch = f[iy * block : (iy + 1) * block, ix * block : (ix + 1) * block]
            if patch.var() >= var_threshold:
                if x0 is None:
                    x0, y0 = ix * block, iy * block
                x0 = min(x0, ix * block)
                y0 = min(y0, iy * block)
                x1 = max(x1, (ix + 1) * block)
                y1 = max(y1, (iy + 1) * block)
    if x0 is None:
        raise NoForeground("no block passed the variance threshold")
    return RoiBox(x0, y0, x1, y1)


def partition_blocks(img: GrayImage, m: int = 32, n: int = 32) -> list:
    """Non-overlapping m x n tiling from the top-left, edge remainders dropped."""
    if m < MIN_BLOCK or n < MIN_BLOCK:
        raise ValueError(f"block size must be >= {MIN_BLOCK}")
    h, w = img.data.shape
    if h < m or w < n:
        raise ImageTooSmall(f"no complete {n}x{m} block fits in {w}x{h}")
    scaled = img.as_float()
    blocks = []
    for iy in range(h // m):
        for ix in range(w // n):
            patch = scaled[iy * m : (iy + 1) * m, ix * n : (ix + 1) * n].copy()
            blocks.append(Block(origin=(ix * n, iy * m), pixels=patch))
    return blocks


def gradients(pixels: np.ndarray):
    """Sobel dx, dy with replicated borders."""
    padded = np.pad(pixels, 1, mode="edge")
    dx = np.zeros_like(pixels)
    dy = np.zeros_like(pixels)
    for ky in range(3):
        for kx in range(3):
            sub = padded[ky : ky + pixels.shape[0], kx : kx + pixels.shape[1]]
            dx += _SOBEL_X[ky, kx] * sub
            dy += _SOBEL_Y[ky, kx] * sub
    return dx, dy


FLAT_EPS = 1e-6  # mean squared gradient below this counts as flat


def estimate_orientation(b: Block) -> Orientation:
    """Dominant ridge direction by the averaged-gradient double-angle method."""
    dx, dy = gradients(b.pixels)
    energy = np.mean(dx * dx + dy * dy)
    if energy < FLAT_EPS:
        raise FlatBlock(f"mean gradient energy {energy:.2e} below {FLAT_EPS}")
    angle = 0.5 * np.arctan2(np.sum(2.0 * dx * dy), np.sum(dx * dx - dy * dy)) + np.pi / 2
    return Orientation(angle % np.pi)


def rotate_to_vertical(b: Block, o: Orientation) -> Block:
    """Bilinear resample so ridges run vertically; returns the largest centered
    square fully covered by source data."""
    phi = np.pi / 2 - o.angle  # rotate ridges from angle o to vertical
    m, n = b.pixels.shape
    side = int(np.floor(min(m, n) / (abs(np.cos(phi)) + abs(np.sin(phi)))))
    if side < MIN_BLOCK:
        raise BlockTooSmall(f"inscribed square {side}px < {MIN_BLOCK}px")
    cy, cx = (m - 1) / 2.0, (n - 1) / 2.0
    half = (side - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(side) - half, np.arange(side) - half)
    # inverse map: output (row i, col j) pulls from the source point that
    # lands on it after a +phi rotation
    c, s = np.cos(phi), np.sin(phi)
    src_x = cx + jj * c + ii * s
    src_y = cy - jj * s + ii * c
    out = _bilinear(b.pixels, src_y, src_x)
    return Block(origin=b.origin, pixels=out)


def _bilinear(img, y, x):
    h, w = img.shape
    x = np.clip(x, 0, w - 1)
    y = np.clip(y, 0, h - 1)
    x0 = np.clip(np.floor(x).astype(int), 0, w - 2) if w > 1 else np.zeros_like(x, int)
    y0 = np.clip(np.floor(y).astype(int), 0, h - 2) if h > 1 else np.zeros_like(y, int)
    fx = x - x0
    fy = y - y0
    p00 = img[y0, x0]
    p01 = img[y0, x0 + 1] if w > 1 else p00
    p10 = img[y0 + 1, x0] if h > 1 else p00
    p11 = img[y0 + 1, x0 + 1] if (w > 1 and h > 1) else p00
    return (
        p00 * (1 - fy) * (1 - fx)
        + p01 * (1 - fy) * fx
        + p10 * fy * (1 - fx)
        + p11 * fy * fx
    )


def resize_bilinear(img: GrayImage, side: int) -> np.ndarray:
    """Resample to a side x side float array in [0, 1]."""
    h, w = img.data.shape
    src = img.as_float()
    ys = np.linspace(0, h - 1, side)
    xs = np.linspace(0, w - 1, side)
    gx, gy = np.meshgrid(xs, ys)
    return _bilinear(src, gy, gx)


def binarize(b: Block) -> BinaryBlock:
    """Least-squares plane fit; pixels strictly below the plane are ridges.

    The plane absorbs any affine illumination gradient, so labels are
    invariant to positive affine intensity maps. A singular fit falls back
    to a mean-intensity threshold.
    """
    m, n = b.pixels.shape
    yy, xx = np.meshgrid(np.arange(m, dtype=np.float64), np.arange(n, dtype=np.float64), indexing="ij")
    design = np.column_stack([xx.ravel(), yy.ravel(), np.ones(m * n)])
    z = b.pixels.ravel()
    try:
        coef, _, rank, _ = np.linalg.lstsq(design, z, rcond=None)
        if rank < 3:
            raise np.linalg.LinAlgError
        plane = design @ coef
    except np.linalg.LinAlgError:
        plane = np.full(m * n, z.mean())
    # strict "below the plane" with a deadband for lstsq float residue, so
    # pixels exactly on the plane (constant blocks) stay Valley
    labels = np.where(z < plane - 1e-9, RIDGE, VALLEY).reshape(m, n)
    return BinaryBlock(labels=labels.astype(np.int8))
