"""Local phase quantization: four low-frequency windowed Fourier coefficients
per pixel, sign-quantized into an 8-bit code, histogrammed over the image.

Phase signs survive centrally symmetric blur, which is what makes the
descriptor useful on smeared spoof impressions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ImageTooSmall, WindowOutOfBounds
from .imgproc import GrayImage

N_BINS = 256


@dataclass(frozen=True)
class LpqConfig:
    window_size: int = 7
    decorrelate: bool = False
    rho: float = 0.9

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError("window_size must be odd and >= 3")
        if not 0.0 < self.freq <= 0.5:
            raise ValueError("frequency must lie in (0, 0.5]")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")

    @property
    def freq(self) -> float:
        """Lowest non-DC frequency for the window, cycles per pixel."""
        return 1.0 / self.window_size


@dataclass(frozen=True)
class LpqHistogram:
    bins: np.ndarray  # 256 non-negative reals summing to 1


def _frequencies(cfg: LpqConfig):
    a = cfg.freq
    return [(a, 0.0), (0.0, a), (a, a), (a, -a)]


def _kernels(cfg: LpqConfig):
    """Complex exponential kernels over the window, one per frequency.

    (ux, uy) multiply the column and row offsets respectively.  With
    freq = 1/window_size each kernel spans whole periods, so its sum is
    analytically zero (constant inputs yield zero coefficients up to
    float residue; see _quantize for how the residue is handled).
    """
    r = cfg.window_size // 2
    off = np.arange(-r, r + 1, dtype=np.float64)
    ox, oy = np.meshgrid(off, off)  # ox: column offset, oy: row offset
    ks = []
    for ux, uy in _frequencies(cfg):
        ks.append(np.exp(-2j * np.pi * (ux * ox + uy * oy)))
    return ks


def _zero_deadband(cfg: LpqConfig) -> float:
    # Coefficients that are analytically zero come out as ~1e-13 float
    # residue; anything below this absolute level counts as zero for the
    # strict "> 0 sets the bit" convention.
    return 1e-12 * cfg.window_size**2 * 255.0


def _whitening(cfg: LpqConfig):
    """Whitening transform for the 8-vector of coefficient parts.

    Image model: unit-variance pixels with correlation rho^distance.  The
    coefficient covariance follows from the kernels; V from its SVD gives
    the decorrelating rotation.
    """
    ws = cfg.window_size
    r = ws // 2
    off = np.arange(-r, r + 1, dtype=np.float64)
    ox, oy = np.meshgrid(off, off)
    pos = np.column_stack([ox.ravel(), oy.ravel()])
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    c = cfg.rho**dist
    m = np.stack([k.ravel() for k in _kernels(cfg)])
    m = np.vstack([m.real, m.imag])  # 8 x ws^2, matches g ordering
    d = m @ c @ m.T
    u, _, _ = np.linalg.svd(d)
    return u.T


def _coefficient_parts(window: np.ndarray, cfg: LpqConfig):
    """g = [Re f(u1..u4), Im f(u1..u4)] for one window."""
    parts = []
    for k in _kernels(cfg):
        f = np.sum(window * k)
        parts.append(f)
    return np.array([p.real for p in parts] + [p.imag for p in parts])


def _quantize(g: np.ndarray, deadband: float) -> int:
    # bit j set iff g_j > 0, little-endian: Re u1 = bit 0 ... Im u4 = bit 7
    code = 0
    for j in range(8):
        if g[j] > deadband:
            code |= 1 << j
    return code


def lpq_code(img: GrayImage, x: int, y: int, cfg: LpqConfig = LpqConfig()) -> int:
    """LPQ code for the window centered at pixel (x, y)."""
    r = cfg.window_size // 2
    if x - r < 0 or y - r < 0 or x + r >= img.width or y + r >= img.height:
        raise WindowOutOfBounds(f"window at ({x},{y}) leaves the {img.width}x{img.height} image")
    window = img.data[y - r : y + r + 1, x - r : x + r + 1].astype(np.float64)
    g = _coefficient_parts(window, cfg)
    if cfg.decorrelate:
        g = _whitening(cfg) @ g
    return _quantize(g, _zero_deadband(cfg))


def code_map(img: GrayImage, cfg: LpqConfig = LpqConfig()) -> np.ndarray:
    """Codes for every interior pixel (border windows skipped, no padding)."""
    ws = cfg.window_size
    if img.width < ws or img.height < ws:
        raise ImageTooSmall(f"image smaller than the {ws}px LPQ window")
    f = img.data.astype(np.float64)
    view = np.lib.stride_tricks.sliding_window_view(f, (ws, ws))
    coeffs = []
    for k in _kernels(cfg):
        coeffs.append(np.tensordot(view, k, axes=([2, 3], [0, 1])))
    g = np.stack([c.real for c in coeffs] + [c.imag for c in coeffs])
    if cfg.decorrelate:
        w = _whitening(cfg)
        g = np.tensordot(w, g, axes=(1, 0))
    bits = (g > _zero_deadband(cfg)).astype(np.uint8)
    weights = (1 << np.arange(8)).astype(np.uint8).reshape(8, 1, 1)
    return (bits * weights).sum(axis=0).astype(np.uint8)


def lpq_histogram(img: GrayImage, cfg: LpqConfig = LpqConfig()) -> LpqHistogram:
    """Normalized 256-bin histogram of interior-pixel LPQ codes."""
    codes = code_map(img, cfg)
    counts = np.bincount(codes.ravel(), minlength=N_BINS).astype(np.float64)
    return LpqHistogram(bins=counts / counts.sum())
