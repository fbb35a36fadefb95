"""Grayscale images: PGM I/O, checkerboard masking, patch tiling and metrics.

Pixels are stored as float64 in [0, 1].
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .graphmodel import checkerboard_partition
from .linalg import DimensionError


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Luminance raster, ``height x width``, values clamped into [0, 1]."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if np.any(np.isnan(px)):
            raise ValueError("image contains NaN")
        np.clip(px, 0.0, 1.0, out=px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def shape(self):
        return self.pixels.shape

    def __array__(self, dtype=None, copy=None):
        return self.pixels if dtype is None else self.pixels.astype(dtype)


class PGMError(ValueError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*")


def _header_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    pos = 0
    tokens = []
    while len(tokens) < count:
        pos = _TOKEN.match(data, pos).end()
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise PGMError("truncated header", start)
        tokens.append((data[start:pos], start))
    return tokens, pos


def read_pgm(data):
    """Decode a P5 (binary) or P2 (ASCII) PGM.  Values are divided by maxval."""
    data = bytes(data)
    if len(data) < 2 or data[:1] != b"P":
        raise PGMError("not a PGM file", 0)
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PGMError(f"unsupported magic {magic!r}", 0)
    tokens, pos = _header_tokens(data, 4)
    values = []
    for tok, off in tokens[1:]:
        if not tok.isdigit():
            raise PGMError(f"expected an integer, got {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PGMError(f"bad dimensions {width}x{height}", tokens[1][1])
    if not 0 < maxval <= 65535:
        raise PGMError(f"maxval {maxval} outside 1..65535", tokens[3][1])
    count = width * height
    if magic == b"P5":
        if pos >= len(data) or not data[pos:pos + 1].isspace():
            raise PGMError("missing whitespace after header", pos)
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        if len(data) - pos < need:
            raise PGMError(f"truncated raster: need {need} bytes, have {len(data) - pos}", len(data))
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    else:
        body = data[pos:]
        fields = body.split()
        if len(fields) < count:
            raise PGMError(f"truncated raster: need {count} values, have {len(fields)}", len(data))
        try:
            raw = np.array([int(f) for f in fields[:count]], dtype=np.float64)
        except ValueError as exc:
            raise PGMError(f"non-integer sample: {exc}", pos) from exc
    if raw.max(initial=0) > maxval:
        raise PGMError(f"sample exceeds maxval {maxval}", pos)
    return GrayImage((raw / maxval).reshape(height, width))


def quantize(img, maxval=255):
    """Round half away from zero onto ``0..maxval``."""
    return np.floor(np.asarray(img, dtype=np.float64) * maxval + 0.5).astype(np.int64)


def write_pgm(img):
    """Encode as binary P5 with maxval 255."""
    px = np.asarray(img, dtype=np.float64)
    h, w = px.shape
    q = quantize(px).astype(np.uint8)
    return b"P5\n%d %d\n255\n" % (w, h) + q.tobytes()


def load_pgm(path):
    with open(path, "rb") as fh:
        return read_pgm(fh.read())


def save_pgm(path, img):
    with open(path, "wb") as fh:
        fh.write(write_pgm(img))


def apply_checkerboard_mask(img):
    """Observed samples ``y`` (row-major over observed pixels) and the partition."""
    px = np.asarray(img, dtype=np.float64)
    part = checkerboard_partition(px.shape[1], px.shape[0])
    return px[part.mask], part


def scatter(part, y, x_n):
    """Full raster with ``y`` at observed and ``x_n`` at missing pixels."""
    out = np.empty(part.mask.shape)
    out[part.mask] = y
    out[~part.mask] = x_n
    return out


def baseline_interpolate(y, part, theta):
    """Observed pixels copied through, missing pixels ``Theta y``."""
    y = np.asarray(y, dtype=np.float64)
    return GrayImage(scatter(part, y, theta.apply(y)))


@dataclass(frozen=True)
class PatchGrid:
    """Overlapping tiling with separable raised-cosine blending weights."""

    patch_size: int = 64
    stride: int = 48

    def __post_init__(self):
        if self.patch_size < 2 or self.patch_size % 2:
            raise ValueError(f"patch_size must be even and >= 2, got {self.patch_size}")
        if not 1 <= self.stride <= self.patch_size:
            raise ValueError(f"stride must lie in 1..patch_size, got {self.stride}")

    def extent(self, dim):
        """Patch length along an axis of length ``dim`` (even, at most ``patch_size``)."""
        if dim < 2:
            raise ValueError(f"image dimension {dim} is below the minimum of 2")
        e = min(self.patch_size, dim)
        return e - e % 2

    def starts(self, dim):
        e = self.extent(dim)
        s = list(range(0, dim - e + 1, self.stride))
        if s[-1] + e < dim:
            s.append(dim - e)
        return s

    def positions(self, height, width):
        return [(r, c) for r in self.starts(height) for c in self.starts(width)]

    @staticmethod
    def window_1d(n):
        i = np.arange(n)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * (i + 0.5) / n)

    def window(self, ph, pw):
        return np.outer(self.window_1d(ph), self.window_1d(pw))


def extract_patches(img, grid=PatchGrid()):
    """Cut ``img`` into patches; returns ``(patches, positions)``."""
    px = np.asarray(img, dtype=np.float64)
    h, w = px.shape
    ph, pw = grid.extent(h), grid.extent(w)
    positions = grid.positions(h, w)
    patches = [px[r:r + ph, c:c + pw].copy() for r, c in positions]
    return patches, positions


def fuse_patches(patches, positions, grid, canvas_dims):
    """Weighted average of overlapping patches."""
    h, w = canvas_dims
    if len(patches) == 1 and tuple(positions[0]) == (0, 0):
        only = np.asarray(patches[0], dtype=np.float64)
        if only.shape == (h, w):
            return GrayImage(only)
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for patch, (r, c) in zip(patches, positions):
        patch = np.asarray(patch, dtype=np.float64)
        ph, pw = patch.shape
        if r < 0 or c < 0 or r + ph > h or c + pw > w:
            raise ValueError(f"patch at ({r}, {c}) of size {ph}x{pw} lies outside {h}x{w} canvas")
        win = grid.window(ph, pw)
        num[r:r + ph, c:c + pw] += win * patch
        den[r:r + ph, c:c + pw] += win
    if np.any(den <= 0):
        raise ValueError("patches do not cover the whole canvas")
    return GrayImage(num / den)


PSNR_CAP = 99.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, data_range=1.0):
    """Peak signal-to-noise ratio in dB; identical inputs give ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * math.log10(data_range**2 / mse), PSNR_CAP)


_SSIM_RADIUS = 5
_SSIM_SIGMA = 1.5


def _gaussian_taps():
    x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2 * _SSIM_SIGMA**2))
    return g / g.sum()


def _local_mean(img, taps):
    out = ndimage.correlate1d(img, taps, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, taps, axis=1, mode="reflect")
    r = _SSIM_RADIUS
    return out[r:-r, r:-r]


def ssim(a, b, data_range=1.0, k1=0.01, k2=0.03):
    """Mean SSIM over all fully-covered 11x11 Gaussian windows (sigma 1.5)."""
    a, b = _pair(a, b)
    if min(a.shape) < 2 * _SSIM_RADIUS + 1:
        raise DimensionError(f"SSIM needs images of at least 11x11, got {a.shape}")
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    taps = _gaussian_taps()
    mu_a = _local_mean(a, taps)
    mu_b = _local_mean(b, taps)
    var_a = _local_mean(a * a, taps) - mu_a * mu_a
    var_b = _local_mean(b * b, taps) - mu_b * mu_b
    cov = _local_mean(a * b, taps) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
