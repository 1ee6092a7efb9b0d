"""Orthonormal Haar DWT and k-level wavelet packet transform.

Sub-bands follow the digit order LL, LH, HL, HH (LH = horizontal detail,
HL = vertical detail).  Packet bands are kept in lexicographic path order;
``arrange_bands`` tiles them quadrant-recursively so the top-left tile is
the lowest band and the bottom-right the highest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from . import tensor as T
from .tensor import Tensor, make_node

BAND_NAMES = ("LL", "LH", "HL", "HH")

# rows of the orthonormal 2x2 block transform, applied to corners (a, b, c, d)
_HAAR_SIGNS = np.array([
    [1.0, 1.0, 1.0, 1.0],    # LL
    [1.0, -1.0, 1.0, -1.0],  # LH
    [1.0, 1.0, -1.0, -1.0],  # HL
    [1.0, -1.0, -1.0, 1.0],  # HH
]) * 0.5


@dataclass
class WaveletBands:
    ll: Tensor
    lh: Tensor
    hl: Tensor
    hh: Tensor

    def as_tuple(self):
        return (self.ll, self.lh, self.hl, self.hh)


def _corners(x: np.ndarray):
    n, c, h, w = x.shape
    v = x.reshape(n, c, h // 2, 2, w // 2, 2)
    return v[:, :, :, 0, :, 0], v[:, :, :, 0, :, 1], v[:, :, :, 1, :, 0], v[:, :, :, 1, :, 1]


def _from_corners(a, b, c, d):
    n, ch, h2, w2 = a.shape
    out = np.empty((n, ch, h2, 2, w2, 2))
    out[:, :, :, 0, :, 0] = a
    out[:, :, :, 0, :, 1] = b
    out[:, :, :, 1, :, 0] = c
    out[:, :, :, 1, :, 1] = d
    return out.reshape(n, ch, 2 * h2, 2 * w2)


def dwt2(x: Tensor) -> WaveletBands:
    """One-level orthonormal Haar transform on non-overlapping 2x2 blocks."""
    T._check_4d(x, "dwt2")
    n, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"dwt2 requires even H and W, got {h}x{w}; pad the input first")
    corners = _corners(x.data)

    def band(idx):
        s = _HAAR_SIGNS[idx]
        data = sum(si * ci for si, ci in zip(s, corners))

        def rule(g, s=s):
            return (_from_corners(*(si * g for si in s)),)

        return make_node(data, (x,), rule, f"dwt2.{BAND_NAMES[idx].lower()}")

    return WaveletBands(band(0), band(1), band(2), band(3))


def idwt2(b: WaveletBands) -> Tensor:
    """Exact inverse of dwt2 (the transform is orthonormal)."""
    shapes = {t.data.shape for t in b.as_tuple()}
    if len(shapes) != 1:
        raise ShapeError(f"idwt2 requires equal band shapes, got {sorted(shapes)}")
    bands = [t.data for t in b.as_tuple()]
    # transpose of the forward matrix: corner i = sum_k signs[k, i] * band_k
    corners = [sum(_HAAR_SIGNS[k, i] * bands[k] for k in range(4)) for i in range(4)]

    def rule(g):
        gc = _corners(g)
        return tuple(sum(_HAAR_SIGNS[k, i] * gc[i] for i in range(4)) for k in range(4))

    return make_node(_from_corners(*corners), tuple(b.as_tuple()), rule, "idwt2")


@dataclass
class PacketGrid:
    """4**k equal-size bands in lexicographic path order plus their tiling."""

    bands: list[Tensor]
    level: int

    def __post_init__(self):
        if len(self.bands) != 4 ** self.level:
            raise ShapeError(f"PacketGrid level {self.level} needs {4 ** self.level} bands, got {len(self.bands)}")

    @property
    def arrangement(self) -> list[tuple[int, int]]:
        return [band_tile(i, self.level) for i in range(len(self.bands))]

    def labels(self) -> list[str]:
        return [band_label(i, self.level) for i in range(len(self.bands))]


def band_digits(index: int, level: int) -> tuple[int, ...]:
    digits = []
    for _ in range(level):
        digits.append(index % 4)
        index //= 4
    return tuple(reversed(digits))


def band_label(index: int, level: int) -> str:
    return "".join(BAND_NAMES[d] for d in band_digits(index, level))


def band_tile(index: int, level: int) -> tuple[int, int]:
    """Tile (row, col) of a band in the mosaic, nesting quadrants by digit."""
    row = col = 0
    for d in band_digits(index, level):
        row = row * 2 + (d >> 1)
        col = col * 2 + (d & 1)
    return row, col


def wpt(x: Tensor, k: int) -> PacketGrid:
    """k-level packet transform: dwt2 applied recursively to every sub-band."""
    if k < 1:
        raise ShapeError(f"wpt requires k >= 1, got {k}")
    n, c, h, w = x.data.shape
    if h % (2 ** k) or w % (2 ** k):
        raise ShapeError(f"wpt level {k} requires H and W divisible by {2 ** k}, got {h}x{w}")
    bands = [x]
    for _ in range(k):
        bands = [sub for band in bands for sub in dwt2(band).as_tuple()]
    return PacketGrid(bands, k)


def iwpt(g: PacketGrid, k: int) -> Tensor:
    if g.level != k:
        raise ShapeError(f"iwpt level mismatch: grid has {g.level}, requested {k}")
    bands = list(g.bands)
    for _ in range(k):
        bands = [idwt2(WaveletBands(*bands[i:i + 4])) for i in range(0, len(bands), 4)]
    return bands[0]


def arrange_bands(g: PacketGrid) -> Tensor:
    """Tile the bands into one full-resolution mosaic, low frequency top-left."""
    side = 2 ** g.level
    n, c, bh, bw = g.bands[0].data.shape
    tiles = g.arrangement
    out = np.empty((n, c, bh * side, bw * side))
    for band, (r, cpos) in zip(g.bands, tiles):
        out[:, :, r * bh:(r + 1) * bh, cpos * bw:(cpos + 1) * bw] = band.data

    def rule(grad):
        return tuple(grad[:, :, r * bh:(r + 1) * bh, cpos * bw:(cpos + 1) * bw] for r, cpos in tiles)

    return make_node(out, tuple(g.bands), rule, "arrange_bands")


def split_bands(mosaic: Tensor, k: int) -> PacketGrid:
    """Exact inverse of arrange_bands."""
    T._check_4d(mosaic, "split_bands")
    side = 2 ** k
    n, c, h, w = mosaic.data.shape
    if h % side or w % side:
        raise ShapeError(f"split_bands level {k} requires H and W divisible by {side}, got {h}x{w}")
    bh, bw = h // side, w // side
    shape = mosaic.data.shape

    def band(idx):
        r, cpos = band_tile(idx, k)

        def rule(g, r=r, cpos=cpos):
            gx = np.zeros(shape)
            gx[:, :, r * bh:(r + 1) * bh, cpos * bw:(cpos + 1) * bw] = g
            return (gx,)

        data = mosaic.data[:, :, r * bh:(r + 1) * bh, cpos * bw:(cpos + 1) * bw].copy()
        return make_node(data, (mosaic,), rule, f"split.{band_label(idx, k)}")

    return PacketGrid([band(i) for i in range(4 ** k)], k)
