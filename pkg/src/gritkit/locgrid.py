"""Discretization of continuous boxes to location tokens on a square grid.

The image is divided evenly into ``bins`` segments per axis, giving
``bins * bins`` cells; each cell is named by one location token. Token
indices are zero-based row-major: index = row * bins + col. Decoding maps
a token back to the center pixel of its cell, so a full round trip moves
each coordinate by at most half a bin.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import PixelBox

# A location token is a plain vocabulary index in [0, bins * bins).
LocToken = int


@dataclass(frozen=True)
class ImageDims:
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")


@dataclass(frozen=True)
class GridSpec:
    """Square quantization grid; ``bins`` segments per axis (default 32)."""

    bins: int = 32

    def __post_init__(self):
        if self.bins < 1:
            raise ValueError(f"bins must be >= 1, got {self.bins}")

    @property
    def vocab_size(self) -> int:
        return self.bins * self.bins


@dataclass(frozen=True)
class TokenBoxPair:
    """A box as (top-left, bottom-right) location tokens."""

    tl: LocToken
    br: LocToken

    def __post_init__(self):
        if self.tl < 0 or self.br < 0:
            raise ValueError(f"token indices must be >= 0, got {self}")


def token_of_cell(row: int, col: int, grid: GridSpec) -> LocToken:
    """Map a (row, col) cell to its token index (row-major, zero-based)."""
    if not (0 <= row < grid.bins and 0 <= col < grid.bins):
        raise ValueError(f"cell ({row}, {col}) outside {grid.bins}x{grid.bins} grid")
    return row * grid.bins + col


def cell_of_token(token: LocToken, grid: GridSpec) -> tuple[int, int]:
    """Inverse of token_of_cell: token index -> (row, col)."""
    if not 0 <= token < grid.vocab_size:
        raise ValueError(f"token {token} outside vocabulary of {grid.vocab_size}")
    return token // grid.bins, token % grid.bins


def pair_is_ordered(pair: TokenBoxPair, grid: GridSpec) -> bool:
    """True when tl/br rows and columns are both non-decreasing."""
    if pair.tl >= grid.vocab_size or pair.br >= grid.vocab_size:
        return False
    tr, tc = cell_of_token(pair.tl, grid)
    br, bc = cell_of_token(pair.br, grid)
    return tr <= br and tc <= bc


def _cell_index(coord: float, extent: int, bins: int) -> int:
    # Bins are the real intervals [k*extent/bins, (k+1)*extent/bins); a corner
    # exactly on the far edge (and anything beyond) clamps into the last bin.
    idx = int(coord * bins / extent)
    if idx < 0:
        return 0
    if idx > bins - 1:
        return bins - 1
    return idx


def quantize_box(box: PixelBox, dims: ImageDims, grid: GridSpec) -> TokenBoxPair:
    """Discretize box corners to location tokens; out-of-image corners clamp."""
    bins = grid.bins
    tl = token_of_cell(
        _cell_index(box.y1, dims.height, bins), _cell_index(box.x1, dims.width, bins), grid
    )
    br = token_of_cell(
        _cell_index(box.y2, dims.height, bins), _cell_index(box.x2, dims.width, bins), grid
    )
    return TokenBoxPair(tl, br)


def dequantize_box(pair: TokenBoxPair, dims: ImageDims, grid: GridSpec) -> PixelBox:
    """Map a token pair back to pixels using the center of each cell."""
    if not pair_is_ordered(pair, grid):
        raise ValueError(f"token pair {pair} is not corner-ordered on the grid")
    t_row, t_col = cell_of_token(pair.tl, grid)
    b_row, b_col = cell_of_token(pair.br, grid)
    bins = grid.bins
    return PixelBox(
        x1=(t_col + 0.5) * dims.width / bins,
        y1=(t_row + 0.5) * dims.height / bins,
        x2=(b_col + 0.5) * dims.width / bins,
        y2=(b_row + 0.5) * dims.height / bins,
    )
