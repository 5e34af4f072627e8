"""Sampling-grid arithmetic.

A sampling grid is a regular lattice of patch centers on an image. Centers
sit on half-integer pixel coordinates when the patch size is odd, so the
grid stores *doubled* coordinates as integers and every geometric comparison
is exact.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._validation import check_int
from .exceptions import GridTooSmallError, InvalidInputError

BLOCK = 4
BLOCK_STRIDE = 2
N_REGIONS = 21
PYRAMID_DIVISIONS = (1, 2, 4)


@dataclass(frozen=True)
class SamplingGrid:
    """Lattice of patch centers.

    Attributes
    ----------
    image_width, image_height : int
        Image size in pixels.
    origin_x2, origin_y2 : int
        Doubled pixel coordinates of the first center.
    spacing : int
        Pixels between adjacent centers.
    nx, ny : int
        Number of centers along each axis.
    receptive_field : int
        Side length of the image square summarized by one point.
    """

    image_width: int
    image_height: int
    origin_x2: int
    origin_y2: int
    spacing: int
    nx: int
    ny: int
    receptive_field: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1 or self.spacing < 1:
            raise InvalidInputError(f"degenerate grid: {self}")

    @property
    def n_points(self):
        return self.nx * self.ny

    @property
    def origin_x(self):
        return self.origin_x2 / 2

    @property
    def origin_y(self):
        return self.origin_y2 / 2

    def lattice_coords(self, i):
        """Map point index to its ``(column, row)`` lattice coordinates."""
        if not 0 <= i < self.n_points:
            raise IndexError(f"point index {i} out of range [0, {self.n_points})")
        return i % self.nx, i // self.nx

    def centers2(self):
        """Doubled integer center coordinates, shape ``(M, 2)`` as ``(x2, y2)``."""
        cols = np.arange(self.nx, dtype=np.int64)
        rows = np.arange(self.ny, dtype=np.int64)
        x2 = self.origin_x2 + 2 * self.spacing * cols
        y2 = self.origin_y2 + 2 * self.spacing * rows
        xx, yy = np.meshgrid(x2, y2)
        return np.column_stack([xx.ravel(), yy.ravel()])

    def centers(self):
        return self.centers2() / 2.0


def build_grid(image_width, image_height, patch_size=16, spacing=4):
    """Place ``patch_size`` patches every ``spacing`` pixels, starting at the top-left corner."""
    image_width = check_int(image_width, "image_width", minimum=1)
    image_height = check_int(image_height, "image_height", minimum=1)
    patch_size = check_int(patch_size, "patch_size", minimum=1)
    spacing = check_int(spacing, "spacing", minimum=1)
    if patch_size > min(image_width, image_height):
        raise InvalidInputError(
            f"image {image_width}x{image_height} is smaller than one {patch_size}px patch"
        )
    return SamplingGrid(
        image_width=image_width,
        image_height=image_height,
        origin_x2=patch_size,
        origin_y2=patch_size,
        spacing=spacing,
        nx=(image_width - patch_size) // spacing + 1,
        ny=(image_height - patch_size) // spacing + 1,
        receptive_field=patch_size,
    )


def can_coarsen(g):
    return g.nx >= BLOCK and g.ny >= BLOCK


def coarsen_grid(g):
    """Center a new point on every other 4x4 block of `g`.

    Trailing rows/columns that do not complete a block are dropped.
    """
    if not can_coarsen(g):
        raise GridTooSmallError(f"grid {g.nx}x{g.ny} is too small to coarsen (needs 4x4)")
    half_block = (BLOCK - 1) * g.spacing  # doubled offset of the block mean
    return SamplingGrid(
        image_width=g.image_width,
        image_height=g.image_height,
        origin_x2=g.origin_x2 + half_block,
        origin_y2=g.origin_y2 + half_block,
        spacing=BLOCK_STRIDE * g.spacing,
        nx=(g.nx - BLOCK) // BLOCK_STRIDE + 1,
        ny=(g.ny - BLOCK) // BLOCK_STRIDE + 1,
        receptive_field=g.receptive_field + (BLOCK - 1) * g.spacing,
    )


def block_index_table(g_fine):
    """Fine-point indices pooled into each coarse point, shape ``(M', 16)``.

    Row ``k`` lists the 4x4 block under coarse point ``k`` in row-major order.
    """
    g_coarse = coarsen_grid(g_fine)
    cx = np.arange(g_coarse.nx) * BLOCK_STRIDE
    cy = np.arange(g_coarse.ny) * BLOCK_STRIDE
    off = np.arange(BLOCK)
    # (ny', nx', 4, 4): rows then columns of the block
    rows = cy[:, None, None, None] + off[None, None, :, None]
    cols = cx[None, :, None, None] + off[None, None, None, :]
    table = rows * g_fine.nx + cols
    return table.reshape(g_coarse.n_points, BLOCK * BLOCK)


def block_indices(g_fine, g_coarse, k):
    """Indices of the 16 fine points closest to coarse point `k`."""
    if g_coarse != coarsen_grid(g_fine):
        raise InvalidInputError("g_coarse is not the coarsening of g_fine")
    if not 0 <= k < g_coarse.n_points:
        raise IndexError(f"coarse index {k} out of range [0, {g_coarse.n_points})")
    return [int(i) for i in block_index_table(g_fine)[k]]


@dataclass(frozen=True)
class Region:
    """Half-open pooling rectangle ``[x0, x1) x [y0, y1)`` in pixels."""

    level: int
    x0: Fraction
    y0: Fraction
    x1: Fraction
    y1: Fraction

    def contains(self, x, y):
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


def pyramid_regions(image_width, image_height):
    """The 1 + 4 + 16 spatial-pyramid rectangles, level by level, row-major."""
    regions = []
    for level, n in enumerate(PYRAMID_DIVISIONS, start=1):
        for r in range(n):
            for c in range(n):
                regions.append(
                    Region(
                        level,
                        Fraction(c * image_width, n),
                        Fraction(r * image_height, n),
                        Fraction((c + 1) * image_width, n),
                        Fraction((r + 1) * image_height, n),
                    )
                )
    return tuple(regions)


def spm_assign(g):
    """Region indices of every point, shape ``(M, 3)``, one column per pyramid level.

    A center on a shared edge goes to the region to its right/below; a center
    on the far image edge stays in the last region.
    """
    c2 = g.centers2()
    out = np.empty((g.n_points, len(PYRAMID_DIVISIONS)), dtype=np.int64)
    first = 0
    for col, n in enumerate(PYRAMID_DIVISIONS):
        # x2/2 in [c*W/n, (c+1)*W/n)  <=>  c = floor(n*x2 / (2W)), exact in integers
        cx = np.minimum(n * c2[:, 0] // (2 * g.image_width), n - 1)
        cy = np.minimum(n * c2[:, 1] // (2 * g.image_height), n - 1)
        out[:, col] = first + cy * n + cx
        first += n * n
    return out


@dataclass
class CodeGrid:
    """Per-point vectors bound to a sampling grid, one row of `data` per point.

    Used for dense descriptors, sparse codes and pooled codes alike.
    """

    grid: SamplingGrid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] != self.grid.n_points:
            raise InvalidInputError(
                f"data shape {self.data.shape} does not match {self.grid.n_points} grid points"
            )

    @property
    def dim(self):
        return self.data.shape[1]
