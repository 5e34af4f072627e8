"""Dense gradient-orientation descriptors and their text file format.

The descriptor is a simplified dense SIFT: 4x4 spatial cells, 8 orientation
bins per cell, magnitude-weighted votes split linearly between the two
nearest bins, L2 normalization with clamping at 0.2.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from sklearn.base import BaseEstimator, TransformerMixin

from ._textio import fmt_row, header_int, parse_header
from ._validation import check_image, check_int
from .exceptions import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidInputError,
    TruncatedPayloadError,
)
from .grid import CodeGrid, build_grid

N_CELLS = 4
N_ORIENTATIONS = 8
DESCRIPTOR_DIM = N_CELLS * N_CELLS * N_ORIENTATIONS
CLAMP = 0.2
_NORM_FLOOR = 1e-12

LUMA_601 = (0.299, 0.587, 0.114)


DescriptorGrid = CodeGrid


def to_gray(img):
    """Convert an ``(H, W)`` or ``(H, W, 3|4)`` array to grayscale in [0, 1].

    Integer input is assumed to be 8-bit.
    """
    arr = np.asarray(img)
    is_int = np.issubdtype(arr.dtype, np.integer)
    arr = arr.astype(np.float64)
    if is_int:
        arr /= 255.0
    if arr.ndim == 3:
        if arr.shape[2] == 1:
            arr = arr[:, :, 0]
        elif arr.shape[2] in (3, 4):
            arr = arr[:, :, :3] @ np.asarray(LUMA_601)
        else:
            raise InvalidInputError(f"unsupported channel count {arr.shape[2]}")
    return check_image(np.clip(arr, 0.0, 1.0))


def _patches(img, grid):
    p = grid.receptive_field
    left2 = grid.origin_x2 - p
    top2 = grid.origin_y2 - p
    if left2 % 2 or top2 % 2:
        raise InvalidInputError("patch corners must fall on integer pixels")
    x0, y0, s = left2 // 2, top2 // 2, grid.spacing
    windows = sliding_window_view(img, (p, p))
    out = windows[y0::s, x0::s][: grid.ny, : grid.nx]
    if out.shape[:2] != (grid.ny, grid.nx):
        raise InvalidInputError("grid extends past the image")
    return out.reshape(grid.n_points, p, p)


def orientation_histograms(patches):
    """Raw (unnormalized) cell histograms for a stack of square patches.

    Parameters
    ----------
    patches : ndarray of shape (n, p, p)

    Returns
    -------
    ndarray of shape (n, 128)
        Ordered by cell row, cell column, orientation bin. Bin ``b`` is
        centered on gradient direction ``b * 45`` degrees, measured from the
        +x (column) axis towards +y (row).
    """
    n, p, _ = patches.shape
    cell = p // N_CELLS
    gy, gx = np.gradient(patches, axis=(1, 2))
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), 2 * np.pi)
    pos = theta / (2 * np.pi / N_ORIENTATIONS)
    lo = np.floor(pos)
    frac = pos - lo
    lo = lo.astype(np.int64) % N_ORIENTATIONS
    hi = (lo + 1) % N_ORIENTATIONS
    votes = np.zeros((n, p, p, N_ORIENTATIONS))
    np.put_along_axis(votes, lo[..., None], (mag * (1.0 - frac))[..., None], axis=-1)
    # lo != hi always, so the second vote never overwrites the first
    np.put_along_axis(votes, hi[..., None], (mag * frac)[..., None], axis=-1)
    votes = votes.reshape(n, N_CELLS, cell, N_CELLS, cell, N_ORIENTATIONS)
    return votes.sum(axis=(2, 4)).reshape(n, DESCRIPTOR_DIM)


def normalize_descriptors(h):
    """Unit-normalize rows, clamp at 0.2, renormalize. Flat rows become zero."""
    h = np.array(h, dtype=np.float64)
    norms = np.linalg.norm(h, axis=1)
    live = norms > _NORM_FLOOR
    h[~live] = 0.0
    h[live] /= norms[live, None]
    np.minimum(h, CLAMP, out=h)
    norms = np.linalg.norm(h[live], axis=1)
    h[live] /= norms[:, None]
    return h


def compute_descriptors(img, grid):
    """Descriptor for every patch of `grid` on grayscale image `img`."""
    img = check_image(img)
    if (grid.image_height, grid.image_width) != img.shape:
        raise InvalidInputError(
            f"grid built for {grid.image_width}x{grid.image_height}, "
            f"image is {img.shape[1]}x{img.shape[0]}"
        )
    if grid.receptive_field % N_CELLS:
        raise InvalidInputError("patch size must be a multiple of 4")
    hist = orientation_histograms(_patches(img, grid))
    return DescriptorGrid(grid, normalize_descriptors(hist))


class DenseSIFT(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping grayscale images to `DescriptorGrid` objects.

    Parameters
    ----------
    patch_size : int, default=16
    spacing : int, default=4
    """

    def __init__(self, patch_size=16, spacing=4):
        self.patch_size = patch_size
        self.spacing = spacing

    def fit(self, X=None, y=None):
        check_int(self.patch_size, "patch_size", minimum=N_CELLS)
        check_int(self.spacing, "spacing", minimum=1)
        return self

    def transform(self, X):
        out = []
        for img in X:
            img = check_image(img)
            g = build_grid(img.shape[1], img.shape[0], self.patch_size, self.spacing)
            out.append(compute_descriptors(img, g))
        return out


MAGIC = "DEEPSC-DESC"


def save_descriptors(path, items):
    """Write ``(image_id, DescriptorGrid)`` pairs, one block each."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for n, (image_id, dg) in enumerate(items):
            g = dg.grid
            if "\n" in str(image_id):
                raise InvalidInputError("image id may not contain newlines")
            if n:
                fh.write("\n")
            fh.write(
                f"{MAGIC} v1 dim={dg.dim} nx={g.nx} ny={g.ny} spacing={g.spacing} "
                f"patch={g.receptive_field} width={g.image_width} height={g.image_height} "
                f"image={image_id}\n"
            )
            for row in dg.data.tolist():
                fh.write(fmt_row(row))
                fh.write("\n")


def _read_row(line, dim, lineno):
    parts = line.split()
    if len(parts) < dim:
        raise TruncatedPayloadError(f"line {lineno}: {len(parts)} values, expected {dim}")
    if len(parts) > dim:
        raise DimensionMismatchError(f"line {lineno}: {len(parts)} values, expected {dim}")
    try:
        return [float(v) for v in parts]
    except ValueError:
        raise DimensionMismatchError(f"line {lineno}: non-numeric value") from None


def load_descriptors(path):
    """Parse a descriptor file into a list of ``(image_id, DescriptorGrid)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not any(line.strip() for line in lines):
        raise EmptyInputError(f"{path}: empty input")

    out = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        fields = parse_header(lines[i], MAGIC, rest_key="image")
        dim = header_int(fields, "dim")
        nx, ny = header_int(fields, "nx"), header_int(fields, "ny")
        spacing, patch = header_int(fields, "spacing"), header_int(fields, "patch")
        width = header_int(fields, "width", required=False, default=(nx - 1) * spacing + patch)
        height = header_int(fields, "height", required=False, default=(ny - 1) * spacing + patch)
        image_id = fields.get("image", str(len(out)))
        grid = build_grid(width, height, patch, spacing)
        if (grid.nx, grid.ny) != (nx, ny):
            raise DimensionMismatchError(
                f"header nx={nx} ny={ny} inconsistent with {width}x{height} image"
            )
        rows = []
        for j in range(grid.n_points):
            k = i + 1 + j
            if k >= len(lines) or not lines[k].strip():
                raise TruncatedPayloadError(
                    f"block '{image_id}': {j} rows, expected {grid.n_points}"
                )
            rows.append(_read_row(lines[k], dim, k + 1))
        data = np.array(rows, dtype=np.float64).reshape(grid.n_points, dim)
        out.append((image_id, DescriptorGrid(grid, data)))
        i += 1 + grid.n_points
    return out
