"""Max pooling: component-wise, local 4x4 spatial, and spatial pyramid."""

import numpy as np

from .exceptions import InvalidInputError
from .grid import N_REGIONS, CodeGrid, block_index_table, coarsen_grid, spm_assign

PooledCodeGrid = CodeGrid


def max_pool(codes):
    """Component-wise maximum of a non-empty collection of equal-length vectors."""
    codes = np.asarray(codes, dtype=np.float64)
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.ndim != 2:
        raise InvalidInputError(f"expected a list of vectors, got shape {codes.shape}")
    if codes.shape[0] == 0:
        raise InvalidInputError("max_pool of an empty collection is undefined")
    return codes.max(axis=0)


def local_spatial_pool(codes):
    """Pool each 4x4 block of the fine grid onto the coarsened grid.

    Parameters
    ----------
    codes : CodeGrid
        Sparse codes on the fine grid.

    Returns
    -------
    CodeGrid
        One pooled code per point of ``coarsen_grid(codes.grid)``.
    """
    coarse = coarsen_grid(codes.grid)
    table = block_index_table(codes.grid)
    return CodeGrid(coarse, codes.data[table].max(axis=1))


def spm_pool(codes):
    """Max-pool codes into the 21 pyramid regions and concatenate.

    Regions that receive no point center contribute a zero block. The result
    has length ``21 * K``: the whole image first, then the 2x2 quadrants, then
    the 4x4 cells, each level in row-major order.
    """
    K = codes.dim
    out = np.zeros((N_REGIONS, K))
    if codes.grid.n_points == 0:
        return out.ravel()
    assign = spm_assign(codes.grid)
    for level in range(assign.shape[1]):
        ids = assign[:, level]
        for r in np.unique(ids):
            out[r] = codes.data[ids == r].max(axis=0)
    return out.ravel()


def l2_normalize(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v.copy()
