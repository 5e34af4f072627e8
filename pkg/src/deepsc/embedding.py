"""Linear contrastive (DRLIM) embedding of pooled sparse codes.

Training pairs come from spatial proximity on the coarse grid: two points
whose receptive fields overlap form a pair, labeled similar (0) when their
centers are closer than ``sigma`` pixels and dissimilar (1) otherwise. The
map ``z = W y`` is trained by projected mini-batch gradient descent under the
per-pair loss ``(1 - l) * d^2 / 2 + l * max(0, beta - d)^2`` with
``d = ||W (y_i - y_j)||`` and every column of ``W`` kept in the unit ball.
"""

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from ._textio import fmt_row, header_float, header_int, parse_header
from ._validation import check_int, check_matrix, check_positive, unit_ball_project
from .exceptions import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidInputError,
    NumericalError,
    TruncatedPayloadError,
)
from .grid import CodeGrid

logger = logging.getLogger(__name__)

NORM_SLACK = 1e-12


class LabeledPair(NamedTuple):
    i: int
    j: int
    label: int
    distance: float


@dataclass
class DrlimConfig:
    """Hyper-parameters of one embedding layer.

    `sigma` is in pixels; `beta` is the margin in embedding-space units.
    """

    sigma: float = 16.0
    beta: float = 2.0
    step_size: float = 0.05
    epochs: int = 20
    seed: int = 0
    pairs_per_image: int = 2000
    batch_size: int = 64

    def __post_init__(self):
        check_positive(self.sigma, "sigma")
        check_positive(self.beta, "beta")
        check_positive(self.step_size, "step_size")
        check_int(self.epochs, "epochs", minimum=1)
        check_int(self.pairs_per_image, "pairs_per_image", minimum=1)
        check_int(self.batch_size, "batch_size", minimum=1)


@dataclass
class EmbeddingMap:
    """Linear map from ``in_dim`` (K) to ``out_dim`` (D); columns have norm <= 1."""

    W: np.ndarray
    sigma: float = float("nan")
    beta: float = float("nan")
    loss_history: list = field(default_factory=list, compare=False, repr=False)

    def __post_init__(self):
        self.W = np.ascontiguousarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise InvalidInputError(f"W must be 2-D, got shape {self.W.shape}")
        if not np.all(np.isfinite(self.W)):
            raise NumericalError("embedding contains non-finite entries")
        if self.W.size and self.column_norms().max() > 1.0 + NORM_SLACK:
            raise InvalidInputError("embedding column norm exceeds 1")

    @property
    def out_dim(self):
        return self.W.shape[0]

    @property
    def in_dim(self):
        return self.W.shape[1]

    def column_norms(self):
        return np.sqrt(np.sum(self.W * self.W, axis=0))


def _matrix(W):
    return W.W if isinstance(W, EmbeddingMap) else np.asarray(W, dtype=np.float64)


# --------------------------------------------------------------------------
# pair construction


def pair_label(distance, sigma):
    """Similar (0) strictly below `sigma`, dissimilar (1) at or above it."""
    return 0 if distance < sigma else 1


def generate_pairs(grid, sigma, cap=None, seed=0):
    """Labeled pairs of grid points whose receptive fields overlap.

    Two points pair up when their axis-aligned receptive squares intersect,
    i.e. both center offsets are strictly smaller than the receptive field.
    When more than `cap` candidates exist, a seeded uniform subsample keeps
    the similar:dissimilar ratio.
    """
    sigma = check_positive(sigma, "sigma")
    c2 = grid.centers2()
    R2 = 2 * grid.receptive_field
    i, j = np.triu_indices(grid.n_points, k=1)
    dx2 = np.abs(c2[i, 0] - c2[j, 0])
    dy2 = np.abs(c2[i, 1] - c2[j, 1])
    keep = (dx2 < R2) & (dy2 < R2)
    i, j, dx2, dy2 = i[keep], j[keep], dx2[keep], dy2[keep]
    sq2 = dx2 * dx2 + dy2 * dy2  # exact: 4 * squared pixel distance
    labels = np.where(sq2 < 4.0 * sigma * sigma, 0, 1)
    dist = np.sqrt(sq2) / 2.0

    if cap is not None and len(i) > cap:
        cap = check_int(cap, "cap", minimum=1)
        rng = check_random_state(seed)
        pos = np.flatnonzero(labels == 0)
        neg = np.flatnonzero(labels == 1)
        n_pos = int(round(cap * len(pos) / len(i)))
        n_pos = min(n_pos, len(pos))
        n_neg = min(cap - n_pos, len(neg))
        chosen = np.sort(np.concatenate([
            rng.choice(pos, n_pos, replace=False),
            rng.choice(neg, n_neg, replace=False),
        ]))
        i, j, labels, dist = i[chosen], j[chosen], labels[chosen], dist[chosen]

    return [LabeledPair(int(a), int(b), int(l), float(d))
            for a, b, l, d in zip(i, j, labels, dist)]


# --------------------------------------------------------------------------
# loss and gradient


def contrastive_loss(W, pair, yi, yj, beta):
    """Contrastive loss of one pair under the linear map `W`.

    `pair` is a `LabeledPair` or a bare 0/1 label.
    """
    label = getattr(pair, "label", pair)
    W = _matrix(W)
    delta = np.asarray(yi, dtype=np.float64) - np.asarray(yj, dtype=np.float64)
    if not (np.all(np.isfinite(W)) and np.all(np.isfinite(delta))):
        raise NumericalError("non-finite input to contrastive_loss")
    d = float(np.linalg.norm(W @ delta))
    if label == 0:
        return 0.5 * d * d
    return max(0.0, beta - d) ** 2


def loss_gradient(W, pair, yi, yj, beta):
    """Gradient of `contrastive_loss` with respect to `W`, shape ``(D, K)``.

    At ``d = 0`` for a dissimilar pair the zero subgradient is returned.
    """
    label = getattr(pair, "label", pair)
    W = _matrix(W)
    delta = np.asarray(yi, dtype=np.float64) - np.asarray(yj, dtype=np.float64)
    e = W @ delta
    d = float(np.linalg.norm(e))
    if label == 0:
        coef = 1.0
    elif 0.0 < d < beta:
        coef = -2.0 * (beta - d) / d
    else:
        coef = 0.0
    return coef * np.outer(e, delta)


def _batch_terms(W, deltas, labels, beta):
    """Per-pair losses and gradient coefficients for rows of `deltas`."""
    E = deltas @ W.T
    d = np.sqrt(np.sum(E * E, axis=1))
    similar = labels == 0
    hinge = np.maximum(beta - d, 0.0)
    losses = np.where(similar, 0.5 * d * d, hinge * hinge)
    coef = np.ones_like(d)
    active = (~similar) & (d > 0) & (d < beta)
    coef[~similar] = 0.0
    coef[active] = -2.0 * hinge[active] / d[active]
    return E, losses, coef


def total_loss(W, deltas, labels, beta):
    """Sum of pair losses over a training set given as code differences."""
    _, losses, _ = _batch_terms(_matrix(W), deltas, np.asarray(labels), beta)
    return float(losses.sum())


def _initial_map(out_dim, K, rng):
    W = rng.standard_normal((out_dim, K)) / np.sqrt(K)
    unit_ball_project(W)
    return W


def initial_embedding(in_dim, out_dim, config):
    """The seeded starting point of `train_embedding`, without any training."""
    W = _initial_map(check_int(out_dim, "out_dim", minimum=1),
                     check_int(in_dim, "in_dim", minimum=1), check_random_state(config.seed))
    return EmbeddingMap(W, sigma=float(config.sigma), beta=float(config.beta))


def train_embedding(yi, yj, labels, out_dim, config):
    """Fit the linear map on labeled code pairs.

    Parameters
    ----------
    yi, yj : array-like of shape (n_pairs, K)
        Codes at the two ends of each pair.
    labels : array-like of shape (n_pairs,)
        0 for similar, 1 for dissimilar.
    out_dim : int
    config : DrlimConfig

    Returns
    -------
    EmbeddingMap
        ``loss_history[0]`` is the total loss at initialization and
        ``loss_history[e]`` the total loss after epoch ``e``.
    """
    yi = check_matrix(yi, "yi")
    yj = check_matrix(yj, "yj")
    labels = np.asarray(labels, dtype=np.int64)
    if yi.shape != yj.shape or labels.shape != (yi.shape[0],):
        raise InvalidInputError("pair arrays have inconsistent shapes")
    if not np.isin(labels, (0, 1)).all():
        raise InvalidInputError("labels must be 0 or 1")
    out_dim = check_int(out_dim, "out_dim", minimum=1)
    if len(np.unique(labels)) < 2:
        warnings.warn("all training pairs share one label; the contrastive objective is degenerate",
                      RuntimeWarning, stacklevel=2)

    deltas = yi - yj
    n, K = deltas.shape
    rng = check_random_state(config.seed)
    W = _initial_map(out_dim, K, rng)

    history = [total_loss(W, deltas, labels, config.beta)]
    bs = config.batch_size
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            D_b = deltas[idx]
            E, _, coef = _batch_terms(W, D_b, labels[idx], config.beta)
            grad = (E * coef[:, None]).T @ D_b / len(idx)
            W -= config.step_size * grad
            unit_ball_project(W)
        if not np.all(np.isfinite(W)):
            raise NumericalError(f"embedding diverged in epoch {epoch}")
        history.append(total_loss(W, deltas, labels, config.beta))
        logger.debug("drlim epoch %d: loss %.6g", epoch + 1, history[-1])

    return EmbeddingMap(W, sigma=float(config.sigma), beta=float(config.beta),
                        loss_history=history)


def embed_grid(pg, W):
    """Dense codes ``z = W y`` for every point of a pooled code grid."""
    M = _matrix(W)
    if pg.dim != M.shape[1]:
        raise InvalidInputError(f"pooled code dim {pg.dim} != embedding input dim {M.shape[1]}")
    return CodeGrid(pg.grid, pg.data @ M.T)


class LinearDRLIM(TransformerMixin, BaseEstimator):
    """Estimator wrapper around `train_embedding`.

    ``fit(X, y)`` takes ``X`` of shape ``(n_pairs, 2, K)`` holding both ends of
    each pair and ``y`` the pair labels; ``transform`` maps codes to the
    embedding space.
    """

    def __init__(self, n_components=128, beta=2.0, step_size=0.05, n_epochs=20,
                 batch_size=64, random_state=0):
        self.n_components = n_components
        self.beta = beta
        self.step_size = step_size
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.random_state = random_state

    def fit(self, X, y):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1] != 2:
            raise InvalidInputError(f"X must have shape (n_pairs, 2, K), got {X.shape}")
        config = DrlimConfig(beta=self.beta, step_size=self.step_size,
                             epochs=self.n_epochs, seed=self.random_state,
                             batch_size=self.batch_size)
        self.embedding_ = train_embedding(X[:, 0], X[:, 1], y, self.n_components, config)
        self.loss_history_ = self.embedding_.loss_history
        self.n_features_in_ = X.shape[2]
        return self

    def transform(self, X):
        check_is_fitted(self, "embedding_")
        return check_matrix(X) @ self.embedding_.W.T


# --------------------------------------------------------------------------
# file format

MAGIC = "DEEPSC-EMB"


def dumps_embedding(emb):
    lines = [f"{MAGIC} v1 out={emb.out_dim} in={emb.in_dim} "
             f"sigma={float(emb.sigma)!r} beta={float(emb.beta)!r}"]
    lines.extend(fmt_row(row) for row in emb.W.tolist())
    return "\n".join(lines) + "\n"


def loads_embedding(text):
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmptyInputError("empty embedding input")
    fields = parse_header(lines[0], MAGIC)
    D, K = header_int(fields, "out"), header_int(fields, "in")
    sigma, beta = header_float(fields, "sigma"), header_float(fields, "beta")
    body = lines[1:]
    if len(body) != D:
        cls = TruncatedPayloadError if len(body) < D else DimensionMismatchError
        raise cls(f"embedding has {len(body)} rows, expected {D}")
    rows = []
    for n, line in enumerate(body):
        vals = line.split()
        if len(vals) != K:
            cls = TruncatedPayloadError if len(vals) < K else DimensionMismatchError
            raise cls(f"row {n}: {len(vals)} values, expected {K}")
        rows.append([float(v) for v in vals])
    return EmbeddingMap(np.array(rows, dtype=np.float64).reshape(D, K), sigma=sigma, beta=beta)
