"""L1-regularized sparse coding and online dictionary learning.

Encoding solves ``min_y ||x - V y||^2 + alpha * ||y||_1`` by cyclic coordinate
descent with exact soft-thresholding steps. Dictionaries hold their atoms as
columns of a ``(D, K)`` matrix, each atom inside the unit ball.
"""

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from ._textio import fmt_float, fmt_row, header_int, parse_header
from ._validation import check_int, check_matrix, check_positive, check_vector
from .exceptions import (
    DimensionMismatchError,
    EmptyInputError,
    InvalidInputError,
    NumericalError,
    TruncatedPayloadError,
)
from .grid import CodeGrid

logger = logging.getLogger(__name__)

TOL = 1e-8
MAX_SWEEPS = 1000
KKT_TOL = 1e-6  # optimality certificate checked before declaring convergence
DEAD_ATOM_EPS = 1e-10
NORM_SLACK = 1e-12

SparseCodeGrid = CodeGrid


@dataclass
class Dictionary:
    """``K`` visual words of dimension ``D``, stored as columns of `atoms`."""

    atoms: np.ndarray

    def __post_init__(self):
        self.atoms = np.ascontiguousarray(self.atoms, dtype=np.float64)
        if self.atoms.ndim != 2 or 0 in self.atoms.shape:
            raise InvalidInputError(f"atoms must be a non-empty (D, K) matrix, got {self.atoms.shape}")
        if not np.all(np.isfinite(self.atoms)):
            raise NumericalError("dictionary contains non-finite entries")
        worst = self.atom_norms().max()
        if worst > 1.0 + NORM_SLACK:
            raise InvalidInputError(f"atom norm {worst!r} exceeds 1")

    @property
    def dim(self):
        return self.atoms.shape[0]

    @property
    def size(self):
        return self.atoms.shape[1]

    def atom_norms(self):
        return np.sqrt(np.sum(self.atoms * self.atoms, axis=0))


def _as_atoms(dictionary):
    if isinstance(dictionary, Dictionary):
        return dictionary.atoms
    return Dictionary(dictionary).atoms


# --------------------------------------------------------------------------
# coordinate descent kernels


@njit(cache=True)
def _kkt_ok(c, y, alpha):
    # c holds V^T r, so the optimality gap is O(K) to check
    for k in range(y.shape[0]):
        g = 2.0 * c[k]
        if y[k] > 0.0:
            viol = abs(g - alpha)
        elif y[k] < 0.0:
            viol = abs(g + alpha)
        else:
            viol = abs(g) - alpha
        if viol > KKT_TOL:
            return False
    return True


@njit(cache=True)
def _shifted_objective(b, c, y, alpha):
    # objective minus ||x||^2, using c = b - G y
    s = 0.0
    for k in range(y.shape[0]):
        s += alpha * abs(y[k]) - (b[k] + c[k]) * y[k]
    return s


@njit(cache=True)
def _support_step(b, G, half_alpha, y, c, S, L, z, w, yw):
    """One exact step on the current support, accepted only if it does not
    increase the objective.

    If the support Gram matrix factors, ``z`` solves the problem restricted
    to the current signs and ``y`` moves toward it, stopping at the first
    coordinate that reaches zero. If it is singular, ``y`` moves along a
    null direction of the support atoms (residual unchanged, l1 norm
    non-increasing) until a coordinate reaches zero. Returns 2 when the new
    point passes the optimality certificate, 3 when a coordinate was dropped,
    1 when ``y`` reached the restricted optimum without certifying, 0 when
    nothing was done. `c` is kept equal to ``b - G y``.
    """
    K = y.shape[0]
    m = 0
    for k in range(K):
        if y[k] != 0.0:
            S[m] = k
            m += 1
    if m == 0:
        return 0
    singular = -1
    for a in range(m):
        for e in range(a + 1):
            s = G[S[a], S[e]]
            for t in range(e):
                s -= L[a, t] * L[e, t]
            if a == e:
                if s <= 1e-12 * G[S[a], S[a]]:
                    singular = a
                    break
                L[a, a] = np.sqrt(s)
            else:
                L[a, e] = s / L[e, e]
        if singular >= 0:
            break

    if singular >= 0:
        # atom S[singular] is a combination of the earlier ones: n = (u, -1)
        n = singular
        for a in range(n - 1, -1, -1):
            s = L[n, a]
            for t in range(a + 1, n):
                s -= L[t, a] * z[t]
            z[a] = s / L[a, a]
        z[n] = -1.0
        m = n + 1
        dot = 0.0
        for a in range(m):
            dot += z[a] if y[S[a]] > 0.0 else -z[a]
        if dot > 0.0:
            for a in range(m):
                z[a] = -z[a]
        frac = np.inf
        hit = -1
        for a in range(m):
            ya = y[S[a]]
            if ya * z[a] < 0.0 and -ya / z[a] < frac:
                frac = -ya / z[a]
                hit = a
        if hit < 0:
            return 0
        for k in range(K):
            yw[k] = y[k]
        for a in range(m):
            yw[S[a]] = y[S[a]] + frac * z[a]
        yw[S[hit]] = 0.0
    else:
        for a in range(m):
            s = b[S[a]] - (half_alpha if y[S[a]] > 0.0 else -half_alpha)
            for t in range(a):
                s -= L[a, t] * z[t]
            z[a] = s / L[a, a]
        for a in range(m - 1, -1, -1):
            s = z[a]
            for t in range(a + 1, m):
                s -= L[t, a] * z[t]
            z[a] = s / L[a, a]
        frac = 1.0
        hit = -1
        for a in range(m):
            ya = y[S[a]]
            if (ya > 0.0 and z[a] <= 0.0) or (ya < 0.0 and z[a] >= 0.0):
                f = ya / (ya - z[a])
                if f < frac:
                    frac = f
                    hit = a
        for k in range(K):
            yw[k] = 0.0
        for a in range(m):
            ya = y[S[a]]
            yw[S[a]] = ya + frac * (z[a] - ya)
        if hit >= 0:
            yw[S[hit]] = 0.0

    for j in range(K):
        s = b[j]
        for k in range(K):
            if yw[k] != 0.0:
                s -= G[j, k] * yw[k]
        w[j] = s
    alpha = 2.0 * half_alpha
    before = _shifted_objective(b, c, y, alpha)
    after = _shifted_objective(b, w, yw, alpha)
    if after > before:
        return 0
    for k in range(K):
        y[k] = yw[k]
        c[k] = w[k]
    if _kkt_ok(c, y, alpha):
        return 2
    return 3 if hit >= 0 else 1


@njit(cache=True)
def _cd_one(x, V, G, half_alpha, tol, max_sweeps, y, c, b, S, L, z, w, yw):
    D, K = V.shape
    for k in range(K):
        s = 0.0
        for d in range(D):
            s += V[d, k] * x[d]
        b[k] = s
        c[k] = s
        y[k] = 0.0
    for sweep in range(max_sweeps):
        max_step = 0.0
        changed = False
        for k in range(K):
            gkk = G[k, k]
            if gkk <= 0.0:
                continue
            rho = c[k] + gkk * y[k]
            if rho > half_alpha:
                new = (rho - half_alpha) / gkk
            elif rho < -half_alpha:
                new = (rho + half_alpha) / gkk
            else:
                new = 0.0
            step = new - y[k]
            if step != 0.0:
                if (new > 0.0) != (y[k] > 0.0) or (new < 0.0) != (y[k] < 0.0):
                    changed = True
                for j in range(K):
                    c[j] -= G[j, k] * step
                y[k] = new
                if abs(step) > max_step:
                    max_step = abs(step)
        if max_step < tol and _kkt_ok(c, y, 2.0 * half_alpha):
            return sweep + 1
        # a stable sign pattern lets the exact support solve finish the job
        if not changed:
            # each step that drops a coordinate shrinks the support, so this ends
            status = 3
            while status == 3:
                status = _support_step(b, G, half_alpha, y, c, S, L, z, w, yw)
            if status == 2:
                return sweep + 1
    return max_sweeps


@njit(cache=True)
def _cd_batch(X, V, G, half_alpha, tol, max_sweeps, Y):
    K = V.shape[1]
    c = np.empty(K)
    b = np.empty(K)
    S = np.empty(K, dtype=np.int64)
    L = np.empty((K, K))
    z = np.empty(K)
    w = np.empty(K)
    yw = np.empty(K)
    worst = 0
    for i in range(X.shape[0]):
        n = _cd_one(X[i], V, G, half_alpha, tol, max_sweeps, Y[i], c, b, S, L, z, w, yw)
        if n > worst:
            worst = n
    return worst


@njit(cache=True)
def _refresh_gram_column(V, G, k):
    D, K = V.shape
    for j in range(K):
        s = 0.0
        for d in range(D):
            s += V[d, j] * V[d, k]
        G[j, k] = s
        G[k, j] = s


@njit(cache=True)
def _online_epoch(X, order, V, G, A, B, half_alpha, tol, max_sweeps, eps):
    D, K = V.shape
    y = np.empty(K)
    c = np.empty(K)
    b = np.empty(K)
    S = np.empty(K, dtype=np.int64)
    L = np.empty((K, K))
    z = np.empty(K)
    w = np.empty(K)
    yw = np.empty(K)
    u = np.empty(D)
    for t in range(order.shape[0]):
        x = X[order[t]]
        _cd_one(x, V, G, half_alpha, tol, max_sweeps, y, c, b, S, L, z, w, yw)
        for k in range(K):
            yk = y[k]
            if yk == 0.0:
                continue
            for j in range(K):
                A[j, k] += y[j] * yk
            for d in range(D):
                B[d, k] += x[d] * yk
        for k in range(K):
            akk = A[k, k]
            if akk < eps:
                continue
            nrm = 0.0
            for d in range(D):
                s = 0.0
                for j in range(K):
                    s += V[d, j] * A[j, k]
                val = (B[d, k] - s + akk * V[d, k]) / akk
                u[d] = val
                nrm += val * val
            nrm = np.sqrt(nrm)
            scale = 1.0 / nrm if nrm > 1.0 else 1.0
            for d in range(D):
                V[d, k] = u[d] * scale
            _refresh_gram_column(V, G, k)


# --------------------------------------------------------------------------
# public functions


def objective(x, V, y, alpha):
    r = x - V @ y
    return float(r @ r + alpha * np.abs(y).sum())


def kkt_residual(x, V, y, alpha):
    """Largest violation of the LASSO optimality conditions at `y`.

    Zero for an exact minimizer; independent of how `y` was computed.
    """
    g = 2.0 * (V.T @ (x - V @ y))
    active = y != 0
    viol = np.empty_like(g)
    viol[active] = np.abs(g[active] - alpha * np.sign(y[active]))
    viol[~active] = np.maximum(np.abs(g[~active]) - alpha, 0.0)
    return float(viol.max()) if viol.size else 0.0


def encode_batch(X, dictionary, alpha, *, tol=TOL, max_sweeps=MAX_SWEEPS, return_sweeps=False):
    """Encode every row of `X`; returns a dense ``(n, K)`` array with exact zeros.

    With ``return_sweeps=True`` the largest sweep count over the rows is also
    returned; a value equal to `max_sweeps` means some row hit the cap
    before its optimality certificate held.
    """
    V = _as_atoms(dictionary)
    alpha = check_positive(alpha, "alpha")
    X = check_matrix(X, ensure_min_samples=0)
    if X.shape[1] != V.shape[0]:
        raise InvalidInputError(f"descriptor dim {X.shape[1]} != dictionary dim {V.shape[0]}")
    G = V.T @ V
    Y = np.zeros((X.shape[0], V.shape[1]))
    sweeps = 0
    if X.shape[0]:
        sweeps = _cd_batch(X, V, G, alpha / 2.0, tol, max_sweeps, Y)
        if sweeps >= max_sweeps:
            logger.debug("coordinate descent hit the %d-sweep cap", max_sweeps)
    return (Y, sweeps) if return_sweeps else Y


def encode(x, dictionary, alpha, **kwargs):
    """Sparse code of a single vector."""
    x = check_vector(x)
    return encode_batch(x[None, :], dictionary, alpha, **kwargs)[0]


def encode_grid(dg, dictionary, alpha):
    """Encode every point of a descriptor grid; geometry is passed through."""
    V = _as_atoms(dictionary)
    if dg.dim != V.shape[0]:
        raise InvalidInputError(f"descriptor dim {dg.dim} != dictionary dim {V.shape[0]}")
    return CodeGrid(dg.grid, encode_batch(dg.data, V, alpha))


def _normalized(rows):
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    return rows / norms


def _init_atoms(X, K, rng):
    live = np.flatnonzero(np.linalg.norm(X, axis=1) > 0)
    picked = rng.permutation(live)[:K]
    atoms = _normalized(X[picked])
    if len(picked) < K:
        extra = rng.standard_normal((K - len(picked), X.shape[1]))
        atoms = np.vstack([atoms, _normalized(extra)])
    return np.ascontiguousarray(atoms.T)


def learn_dictionary(samples, n_atoms, alpha, *, n_epochs=1, random_state=None,
                     tol=TOL, max_sweeps=MAX_SWEEPS, return_history=False):
    """Learn a dictionary online, one sample at a time.

    Each sample is encoded against the current atoms, its outer products are
    added to the running statistics ``A = sum y y^T`` and ``B = sum x y^T``,
    and every atom then takes one block-coordinate step followed by
    projection onto the unit ball. Atoms that were never used by the end of
    an epoch are re-seeded from a random sample.

    Parameters
    ----------
    samples : array-like of shape (n_samples, D)
    n_atoms : int
    alpha : float
    n_epochs : int, default=1
    random_state : int, RandomState or None
    return_history : bool, default=False
        Also return the mean objective after initialization and after
        each epoch.

    Returns
    -------
    Dictionary, or (Dictionary, list of float)
    """
    X = check_matrix(samples, "samples")
    K = check_int(n_atoms, "n_atoms", minimum=1)
    alpha = check_positive(alpha, "alpha")
    n_epochs = check_int(n_epochs, "n_epochs", minimum=1)
    if X.shape[0] < K:
        raise InvalidInputError(f"need at least {K} samples, got {X.shape[0]}")
    rng = check_random_state(random_state)

    V = _init_atoms(X, K, rng)
    G = V.T @ V
    A = np.zeros((K, K))
    B = np.zeros((X.shape[1], K))
    history = [mean_objective(X, V, alpha)] if return_history else None
    for epoch in range(n_epochs):
        order = rng.permutation(X.shape[0]).astype(np.int64)
        _online_epoch(X, order, V, G, A, B, alpha / 2.0, tol, max_sweeps, DEAD_ATOM_EPS)
        dead = np.flatnonzero(np.diag(A) < DEAD_ATOM_EPS)
        if dead.size:
            logger.info("epoch %d: re-seeding %d unused atoms", epoch, dead.size)
            fresh = X[rng.randint(X.shape[0], size=dead.size)]
            norms = np.linalg.norm(fresh, axis=1)
            ok = norms > 0
            V[:, dead[ok]] = (fresh[ok] / norms[ok, None]).T
            G = V.T @ V
        if not np.all(np.isfinite(V)):
            raise NumericalError("dictionary update produced non-finite atoms")
        if return_history:
            history.append(mean_objective(X, V, alpha))
    dictionary = Dictionary(V)
    return (dictionary, history) if return_history else dictionary


def mean_objective(X, dictionary, alpha):
    """Mean per-sample encoding objective of `X` under `dictionary`."""
    V = _as_atoms(dictionary)
    Y = encode_batch(X, V, alpha)
    R = X - Y @ V.T
    return float(np.mean(np.sum(R * R, axis=1) + alpha * np.abs(Y).sum(axis=1)))


# --------------------------------------------------------------------------
# estimators


class SparseCoder(TransformerMixin, BaseEstimator):
    """Encode rows against a fixed dictionary.

    Parameters
    ----------
    dictionary : array-like of shape (D, K) or Dictionary
    alpha : float, default=0.15
    """

    def __init__(self, dictionary, alpha=0.15):
        self.dictionary = dictionary
        self.alpha = alpha

    def fit(self, X=None, y=None):
        self.dictionary_ = (
            self.dictionary if isinstance(self.dictionary, Dictionary) else Dictionary(self.dictionary)
        )
        self.n_features_in_ = self.dictionary_.dim
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        return encode_batch(X, self.dictionary_, self.alpha)


class OnlineDictionaryLearning(TransformerMixin, BaseEstimator):
    """Dictionary learning with per-sample online updates.

    Parameters
    ----------
    n_atoms : int, default=1024
    alpha : float, default=0.15
        Weight of the L1 penalty, in absolute units.
    n_epochs : int, default=1
    random_state : int, RandomState or None

    Attributes
    ----------
    dictionary_ : Dictionary
    components_ : ndarray of shape (n_atoms, n_features)
        Atoms as rows, matching the scikit-learn convention.
    objective_history_ : list of float
    """

    def __init__(self, n_atoms=1024, alpha=0.15, n_epochs=1, random_state=None):
        self.n_atoms = n_atoms
        self.alpha = alpha
        self.n_epochs = n_epochs
        self.random_state = random_state

    def fit(self, X, y=None):
        self.dictionary_, self.objective_history_ = learn_dictionary(
            X, self.n_atoms, self.alpha, n_epochs=self.n_epochs,
            random_state=self.random_state, return_history=True,
        )
        self.n_features_in_ = self.dictionary_.dim
        return self

    @property
    def components_(self):
        check_is_fitted(self, "dictionary_")
        return self.dictionary_.atoms.T

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        return encode_batch(X, self.dictionary_, self.alpha)


# --------------------------------------------------------------------------
# file formats

DICT_MAGIC = "DEEPSC-DICT"
CODE_MAGIC = "DEEPSC-CODE"


def dumps_dictionary(dictionary):
    V = _as_atoms(dictionary)
    lines = [f"{DICT_MAGIC} v1 dim={V.shape[0]} size={V.shape[1]}"]
    lines.extend(fmt_row(col) for col in V.T.tolist())
    return "\n".join(lines) + "\n"


def loads_dictionary(text):
    """Parse dictionary text; the unit-norm invariant is checked by `Dictionary`."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmptyInputError("empty dictionary input")
    fields = parse_header(lines[0], DICT_MAGIC)
    D, K = header_int(fields, "dim"), header_int(fields, "size")
    body = lines[1:]
    if len(body) < K:
        raise TruncatedPayloadError(f"dictionary has {len(body)} atoms, expected {K}")
    if len(body) > K:
        raise DimensionMismatchError(f"dictionary has {len(body)} atoms, expected {K}")
    cols = []
    for n, line in enumerate(body):
        vals = line.split()
        if len(vals) != D:
            cls = TruncatedPayloadError if len(vals) < D else DimensionMismatchError
            raise cls(f"atom {n}: {len(vals)} values, expected {D}")
        cols.append([float(v) for v in vals])
    return Dictionary(np.array(cols, dtype=np.float64).T)


def save_dictionary(path, dictionary):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_dictionary(dictionary))


def load_dictionary(path):
    with open(path, encoding="utf-8") as fh:
        return loads_dictionary(fh.read())


def save_codes(path, codes):
    """Write a code grid as ``nnz idx:val ...`` lines (0-based indices)."""
    g = codes.grid
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{CODE_MAGIC} v1 size={codes.dim} nx={g.nx} ny={g.ny}\n")
        for row in codes.data:
            nz = np.flatnonzero(row)
            parts = [str(nz.size)] + [f"{i}:{fmt_float(row[i])}" for i in nz]
            fh.write(" ".join(parts) + "\n")


def load_codes(path):
    """Read a code file; returns ``(nx, ny, codes)`` with codes of shape ``(nx*ny, K)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise EmptyInputError(f"{path}: empty input")
    fields = parse_header(lines[0], CODE_MAGIC)
    K, nx, ny = header_int(fields, "size"), header_int(fields, "nx"), header_int(fields, "ny")
    body = lines[1:]
    if len(body) != nx * ny:
        cls = TruncatedPayloadError if len(body) < nx * ny else DimensionMismatchError
        raise cls(f"{len(body)} code rows, expected {nx * ny}")
    Y = np.zeros((nx * ny, K))
    for n, line in enumerate(body):
        parts = line.split()
        nnz = int(parts[0])
        if len(parts) - 1 != nnz:
            raise TruncatedPayloadError(f"row {n}: declared {nnz} entries, found {len(parts) - 1}")
        for tok in parts[1:]:
            idx, _, val = tok.partition(":")
            i = int(idx)
            if not 0 <= i < K:
                raise DimensionMismatchError(f"row {n}: index {i} outside [0, {K})")
            Y[n, i] = float(val)
    return nx, ny, Y
