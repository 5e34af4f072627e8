"""One-vs-all linear SVM, evaluation by average per-class accuracy, and the
sparse ``label idx:val`` text format used for feature export."""

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils import check_random_state
from sklearn.utils.validation import check_is_fitted

from ._textio import fmt_float
from ._validation import check_int, check_matrix, check_positive
from .exceptions import FormatError, InvalidInputError


def _hinge_objective(w, X, s, lam):
    margins = s * (X @ w)
    return 0.5 * lam * float(w @ w) + float(np.maximum(0.0, 1.0 - margins).mean())


def _pegasos(X, s, lam, n_epochs, batch_size, rng):
    """Averaged stochastic subgradient descent for one binary problem.

    Returns the averaged weights and the objective of the averaged iterate
    at initialization and after every epoch.
    """
    n, d = X.shape
    w = np.zeros(d)
    w_sum = np.zeros(d)
    t = 0
    history = [_hinge_objective(w, X, s, lam)]
    for _ in range(n_epochs):
        order = np.arange(n) if batch_size >= n else rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            t += 1
            eta = 1.0 / (lam * t)
            Xb, sb = X[idx], s[idx]
            viol = sb * (Xb @ w) < 1.0
            step = (sb[viol] @ Xb[viol]) / len(idx) if viol.any() else 0.0
            w *= 1.0 - eta * lam
            w += eta * step
            w_sum += w
        history.append(_hinge_objective(w_sum / t, X, s, lam))
    return w_sum / t, history


class LinearOvaSVM(ClassifierMixin, BaseEstimator):
    """One-vs-all linear SVM trained with averaged Pegasos updates.

    Each binary problem minimizes ``lam/2 ||w||^2 + mean hinge`` with
    ``lam = 1 / (C * n_samples)``. The bias is learned as the weight of a
    constant feature equal to `bias_scale`.

    Parameters
    ----------
    C : float, default=1.0
    n_epochs : int, default=50
    batch_size : int or None, default=1
        Samples per subgradient step; None uses the full training set.
    bias_scale : float, default=1.0
    random_state : int, RandomState or None, default=0
    """

    def __init__(self, C=1.0, n_epochs=50, batch_size=1, bias_scale=1.0, random_state=0):
        self.C = C
        self.n_epochs = n_epochs
        self.batch_size = batch_size
        self.bias_scale = bias_scale
        self.random_state = random_state

    def fit(self, X, y):
        X = check_matrix(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise InvalidInputError("X and y have inconsistent lengths")
        C = check_positive(self.C, "C")
        n_epochs = check_int(self.n_epochs, "n_epochs", minimum=1)
        n = X.shape[0]
        bs = n if self.batch_size is None else check_int(self.batch_size, "batch_size", minimum=1)

        self.classes_ = np.unique(y)
        if len(self.classes_) < 2:
            raise InvalidInputError("need at least two classes to train an SVM")
        lam = 1.0 / (C * n)
        Xa = np.hstack([X, np.full((n, 1), float(self.bias_scale))])
        rng = check_random_state(self.random_state)

        weights, self.objective_history_ = [], []
        for c in self.classes_:
            s = np.where(y == c, 1.0, -1.0)
            w, hist = _pegasos(Xa, s, lam, n_epochs, bs, rng)
            weights.append(w)
            self.objective_history_.append(hist)
        W = np.vstack(weights)
        self.coef_ = W[:, :-1]
        self.intercept_ = W[:, -1] * float(self.bias_scale)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_matrix(X)
        return X @ self.coef_.T + self.intercept_

    def predict(self, X):
        """Class with the highest score; ties go to the lowest class id."""
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def train_svm(features, labels, C=1.0, epochs=50, seed=0, batch_size=1):
    return LinearOvaSVM(C=C, n_epochs=epochs, batch_size=batch_size,
                        random_state=seed).fit(features, labels)


def predict(svm, feature):
    return svm.predict(np.asarray(feature, dtype=np.float64)[None, :])[0]


@dataclass
class EvalReport:
    classes: np.ndarray
    per_class_accuracy: np.ndarray
    average_accuracy: float
    confusion: np.ndarray
    predicted_classes: np.ndarray

    def format(self):
        lines = [f"{'class':>10}  {'count':>6}  {'accuracy':>8}"]
        for c, row, acc in zip(self.classes, self.confusion, self.per_class_accuracy):
            lines.append(f"{c!s:>10}  {int(row.sum()):>6}  {acc:8.4f}")
        lines.append(f"{'average':>10}  {int(self.confusion.sum()):>6}  {self.average_accuracy:8.4f}")
        return "\n".join(lines)


def average_per_class_accuracy(y_true, y_pred):
    """Mean over the classes present in `y_true` of the per-class hit rate."""
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if y_true.size == 0:
        raise InvalidInputError("labels are empty")
    classes = np.unique(y_true)
    return float(np.mean([np.mean(y_pred[y_true == c] == c) for c in classes]))


def evaluate(svm, features, labels):
    """Confusion matrix and average per-class accuracy on a labeled set.

    Rows of the confusion matrix follow the true classes present in
    `labels`; columns follow the union of those and the SVM's classes.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise InvalidInputError("labels are empty")
    pred = svm.predict(features)
    rows = np.unique(labels)
    cols = np.union1d(rows, svm.classes_)
    confusion = np.zeros((len(rows), len(cols)), dtype=np.int64)
    r_idx = np.searchsorted(rows, labels)
    c_idx = np.searchsorted(cols, pred)
    np.add.at(confusion, (r_idx, c_idx), 1)
    diag = np.array([confusion[k, np.searchsorted(cols, c)] for k, c in enumerate(rows)])
    per_class = diag / confusion.sum(axis=1)
    return EvalReport(rows, per_class, float(per_class.mean()), confusion, cols)


# --------------------------------------------------------------------------
# sparse text format


def format_sparse_line(label, vector):
    nz = np.flatnonzero(vector)
    parts = [str(label)] + [f"{i + 1}:{fmt_float(vector[i])}" for i in nz]
    return " ".join(parts)


def export_sparse_text(features, labels, path, *, dim_header=True):
    """Write ``<label> <idx>:<value> ...`` lines with 1-based indices.

    With `dim_header`, the first line is the comment ``# dim=<n_features>``.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or len(labels) != X.shape[0]:
        raise InvalidInputError("features must be 2-D with one label per row")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if dim_header:
            fh.write(f"# dim={X.shape[1]}\n")
        for label, row in zip(labels, X):
            fh.write(format_sparse_line(label, row) + "\n")


def load_sparse_text(path, n_features=None):
    """Inverse of `export_sparse_text`; returns ``(X, labels)`` with dense X."""
    rows, labels = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if line.startswith("#"):
                key, _, val = line[1:].strip().partition("=")
                if key == "dim" and n_features is None:
                    n_features = int(val)
                continue
            if not line:
                continue
            parts = line.split()
            labels.append(int(parts[0]))
            entries, last = {}, 0
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                if not sep:
                    raise FormatError(f"line {lineno}: malformed entry {tok!r}")
                i = int(idx)
                if i <= last:
                    raise FormatError(f"line {lineno}: indices must be 1-based and increasing")
                entries[i] = float(val)
                last = i
            rows.append(entries)
    width = n_features if n_features is not None else max(
        (max(r) for r in rows if r), default=0)
    X = np.zeros((len(rows), width))
    for k, entries in enumerate(rows):
        for i, v in entries.items():
            if i > width:
                raise FormatError(f"index {i} exceeds dim={width}")
            X[k, i - 1] = v
    return X, np.asarray(labels, dtype=np.int64)


def select_C(features, labels, grid, *, n_folds=3, seed=0, **svm_params):
    """Pick C from `grid` by stratified k-fold average per-class accuracy."""
    from sklearn.model_selection import StratifiedKFold

    X = check_matrix(features)
    y = np.asarray(labels)
    n_folds = min(n_folds, int(np.bincount(np.unique(y, return_inverse=True)[1]).min()))
    if n_folds < 2:
        return float(grid[0]), {}
    folds = StratifiedKFold(n_splits=n_folds, shuffle=True, random_state=seed)
    scores = {}
    for C in grid:
        accs = []
        for tr, te in folds.split(X, y):
            svm = LinearOvaSVM(C=C, random_state=seed, **svm_params).fit(X[tr], y[tr])
            accs.append(average_per_class_accuracy(y[te], svm.predict(X[te])))
        scores[float(C)] = float(np.mean(accs))
    best = max(scores, key=lambda c: (scores[c], -math.log(c)))
    return best, scores
