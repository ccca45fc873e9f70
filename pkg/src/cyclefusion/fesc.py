"""Conventional baseline: moments -> Pearson selection -> LDA -> Mahalanobis.

Features are the mean, standard deviation, skewness and kurtosis of every
sensor's native-rate cycle.  Columns are ranked by the absolute Pearson
correlation with the ordinal class code, the top ``k`` are projected onto the
``min(k, C - 1)`` leading Fisher directions, and a cycle is assigned to the
class centroid nearest in Mahalanobis distance under the pooled within-class
covariance of the projected training data.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (ClassTooSmall, DegenerateTargets, EmptyEvaluation, InvalidK,
                     NonFiniteInput, NumericalFailure, ShapeMismatch, TooShort, UsageError)

MOMENTS = ("mean", "std", "skewness", "kurtosis")
DEFAULT_K_GRID = (4, 8, 16, 32, "all")
SHRINKAGE = 1e-4
MODEL_FORMAT_VERSION = 1


def moment_rows(x):
    """Row-wise ``(mean, std, skewness, kurtosis)`` of a 2-D array, shape ``(n, 4)``.

    Population (divisor ``n``) central moments, non-excess kurtosis.  Rows with
    zero variance get std, skewness and kurtosis of exactly 0.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D array, got shape {x.shape}")
    if x.shape[1] < 2:
        raise TooShort(f"moments need at least 2 samples, got {x.shape[1]}")
    if not np.isfinite(x).all():
        raise NonFiniteInput("series contains NaN or infinity")
    mean = x.mean(axis=1)
    d = x - mean[:, None]
    m2 = np.mean(d * d, axis=1)
    m3 = np.mean(d ** 3, axis=1)
    m4 = np.mean(d ** 4, axis=1)
    flat = (x.max(axis=1) == x.min(axis=1)) | (m2 == 0)
    safe = np.where(flat, 1.0, m2)
    std = np.where(flat, 0.0, np.sqrt(safe))
    skew = np.where(flat, 0.0, m3 / safe ** 1.5)
    kurt = np.where(flat, 0.0, m4 / safe ** 2)
    mean = np.where(flat, x[:, 0], mean)
    return np.column_stack([mean, std, skew, kurt])


def extract_moments(series):
    """``(mean, std, skewness, kurtosis)`` of one series."""
    return tuple(float(v) for v in moment_rows(np.asarray(series, dtype=np.float64)[None, :])[0])


@dataclass(frozen=True)
class FeatureDescriptor:
    sensor: str
    moment: str

    def __str__(self):
        return f"{self.sensor}:{self.moment}"


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray
    descriptors: tuple
    targets: np.ndarray

    def rows(self, indices):
        return FeatureMatrix(self.values[indices], self.descriptors, self.targets[indices])


def build_feature_matrix(dataset, sensors, indices=None):
    """Moments of each sensor's native series; sensor-major, moment-minor columns."""
    if not sensors:
        raise UsageError("empty sensor selection")
    idx = np.arange(dataset.n_cycles) if indices is None else np.asarray(indices)
    if len(idx) == 0:
        raise UsageError("empty data set")
    blocks, descriptors = [], []
    for name in sensors:
        blocks.append(moment_rows(dataset.series[name][idx]))
        descriptors.extend(FeatureDescriptor(name, m) for m in MOMENTS)
    return FeatureMatrix(np.hstack(blocks), tuple(descriptors), dataset.targets[idx].copy())


def pearson_scores(features, targets=None):
    """``|corr(column, class code)|`` per column; constant columns score 0."""
    if isinstance(features, FeatureMatrix):
        X, y = features.values, features.targets
    else:
        X, y = np.asarray(features, dtype=np.float64), np.asarray(targets)
    if X.shape[0] < 3:
        raise TooShort(f"need at least 3 rows, got {X.shape[0]}")
    if len(np.unique(y)) < 2:
        raise DegenerateTargets("targets take fewer than two distinct values")
    yc = y - y.mean()
    Xc = X - X.mean(axis=0)
    num = yc @ Xc
    den = np.sqrt((Xc * Xc).sum(axis=0) * (yc @ yc))
    flat = (X.max(axis=0) == X.min(axis=0)) | (den == 0)
    r = np.where(flat, 0.0, num / np.where(flat, 1.0, den))
    return np.minimum(np.abs(r), 1.0)


def select_top_k(scores, k):
    """Indices of the ``k`` largest scores, best first; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if not 1 <= k <= len(scores):
        raise InvalidK(f"k={k} outside [1, {len(scores)}]")
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [int(i) for i in order[:k]]


@dataclass
class FescModel:
    projection: np.ndarray          # k x d
    classes: np.ndarray             # class codes modelled, ascending
    class_means: np.ndarray         # C x d, projected centroids
    pooled_cov_inv: np.ndarray      # d x d
    eigenvalues: np.ndarray
    selected: np.ndarray = None     # indices into the full feature vector
    feature_mean: np.ndarray = None
    feature_std: np.ndarray = None
    sensors: tuple = ()
    k_grid: list = field(default_factory=list)   # (k, validation error) per grid point

    @property
    def k(self):
        return self.projection.shape[0]

    @property
    def d(self):
        return self.projection.shape[1]

    def prepare(self, X):
        """Standardize full feature rows and keep the selected columns."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Z = (X - self.feature_mean) / self.feature_std
        return Z[:, self.selected]


def scatter_matrices(X, y):
    """Within- and between-class scatter of rows ``X`` under labels ``y``."""
    mu = X.mean(axis=0)
    k = X.shape[1]
    S_w = np.zeros((k, k))
    S_b = np.zeros((k, k))
    for c in np.unique(y):
        Xc = X[y == c]
        mc = Xc.mean(axis=0)
        D = Xc - mc
        S_w += D.T @ D
        diff = (mc - mu)[:, None]
        S_b += len(Xc) * (diff @ diff.T)
    return S_w, S_b


def shrink_within(S_w, gamma=SHRINKAGE):
    k = S_w.shape[0]
    return S_w + gamma * (np.trace(S_w) / k) * np.eye(k)


def projected_precision(Z, y, gamma=SHRINKAGE):
    """Inverse pooled within-class covariance of projected rows ``Z``.

    Diagonal loading is proportional to the diagonal itself, so rescaling a
    projection column rescales the precision consistently and leaves the
    decisions unchanged.
    """
    classes = np.unique(y)
    d = Z.shape[1]
    cov = np.zeros((d, d))
    for c in classes:
        D = Z[y == c] - Z[y == c].mean(axis=0)
        cov += D.T @ D
    cov /= max(len(Z) - len(classes), 1)
    diag = np.diag(cov).copy()
    floor = 1e-12 * max(diag.max(initial=0.0), 1e-300)
    cov = cov + np.diag(gamma * diag + np.where(diag > 0, 0.0, floor))
    try:
        prec = np.linalg.inv(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailure(f"pooled covariance is singular: {exc}") from None
    prec = 0.5 * (prec + prec.T)
    if not np.isfinite(prec).all():
        raise NumericalFailure("pooled covariance inverse is not finite")
    return prec


def lda_fit(X, y, gamma=SHRINKAGE):
    """Fisher LDA on standardized, already-selected features."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[1] < 1 or len(X) != len(y):
        raise ShapeMismatch(f"bad LDA input shapes {X.shape}, {y.shape}")
    classes, counts = np.unique(y, return_counts=True)
    if (counts < 2).any():
        raise ClassTooSmall(f"class {classes[counts < 2][0]} has fewer than 2 samples")
    if len(classes) < 2:
        raise DegenerateTargets("LDA needs at least two classes")
    k = X.shape[1]
    d = min(k, len(classes) - 1)
    S_w, S_b = scatter_matrices(X, y)
    try:
        evals, evecs = scipy.linalg.eigh(S_b, shrink_within(S_w, gamma))
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalFailure(f"generalized eigensolve failed: {exc}") from None
    order = np.argsort(evals)[::-1][:d]
    W = evecs[:, order]
    Z = X @ W
    means = np.array([Z[y == c].mean(axis=0) for c in classes])
    return FescModel(
        projection=W, classes=classes, class_means=means,
        pooled_cov_inv=projected_precision(Z, y, gamma), eigenvalues=evals[order],
        selected=np.arange(k), feature_mean=np.zeros(k), feature_std=np.ones(k),
    )


def classify_prepared(model, X):
    """Vectorized Mahalanobis rule on prepared (selected, standardized) rows."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.k:
        raise ShapeMismatch(f"expected {model.k} features, got {X.shape[1]}")
    D = (X @ model.projection)[:, None, :] - model.class_means[None, :, :]
    dist = np.einsum("ncd,de,nce->nc", D, model.pooled_cov_inv, D)
    # argmin keeps the first minimum, classes are ascending
    return model.classes[np.argmin(dist, axis=1)]


def mahalanobis_classify(model, x):
    return int(classify_prepared(model, np.asarray(x)[None, :])[0])


def predict(model, features):
    """Class codes for full feature rows (all moments of ``model.sensors``)."""
    values = features.values if isinstance(features, FeatureMatrix) else features
    return classify_prepared(model, model.prepare(values))


def _resolve_k_grid(k_grid, n_features):
    ks = []
    for k in k_grid:
        k = n_features if k == "all" else min(int(k), n_features)
        if k < 1:
            raise InvalidK(f"k={k} must be positive")
        if k not in ks:
            ks.append(k)
    return sorted(ks)


def fesc_train(dataset, sensors, split, k_grid=DEFAULT_K_GRID, gamma=SHRINKAGE, log=None):
    """Fit on ``split.train``; choose ``k`` by validation error (ties to the smaller ``k``).

    Returns ``(model, validation_error)``.
    """
    if not k_grid:
        raise InvalidK("k grid is empty")
    if log is not None:
        log.record("fesc", "train", "fit")
        log.record("fesc", "val", "select")
    train = build_feature_matrix(dataset, sensors, split.train)
    val = build_feature_matrix(dataset, sensors, split.val)
    mean = train.values.mean(axis=0)
    std = train.values.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Ztrain = (train.values - mean) / std
    Zval = (val.values - mean) / std
    ranking = select_top_k(pearson_scores(Ztrain, train.targets), Ztrain.shape[1])
    best, best_err, grid = None, np.inf, []
    for k in _resolve_k_grid(k_grid, Ztrain.shape[1]):
        sel = np.array(ranking[:k])
        model = lda_fit(Ztrain[:, sel], train.targets, gamma)
        err = float(np.mean(classify_prepared(model, Zval[:, sel]) != val.targets)) if len(Zval) else 0.0
        grid.append((k, err))
        if err < best_err:
            best, best_err = model, err
            best.selected = sel
    best.feature_mean, best.feature_std = mean, std
    best.sensors = tuple(sensors)
    best.k_grid = grid
    return best, best_err


def fesc_evaluate(model, dataset, indices):
    """Misclassification rate of ``model`` on the cycles ``indices``."""
    indices = np.asarray(indices)
    if len(indices) == 0:
        raise EmptyEvaluation("no cycles to evaluate")
    fm = build_feature_matrix(dataset, model.sensors, indices)
    return float(np.mean(predict(model, fm) != fm.targets))


def save_model(model, path):
    np.savez(path, format_version=MODEL_FORMAT_VERSION, projection=model.projection,
             classes=model.classes, class_means=model.class_means,
             pooled_cov_inv=model.pooled_cov_inv, eigenvalues=model.eigenvalues,
             selected=model.selected, feature_mean=model.feature_mean,
             feature_std=model.feature_std, sensors=np.array(model.sensors, dtype=str),
             k_grid=np.array(model.k_grid, dtype=float).reshape(-1, 2))


def load_model(path):
    with np.load(path) as z:
        version = int(z["format_version"])
        if version != MODEL_FORMAT_VERSION:
            raise UsageError(f"unsupported model format version {version}")
        return FescModel(
            projection=z["projection"], classes=z["classes"], class_means=z["class_means"],
            pooled_cov_inv=z["pooled_cov_inv"], eigenvalues=z["eigenvalues"],
            selected=z["selected"], feature_mean=z["feature_mean"], feature_std=z["feature_std"],
            sensors=tuple(str(s) for s in z["sensors"]),
            k_grid=[(int(k), float(e)) for k, e in z["k_grid"]],
        )
