"""Input validation helpers in the scikit-learn idiom."""
import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError, InvalidInputError


def check_features(X, n_features=None):
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    if n_features is not None and X.shape[1] != n_features:
        raise DimensionError(f"X has {X.shape[1]} features, expected {n_features}")
    return X


def check_targets(y, n_samples, n_classes=None):
    """Return targets as an ``(n, A)`` row-stochastic matrix.

    ``y`` may be integer labels or a matrix of per-sample answer
    distributions.  Rows of a matrix are renormalised to sum to one.
    """
    y = np.asarray(y)
    if y.ndim == 1:
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.mod(y, 1) == 0):
                raise InvalidInputError("1-D targets must be integer class labels")
            y = y.astype(np.int64)
        if y.size and y.min() < 0:
            raise InvalidInputError("class labels must be non-negative")
        A = int(y.max()) + 1 if n_classes is None else int(n_classes)
        if y.size and y.max() >= A:
            raise DimensionError(f"label {y.max()} out of range for {A} classes")
        Y = np.eye(A)[y]
    elif y.ndim == 2:
        Y = check_array(y, dtype=np.float64)
        if n_classes is not None and Y.shape[1] != n_classes:
            raise DimensionError(f"targets have {Y.shape[1]} columns, expected {n_classes}")
        if np.any(Y < 0):
            raise InvalidInputError("target distributions must be non-negative")
        s = Y.sum(axis=1, keepdims=True)
        if np.any(s <= 0):
            raise InvalidInputError("every sample needs at least one ground-truth answer")
        Y = Y / s
    else:
        raise InvalidInputError("targets must be 1-D labels or a 2-D distribution matrix")
    if Y.shape[0] != n_samples:
        raise DimensionError(f"{Y.shape[0]} targets for {n_samples} samples")
    return Y


def check_index(idx, n_samples, upper, name="question_type"):
    idx = np.asarray(idx)
    if idx.shape != (n_samples,):
        raise DimensionError(f"{name} must have shape ({n_samples},), got {idx.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise InvalidInputError(f"{name} must be integer")
    if n_samples and (idx.min() < 0 or idx.max() >= upper):
        raise InvalidInputError(f"{name} values must lie in [0, {upper})")
    return idx.astype(np.int64)
