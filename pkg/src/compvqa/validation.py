"""Input validation for the estimator API.

Estimators take a flat 2-D ``X`` so they work with sklearn utilities: each
row is ``m_max`` token indices followed by the flattened ``n_objects x d_obj``
object features.
"""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .errors import ShapeError, UsageError


def pack_inputs(tokens, objects) -> np.ndarray:
    tokens = np.asarray(tokens)
    objects = np.asarray(objects, dtype=np.float64)
    if tokens.ndim != 2 or objects.ndim != 3 or tokens.shape[0] != objects.shape[0]:
        raise ShapeError(f"expected tokens (N, m) and objects (N, n, D), got {tokens.shape} and {objects.shape}")
    return np.hstack([tokens.astype(np.float64), objects.reshape(objects.shape[0], -1)])


def unpack_inputs(X, m_max: int, n_objects: int, d_obj: int):
    """Validate a packed ``X`` and split it into ``(tokens, objects)``."""
    X = check_array(X, dtype=np.float64)
    width = m_max + n_objects * d_obj
    if X.shape[1] != width:
        raise ShapeError(f"X has {X.shape[1]} columns; m_max + n_objects*d_obj = {width}")
    tok = X[:, :m_max]
    if np.any(tok < 0) or np.any(tok != np.round(tok)):
        raise UsageError("token columns must hold non-negative integers")
    return tok.astype(np.int64), X[:, m_max:].reshape(-1, n_objects, d_obj)


def check_soft_labels(Y, n_classes: int | None = None) -> np.ndarray:
    """Accept a soft-label matrix or 1-D class indices; return an ``(N, n_classes)`` matrix."""
    Y = np.asarray(Y)
    if Y.ndim == 1:
        if n_classes is None:
            raise UsageError("class indices need an explicit class count")
        idx = Y.astype(np.int64)
        if np.any(idx != Y) or np.any((idx < 0) | (idx >= n_classes)):
            raise UsageError(f"class indices must be integers in [0, {n_classes})")
        out = np.zeros((len(idx), n_classes))
        out[np.arange(len(idx)), idx] = 1.0
        return out
    Y = check_array(Y, dtype=np.float64)
    if n_classes is not None and Y.shape[1] != n_classes:
        raise ShapeError(f"label matrix has {Y.shape[1]} columns, expected {n_classes}")
    if np.any((Y < 0) | (Y > 1)):
        raise UsageError("soft labels must lie in [0, 1]")
    return Y


def check_decomposition(decomposition, n_attributes: int) -> list[list[int]]:
    if decomposition is None:
        raise UsageError("an attribute decomposition is required")
    out = []
    for i, attrs in enumerate(decomposition):
        attrs = [int(a) for a in attrs]
        if any(not 0 <= a < n_attributes for a in attrs):
            raise UsageError(f"answer {i}: attribute index outside [0, {n_attributes})")
        out.append(attrs)
    return out
