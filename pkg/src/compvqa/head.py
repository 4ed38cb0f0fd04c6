"""Answer/attribute scoring head and the base- and novel-stage losses.

Answer and attribute embeddings are stored one per row: ``head.base_emb`` is
``(|A_b|, 2C)``, ``head.attr_emb`` is ``(|U|, 2C)`` and ``head.novel_emb`` is
``(|A_n|, 2C)``. All losses sum over classes within an example and average
over the batch.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .bgn import add_linear, he_normal, linear
from .errors import ShapeError, UsageError
from .tensor import ParamStore, Tensor

HEAD_MODES = ("an", "sum", "lcr", "none")
DISTANCES = ("mse", "cosine")
INITS = ("he", "attribute")


def decomposition_matrix(decomposition: Sequence[Sequence[int]], n_attributes: int) -> np.ndarray:
    """Binary ``(n_answers, n_attributes)`` matrix with a 1 for every attribute of an answer."""
    M = np.zeros((len(decomposition), n_attributes))
    for i, attrs in enumerate(decomposition):
        for a in attrs:
            if not 0 <= a < n_attributes:
                raise UsageError(f"attribute index {a} of answer {i} outside [0, {n_attributes})")
            M[i, a] = 1.0
    return M


def init_head_params(store: ParamStore, c_dim: int, n_base: int, n_attributes: int, rng) -> None:
    hidden = 2 * c_dim
    add_linear(store, "head.wb", hidden, c_dim, rng)
    add_linear(store, "head.wa", hidden, c_dim, rng)
    store.add("head.base_emb", he_normal(rng, (n_base, hidden), hidden))
    store.add("head.attr_emb", he_normal(rng, (n_attributes, hidden), hidden))


def init_novel_embeddings(store: ParamStore, novel_decomposition, init="he", rng=None) -> Tensor:
    """Create ``head.novel_emb``: He draws, or each row set to its attribute sum."""
    attr = store["head.attr_emb"].data
    n_novel, hidden = len(novel_decomposition), attr.shape[1]
    if init == "he":
        if rng is None:
            raise UsageError("He initialisation needs a generator")
        w = he_normal(rng, (n_novel, hidden), hidden)
    elif init == "attribute":
        w = decomposition_matrix(novel_decomposition, attr.shape[0]) @ attr
    else:
        raise UsageError(f"unknown init {init!r}; expected one of {INITS}")
    if "head.novel_emb" in store:
        store["head.novel_emb"].data = w
        return store["head.novel_emb"]
    return store.add("head.novel_emb", w)


# ------------------------------------------------------------------- scores


def joint_features(z, store: ParamStore, training=False, rng=None, p=0.0) -> Tensor:
    """relu(W^b z), the representation every answer embedding is scored against."""
    return T.relu(linear(z, store, "head.wb", training, rng, p))


def base_scores(z, store: ParamStore, training=False, rng=None, p=0.0) -> Tensor:
    return T.matmul(joint_features(z, store, training, rng, p), T.transpose(store["head.base_emb"]))


def attribute_scores(O, store: ParamStore, training=False, rng=None, p=0.0) -> Tensor:
    """Per-node attribute network: sum over nodes of ``W^a'^T relu(W^a o_i)``.

    The nonlinearity is applied to each node before the node sum, so scores are
    additive over disjoint node sets.
    """
    nodes = T.relu(linear(O, store, "head.wa", training, rng, p))
    return T.matmul(T.sum(nodes, axis=-2), T.transpose(store["head.attr_emb"]))


def attribute_scores_sum(z, store: ParamStore, training=False, rng=None, p=0.0) -> Tensor:
    """SUM baseline: attribute scores from the summed embedding ``z``."""
    nodes = T.relu(linear(z, store, "head.wa", training, rng, p))
    return T.matmul(nodes, T.transpose(store["head.attr_emb"]))


# ------------------------------------------------------------------- labels


def attribute_labels(answer_labels: Mapping[str, float], decomposition: Mapping[str, Sequence[int]],
                     n_attributes: int) -> np.ndarray:
    """``y^a_u = min(1, sum of labels of answers containing u)``."""
    ya = np.zeros(n_attributes)
    for answer, y in answer_labels.items():
        if answer not in decomposition:
            raise UsageError(f"no attribute decomposition for answer {answer!r}")
        for u in set(decomposition[answer]):
            ya[u] += y
    return np.minimum(ya, 1.0)


def attribute_label_matrix(Y: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Batched :func:`attribute_labels`: ``min(1, Y @ M)``."""
    return np.minimum(np.asarray(Y, dtype=float) @ M, 1.0)


# ------------------------------------------------------------------- losses


def bce_loss(scores, labels) -> Tensor:
    """Binary cross-entropy on logits, in log space.

    ``softplus(s) - y*s`` equals ``-(y log phi(s) + (1-y) log(1-phi(s)))``.
    """
    scores = T.as_tensor(scores)
    y = np.asarray(labels, dtype=float)
    if y.shape != scores.shape:
        raise ShapeError(f"labels {y.shape} do not match scores {scores.shape}")
    if np.any((y < 0) | (y > 1)) or not np.all(np.isfinite(y)):
        raise UsageError("BCE labels must lie in [0, 1]")
    per = T.softplus(scores) - scores * y
    if scores.ndim <= 1:
        return T.sum(per)
    return T.mean(T.sum(per, axis=-1))


base_bce_loss = bce_loss
attribute_bce_loss = bce_loss


def _distance_rows(w: Tensor, target: Tensor, distance: str) -> Tensor:
    if distance == "mse":
        return T.sum(T.square(w - target), axis=-1)
    if distance == "cosine":
        dot = T.sum(w * target, axis=-1)
        nw = T.sqrt(T.sum(T.square(w), axis=-1))
        nt = T.sqrt(T.sum(T.square(target), axis=-1))
        return 1.0 - dot / (nw * nt)
    raise UsageError(f"unknown distance {distance!r}; expected one of {DISTANCES}")


def composition_distance(w, attribute_indices: Sequence[int], attr_emb, distance="mse") -> Tensor:
    """Distance between one answer embedding and the sum of its attribute embeddings.

    ``mse`` is the squared Euclidean distance; ``cosine`` is one minus cosine similarity.
    """
    if len(attribute_indices) == 0:
        raise UsageError("answer has no attributes to compose")
    attr_emb = T.as_tensor(attr_emb)
    target = T.sum(T.take_rows(attr_emb, np.asarray(attribute_indices)), axis=0)
    return _distance_rows(T.as_tensor(w), target, distance)


def composition_loss(emb, M: np.ndarray, attr_emb, distance="mse") -> Tensor:
    """Sum over answers of :func:`composition_distance` (``L_ab`` / ``L_an``).

    Answers with no attributes (pure-stopword base answers) are skipped.
    """
    emb = T.as_tensor(emb)
    rows = np.flatnonzero(M.sum(axis=1) > 0)
    if len(rows) < M.shape[0]:
        emb, M = T.take_rows(emb, rows), M[rows]
    target = T.matmul(Tensor(M), T.as_tensor(attr_emb))
    return T.sum(_distance_rows(emb, target, distance))


def base_total_loss(loss_a, loss_b, loss_ab, lam: float) -> Tensor:
    if lam < 0:
        raise UsageError(f"lambda must be >= 0, got {lam}")
    return T.as_tensor(loss_a) + loss_b + T.as_tensor(loss_ab) * lam


def novel_ce_loss(features, novel_emb, target) -> Tensor:
    """Softmax cross-entropy over novel answers for one sampled target per example."""
    features = T.as_tensor(features)
    logits = T.matmul(features, T.transpose(T.as_tensor(novel_emb)))
    if logits.ndim == 1:
        logits = T.reshape(logits, (1, -1))
    target = np.atleast_1d(np.asarray(target, dtype=int))
    n = logits.shape[-1]
    if np.any((target < 0) | (target >= n)):
        raise UsageError(f"novel answer index outside [0, {n})")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(target)), target] = 1.0
    return -T.mean(T.sum(T.log_softmax(logits, axis=-1) * onehot, axis=-1))


def novel_total_loss(loss_n, loss_an, lam: float) -> Tensor:
    if lam < 0:
        raise UsageError(f"lambda must be >= 0, got {lam}")
    return T.as_tensor(loss_n) + T.as_tensor(loss_an) * lam
