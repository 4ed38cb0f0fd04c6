"""Adamax, learning-rate schedules, the two training stages and metrics."""

from __future__ import annotations

import csv
import logging
import math
import warnings
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import NumericalError, ShapeError, UsageError
from .tensor import ParamStore

log = logging.getLogger(__name__)

NOVEL_PLATEAU = {1: 55, 5: 35, 10: 20}
NOVEL_TAIL = 5

METRIC_COLUMNS = ("epoch", "split", "loss_a", "loss_b", "loss_ab", "loss_n", "loss_an", "top1", "top5")


def rng_stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named sub-stream (init, dropout, sampling, ...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


# ------------------------------------------------------------------ Adamax


class Adamax:
    """Adam's infinity-norm variant. Frozen entries of the store are never touched."""

    def __init__(self, store: ParamStore, beta1=0.9, beta2=0.999, eps=1e-8):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.u: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            if name in self.store.frozen_names:
                continue
            p = self.store[name]
            if g.shape != p.shape:
                raise ShapeError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.u[name] = np.zeros_like(p.data)
            u = self.u[name]
            m *= b1
            m += (1.0 - b1) * g
            np.maximum(b2 * u, np.abs(g), out=u)
            p.data = p.data - (lr / (1.0 - b1 ** self.t)) * m / (u + self.eps)


def adamax_step(store: ParamStore, grads: dict, state: Adamax, lr: float) -> Adamax:
    state.step(grads, lr)
    return state


# --------------------------------------------------------------- schedules


def base_lr_schedule(epoch: int) -> float:
    """Warm-up by 1e-3 per epoch to 4e-3, hold through epoch 11, then quarter every two epochs."""
    if epoch < 1:
        raise UsageError(f"epochs are 1-based, got {epoch}")
    if epoch <= 4:
        return 0.001 * epoch
    if epoch <= 11:
        return 0.004
    if epoch <= 13:
        return 0.001
    return 0.00025


def novel_plateau(shots: int) -> int:
    if shots in NOVEL_PLATEAU:
        return NOVEL_PLATEAU[shots]
    nearest = min(NOVEL_PLATEAU, key=lambda k: (abs(k - shots), k))
    warnings.warn(f"no novel schedule for {shots}-shot; using the {nearest}-shot plateau", stacklevel=2)
    return NOVEL_PLATEAU[nearest]


def novel_epochs(shots: int) -> int:
    return novel_plateau(shots) + NOVEL_TAIL


def novel_lr_schedule(epoch: int, shots: int) -> float:
    """4e-3 for the shot-dependent plateau, then 1e-3 for five epochs; 0 after that."""
    if epoch < 1:
        raise UsageError(f"epochs are 1-based, got {epoch}")
    plateau = novel_plateau(shots)
    if epoch <= plateau:
        return 0.004
    if epoch <= plateau + NOVEL_TAIL:
        return 0.001
    return 0.0


# ----------------------------------------------------------------- metrics


@dataclass
class MetricsReport:
    top1: float
    top5: float
    n: int
    loss_trace: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(scores: np.ndarray, truth: np.ndarray, mode="soft") -> MetricsReport:
    """Top-1 and top-5 accuracy, averaged over questions.

    ``truth[q, a]`` is the soft score of answer ``a`` for question ``q``
    (``min(count/3, 1)``). ``mode="exact"`` counts any listed answer as fully
    correct. Top-5 takes the best score among the five highest-ranked answers.
    """
    scores, truth = np.asarray(scores, float), np.asarray(truth, float)
    if scores.shape != truth.shape:
        raise ShapeError(f"scores {scores.shape} and truth {truth.shape} differ")
    if scores.ndim != 2 or scores.shape[0] == 0:
        raise UsageError("evaluation set is empty")
    if mode == "exact":
        truth = (truth > 0).astype(float)
    elif mode != "soft":
        raise UsageError(f"unknown evaluation mode {mode!r}")
    rows = np.arange(scores.shape[0])
    # stable sort so ties resolve to the lower answer index
    order = np.argsort(-scores, axis=1, kind="stable")
    top1 = truth[rows, order[:, 0]]
    k = min(5, scores.shape[1])
    top5 = np.take_along_axis(truth, order[:, :k], axis=1).max(axis=1)
    return MetricsReport(top1=float(top1.mean()), top5=float(top5.mean()), n=int(scores.shape[0]))


# ------------------------------------------------------------- training loops


@dataclass
class TrainConfig:
    stage: str = "base"
    lam: float = 0.1
    shots: int = 1
    batch_size: int = 128
    epochs: int | None = None
    seed: int = 0
    head_mode: str = "an"
    distance: str = "mse"
    init: str = "he"

    def __post_init__(self):
        if self.lam < 0:
            raise UsageError(f"lambda must be >= 0, got {self.lam}")
        if self.batch_size < 1:
            raise UsageError("batch size must be >= 1")
        if self.stage not in ("base", "novel"):
            raise UsageError(f"stage must be 'base' or 'novel', got {self.stage!r}")


def _check_finite(bundle, epoch, batch):
    if math.isfinite(bundle.total.item()):
        return
    bad = [k for k, v in bundle.terms.items() if not math.isfinite(v.item())] or ["total"]
    raise NumericalError(f"non-finite loss at epoch {epoch}, batch {batch}: {', '.join(bad)}")


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_base(model, tokens, objects, base_labels, config: TrainConfig,
               on_epoch: Callable[[int, dict], None] | None = None) -> list[dict]:
    """Minimise ``L_a + L_b + lambda * L_ab`` with Adamax on the base split.

    Returns one dict of mean per-batch losses per epoch. ``on_epoch`` is called
    after each epoch with ``(epoch, losses)``.
    """
    tokens, objects, base_labels = np.asarray(tokens), np.asarray(objects), np.asarray(base_labels)
    n = tokens.shape[0]
    if n == 0:
        raise UsageError("base training set is empty")
    epochs = config.epochs if config.epochs is not None else 15
    opt = Adamax(model.store)
    shuffle_rng = rng_stream(config.seed, "sampling")
    dropout_rng = rng_stream(config.seed, "dropout")
    trace = []
    for epoch in range(1, epochs + 1):
        lr = base_lr_schedule(epoch)
        sums: dict[str, float] = {}
        n_batches = 0
        for b, idx in enumerate(_batches(n, config.batch_size, shuffle_rng)):
            model.store.zero_grad()
            bundle = model.base_losses(tokens[idx], objects[idx], base_labels[idx],
                                       training=True, rng=dropout_rng)
            _check_finite(bundle, epoch, b)
            grads = T.backward(bundle.total, model.store)
            opt.step(grads, lr)
            for k, v in bundle.values().items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        row = {k: v / n_batches for k, v in sums.items()}
        row["lr"] = lr
        trace.append(row)
        log.info("base epoch %d lr=%.5f %s", epoch, lr, row)
        if on_epoch is not None:
            on_epoch(epoch, row)
    model.store.zero_grad()
    return trace


def train_novel(model, features, targets: Sequence[Sequence[int]], config: TrainConfig,
                on_epoch: Callable[[int, dict], None] | None = None) -> list[dict]:
    """Learn only ``head.novel_emb`` on frozen joint features.

    ``targets[i]`` lists the correct novel-answer indices of example ``i``; one is
    drawn uniformly per visit. Everything else in the store is frozen.
    """
    if "head.novel_emb" not in model.store:
        raise UsageError("call add_novel_answers before novel training")
    features = np.asarray(features, dtype=float)
    if features.shape[0] == 0:
        raise UsageError("novel training set is empty")
    if len(targets) != features.shape[0] or any(len(t) == 0 for t in targets):
        raise UsageError("every novel example needs at least one correct answer")
    model.store.freeze_all_except(["head.novel_emb"])
    epochs = config.epochs if config.epochs is not None else novel_epochs(config.shots)
    opt = Adamax(model.store)
    rng = rng_stream(config.seed, "sampling")
    trace = []
    for epoch in range(1, epochs + 1):
        lr = novel_lr_schedule(epoch, config.shots)
        sums: dict[str, float] = {}
        n_batches = 0
        for b, idx in enumerate(_batches(features.shape[0], config.batch_size, rng)):
            picked = [targets[i][rng.integers(len(targets[i]))] for i in idx]
            model.store.zero_grad()
            bundle = model.novel_losses(features[idx], picked)
            _check_finite(bundle, epoch, b)
            grads = T.backward(bundle.total, model.store)
            opt.step(grads, lr)
            for k, v in bundle.values().items():
                sums[k] = sums.get(k, 0.0) + v
            n_batches += 1
        row = {k: v / n_batches for k, v in sums.items()}
        row["lr"] = lr
        trace.append(row)
        if on_epoch is not None:
            on_epoch(epoch, row)
    model.store.zero_grad()
    return trace


def write_metrics_csv(path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({c: _fmt(row.get(c, "")) for c in METRIC_COLUMNS})


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v
