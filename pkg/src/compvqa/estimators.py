"""Estimator wrappers around the two training stages."""

from __future__ import annotations

import copy

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import checkpoint
from .bgn import BGNConfig
from .errors import UsageError
from .model import CompositionalModel, HeadConfig
from .tensor import _stable_sigmoid
from .training import MetricsReport, TrainConfig, evaluate, rng_stream, train_base, train_novel
from .validation import check_decomposition, check_soft_labels, unpack_inputs


class CompositionalVQA(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Base stage: BGN backbone, base-answer classifier and attribute network.

    ``fit(X, Y)`` takes packed inputs (see :mod:`compvqa.validation`) and soft
    labels over the base answers. ``transform`` returns the joint features
    ``relu(W^b z)`` that the novel stage builds on.
    """

    def __init__(self, base_decomposition=None, n_attributes=None, vocab_size=2, m_max=15,
                 n_objects=100, d_obj=2048, c_dim=1024, embed_dim=300, glimpses_image=4,
                 glimpses_question=4, dropout=0.2, head_mode="an", lam=0.1, distance="mse",
                 batch_size=128, epochs=15, seed=0):
        self.base_decomposition = base_decomposition
        self.n_attributes = n_attributes
        self.vocab_size = vocab_size
        self.m_max = m_max
        self.n_objects = n_objects
        self.d_obj = d_obj
        self.c_dim = c_dim
        self.embed_dim = embed_dim
        self.glimpses_image = glimpses_image
        self.glimpses_question = glimpses_question
        self.dropout = dropout
        self.head_mode = head_mode
        self.lam = lam
        self.distance = distance
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed

    def _build_model(self) -> CompositionalModel:
        if self.n_attributes is None:
            raise UsageError("n_attributes is required")
        decomposition = check_decomposition(self.base_decomposition, self.n_attributes)
        bgn = BGNConfig(vocab_size=self.vocab_size, c_dim=self.c_dim, k_dim=self.c_dim, d_obj=self.d_obj,
                        embed_dim=self.embed_dim, glimpses_image=self.glimpses_image,
                        glimpses_question=self.glimpses_question, dropout=self.dropout)
        head = HeadConfig(n_base=len(decomposition), n_attributes=self.n_attributes,
                          base_decomposition=decomposition, head_mode=self.head_mode,
                          lam=self.lam, distance=self.distance)
        model = CompositionalModel(bgn, head)
        model.init_params(rng_stream(self.seed, "init"))
        return model

    def _unpack(self, X):
        return unpack_inputs(X, self.m_max, self.n_objects, self.d_obj)

    def fit(self, X, Y, on_epoch=None):
        tokens, objects = self._unpack(X)
        n_base = len(self.base_decomposition or [])
        Y = check_soft_labels(Y, n_base)
        if len(Y) != len(tokens):
            raise UsageError(f"X has {len(tokens)} rows but Y has {len(Y)}")
        self.model_ = self._build_model()
        cfg = TrainConfig(stage="base", lam=self.lam, batch_size=self.batch_size, epochs=self.epochs,
                          seed=self.seed, head_mode=self.head_mode, distance=self.distance)
        self.loss_trace_ = train_base(self.model_, tokens, objects, Y, cfg, on_epoch=on_epoch)
        self.classes_ = np.arange(n_base)
        self.n_features_in_ = X.shape[1] if hasattr(X, "shape") else len(X[0])
        return self

    def load_checkpoint(self, path):
        """Initialise an unfitted estimator from a saved parameter file."""
        self.model_ = self._build_model()
        self.model_.store.load_state_dict(checkpoint.load(path))
        self.classes_ = np.arange(len(self.base_decomposition))
        self.loss_trace_ = []
        return self

    def save_checkpoint(self, path):
        check_is_fitted(self, "model_")
        checkpoint.save(path, self.model_.store.state_dict())

    def transform(self, X):
        check_is_fitted(self, "model_")
        return self.model_.joint_features(*self._unpack(X))

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_base_scores(*self._unpack(X))

    def predict_proba(self, X):
        return _stable_sigmoid(self.decision_function(X))

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def attribute_scores(self, X):
        check_is_fitted(self, "model_")
        return self.model_.predict_attribute_scores(*self._unpack(X))

    def evaluate(self, X, Y, mode="soft") -> MetricsReport:
        Y = check_soft_labels(Y, len(self.classes_))
        return evaluate(self.decision_function(X), Y, mode)

    def score(self, X, y, sample_weight=None):
        """Top-1 soft accuracy."""
        return self.evaluate(X, y).top1


class NovelAnswerClassifier(ClassifierMixin, BaseEstimator):
    """Novel stage: learns one embedding per novel answer on a frozen base model.

    The fitted base estimator is deep-copied, so one base model can serve many
    novel runs. ``lam=None`` reuses the base model's lambda.
    """

    def __init__(self, base_model=None, novel_decomposition=None, shots=1, lam=None, init="he",
                 epochs=None, batch_size=1, seed=0):
        self.base_model = base_model
        self.novel_decomposition = novel_decomposition
        self.shots = shots
        self.lam = lam
        self.init = init
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _unpack(self, X):
        b = self.base_model
        return unpack_inputs(X, b.m_max, b.n_objects, b.d_obj)

    def fit(self, X, y):
        if self.base_model is None or not hasattr(self.base_model, "model_"):
            raise UsageError("novel training needs a fitted base model (checkpoint)")
        n_attr = self.base_model.n_attributes
        decomposition = check_decomposition(self.novel_decomposition, n_attr)
        if any(len(d) == 0 for d in decomposition):
            raise UsageError("every novel answer needs at least one attribute")
        Y = check_soft_labels(y, len(decomposition))
        model = copy.deepcopy(self.base_model.model_)
        if self.lam is not None:
            model.head_config.lam = float(self.lam)
        lam = model.head_config.lam
        model.add_novel_answers(decomposition, self.init, rng_stream(self.seed, "novel_init"))
        feats = model.joint_features(*self._unpack(X))
        targets = [list(np.flatnonzero(row > 0)) for row in Y]
        cfg = TrainConfig(stage="novel", lam=lam, shots=self.shots, batch_size=self.batch_size,
                          epochs=self.epochs, seed=self.seed, head_mode=model.head_config.head_mode,
                          distance=model.head_config.distance, init=self.init)
        self.model_ = model
        self.loss_trace_ = train_novel(model, feats, targets, cfg)
        self.classes_ = np.arange(len(decomposition))
        self.n_features_in_ = np.shape(X)[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.novel_scores(self.model_.joint_features(*self._unpack(X)))

    def predict_proba(self, X):
        s = self.decision_function(X)
        e = np.exp(s - s.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def evaluate(self, X, Y, mode="soft") -> MetricsReport:
        Y = check_soft_labels(Y, len(self.classes_))
        return evaluate(self.decision_function(X), Y, mode)

    def score(self, X, y, sample_weight=None):
        return self.evaluate(X, y).top1
