"""Backbone + head wired together, with the two stages' loss bundles."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import head as hd
from . import tensor as T
from .bgn import BGNConfig, BilinearGraphNetwork
from .errors import ConfigError
from .tensor import ParamStore, Tensor


@dataclass
class HeadConfig:
    n_base: int
    n_attributes: int
    base_decomposition: list
    head_mode: str = "an"
    lam: float = 0.1
    distance: str = "mse"

    def __post_init__(self):
        if self.head_mode not in hd.HEAD_MODES:
            raise ConfigError(f"head_mode must be one of {hd.HEAD_MODES}, got {self.head_mode!r}")
        if self.distance not in hd.DISTANCES:
            raise ConfigError(f"distance must be one of {hd.DISTANCES}, got {self.distance!r}")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if len(self.base_decomposition) != self.n_base:
            raise ConfigError("base_decomposition needs one attribute list per base answer")

    @property
    def effective_distance(self) -> str:
        # the LCR baseline is defined by cosine distance
        return "cosine" if self.head_mode == "lcr" else self.distance

    @property
    def uses_attribute_loss(self) -> bool:
        return self.head_mode in ("an", "sum")

    @property
    def uses_composition(self) -> bool:
        return self.head_mode != "none"


@dataclass
class LossBundle:
    total: Tensor
    terms: dict = field(default_factory=dict)

    def values(self) -> dict:
        return {k: float(v.item()) for k, v in self.terms.items()}


class CompositionalModel:
    def __init__(self, bgn_config: BGNConfig, head_config: HeadConfig, seed: int | None = None):
        self.bgn_config = bgn_config
        self.head_config = head_config
        self.store = ParamStore()
        self.backbone = BilinearGraphNetwork(bgn_config, self.store)
        self.base_M = hd.decomposition_matrix(head_config.base_decomposition, head_config.n_attributes)
        if seed is not None:
            self.init_params(np.random.default_rng(seed))

    def init_params(self, rng: np.random.Generator) -> None:
        self.backbone.init_params(rng)
        hd.init_head_params(self.store, self.bgn_config.c_dim, self.head_config.n_base,
                            self.head_config.n_attributes, rng)

    @property
    def dropout(self) -> float:
        return self.bgn_config.dropout

    def graph(self, tokens, objects, training=False, rng=None):
        return self.backbone.forward(tokens, objects, training=training, rng=rng)

    def base_losses(self, tokens, objects, base_labels, training=False, rng=None) -> LossBundle:
        hc, p = self.head_config, self.dropout
        state = self.graph(tokens, objects, training, rng)
        scores = hd.base_scores(state.z, self.store, training, rng, p)
        terms = {"loss_b": hd.bce_loss(scores, base_labels)}
        zero = Tensor(0.0)
        if hc.uses_attribute_loss:
            ya = hd.attribute_label_matrix(base_labels, self.base_M)
            if hc.head_mode == "an":
                sa = hd.attribute_scores(state.O, self.store, training, rng, p)
            else:
                sa = hd.attribute_scores_sum(state.z, self.store, training, rng, p)
            terms["loss_a"] = hd.bce_loss(sa, ya)
        else:
            terms["loss_a"] = zero
        if hc.uses_composition and hc.lam > 0:
            terms["loss_ab"] = hd.composition_loss(self.store["head.base_emb"], self.base_M,
                                                   self.store["head.attr_emb"], hc.effective_distance)
        else:
            terms["loss_ab"] = zero
        total = hd.base_total_loss(terms["loss_a"], terms["loss_b"], terms["loss_ab"], hc.lam)
        return LossBundle(total, terms)

    def joint_features(self, tokens, objects) -> np.ndarray:
        """Eval-mode ``relu(W^b z)`` as a plain array."""
        with T.no_grad():
            state = self.graph(tokens, objects)
            return hd.joint_features(state.z, self.store).data

    def predict_base_scores(self, tokens, objects) -> np.ndarray:
        with T.no_grad():
            state = self.graph(tokens, objects)
            return hd.base_scores(state.z, self.store).data

    def predict_attribute_scores(self, tokens, objects) -> np.ndarray:
        with T.no_grad():
            state = self.graph(tokens, objects)
            if self.head_config.head_mode == "sum":
                return hd.attribute_scores_sum(state.z, self.store).data
            return hd.attribute_scores(state.O, self.store).data

    # -- novel stage

    def add_novel_answers(self, novel_decomposition, init="he", rng=None) -> None:
        self.novel_M = hd.decomposition_matrix(novel_decomposition, self.head_config.n_attributes)
        hd.init_novel_embeddings(self.store, novel_decomposition, init, rng)

    def novel_losses(self, features, targets) -> LossBundle:
        hc = self.head_config
        emb = self.store["head.novel_emb"]
        terms = {"loss_n": hd.novel_ce_loss(T.as_tensor(features), emb, targets)}
        if hc.uses_composition and hc.lam > 0:
            terms["loss_an"] = hd.composition_loss(emb, self.novel_M, self.store["head.attr_emb"],
                                                   hc.effective_distance)
        else:
            terms["loss_an"] = Tensor(0.0)
        return LossBundle(hd.novel_total_loss(terms["loss_n"], terms["loss_an"], hc.lam), terms)

    def novel_scores(self, features) -> np.ndarray:
        return np.asarray(features) @ self.store["head.novel_emb"].data.T
