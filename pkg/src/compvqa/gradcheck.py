"""Finite-difference check of both stage losses through the full backbone."""

from __future__ import annotations

import numpy as np

from . import head as hd
from . import tensor as T
from .bgn import BGNConfig
from .model import CompositionalModel, HeadConfig

GRADCHECK_TOL = 1e-4


def toy_model(c_dim=8, m=3, n=4, n_attributes=6, glimpses=2, seed=0, d_obj=5, vocab_size=9,
              embed_dim=4, batch=2, lam=0.1, head_mode="an", distance="mse"):
    """Small double-precision model with dropout off plus one fixed batch.

    Weight-norm gains are reset to the He row norms (``g = |v|``) so every
    path carries gradients well above finite-difference roundoff.
    """
    rng = np.random.default_rng(seed)
    base = [[0, 1], [1, 2], [3], [4, 5, 0]]
    novel = [[0, 2], [3, 5], [1, 4]]
    bgn = BGNConfig(vocab_size=vocab_size, c_dim=c_dim, k_dim=c_dim, d_obj=d_obj, embed_dim=embed_dim,
                    glimpses_image=glimpses, glimpses_question=glimpses, dropout=0.0)
    model = CompositionalModel(bgn, HeadConfig(len(base), n_attributes, base, head_mode, lam, distance))
    model.init_params(rng)
    model.add_novel_answers(novel, "he", rng)
    for name, t in model.store.items():
        if name.endswith(".g"):
            t.data = np.linalg.norm(model.store[name[:-2] + ".v"].data, axis=1)
    tokens = rng.integers(2, vocab_size, size=(batch, m))
    tokens[0, -1] = 0  # one padded position exercises the key mask
    objects = rng.normal(size=(batch, n, d_obj))
    labels = np.zeros((batch, len(base)))
    labels[0, 1], labels[1, 3], labels[1, 0] = 1.0, 2 / 3, 1 / 3
    targets = [int(t) for t in rng.integers(0, len(novel), size=batch)]
    return model, (tokens, objects, labels, targets)


def novel_loss_through_backbone(model: CompositionalModel, tokens, objects, targets) -> T.Tensor:
    """``L_novel`` with the joint features kept on the tape."""
    state = model.graph(tokens, objects)
    features = hd.joint_features(state.z, model.store)
    hc = model.head_config
    emb = model.store["head.novel_emb"]
    ce = hd.novel_ce_loss(features, emb, targets)
    an = hd.composition_loss(emb, model.novel_M, model.store["head.attr_emb"], hc.effective_distance)
    return hd.novel_total_loss(ce, an, hc.lam)


def gradcheck_model(c_dim=8, m=3, n=4, n_attributes=6, glimpses=2, seed=0, h=1e-5):
    """Return ``(max relative error, {loss/param: error})`` for ``L_base`` and ``L_novel``."""
    model, (tokens, objects, labels, targets) = toy_model(c_dim, m, n, n_attributes, glimpses, seed)
    store = model.store
    details = {}
    base_names = [k for k in store.names() if k != "head.novel_emb"]
    _, d = T.finite_diff_check(lambda: model.base_losses(tokens, objects, labels).total, store, h,
                               names=base_names, return_details=True)
    details.update({f"base/{k}": v for k, v in d.items()})
    _, d = T.finite_diff_check(lambda: novel_loss_through_backbone(model, tokens, objects, targets),
                               store, h, names=store.names(), return_details=True)
    details.update({f"novel/{k}": v for k, v in d.items()})
    return max(details.values()), details
