"""One-layer Bilinear Graph Network backbone.

Arrays are batch-major and node-major: a question batch is ``(B, m, C)``
(the transpose of the column-per-word layout), object features are
``(B, n, D)``. Every learned linear map is weight-normalised and followed by
dropout. No biases are used, so padded word positions stay exactly zero
through the whole graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError, UsageError
from .tensor import ParamStore, Tensor

PAD, UNK = 0, 1


@dataclass
class BGNConfig:
    vocab_size: int
    c_dim: int = 1024
    k_dim: int = 1024
    d_obj: int = 2048
    embed_dim: int = 300
    glimpses_image: int = 4
    glimpses_question: int = 4
    dropout: float = 0.2

    def __post_init__(self):
        if self.k_dim != self.c_dim:
            raise ConfigError(f"joint size K={self.k_dim} must equal C={self.c_dim} for the residual")
        if self.glimpses_image < 1 or self.glimpses_question < 1:
            raise ConfigError("glimpse counts must be >= 1")
        if self.vocab_size < 2:
            raise ConfigError("vocabulary needs at least the PAD and UNK slots")


@dataclass
class GraphState:
    Q: Tensor
    H: Tensor
    O: Tensor
    z: Tensor
    image_attention: list = field(default_factory=list)
    question_attention: list = field(default_factory=list)


def he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


# Initial gain relative to the He row norm. Bilinear products compound scale
# across glimpses, so the effective rows start at variance 1/(3 fan_in).
WN_GAIN = 1.0 / np.sqrt(6.0)


def add_linear(store: ParamStore, name: str, n_out: int, n_in: int, rng) -> None:
    """Register a weight-normalised map ``n_in -> n_out`` as ``name.v``/``name.g``."""
    v = he_normal(rng, (n_out, n_in), n_in)
    store.add(f"{name}.v", v)
    store.add(f"{name}.g", WN_GAIN * np.linalg.norm(v, axis=1))


def linear(x: Tensor, store: ParamStore, name: str, training=False, rng=None, p=0.0) -> Tensor:
    w = T.weight_norm(store[f"{name}.v"], store[f"{name}.g"])
    return T.dropout(T.matmul(x, T.transpose(w)), p, training, rng)


class BilinearGraphNetwork:
    """Question encoder, image-graph, question-graph and node summary."""

    def __init__(self, config: BGNConfig, store: ParamStore | None = None, rng=None):
        self.config = config
        self.store = store if store is not None else ParamStore()
        if rng is not None:
            self.init_params(rng)

    def init_params(self, rng: np.random.Generator) -> None:
        cfg, s = self.config, self.store
        C, K, D = cfg.c_dim, cfg.k_dim, cfg.d_obj
        emb = rng.normal(0.0, 1.0, size=(cfg.vocab_size, cfg.embed_dim))
        emb[PAD] = 0.0
        s.add("enc.embed", emb)
        add_linear(s, "enc.w_in", C, cfg.embed_dim, rng)
        add_linear(s, "enc.w_rec", C, C, rng)

        add_linear(s, "img.att_q", K, C, rng)
        add_linear(s, "img.att_v", K, D, rng)
        for j in range(cfg.glimpses_image):
            s.add(f"img.p{j}", he_normal(rng, (K,), K))
            add_linear(s, f"img.val_q{j}", K, C, rng)
            add_linear(s, f"img.val_v{j}", K, D, rng)
            add_linear(s, f"img.out{j}", C, K, rng)

        add_linear(s, "qg.att_a", K, C, rng)
        add_linear(s, "qg.att_b", K, C, rng)
        for j in range(cfg.glimpses_question):
            s.add(f"qg.p{j}", he_normal(rng, (K,), K))
            add_linear(s, f"qg.val_o{j}", K, C, rng)
            add_linear(s, f"qg.val_h{j}", K, C, rng)
            add_linear(s, f"qg.out{j}", C, K, rng)

    def param_names(self) -> list[str]:
        return [n for n in self.store.names() if n.split(".")[0] in ("enc", "img", "qg")]

    def _lin(self, x, name, training, rng):
        return linear(x, self.store, name, training, rng, self.config.dropout)

    # -- question encoder

    def encode_question(self, tokens, pad_mask=None, training=False, rng=None) -> Tensor:
        """Single-layer tanh recurrence over learned embeddings -> ``(B, m, C)``.

        Pad positions (``pad_mask`` False, default ``tokens == PAD``) output
        zeros and leave the recurrent state untouched.
        """
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.config.vocab_size):
            raise UsageError(f"token index outside vocabulary [0, {self.config.vocab_size})")
        if pad_mask is None:
            pad_mask = tokens != PAD
        keep = np.asarray(pad_mask, dtype=T.DTYPE)
        B, m = tokens.shape
        x = T.take_rows(self.store["enc.embed"], tokens)
        x = self._lin(x, "enc.w_in", training, rng)
        w_rec = T.weight_norm(self.store["enc.w_rec.v"], self.store["enc.w_rec.g"])
        h = Tensor(np.zeros((B, self.config.c_dim)))
        outs = []
        for t in range(m):
            k = keep[:, t:t + 1]
            cand = T.tanh(x[:, t, :] + T.matmul(h, T.transpose(w_rec)))
            h = cand * k + h * (1.0 - k)
            outs.append(h * k)
        return T.stack(outs, axis=1)

    # -- image graph

    def image_attention_inputs(self, Q, V, training=False, rng=None):
        """Glimpse-shared projections ``relu(Q^T U'^e)`` and ``relu(V^T V'^e)``."""
        self._check_qv(Q, V)
        return (T.relu(self._lin(Q, "img.att_q", training, rng)),
                T.relu(self._lin(V, "img.att_v", training, rng)))

    def image_graph_attention(self, Q, V, j, training=False, rng=None, shared=None) -> Tensor:
        """Word-to-object attention for glimpse ``j``: ``(B, m, n)``, rows sum to 1."""
        a, b = shared if shared is not None else self.image_attention_inputs(Q, V, training, rng)
        logits = T.matmul(a * self.store[f"img.p{j}"], T.transpose(b))
        return T.softmax(logits, axis=-1)

    def image_graph_layer(self, H_prev, V, G, j, training=False, rng=None) -> Tensor:
        left = T.relu(self._lin(H_prev, f"img.val_q{j}", training, rng))
        right = T.matmul(G, T.relu(self._lin(V, f"img.val_v{j}", training, rng)))
        return self._lin(left * right, f"img.out{j}", training, rng) + H_prev

    # -- question graph

    def question_attention_inputs(self, H, training=False, rng=None):
        return (T.relu(self._lin(H, "qg.att_a", training, rng)),
                T.relu(self._lin(H, "qg.att_b", training, rng)))

    def question_graph_attention(self, H, j, key_mask=None, training=False, rng=None,
                                 shared=None) -> Tensor:
        """Word-to-word attention for glimpse ``j``: ``(B, m, m)`` over key words."""
        a, b = shared if shared is not None else self.question_attention_inputs(H, training, rng)
        logits = T.matmul(a * self.store[f"qg.p{j}"], T.transpose(b))
        mask = None if key_mask is None else np.asarray(key_mask, bool)[:, None, :]
        return T.softmax(logits, axis=-1, mask=mask)

    def question_graph_layer(self, O_prev, H, G, j, training=False, rng=None) -> Tensor:
        left = T.relu(self._lin(O_prev, f"qg.val_o{j}", training, rng))
        right = T.matmul(G, T.relu(self._lin(H, f"qg.val_h{j}", training, rng)))
        return self._lin(left * right, f"qg.out{j}", training, rng) + O_prev

    @staticmethod
    def summarize(O) -> Tensor:
        """Sum (not mean) over the word axis: ``(B, m, C) -> (B, C)``."""
        return T.sum(O, axis=-2)

    def _check_qv(self, Q, V):
        if Q.shape[-1] != self.config.c_dim or V.shape[-1] != self.config.d_obj:
            raise ShapeError(f"expected Q (.., m, {self.config.c_dim}) and V (.., n, "
                             f"{self.config.d_obj}), got {Q.shape} and {V.shape}")

    def forward(self, tokens, objects, pad_mask=None, training=False, rng=None) -> GraphState:
        tokens = np.asarray(tokens)
        if tokens.ndim == 1:
            tokens = tokens[None, :]
        if pad_mask is None:
            pad_mask = tokens != PAD
        V = T.as_tensor(objects)
        if V.ndim == 2:
            V = T.reshape(V, (1,) + V.shape)
        Q = self.encode_question(tokens, pad_mask, training, rng)
        H = Q
        img_att = []
        shared = self.image_attention_inputs(Q, V, training, rng)
        for j in range(self.config.glimpses_image):
            G = self.image_graph_attention(Q, V, j, training, rng, shared)
            img_att.append(G)
            H = self.image_graph_layer(H, V, G, j, training, rng)
        O = H
        q_att = []
        shared = self.question_attention_inputs(H, training, rng)
        for j in range(self.config.glimpses_question):
            G = self.question_graph_attention(H, j, pad_mask, training, rng, shared)
            q_att.append(G)
            O = self.question_graph_layer(O, H, G, j, training, rng)
        return GraphState(Q=Q, H=H, O=O, z=self.summarize(O),
                          image_attention=img_att, question_attention=q_att)
