"""Learned-embedding document encoder.

Stands in for a pretrained language model at desk scale: each token row is
its embedding pushed through one learned affine map with tanh, and the
attention map is a single row-stochastic softmax similarity matrix. Start
markers of entity mentions additionally carry entity-type and
coreference-count embeddings, concatenated before the affine map.

Entity states are initialized by elementwise logsumexp pooling over the
mention vectors read at the start-marker rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import Document
from .errors import ConfigError, DomainError, InvariantError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    vocab_size: int
    token_dim: int = 24
    num_types: int = 4
    max_coref: int = 3
    feature_dim: int = 20  # entity-type and coreference embedding size
    use_features: bool = True

    @property
    def hidden_dim(self) -> int:
        return self.token_dim + (2 * self.feature_dim if self.use_features else 0)


@dataclass
class EncoderState:
    """Trainable encoder parameters."""

    config: EncoderConfig
    token_embedding: Tensor   # [vocab, token_dim]
    type_embedding: Tensor    # [num_types, feature_dim]
    coref_embedding: Tensor   # [max_coref, feature_dim]
    proj_w: Tensor            # [hidden, hidden]
    proj_b: Tensor            # [hidden]

    def parameters(self) -> dict[str, Tensor]:
        return {
            "encoder.token_embedding": self.token_embedding,
            "encoder.type_embedding": self.type_embedding,
            "encoder.coref_embedding": self.coref_embedding,
            "encoder.proj_w": self.proj_w,
            "encoder.proj_b": self.proj_b,
        }


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator,
                 token_scale: float = 0.3, type_scale: float = 0.3,
                 coref_scale: float = 0.3, proj_identity: float = 0.5,
                 proj_noise: float = 0.3) -> EncoderState:
    """Draw encoder parameters.

    The projection starts near a scaled identity so token rows keep their
    embedding geometry before training shapes it.
    """
    if cfg.vocab_size < 2:
        raise ConfigError("vocab_size must be >= 2")
    d = cfg.hidden_dim
    w = rng.normal(size=(d, d)) * (proj_noise / math.sqrt(d)) + np.eye(d) * proj_identity
    return EncoderState(
        config=cfg,
        token_embedding=Tensor(rng.normal(size=(cfg.vocab_size, cfg.token_dim))
                               * token_scale, requires_grad=True),
        type_embedding=Tensor(rng.normal(size=(cfg.num_types, cfg.feature_dim))
                              * type_scale, requires_grad=True),
        coref_embedding=Tensor(rng.normal(size=(cfg.max_coref, cfg.feature_dim))
                               * coref_scale, requires_grad=True),
        proj_w=Tensor(w, requires_grad=True),
        proj_b=Tensor(np.zeros(d), requires_grad=True),
    )


def encode(state: EncoderState, doc: Document) -> tuple[Tensor, Tensor]:
    """Return (H, attn): per-token hidden rows and row-stochastic attention.

    The document must already be marker-inserted. H has one row per token
    (markers included); attn is softmax(H H^T / sqrt(d)) with rows summing
    to one.
    """
    cfg = state.config
    if not doc.marked:
        raise InvariantError(f"doc {doc.doc_id}: encode() needs a marker-inserted document")
    tokens = np.asarray(doc.tokens, dtype=np.intp)
    if tokens.size and tokens.max() >= cfg.vocab_size:
        raise DomainError(
            f"doc {doc.doc_id}: token id {int(tokens.max())} >= vocab {cfg.vocab_size}")
    x = state.token_embedding.take_rows(tokens)
    if cfg.use_features:
        # constant one-hot selectors keep the scatter differentiable
        sel_type = np.zeros((tokens.size, cfg.num_types))
        sel_coref = np.zeros((tokens.size, cfg.max_coref))
        for ent in doc.entities:
            if ent.start_markers is None:
                raise InvariantError(f"doc {doc.doc_id}: missing start-marker bookkeeping")
            coref_row = min(ent.coref_count, cfg.max_coref) - 1
            for row in ent.start_markers:
                sel_type[row, ent.type_id] = 1.0
                sel_coref[row, coref_row] = 1.0
        feats = [Tensor(sel_type) @ state.type_embedding,
                 Tensor(sel_coref) @ state.coref_embedding]
        x = T.concat([x] + feats, axis=1)
    h = (x @ state.proj_w + state.proj_b).tanh()
    attn = T.softmax(h @ h.T * (1.0 / math.sqrt(cfg.hidden_dim)), axis=1)
    return h, attn


def mention_reprs(h: Tensor, doc: Document) -> list[list[Tensor]]:
    """Per entity, the H rows at its mention start markers, in mention order."""
    out = []
    for ent in doc.entities:
        if ent.start_markers is None:
            raise InvariantError(f"doc {doc.doc_id}: missing start-marker bookkeeping")
        if any(m >= h.shape[0] for m in ent.start_markers):
            raise InvariantError(f"doc {doc.doc_id}: marker row out of range")
        out.append([h[m] for m in ent.start_markers])
    return out


def entity_init(mention_vecs: list[Tensor]) -> Tensor:
    """Elementwise logsumexp over an entity's mention vectors."""
    if not mention_vecs:
        raise DomainError("entity with no mention vectors")
    return T.logsumexp(mention_vecs)


def initial_entity_states(h: Tensor, doc: Document) -> Tensor:
    """Stack entity_init over all entities into an [n, d] matrix."""
    rows = []
    for ent in doc.entities:
        gathered = h.take_rows(np.asarray(ent.start_markers, dtype=np.intp))
        rows.append(T.logsumexp_axis(gathered, axis=0))
    return T.stack(rows, axis=0)
