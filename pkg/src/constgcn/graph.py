"""Constrained transmission-based graph convolution over relation spaces.

Each layer scores every directed entity pair under every relation space
(a sigmoid of the KGE score, the "transmitting score"), then updates each
entity by aggregating, over all relation spaces, the transmitted vectors
of all entities weighted by those scores:

    e_i' = sum_k sum_j f_r(e_j, r_k, e_i) * (e_j (+) r_k)

realized as one matrix product per relation space with the score matrix
transposed so information flows j -> i. The per-relation update slices
are reduced by a pooling function: sum, mean, max, or attentive pooling,
which scales every entity's slice row by that entity's softmax importance
under the relation.

Relation embeddings are linear combinations of a shared basis and are
re-read from the basis at every layer; propagation updates entities only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kge
from . import tensor as T
from .errors import ConfigError, ShapeError
from .kge import KgeVariant
from .tensor import Tensor

POOL_KINDS = ("sum", "mean", "max", "att")


@dataclass
class RelationBasis:
    """Shared basis vectors plus per-relation combination weights."""

    basis: Tensor    # [B, d]
    weights: Tensor  # [num_relations, B]

    def __post_init__(self):
        b, d = self.basis.shape
        r, b2 = self.weights.shape
        if b != b2:
            raise ShapeError(f"basis count mismatch: basis has {b}, weights have {b2}")
        if b > r * d:
            raise ConfigError(f"basis count {b} exceeds sanity bound {r}*{d}")

    @property
    def num_relations(self) -> int:
        return self.weights.shape[0]

    def relation_embeddings(self) -> Tensor:
        """R = weights @ basis, shape [num_relations, d]."""
        return self.weights @ self.basis

    def parameters(self) -> dict[str, Tensor]:
        return {"basis.vectors": self.basis, "basis.weights": self.weights}


def init_relation_basis(num_relations: int, dim: int, num_basis: int,
                        rng: np.random.Generator, relation_scale: float) -> RelationBasis:
    """Draw a basis whose combined relation rows have std `relation_scale`.

    Basis entries are heavy-tailed (Laplace): relation rows start spiky,
    which gives the entity-importance softmax a decisive spread while the
    rows' L1 mass stays small enough to keep translation gates alive.
    """
    b = min(num_basis, num_relations * dim)
    basis = rng.laplace(size=(b, dim))
    weights = rng.normal(size=(num_relations, b)) / math.sqrt(b)
    scale = relation_scale / float((weights @ basis).std())
    return RelationBasis(basis=Tensor(basis * scale, requires_grad=True),
                         weights=Tensor(weights, requires_grad=True))


@dataclass
class TransmitScores:
    """Edge probabilities for every relation space at one layer."""

    scores: Tensor  # [num_relations, n_entities, n_entities], entries in (0,1)
    layer: int


@dataclass
class LayerState:
    entities: Tensor   # [n_entities, d]
    relations: Tensor  # [num_relations, d]
    layer: int = 0


def compute_transmit_scores(state: LayerState, variant: KgeVariant) -> TransmitScores:
    """Score all ordered entity pairs (diagonal included) per relation space."""
    ents, rels = state.entities, state.relations
    n, d = ents.shape
    m = rels.shape[0]
    e_i = ents.reshape(1, n, 1, d)
    e_j = ents.reshape(1, 1, n, d)
    r = rels.reshape(m, 1, 1, d)
    return TransmitScores(scores=kge.transmit_score(variant, e_i, r, e_j),
                          layer=state.layer)


def attentive_pool(entities: Tensor, relations: Tensor,
                   slices: list[Tensor]) -> Tensor:
    """Reduce per-relation slices, weighting rows by entity importance.

    Importance Z = softmax(R E^T / sqrt(d)) over the entity axis; the
    output is sum_k diag(z_k) . slice_k.
    """
    if len(slices) != relations.shape[0]:
        raise ShapeError(f"{len(slices)} slices for {relations.shape[0]} relations")
    z = T.softmax(relations @ entities.T * (1.0 / math.sqrt(entities.shape[1])),
                  axis=1)
    out = None
    for k, slice_k in enumerate(slices):
        term = z[k].reshape(-1, 1) * slice_k
        out = term if out is None else out + term
    return out


def propagate(state: LayerState, scores: TransmitScores, variant: KgeVariant,
              pool: str, residual: bool = False,
              message_scale: float = 1.0) -> LayerState:
    """One constrained-transmission update of the entity matrix.

    All relation slices are computed in one batched product; at desk scale
    |R| x |E| x d stays a few thousand scalars. `message_scale` damps the
    pooled update before the optional residual is added; it stabilizes
    stacked layers whose states would otherwise grow every step.
    """
    if pool not in POOL_KINDS:
        raise ConfigError(f"unknown pool kind {pool!r}; expected one of {POOL_KINDS}")
    ents, rels = state.entities, state.relations
    m = rels.shape[0]
    n, d = ents.shape
    transmitted = kge.transmit(variant, ents.reshape(1, n, d),
                               rels.reshape(m, 1, d))   # [m, n, d]
    gates = scores.scores.transpose(0, 2, 1)            # flow j -> i
    slices = gates @ transmitted                        # [m, n, d]
    if pool == "att":
        z = T.softmax(rels @ ents.T * (1.0 / math.sqrt(d)), axis=1)
        out = (z.reshape(m, n, 1) * slices).sum(axis=0)
    elif pool == "max":
        out = slices.max(axis=0)
    elif pool == "mean":
        out = slices.mean(axis=0)
    else:
        out = slices.sum(axis=0)
    if residual:
        out = out + ents
    return LayerState(entities=out, relations=rels, layer=state.layer + 1)


def run_layers(state0: LayerState, num_layers: int, variant: KgeVariant,
               pool: str, residual: bool = False, dropout=None,
               message_scale: float = 1.0,
               keep_states: list | None = None
               ) -> tuple[LayerState, list[TransmitScores]]:
    """Stack graph-convolution layers; T=0 returns the input unchanged.

    `dropout`, when given, is applied to the entity matrix between layers
    (not after the last one). Returns the final state and the transmitting
    scores computed at every layer, in order; `keep_states`, when given,
    receives the layer state each score tensor was computed from.
    """
    if num_layers < 0:
        raise ConfigError(f"layer count must be >= 0, got {num_layers}")
    state = state0
    all_scores: list[TransmitScores] = []
    for t in range(num_layers):
        if keep_states is not None:
            keep_states.append(state)
        scores = compute_transmit_scores(state, variant)
        state = propagate(state, scores, variant, pool, residual=residual,
                          message_scale=message_scale)
        if dropout is not None and t + 1 < num_layers:
            state = LayerState(entities=dropout(state.entities),
                               relations=state.relations, layer=state.layer)
        all_scores.append(scores)
    return state, all_scores
