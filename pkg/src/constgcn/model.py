"""Full document-to-relations model: encoder, graph convolution, pair head.

The forward pass over one document:

1. encode tokens into H and a row-stochastic attention map;
2. pool mention markers into initial entity states;
3. run the constrained-transmission graph convolution for the configured
   number of layers, collecting per-layer transmitting scores;
4. build one augmented representation per ordered entity pair (final
   entity states plus the pair's localized context);
5. score every pair against all relation classes plus the TH threshold.

Initialization is scale-calibrated so the transmitting scores start in
the responsive region of the sigmoid: for the translation variant the
relation rows are sized so typical L1 distances sit near the margin,
keeping gate gradients alive at every layer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import encoder as enc
from . import graph as G
from . import heads as HD
from . import tensor as T
from .corpus import Document
from .errors import ConfigError
from .graph import LayerState, RelationBasis, TransmitScores
from .heads import NceConfig, PairHead
from .kge import KgeVariant
from .tensor import Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    num_relations: int
    num_entity_types: int = 4
    max_coref: int = 3
    token_dim: int = 24
    feature_dim: int = 20
    use_features: bool = True
    variant_kind: str = "transe"
    margin: float = 20.0
    rotate_transmit: bool = False
    num_layers: int = 2
    pool: str = "att"
    num_basis: int = 56
    residual: bool = False
    dropout: float = 0.1
    nce: NceConfig = field(default_factory=NceConfig)
    # initialization scales; relation_scale None picks a per-variant default
    token_scale: float = 0.3
    type_scale: float = 0.3
    coref_scale: float = 0.3
    proj_identity: float = 0.5
    proj_noise: float = 0.3
    relation_scale: float | None = None
    entity_proj_scale: float = 0.1
    message_scale: float = 1.0

    @property
    def hidden_dim(self) -> int:
        return self.token_dim + (2 * self.feature_dim if self.use_features else 0)

    def variant(self) -> KgeVariant:
        return KgeVariant(self.variant_kind, margin=self.margin,
                          rotate_transmit=self.rotate_transmit)

    def encoder_config(self) -> enc.EncoderConfig:
        return enc.EncoderConfig(vocab_size=self.vocab_size, token_dim=self.token_dim,
                                 num_types=self.num_entity_types,
                                 max_coref=self.max_coref,
                                 feature_dim=self.feature_dim,
                                 use_features=self.use_features)


@dataclass
class DocForward:
    """Everything the losses, metrics and exporters need from one document."""

    pairs: list[tuple[int, int]]
    pair_row: dict[tuple[int, int], int]
    logits: Tensor | None          # [P, num_classes], None when < 2 entities
    aug_heads: Tensor | None
    aug_tails: Tensor | None
    initial_state: LayerState
    final_state: LayerState
    layer_scores: list[TransmitScores]
    report_scores: TransmitScores  # scores of the final-layer states


class ConstGcnModel:
    """Trainable model; parameters live in named Tensor leaves."""

    def __init__(self, config: ModelConfig, encoder_state: enc.EncoderState,
                 basis: RelationBasis, head: PairHead):
        self.config = config
        self.encoder = encoder_state
        self.basis = basis
        self.head = head
        self.variant = config.variant()

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.encoder.parameters())
        out.update(self.basis.parameters())
        out.update(self.head.parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    # ------------------------------------------------------------------

    def _dropout(self, rng: np.random.Generator):
        rate = self.config.dropout
        if rate <= 0.0:
            return None

        def fn(x: Tensor) -> Tensor:
            mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
            return x * Tensor(mask)

        return fn

    def forward(self, doc: Document, rng: np.random.Generator | None = None,
                train: bool = False) -> DocForward:
        if not doc.marked:
            raise ConfigError(f"doc {doc.doc_id}: forward() needs a marker-inserted document")
        h, attn = enc.encode(self.encoder, doc)
        relations = self.basis.relation_embeddings()
        n = doc.num_entities
        dropout = self._dropout(rng) if (train and rng is not None) else None

        if n == 0:
            state0 = LayerState(entities=Tensor.zeros((0, self.config.hidden_dim)),
                                relations=relations)
        else:
            state0 = LayerState(entities=enc.initial_entity_states(h, doc),
                                relations=relations)
        final, layer_scores = G.run_layers(
            state0, self.config.num_layers, self.variant, self.config.pool,
            residual=self.config.residual, dropout=dropout,
            message_scale=self.config.message_scale)
        # the reported tensor holds the edge beliefs of the final states
        report = G.compute_transmit_scores(final, self.variant)

        pairs = [(i, j) for i in range(n) for j in range(n) if i != j]
        if not pairs:
            return DocForward(pairs=[], pair_row={}, logits=None, aug_heads=None,
                              aug_tails=None, initial_state=state0, final_state=final,
                              layer_scores=layer_scores, report_scores=report)
        pair_row = {p: r for r, p in enumerate(pairs)}
        heads_idx = np.array([p[0] for p in pairs], dtype=np.intp)
        tails_idx = np.array([p[1] for p in pairs], dtype=np.intp)
        ent_attn = HD.entity_attention(attn, doc)
        ctx = HD.pair_context(ent_attn, h, heads_idx, tails_idx)
        ei, ej = HD.augment_pairs(self.head, final.entities.take_rows(heads_idx),
                                  final.entities.take_rows(tails_idx), ctx)
        logits = HD.pair_logits_batch(self.head, ei, ej)
        return DocForward(pairs=pairs, pair_row=pair_row, logits=logits,
                          aug_heads=ei, aug_tails=ej, initial_state=state0,
                          final_state=final, layer_scores=layer_scores,
                          report_scores=report)

    # ------------------------------------------------------------------

    def positive_mask(self, doc: Document, pairs: list[tuple[int, int]]) -> np.ndarray:
        mask = np.zeros((len(pairs), self.config.num_relations + 1))
        row = {p: r for r, p in enumerate(pairs)}
        for h, k, t in doc.facts:
            mask[row[(h, t)], k] = 1.0
        return mask

    def document_loss(self, doc: Document, rng: np.random.Generator,
                      train: bool = True) -> tuple[Tensor, Tensor]:
        """(classification loss, NCE loss) for one document; either may be 0."""
        fw = self.forward(doc, rng=rng, train=train)
        if fw.logits is None:
            zero = Tensor(0.0)
            return zero, zero
        l_cls = HD.at_loss_batch(fw.logits, self.positive_mask(doc, fw.pairs))
        negatives = HD.sample_negatives(doc.facts, doc.num_entities,
                                        self.config.nce.num_negatives, rng)
        l_nce = HD.nce_loss(fw.final_state.entities, fw.final_state.relations,
                            doc.facts, negatives, self.config.nce, self.variant)
        return l_cls, l_nce

    def combined_loss(self, docs: list[Document],
                      rng: np.random.Generator) -> tuple[Tensor, float, float]:
        """Summed batch objective L_cls + mu * L_nce, plus detached parts."""
        total = Tensor(0.0)
        cls_sum = nce_sum = 0.0
        for doc in docs:
            l_cls, l_nce = self.document_loss(doc, rng, train=True)
            total = total + l_cls + self.config.nce.weight * l_nce
            cls_sum += l_cls.item()
            nce_sum += l_nce.item()
        return total, cls_sum, nce_sum

    def predict(self, doc: Document) -> DocForward:
        """Forward pass without tape recording or dropout."""
        with T.no_grad():
            return self.forward(doc, rng=None, train=False)


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> ConstGcnModel:
    """Build a model with scale-calibrated initialization."""
    variant = cfg.variant()
    if variant.needs_even_dim and cfg.hidden_dim % 2 != 0:
        raise ConfigError(
            f"{cfg.variant_kind} needs an even hidden dim, got {cfg.hidden_dim}")
    if cfg.variant_kind == "rotate" and not cfg.rotate_transmit:
        raise ConfigError("variant 'rotate' requires rotate_transmit=true")
    d = cfg.hidden_dim
    relation_scale = cfg.relation_scale
    if relation_scale is None:
        # translation variants keep relation rows small so they perturb,
        # rather than dominate, the initial L1 distance geometry
        relation_scale = 0.1 if cfg.variant_kind in ("transe", "rotate") else 0.3
    encoder_state = enc.init_encoder(cfg.encoder_config(), rng,
                                     token_scale=cfg.token_scale,
                                     type_scale=cfg.type_scale,
                                     coref_scale=cfg.coref_scale,
                                     proj_identity=cfg.proj_identity,
                                     proj_noise=cfg.proj_noise)
    basis = G.init_relation_basis(cfg.num_relations, d, cfg.num_basis, rng,
                                  relation_scale=relation_scale)
    head = HD.init_pair_head(cfg.num_relations, d, rng,
                             entity_proj_scale=cfg.entity_proj_scale)
    return ConstGcnModel(cfg, encoder_state, basis, head)
