"""Entity-pair classification head and the two training objectives.

A pair representation augments the two entities' graph-convolved states
with a localized context vector: the product of their token-attention
profiles, renormalized, applied to the token matrix. A bilinear form per
relation class (plus a learnable threshold pseudo-class TH) produces the
pair logits; at decode time every class whose logit clears TH is
returned, so a pair can carry multiple relations or none.

Two losses:

* adaptive-thresholding classification loss, which pushes positive
  classes above TH and TH above the negatives;
* a self-adversarial noise-contrastive loss over relational triples,
  corrupting one side of each golden fact with another entity of the
  same document and weighting negatives by their own sharpness.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kge
from . import tensor as T
from .corpus import Document
from .errors import ConfigError, ShapeError
from .kge import KgeVariant
from .tensor import Tensor

_MASK_OFF = -1e30  # additive mask; exp underflows to exactly 0


@dataclass
class PairHead:
    """Trainable parameters of the pair classifier; class R is TH."""

    w_s: Tensor   # [d, d] head-entity projection
    w_o: Tensor   # [d, d] tail-entity projection
    w_c1: Tensor  # [d, d] context-to-head projection
    w_c2: Tensor  # [d, d] context-to-tail projection
    w_r: Tensor   # [num_classes, d, d] bilinear forms (TH included)
    b_r: Tensor   # [num_classes]

    @property
    def num_classes(self) -> int:
        return self.b_r.shape[0]

    @property
    def th_index(self) -> int:
        return self.num_classes - 1

    def parameters(self) -> dict[str, Tensor]:
        return {"head.w_s": self.w_s, "head.w_o": self.w_o,
                "head.w_c1": self.w_c1, "head.w_c2": self.w_c2,
                "head.w_r": self.w_r, "head.b_r": self.b_r}


def init_pair_head(num_relations: int, dim: int, rng: np.random.Generator,
                   entity_proj_scale: float = 0.1) -> PairHead:
    def proj(scale: float = 1.0):
        return Tensor(rng.normal(size=(dim, dim)) * (scale / np.sqrt(dim)),
                      requires_grad=True)

    # entity projections start small: graph-convolved states can be several
    # times larger than encoder outputs and would otherwise saturate the tanh
    classes = num_relations + 1
    return PairHead(
        w_s=proj(entity_proj_scale), w_o=proj(entity_proj_scale),
        w_c1=proj(), w_c2=proj(),
        w_r=Tensor(rng.normal(size=(classes, dim, dim)) / dim, requires_grad=True),
        b_r=Tensor(np.zeros(classes), requires_grad=True),
    )


@dataclass(frozen=True)
class NceConfig:
    num_negatives: int = 40
    temperature: float = 1.0
    weight: float = 0.001

    def __post_init__(self):
        if self.num_negatives < 1:
            raise ConfigError("num_negatives must be >= 1")
        if self.temperature <= 0:
            raise ConfigError("temperature must be > 0")
        if self.weight < 0:
            raise ConfigError("nce weight must be >= 0")


# ---------------------------------------------------------------------------
# localized context


def entity_attention(attn: Tensor, doc: Document) -> Tensor:
    """Token-attention profile per entity: mean of its marker rows, [n, |D|]."""
    rows = []
    for ent in doc.entities:
        gathered = attn.take_rows(np.asarray(ent.start_markers, dtype=np.intp))
        rows.append(gathered.mean(axis=0))
    return T.stack(rows, axis=0)


def pair_context(ent_attn: Tensor, h: Tensor, heads: np.ndarray,
                 tails: np.ndarray) -> Tensor:
    """Localized context for each listed pair: normalized a_i*a_j applied to H.

    Rows whose attention product has (numerically) zero mass fall back to
    uniform weights over tokens, so the output is always finite.
    """
    q = ent_attn.take_rows(heads) * ent_attn.take_rows(tails)  # [P, |D|]
    mass = q.sum(axis=1, keepdims=True)
    bad = mass.data[:, 0] <= 1e-30
    if bad.any():
        keep = (~bad).astype(np.float64)[:, None]
        n_tok = q.shape[1]
        uniform = np.where(bad[:, None], 1.0 / n_tok, 0.0)
        q = q * Tensor(keep) / (mass + Tensor(bad[:, None].astype(np.float64)))
        q = q + Tensor(uniform)
    else:
        q = q / mass
    return q @ h


def localized_context(attn: Tensor, h: Tensor, doc: Document,
                      entity_i: int, entity_j: int) -> Tensor:
    """Single-pair localized context vector, shape [d]."""
    ent_attn = entity_attention(attn, doc)
    c = pair_context(ent_attn, h, np.array([entity_i]), np.array([entity_j]))
    return c[0]


# ---------------------------------------------------------------------------
# pair representation and logits


def augment_pairs(head: PairHead, e_heads: Tensor, e_tails: Tensor,
                  context: Tensor) -> tuple[Tensor, Tensor]:
    """tanh-projected pair representations, each row in (-1, 1)^d."""
    ei = (e_heads @ head.w_s.T + context @ head.w_c1.T).tanh()
    ej = (e_tails @ head.w_o.T + context @ head.w_c2.T).tanh()
    return ei, ej


def augment_pair(e_i: Tensor, e_j: Tensor, c: Tensor,
                 head: PairHead) -> tuple[Tensor, Tensor]:
    """Single-pair version of augment_pairs."""
    ei, ej = augment_pairs(head, e_i.reshape(1, -1), e_j.reshape(1, -1),
                           c.reshape(1, -1))
    return ei[0], ej[0]


def pair_logits_batch(head: PairHead, ei: Tensor, ej: Tensor) -> Tensor:
    """Raw bilinear logits for every pair and class: [P, num_classes].

    logit[p, r] = ei[p] . w_r[r] . ej[p] + b_r[r], done as one matmul so
    the runtime stays in BLAS.
    """
    n_pairs, d = ei.shape
    classes = head.num_classes
    flat = head.w_r.transpose(1, 0, 2).reshape(d, classes * d)
    mixed = (ei @ flat).reshape(n_pairs, classes, d)
    return (mixed * ej.reshape(n_pairs, 1, d)).sum(axis=2) + head.b_r


def pair_logits(ei: Tensor, ej: Tensor, head: PairHead) -> Tensor:
    """Single-pair logits over all classes including TH."""
    return pair_logits_batch(head, ei.reshape(1, -1), ej.reshape(1, -1))[0]


# ---------------------------------------------------------------------------
# adaptive-thresholding classification loss


def at_loss_batch(logits: Tensor, positive_mask: np.ndarray) -> Tensor:
    """Sum of the two threshold losses over a batch of pairs.

    `positive_mask` is a constant 0/1 array [P, num_classes] marking each
    pair's golden relations; the TH column must be zero.
    """
    n_pairs, n_classes = logits.shape
    if positive_mask.shape != (n_pairs, n_classes):
        raise ShapeError(f"mask shape {positive_mask.shape} != {(n_pairs, n_classes)}")
    th = n_classes - 1
    if positive_mask[:, th].any():
        raise ConfigError("TH marked positive")
    th_onehot = np.zeros(n_classes)
    th_onehot[th] = 1.0

    # positives vs TH: -log softmax over P u {TH}, summed over positives
    keep_pos = np.maximum(positive_mask, th_onehot)
    lse_pos = T.logsumexp_axis(logits + Tensor((1.0 - keep_pos) * _MASK_OFF), axis=1)
    loss_pos = ((lse_pos.reshape(-1, 1) - logits) * Tensor(positive_mask)).sum()

    # TH vs negatives: -log softmax of TH over N u {TH}
    lse_neg = T.logsumexp_axis(logits + Tensor(positive_mask * _MASK_OFF), axis=1)
    loss_th = (lse_neg - logits[:, th]).sum()
    return loss_pos + loss_th


def at_loss(logits: Tensor, positive_set: set[int]) -> Tensor:
    """Single-pair adaptive-thresholding loss."""
    n_classes = logits.shape[0]
    mask = np.zeros((1, n_classes))
    for r in positive_set:
        if r == n_classes - 1:
            raise ConfigError("TH cannot be a positive class")
        mask[0, r] = 1.0
    return at_loss_batch(logits.reshape(1, -1), mask)


def decode(logits) -> set[int]:
    """Relations whose logit clears the TH logit; may be empty (NA pair)."""
    values = logits.data if isinstance(logits, Tensor) else np.asarray(logits)
    th = values.shape[-1] - 1
    return {r for r in range(th) if values[r] > values[th]}


# ---------------------------------------------------------------------------
# self-adversarial noise-contrastive loss


def sample_negatives(facts: list[tuple[int, int, int]], num_entities: int,
                     num_negatives: int,
                     rng: np.random.Generator) -> list[list[tuple[int, int, int]]]:
    """Per positive, corrupted triples from the same document.

    One side (head or tail, fair coin) is replaced by another entity;
    corruptions that collide with a golden fact or put an entity in
    relation with itself are rejected. Sampling is with replacement since
    document pools are small.
    """
    fact_set = set(facts)
    out = []
    for h, k, t in facts:
        negs = []
        for _ in range(num_negatives):
            for _attempt in range(4):
                if rng.random() < 0.5:
                    c = int(rng.integers(num_entities))
                    cand = (c, k, t)
                    ok = c != t
                else:
                    c = int(rng.integers(num_entities))
                    cand = (h, k, c)
                    ok = c != h
                if ok and cand not in fact_set:
                    negs.append(cand)
                    break
        out.append(negs)
    return out


def nce_loss(entity_reprs: Tensor, relations: Tensor,
             facts: list[tuple[int, int, int]],
             negatives: list[list[tuple[int, int, int]]],
             cfg: NceConfig, variant: KgeVariant) -> Tensor:
    """Noise-contrastive loss over golden triples of one document.

    Scores live in the same space the transmitting scores are computed
    from: `entity_reprs` holds the final-layer entity rows and
    `relations` the basis-derived relation rows, so minimizing this loss
    directly sharpens the learned edge probabilities. Negative triples
    are weighted by a softmax (temperature tau) of their own sharpness,
    with no gradient through the weights. Documents with fewer than two
    entities or no facts contribute zero.
    """
    if not facts or entity_reprs.shape[0] < 2:
        return Tensor(0.0)
    heads_p = np.array([h for h, _, _ in facts], dtype=np.intp)
    tails_p = np.array([t for _, _, t in facts], dtype=np.intp)
    rels_p = np.array([k for _, k, _ in facts], dtype=np.intp)
    pos_scores = kge.score(variant, entity_reprs.take_rows(heads_p),
                           relations.take_rows(rels_p),
                           entity_reprs.take_rows(tails_p))
    loss = -T.log_sigmoid(pos_scores).sum()

    flat = [(pi, trip) for pi, negs in enumerate(negatives) for trip in negs]
    if flat:
        heads_n = np.array([h for _, (h, _, _) in flat], dtype=np.intp)
        tails_n = np.array([t for _, (_, _, t) in flat], dtype=np.intp)
        rels_n = np.array([k for _, (_, k, _) in flat], dtype=np.intp)
        neg_scores = kge.score(variant, entity_reprs.take_rows(heads_n),
                               relations.take_rows(rels_n),
                               entity_reprs.take_rows(tails_n))
        phi = np.zeros(len(flat))
        by_positive: dict[int, list[int]] = {}
        for idx, (pi, _) in enumerate(flat):
            by_positive.setdefault(pi, []).append(idx)
        detached = neg_scores.data
        for idxs in by_positive.values():
            phi[idxs] = nce_weights(detached[idxs], cfg.temperature)
        loss = loss - (Tensor(phi) * T.log_sigmoid(-neg_scores)).sum()
    return loss


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def nce_weights(neg_scores: np.ndarray, temperature: float) -> np.ndarray:
    """Self-adversarial weights for one positive's negatives; sums to 1.

    Hard negatives (high score) get the most weight and the distribution
    sharpens as the temperature drops toward zero.
    """
    sharp = _sigmoid_np(np.asarray(neg_scores, dtype=np.float64))
    w = np.exp((sharp - sharp.max()) / temperature)
    return w / w.sum()
