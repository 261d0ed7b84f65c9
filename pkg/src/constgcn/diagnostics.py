"""Gradient verification of the full training objective on tiny models.

Builds a miniature model (hidden size 8, a handful of entities) for every
scoring variant and pooling combination, evaluates the combined objective
on one random document, and compares tape gradients of every parameter
group against central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import CorpusConfig, generate_synthetic_corpus, insert_entity_markers
from .errors import ContractError, DomainError
from .heads import NceConfig
from .model import ConstGcnModel, ModelConfig, init_model
from .tensor import Tensor

GRADCHECK_TOLERANCE = 1e-4

# kept deliberately tiny: finite differences cost two forwards per coordinate
_TINY = dict(token_dim=4, feature_dim=2, use_features=True)


def _tiny_model(variant: str, pool: str, layers: int, num_relations: int,
                vocab_size: int, num_types: int, max_coref: int,
                rng: np.random.Generator) -> ConstGcnModel:
    cfg = ModelConfig(
        vocab_size=vocab_size, num_relations=num_relations,
        num_entity_types=num_types, max_coref=max_coref,
        variant_kind=variant, rotate_transmit=(variant == "rotate"),
        num_layers=layers, pool=pool, num_basis=6, dropout=0.0,
        nce=NceConfig(num_negatives=4),
        **_TINY)
    return init_model(cfg, rng)


def max_relative_error(f, params: list[Tensor], eps: float = 1e-5,
                       corrupt: bool = False) -> dict[str, float]:
    """Per-parameter max relative error of tape gradients vs central FD.

    With `corrupt=True` one analytic gradient coordinate is deliberately
    perturbed, as a negative control that the comparison can fail.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise DomainError(f"eps {eps} outside [1e-6, 1e-3]")
    named = list(params.items()) if isinstance(params, dict) else \
        [(f"p{i}", p) for i, p in enumerate(params)]
    for _, p in named:
        p.zero_grad()
        p.requires_grad = True
    loss = f()
    if not isinstance(loss, Tensor) or loss.size != 1:
        raise ContractError("gradcheck needs a scalar loss")
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in named}
    if corrupt:
        first = named[0][0]
        analytic[first].reshape(-1)[0] += 1.0
    report = {}
    with T.no_grad():
        for name, p in named:
            worst = 0.0
            flat = p.data.reshape(-1)
            aflat = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                hi = f().item()
                flat[i] = orig - eps
                lo = f().item()
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * eps)
                worst = max(worst, abs(aflat[i] - numeric) / max(1.0, abs(numeric)))
            report[name] = worst
    for _, p in named:
        p.zero_grad()
    return report


@dataclass
class GradCheckResult:
    variant: str
    pool: str
    layers: int
    per_group: dict[str, float]

    @property
    def worst(self) -> float:
        return max(self.per_group.values())

    @property
    def passed(self) -> bool:
        return self.worst <= GRADCHECK_TOLERANCE


def run_gradcheck(seed: int = 0, num_entities: int = 4,
                  variants: tuple[str, ...] = ("transe", "distmult", "complex"),
                  pools: tuple[str, ...] = ("sum", "att"),
                  layer_counts: tuple[int, ...] = (2,),
                  corrupt: bool = False) -> list[GradCheckResult]:
    """Check the combined loss gradient for every variant/pool combination."""
    if num_entities > 6:
        raise DomainError("gradcheck is bounded to at most 6 entities")
    num_relations = 3
    num_types = 3
    max_coref = 2
    vocab = 64
    results = []
    for variant in variants:
        for pool in pools:
            for layers in layer_counts:
                rng = np.random.default_rng(seed)
                corpus_cfg = CorpusConfig(
                    num_docs=1, num_entities_range=(num_entities, num_entities),
                    num_relations=num_relations, vocab_size=vocab, seed=seed,
                    num_entity_types=num_types, max_coref=max_coref,
                    names_per_type=4, edge_prob=0.8, noise_signal_prob=0.0)
                docs, _ = generate_synthetic_corpus(corpus_cfg)
                doc = insert_entity_markers(docs[0])
                model = _tiny_model(variant, pool, layers, num_relations,
                                    vocab, num_types, max_coref, rng)
                loss_rng_seed = seed + 1

                def loss():
                    # negatives are resampled identically per evaluation
                    loss_rng = np.random.default_rng(loss_rng_seed)
                    l_cls, l_nce = model.document_loss(doc, loss_rng, train=False)
                    return l_cls + model.config.nce.weight * l_nce

                per_group = max_relative_error(loss, model.parameters(),
                                               corrupt=corrupt)
                results.append(GradCheckResult(variant=variant, pool=pool,
                                               layers=layers, per_group=per_group))
    return results
