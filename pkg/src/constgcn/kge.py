"""Knowledge-graph-embedding scoring and the unified transmitting operation.

Four scoring families are supported: the translation-distance models
(TransE, RotatE, both with L1 geometry and a fixed margin) and the
semantic-matching models (DistMult, ComplEx). A score feeds a sigmoid to
become a transmitting score: the probability of a directed relational
edge between two entity vectors.

The transmitting operation `transmit` moves a head-entity vector through
a relation space toward its tail: addition for TransE, elementwise
product for DistMult, and the complex Hadamard product (on interleaved
real pairs, dimension preserved) for ComplEx. RotatE transmit is the
unit-modulus rotation and is gated behind `rotate_transmit` since it is
an extension of the three-case transmit menu.

All functions accept tensors shaped [..., d] with broadcastable batch
dimensions and reduce over the trailing embedding axis, so the same code
scores a single triple or a full |R|x|E|x|E| grid.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor

TRANSE = "transe"
ROTATE = "rotate"
DISTMULT = "distmult"
COMPLEX = "complex"

KINDS = (TRANSE, ROTATE, DISTMULT, COMPLEX)
_COMPLEX_KINDS = (ROTATE, COMPLEX)
_MARGIN_KINDS = (TRANSE, ROTATE)


@dataclass(frozen=True)
class KgeVariant:
    """Scoring-function family plus its hyperparameters."""

    kind: str
    margin: float = 20.0
    rotate_transmit: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown KGE kind {self.kind!r}; expected one of {KINDS}")
        if self.kind in _MARGIN_KINDS and self.margin <= 0:
            raise ConfigError(f"{self.kind} requires margin > 0, got {self.margin}")

    @property
    def needs_even_dim(self) -> bool:
        return self.kind in _COMPLEX_KINDS


def _check_dims(variant: KgeVariant, *vecs: Tensor) -> int:
    dims = {v.shape[-1] for v in vecs}
    if len(dims) != 1:
        raise ShapeError(f"embedding dims differ: {sorted(dims)}")
    d = dims.pop()
    if variant.needs_even_dim and d % 2 != 0:
        raise DomainError(f"{variant.kind} requires even embedding dim, got {d}")
    return d


def _rotate_phases(r: Tensor) -> Tensor:
    """Project interleaved pairs of r onto the unit circle."""
    rr, ri = T.complex_split(r)
    mod = (rr * rr + ri * ri + 1e-30).sqrt()
    return T.complex_interleave(rr / mod, ri / mod)


def score(variant: KgeVariant, e_i: Tensor, r_k: Tensor, e_j: Tensor) -> Tensor:
    """d_r(e_i, r_k, e_j): higher means the directed triple is more plausible."""
    _check_dims(variant, e_i, r_k, e_j)
    if variant.kind == TRANSE:
        return variant.margin - (e_i + r_k - e_j).abs().sum(axis=-1)
    if variant.kind == ROTATE:
        diff = T.complex_hadamard(e_i, _rotate_phases(r_k)) - e_j
        dr, di = T.complex_split(diff)
        return variant.margin - (dr * dr + di * di + 1e-30).sqrt().sum(axis=-1)
    if variant.kind == DISTMULT:
        return (e_i * r_k * e_j).sum(axis=-1)
    # ComplEx: Re(sum e_i * r_k * conj(e_j)) over complex coordinates
    ar, ai = T.complex_split(e_i)
    br, bi = T.complex_split(r_k)
    cr, ci = T.complex_split(e_j)
    t_re = ar * br - ai * bi
    t_im = ar * bi + ai * br
    return (t_re * cr + t_im * ci).sum(axis=-1)


def transmit_score(variant: KgeVariant, e_i: Tensor, r_k: Tensor, e_j: Tensor) -> Tensor:
    """sigmoid(score): the probability of a directed edge r_k from e_i to e_j."""
    return T.sigmoid(score(variant, e_i, r_k, e_j))


def transmit(variant: KgeVariant, e: Tensor, r: Tensor) -> Tensor:
    """Map an entity vector through a relation space; output keeps dim d."""
    _check_dims(variant, e, r)
    if variant.kind == TRANSE:
        return e + r
    if variant.kind == DISTMULT:
        return e * r
    if variant.kind == COMPLEX:
        return T.complex_hadamard(e, r)
    if variant.rotate_transmit:
        return T.complex_hadamard(e, _rotate_phases(r))
    raise ConfigError(
        "rotate transmit is an extension; construct KgeVariant with rotate_transmit=True")
