"""Scoring functions and the unified transmitting operation.

Each scoring family measures how plausible a directed triple
(head, relation, tail) is; a sigmoid turns that into a transmitting
score, the probability of a relational edge. The transmit operation
moves a head entity through a relation space toward its tail.

Run:  python3 demos/02_kge_scoring.py
"""

import numpy as np

from constgcn import kge
from constgcn.kge import KgeVariant
from constgcn.tensor import Tensor

transe = KgeVariant("transe", margin=20.0)
distmult = KgeVariant("distmult")
cplx = KgeVariant("complex")

# --- translation geometry: score peaks when head + relation = tail ---------

e = Tensor([0.5, -1.0, 2.0, 0.0])
r = Tensor([1.0, 1.0, -0.5, 0.25])
target = kge.transmit(transe, e, r)
print("transmit lands on the margin:",
      kge.score(transe, e, r, target).item(), "== 20.0")

off_target = Tensor(target.data + 0.3)
print("a nearby tail scores lower:  ",
      round(kge.score(transe, e, r, off_target).item(), 3))

# --- semantic matching: multiplicative interactions -------------------------

print("distmult hand example:",
      kge.score(distmult, Tensor([1.0, 2.0]), Tensor([1.0, 1.0]),
                Tensor([3.0, 4.0])).item(), "== 11.0")

# --- complex rotation keeps norms when the relation has unit modulus -------

phases = np.random.default_rng(1).uniform(0, 2 * np.pi, size=3)
unit = np.empty(6)
unit[0::2], unit[1::2] = np.cos(phases), np.sin(phases)
vec = Tensor(np.random.default_rng(2).normal(size=6))
rotated = kge.transmit(cplx, vec, Tensor(unit))
print("norm before/after complex transmit:",
      round(float(np.linalg.norm(vec.data)), 6),
      round(float(np.linalg.norm(rotated.data)), 6))

# --- transmitting scores are edge probabilities ----------------------------

for variant in (transe, distmult, cplx):
    rng = np.random.default_rng(3)
    p = kge.transmit_score(variant, Tensor(rng.normal(size=8)),
                           Tensor(rng.normal(size=8)),
                           Tensor(rng.normal(size=8)))
    print(f"{variant.kind:9s} random-triple edge probability: {p.item():.4f}")
