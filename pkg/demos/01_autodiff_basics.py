"""Tour of the tensor core: arithmetic, stabilized reductions, gradients.

Run:  python3 demos/01_autodiff_basics.py
"""

import numpy as np

from constgcn import tensor as T
from constgcn.tensor import ComplexVec, Tensor

# --- tensors record a tape; backward() fills .grad on the leaves -----------

x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
w = Tensor(np.eye(2) * 0.5, requires_grad=True)
loss = ((x @ w).tanh() ** 2).sum()
loss.backward()
print("loss            ", round(loss.item(), 6))
print("dloss/dx row 0  ", np.round(x.grad[0], 6))

# --- the stabilized primitives behave at extreme inputs --------------------

big = Tensor([1000.0, 1000.0, 1000.0])
print("softmax(1000s)  ", T.softmax(big, axis=0).data)          # thirds, no overflow
print("logsumexp       ", T.logsumexp([Tensor([1000.0]), Tensor([1000.0])]).data)
print("sigmoid(20)     ", f"{T.sigmoid(Tensor(20.0)).item():.12f}  (strictly < 1)")

# --- complex vectors live as interleaved real pairs ------------------------

z = ComplexVec.pack([1 + 2j, -0.5 + 0j])
print("packed          ", z.data, " -> unpacked", z.unpack())

# --- finite differences arbitrate every gradient ---------------------------

a = Tensor(np.random.default_rng(0).normal(size=(3, 3)), requires_grad=True)
err = T.grad_check(lambda: (T.softmax(a, axis=1) * a.tanh()).sum(), [a])
print("grad_check      ", f"max relative error {err:.2e} (tolerance 1e-4)")
