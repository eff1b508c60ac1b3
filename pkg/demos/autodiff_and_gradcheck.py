"""
Tape autodiff, finite-difference checks and the adjoint pair
=============================================================

Build a small graph by hand, pull gradients back through it, and confirm
them against central differences.  Then check that the transposed
convolution really is the adjoint of the stride-2 convolution.
"""

import numpy as np

from tumorseg import tensor as T
from tumorseg.gradcheck import PRIMITIVES, check_primitive, grad_check

rng = np.random.default_rng(0)

# A graph records ops only when one of their inputs is a registered parameter.
graph = T.Graph()
x = graph.parameter("x", np.array([-1.0, 2.0]))
loss = T.weighted_sum(T.relu(x))
print("d sum(relu(x)) / dx at x = [-1, 2]:", graph.backward(loss)["x"])

# conv -> relu -> pool -> softmax over two channels, in 64-bit
graph = T.Graph()
img = rng.standard_normal((1, 1, 6, 6))
w = graph.parameter("w", rng.standard_normal((2, 1, 3, 3)))
b = graph.parameter("b", np.zeros(2))
probs = T.softmax2(T.maxpool2d(T.relu(T.conv2d(img, w, b))))
out = T.weighted_sum(probs, rng.standard_normal(probs.shape))
grads = graph.backward(out)
print("grad shapes:", {k: v.shape for k, v in grads.items()})


# The same function again, written for grad_check: it receives Tensors keyed by name.
weights = rng.standard_normal((1, 2, 3, 3))


def fn(t):
    p = T.softmax2(T.maxpool2d(T.relu(T.conv2d(img, t["w"], t["b"]))))
    return T.weighted_sum(p, weights)


err = grad_check(fn, {"w": rng.standard_normal((2, 1, 3, 3)), "b": np.zeros(2)})
print(f"composed graph, max relative error: {err:.2e}")

# Every primitive on its own
for name, shape in PRIMITIVES.items():
    print(f"  {name:18s} {shape}  error {check_primitive(name, shape, seed=1):.1e}")

# Adjointness: <S u, y> == <u, S* y> where S is the stride-2 conv
u = rng.standard_normal((1, 3, 8, 8))
wt = rng.standard_normal((2, 3, 3, 3))
y = rng.standard_normal((1, 2, 4, 4))
lhs = np.vdot(T.conv2d_strided(u, wt), y)
rhs = np.vdot(u, T.transposed_conv2d(y, wt, np.zeros(3)).data)
print(f"<Su, y> = {lhs:.12f}\n<u, S*y> = {rhs:.12f}")
