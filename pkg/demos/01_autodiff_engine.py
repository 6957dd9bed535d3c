#!/usr/bin/env python3
"""Tour of the tensor engine: forward ops, the tape, and gradient checking.

Everything in this package runs on a small numpy-backed tensor library with
reverse-mode differentiation. This script builds a few graphs by hand and
verifies their gradients against central differences.
"""

import numpy as np

from ukt.gradcheck import finite_diff_check
from ukt.tensor import (
    Tape, Tensor, backward, elu, masked_softmax, matmul, sigmoid, tsum,
)

# A tensor is a numpy array plus a requires_grad flag. Ops behave like
# numpy (broadcasting included) and record themselves on the active tape.
x = Tensor(3.0, requires_grad=True)
with Tape():
    loss = x * x
    backward(loss)
print(f"d(x^2)/dx at x=3: {x.grad}  (expected 6)")

# Fan-out accumulates: both uses of x contribute.
x = Tensor(1.5, requires_grad=True)
with Tape():
    backward(x + x)
print(f"d(x+x)/dx: {x.grad}  (expected exactly 2)")

# Sigmoid at the origin has slope 1/4.
x = Tensor(0.0, requires_grad=True)
with Tape():
    backward(sigmoid(x))
print(f"sigmoid'(0): {x.grad}  (expected 0.25)")

# The masked softmax powers causal attention: masked entries are exactly 0
# and the rest form a proper distribution.
scores = Tensor([1.0, 1.0, 99.0])
weights = masked_softmax(scores, np.array([True, True, False]))
print(f"masked softmax of (1, 1, masked): {weights.data}")

# The same finite-difference oracle used by the test suite, on a small MLP.
rng = np.random.default_rng(0)
w1 = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 1)), requires_grad=True)
inputs = Tensor(rng.normal(size=(16, 4)))


def mlp_loss():
    hidden = elu(matmul(inputs, w1))
    return tsum(sigmoid(matmul(hidden, w2)))


report = finite_diff_check(mlp_loss, [("w1", w1), ("w2", w2)], epsilon=1e-5)
print(f"MLP gradient check: {report.summary()}")
assert report.passed(1e-6)
print("analytic gradients match central differences")
