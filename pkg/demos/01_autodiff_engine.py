"""Tour of the reverse-mode engine: tensors, the tape, gradient checking.

Run: python3 demos/01_autodiff_engine.py
"""

import numpy as np

from pointfill import autodiff as ad

# Tensors wrap numpy arrays; leaves that should receive gradients are
# created with requires_grad=True.
x = ad.tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)

# While a Tape is active, primitives record their adjoints.
with ad.Tape() as tape:
    loss = ad.reduce_sum(ad.mul(x, x))  # sum of squares
print(f"loss = {loss.item():.1f} (tape holds {len(tape)} primitive records)")

tape.backward(loss)
print("d(sum x^2)/dx =", x.grad, "(expected 2x)")

# A less trivial composite: softmax attention weights over random logits.
rng = np.random.default_rng(0)
logits = ad.tensor(rng.standard_normal((4, 6)), requires_grad=True)
with ad.Tape() as tape:
    weights = ad.softmax_last(logits)
    score = ad.reduce_sum(ad.mul(weights, ad.constant(rng.standard_normal((4, 6)))))
tape.backward(score)
print("softmax rows sum to", weights.data.sum(axis=-1).round(12))
print("max |d score / d logits| =", float(np.abs(logits.grad).max()).__round__(4))

# grad_check compares the recorded adjoints against central differences.
probe = rng.standard_normal((5, 3))


def fn(a):
    return ad.reduce_sum(ad.mul(ad.relu(ad.linear(a, w, b)), ad.constant(probe)))


w = ad.tensor(rng.standard_normal((4, 3)), requires_grad=True)
b = ad.tensor(rng.standard_normal(3), requires_grad=True)
a = ad.tensor(rng.standard_normal((5, 4)) + 0.5, requires_grad=True)
report = ad.grad_check(fn, [a], eps=1e-5, tol=1e-4)
print("grad_check:", report.summary())
