"""Tour of the reverse-mode autodiff core the model is built on.

Tensors record their parents as operations run; ``backward()`` walks the
graph once in reverse topological order and accumulates gradients into
every leaf marked ``requires_grad``.  The same machinery drives the full
transformer, so a three-line example and the end-to-end model differ only
in graph size.
"""

import numpy as np

from dialstruct import RngState, Tensor
from dialstruct.tensor import (
    gumbel_softmax,
    matmul,
    relu,
    sample_gumbel,
    softmax,
    tensor_sum,
    multiply,
)

# --- a tiny computation, differentiated exactly -----------------------
x = Tensor(np.array([[1.0, -2.0], [0.5, 3.0]]), requires_grad=True)
w = Tensor(np.array([[2.0], [-1.0]]), requires_grad=True)
loss = tensor_sum(relu(matmul(x, w)))
loss.backward()
print("loss:", loss.item())
print("dloss/dx:\n", x.grad)
print("dloss/dw:\n", w.grad)

# --- spot-check one entry against central finite differences ----------
h = 1e-6
bumped = x.data.copy()
bumped[0, 0] += h
up = tensor_sum(relu(matmul(Tensor(bumped), Tensor(w.data)))).item()
bumped[0, 0] -= 2 * h
down = tensor_sum(relu(matmul(Tensor(bumped), Tensor(w.data)))).item()
print(f"\nanalytic dloss/dx[0,0] = {x.grad[0, 0]:+.6f}, "
      f"finite difference = {(up - down) / (2 * h):+.6f}")

# --- the straight-through Gumbel-Softmax discretizer -------------------
# Forward emits a hard one-hot sample; backward pretends the soft sample
# was used.  That is what lets a discrete state choice sit in the middle
# of a differentiable reconstruction loss.
logits = Tensor(np.array([[2.0, 0.5, 0.1], [0.2, 0.3, 2.5]]),
                requires_grad=True)
noise = sample_gumbel(RngState(4), logits.data.shape)
hard = gumbel_softmax(logits, tau=0.7, noise=noise, hard=True)
print("\nhard forward samples (one-hot rows):\n", hard.data)

mix = Tensor(np.arange(6.0).reshape(2, 3))
tensor_sum(multiply(hard, mix)).backward()
print("gradient that reached the logits (soft, nonzero everywhere):\n",
      logits.grad)

soft = softmax(Tensor(logits.data), axis=-1)
print("for reference, the soft distribution:\n", soft.data)
