"""Shared test utilities."""

import numpy as np

from dialstruct.tensor import Tensor


def fd_check(make_loss, arrays, rtol=1e-5, atol=1e-8, h=1e-5):
    """Compare analytic gradients of a scalar loss with central differences.

    ``make_loss`` rebuilds the scalar loss tensor from fresh ``Tensor``
    leaves each call, so finite differences see exactly the same forward
    computation the backward pass differentiates.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = make_loss(*tensors)
    assert loss.data.size == 1
    loss.backward()
    analytic = [t.grad.copy() for t in tensors]
    for k in range(len(arrays)):
        numeric = np.zeros_like(arrays[k])
        for idx in np.ndindex(arrays[k].shape):
            bumped = [a.copy() for a in arrays]
            bumped[k][idx] += h
            up = make_loss(*[Tensor(a) for a in bumped]).item()
            bumped[k][idx] -= 2 * h
            down = make_loss(*[Tensor(a) for a in bumped]).item()
            numeric[idx] = (up - down) / (2 * h)
        np.testing.assert_allclose(analytic[k], numeric, rtol=rtol, atol=atol)
    return analytic
