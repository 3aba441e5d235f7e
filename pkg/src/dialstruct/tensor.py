"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is built eagerly: every operation returns a new
``Tensor`` holding its value, its parents, and a closure that scatters the
upstream gradient back to those parents.  ``Tensor.backward()`` on a scalar
runs the closures in reverse topological order.  This is deliberately small:
just enough machinery to express an encoder-decoder transformer, a
Gumbel-Softmax bottleneck, and the batch-level balance losses, all in
float64 so gradients can be checked against central finite differences.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NumericError, ParameterError, ShapeError

# Single global epsilon: clamps the argument of every log in the package.
EPS = 1e-12

# Epsilon inside layer-norm variance; unrelated to the log clamp above.
LAYER_NORM_EPS = 1e-5


class RngState:
    """Deterministic random stream (PCG64) identified by a 64-bit seed.

    Two instances built from the same seed yield bitwise-identical sample
    sequences.  ``derive`` produces an independent child stream from a tag,
    so one run seed can deterministically feed init / sampling / shuffling.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def derive(self, tag: str) -> "RngState":
        digest = hashlib.sha256(f"{self.seed}:{tag}".encode()).digest()
        return RngState(int.from_bytes(digest[:8], "little"))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size)

    def integers(self, low: int, high: Optional[int] = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, p=None) -> int:
        return int(self._gen.choice(n, p=p))


class Tensor:
    """A numpy float64 array plus optional gradient and graph linkage."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-mode pass from a scalar; accumulates into ``.grad``."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar, got shape {self.data.shape}"
            )
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        for node in topo:
            if node.requires_grad and node.grad is None:
                node.grad = np.zeros_like(node.data)
        self.grad = self.grad if self.grad is not None else np.zeros_like(self.data)
        self.grad += np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; all graph construction happens in the module functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __sub__(self, other):
        return add(self, multiply(other, -1.0))

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if t.requires_grad:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``g`` down to ``shape`` to undo numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), backward)


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), backward)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}"
        )
    data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g.T)

    return _make(a.data.T, (a,), backward)


def tensor_sum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.full_like(a.data, float(np.asarray(g).reshape(()))))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(ge, a.data.shape).copy())

    return _make(data, (a,), backward)


def mean(a: Tensor) -> Tensor:
    a = as_tensor(a)
    return multiply(tensor_sum(a), 1.0 / a.data.size)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accumulate(t, g[tuple(idx)])

    return _make(data, tensors, backward)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Rows ``a[indices]``; the gradient scatter-adds back, so repeated
    indices sum their contributions."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            np.add.at(a.grad, idx, g)

    return _make(data, (a,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    return gather_rows(table, ids)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if a.requires_grad:
            if a.grad is None:
                a.grad = np.zeros_like(a.data)
            a.grad[:, start:stop] += g

    return _make(a.data[:, start:stop].copy(), (a,), backward)


def relu(a: Tensor) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def backward(g):
        _accumulate(a, g * mask)

    return _make(a.data * mask, (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stabilized softmax along ``axis``; rows sum to 1."""
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise NumericError("softmax: input contains NaN")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        _accumulate(a, s * (g - inner))

    return _make(s, (a,), backward)


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor,
               eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gain.data + bias.data

    def backward(g):
        reduce_axes = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=reduce_axes))
        _accumulate(bias, g.sum(axis=reduce_axes))
        dxhat = g * gain.data
        term1 = dxhat.mean(axis=-1, keepdims=True)
        term2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accumulate(a, inv * (dxhat - term1 - xhat * term2))

    return _make(data, (a, gain, bias), backward)


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight + bias`` (bias broadcast over rows)."""
    return add(matmul(x, weight), bias)


def multi_head_self_attention(x: Tensor, wq: Tensor, bq: Tensor,
                              wk: Tensor, bk: Tensor,
                              wv: Tensor, bv: Tensor,
                              wo: Tensor, bo: Tensor,
                              n_heads: int,
                              score_bias: Optional[np.ndarray] = None) -> Tensor:
    """Full (non-causal) scaled dot-product self-attention over rows of x.

    ``score_bias`` is an optional constant L×L matrix added to the pre-softmax
    scores of every head (an attention prior; it carries no gradient).
    """
    d = x.data.shape[1]
    if d % n_heads != 0:
        raise ShapeError(f"attention: width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    q = linear(x, wq, bq)
    k = linear(x, wk, bk)
    v = linear(x, wv, bv)
    heads = []
    scale = 1.0 / np.sqrt(dh)
    bias = None
    if score_bias is not None:
        bias = Tensor(np.asarray(score_bias, dtype=np.float64))
        if bias.data.shape != (x.data.shape[0], x.data.shape[0]):
            raise ShapeError(
                f"attention: score_bias shape {bias.data.shape} does not match "
                f"sequence length {x.data.shape[0]}")
    for h in range(n_heads):
        qh = slice_cols(q, h * dh, (h + 1) * dh)
        kh = slice_cols(k, h * dh, (h + 1) * dh)
        vh = slice_cols(v, h * dh, (h + 1) * dh)
        scores = multiply(matmul(qh, transpose(kh)), scale)
        if bias is not None:
            scores = add(scores, bias)
        attn = softmax(scores, axis=-1)
        heads.append(matmul(attn, vh))
    merged = heads[0] if n_heads == 1 else concat(heads, axis=1)
    return linear(merged, wo, bo)


def sample_gumbel(rng: RngState, shape) -> np.ndarray:
    """g = -log(-log(u)), u ~ Uniform(0,1), clamped away from log(0)."""
    u = np.maximum(rng.uniform(size=shape), EPS)
    return -np.log(-np.log(u))


def gumbel_softmax(logits: Tensor, tau: float, rng: Optional[RngState] = None,
                   hard: bool = True, noise: Optional[np.ndarray] = None) -> Tensor:
    """Rowwise Gumbel-Softmax sample over the last axis.

    With ``hard=True`` the forward value is one-hot at the perturbed argmax
    while the backward pass uses the soft distribution (straight-through).
    ``noise`` overrides sampling so checks can fix the perturbation.
    """
    logits = as_tensor(logits)
    if tau <= 0:
        raise ParameterError(f"gumbel_softmax: tau must be > 0, got {tau}")
    if noise is None:
        if rng is None:
            raise ParameterError("gumbel_softmax: need an RngState or explicit noise")
        noise = sample_gumbel(rng, logits.data.shape)
    z = (logits.data + noise) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    soft = e / e.sum(axis=-1, keepdims=True)
    if hard:
        out = np.zeros_like(soft)
        flat = soft.reshape(-1, soft.shape[-1])
        hot = flat.argmax(axis=-1)
        out.reshape(-1, soft.shape[-1])[np.arange(flat.shape[0]), hot] = 1.0
    else:
        out = soft

    def backward(g):
        inner = (g * soft).sum(axis=-1, keepdims=True)
        _accumulate(logits, soft * (g - inner) / tau)

    return _make(out, (logits,), backward)


def cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Mean of -log softmax(logits)[i, target_i] over unmasked positions."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be 2-D, got {logits.data.shape}")
    tgt = np.asarray(targets, dtype=np.int64)
    n, vocab = logits.data.shape
    if tgt.shape != (n,):
        raise ShapeError(f"cross_entropy: {tgt.shape[0]} targets for {n} rows")
    if tgt.min(initial=0) < 0 or tgt.max(initial=-1) >= vocab:
        raise IndexError(
            f"cross_entropy: target id out of range [0, {vocab})"
        )
    if mask is None:
        w = np.ones(n)
    else:
        w = np.asarray(mask, dtype=np.float64)
    count = w.sum()
    if count <= 0:
        raise ParameterError("cross_entropy: mask removes every position")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    rows = np.arange(n)
    data = -(logp[rows, tgt] * w).sum() / count

    def backward(g):
        grad = np.exp(logp)
        grad[rows, tgt] -= 1.0
        grad *= (w / count)[:, None]
        _accumulate(logits, grad * g)

    return _make(np.asarray(data), (logits,), backward)


def kl_divergence(target, p: Tensor) -> Tensor:
    """Sum of target * (log target - log p); the target side is a constant.

    Uses 0*log(0) = 0 on the target and clamps ``p`` below at the global
    epsilon inside the log.  No gradient flows into ``target`` by design:
    balance-loss targets are built from argmax and are non-differentiable.
    """
    t = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    p = as_tensor(p)
    if t.shape != p.data.shape:
        raise ShapeError(f"kl_divergence: shapes {t.shape} vs {p.data.shape}")
    pc = np.maximum(p.data, EPS)
    with np.errstate(divide="ignore", invalid="ignore"):
        tlogt = np.where(t > 0, t * np.log(np.maximum(t, EPS)), 0.0)
    data = (tlogt - t * np.log(pc)).sum()

    def backward(g):
        grad = np.where(p.data > EPS, -t / pc, 0.0)
        _accumulate(p, grad * g)

    return _make(np.asarray(data), (p,), backward)


def adam_step(param: Tensor, m: np.ndarray, v: np.ndarray, t: int,
              lr: float, beta1: float, beta2: float, eps: float):
    """One adaptive-moment update in place; ``m``/``v`` updated in place too."""
    g = param.grad
    if g is None:
        return
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param.data -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adaptive-moment optimizer over a fixed parameter list."""

    def __init__(self, params: Iterable[Tensor], lr: float = 3e-4,
                 betas: tuple = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            adam_step(p, m, v, self.t, self.lr, self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
