"""Batch-level balance losses that keep latent states from collapsing.

All three losses read the batch probability matrix P (one row per
utterance pair, one column per latent state, rows summing to 1) and pull
it toward an assignment that spreads pairs across states:

- Balance&KL: a column-sum regularizer plus KL between P and its rowwise
  hard argmax.
- Greedy Balance: KL between P and a target built by a round-robin greedy
  assignment, guaranteeing near-equal column counts.
- Top Balance: KL between the identity and the matrix of each column's
  best row.

Targets are built from the current values of P and treated as constants:
no gradient flows through an argmax.  The combined objective is
``reconstruction + λ · balance``.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .errors import InputError, ParameterError, ShapeError
from .tensor import Tensor, add, as_tensor, gather_rows, kl_divergence, multiply, tensor_sum

_ROW_SUM_TOL = 1e-6


class BalanceLossKind(str, Enum):
    """Which batch balance loss the trainer applies."""

    BALANCE_KL = "balance_kl"
    GREEDY = "greedy"
    TOP = "top"
    NONE = "none"


def _require_matrix(P: Tensor) -> Tensor:
    P = as_tensor(P)
    if P.data.ndim != 2 or P.data.shape[0] < 1 or P.data.shape[1] < 1:
        raise ShapeError(f"expected a U x n probability matrix, got {P.data.shape}")
    return P


def _require_row_stochastic(P: Tensor) -> Tensor:
    P = _require_matrix(P)
    deviation = np.abs(P.data.sum(axis=1) - 1.0).max()
    if deviation > _ROW_SUM_TOL or (P.data < 0).any():
        raise InputError(
            f"matrix rows must be probability distributions "
            f"(max row-sum deviation {deviation:.3g})"
        )
    return P


def balance_regularizer(P: Tensor) -> Tensor:
    """Sum over columns of squared column sums, ‖P‖_b = Σ_j (Σ_i p_ij)².

    Over row-stochastic P the column sums add to U, so by convexity the
    value is minimized (at U²/n) exactly when all columns carry equal mass.
    """
    P = _require_row_stochastic(P)
    col_sums = tensor_sum(P, axis=0)
    return tensor_sum(multiply(col_sums, col_sums))


def hard_target(P) -> np.ndarray:
    """One-hot at each row's argmax (ties to the lowest index); a constant."""
    data = P.data if isinstance(P, Tensor) else np.asarray(P, dtype=np.float64)
    T = np.zeros_like(data)
    T[np.arange(data.shape[0]), data.argmax(axis=1)] = 1.0
    return T


def balance_kl_loss(P: Tensor) -> Tensor:
    """Column-balance regularizer plus KL(T ‖ P) with T the hard argmax of P."""
    P = _require_row_stochastic(P)
    return add(balance_regularizer(P), kl_divergence(hard_target(P), P))


def greedy_target(P) -> np.ndarray:
    """Round-robin greedy assignment matrix; a constant.

    Columns are visited cyclically in index order; each visit assigns the
    still-unassigned row with the highest probability in that column (ties
    to the lowest row).  Every row ends up in exactly one column and column
    counts differ by at most one.
    """
    data = P.data if isinstance(P, Tensor) else np.asarray(P, dtype=np.float64)
    n_rows, n_cols = data.shape
    T = np.zeros_like(data)
    remaining = data.copy()
    assigned = 0
    col = 0
    while assigned < n_rows:
        row = int(remaining[:, col].argmax())
        T[row, col] = 1.0
        remaining[row, :] = -np.inf
        assigned += 1
        col = (col + 1) % n_cols
    return T


def greedy_balance_loss(P: Tensor) -> Tensor:
    """KL between the round-robin greedy assignment and P."""
    P = _require_matrix(P)
    return kl_divergence(greedy_target(P), P)


def top_balance_loss(P: Tensor) -> Tensor:
    """KL between the identity and each column's highest-probability row.

    Column j selects row r_j = argmax_i P[i,j] (a row may serve several
    columns); the selected rows are stacked into an n×n matrix whose target
    is the identity.  Row selection is constant; the stacked values are not,
    so gradient flows into the selected rows of P.
    """
    P = _require_matrix(P)
    top_rows = P.data.argmax(axis=0)
    stacked = gather_rows(P, top_rows)
    return kl_divergence(np.eye(P.data.shape[1]), stacked)


def balance_loss(P: Tensor, kind: BalanceLossKind) -> Tensor:
    """Dispatch to the requested balance loss; NONE contributes zero."""
    kind = BalanceLossKind(kind)
    if kind is BalanceLossKind.BALANCE_KL:
        return balance_kl_loss(P)
    if kind is BalanceLossKind.GREEDY:
        return greedy_balance_loss(P)
    if kind is BalanceLossKind.TOP:
        return top_balance_loss(P)
    return Tensor(0.0)


def total_loss(mlm: Tensor, balance: Tensor, lam: float) -> Tensor:
    """Combined objective: reconstruction plus λ-scaled balance term."""
    if lam < 0:
        raise ParameterError(f"balance weight λ must be ≥ 0, got {lam}")
    return add(as_tensor(mlm), multiply(as_tensor(balance), float(lam)))
