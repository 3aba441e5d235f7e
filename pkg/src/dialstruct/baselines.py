"""Reference systems: K-Means over tf-idf pair vectors, and a discrete HMM.

Both baselines emit state sequences in the same shape as the neural model
(one state id per utterance pair, dialogue-segmented) so the evaluation
module can score them interchangeably.

The K-Means baseline clusters L2-normalized tf-idf vectors of each pair
(system and user text concatenated); the cluster id is the state.  The HMM
baseline quantizes pairs to K-Means cluster ids first, then fits hidden
states over those discrete symbols with Baum-Welch (scaled forward-backward)
and decodes with log-space Viterbi.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Dialogue
from .errors import InputError, NumericError, ParameterError
from .tensor import RngState
from .text import TfIdfModel, tokenize


def vectorize_pairs(dialogues: Sequence[Dialogue], tfidf: TfIdfModel
                    ) -> np.ndarray:
    """One L2-normalized tf-idf row per utterance pair, dialogue order.

    Feature columns are the fitted model's terms in sorted order; tokens
    outside the fitted vocabulary are ignored.  All-zero rows stay zero.
    """
    terms = sorted(tfidf.doc_freq)
    col = {t: i for i, t in enumerate(terms)}
    rows = []
    for d in dialogues:
        for pair in d.pairs:
            vec = np.zeros(len(terms))
            for tok in tokenize(pair.system_text + " " + pair.user_text):
                if tok in col:
                    vec[col[tok]] += tfidf.idf(tok)
            norm = np.linalg.norm(vec)
            if norm > 0:
                vec /= norm
            rows.append(vec)
    return np.asarray(rows)


@dataclass
class KMeansModel:
    """Fitted centroids plus the Lloyd-iteration inertia trace."""

    centroids: np.ndarray
    inertia: float
    n_iters: int
    inertia_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ParameterError(
                f"centroids must be a k×d matrix with k ≥ 1, got shape "
                f"{self.centroids.shape}"
            )
        if not np.all(np.isfinite(self.centroids)):
            raise NumericError("centroids must be finite")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def n_features(self) -> int:
        return self.centroids.shape[1]


def _nearest(X: np.ndarray, centroids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Labels (ties to the lowest centroid index) and squared distances."""
    d2 = ((X[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(X.shape[0]), labels]


def _kmeans_plus_plus(X: np.ndarray, k: int, rng: RngState) -> np.ndarray:
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(0, X.shape[0])]
    for i in range(1, k):
        d2 = ((X[:, None, :] - centroids[None, :i, :]) ** 2).sum(axis=2).min(axis=1)
        total = d2.sum()
        if total <= 0:  # cannot happen with ≥ k distinct points
            centroids[i] = X[rng.integers(0, X.shape[0])]
            continue
        r = rng.uniform() * total
        centroids[i] = X[int(np.searchsorted(np.cumsum(d2), r))]
    return centroids


def kmeans_fit(X: np.ndarray, k: int, rng: Optional[RngState] = None,
               max_iters: int = 100,
               init_centroids: Optional[np.ndarray] = None) -> KMeansModel:
    """Lloyd iterations from a k-means++ start (or explicit centroids).

    Stops at an assignment fixpoint or after ``max_iters``.  A cluster left
    empty by an update is reseeded to the point farthest from its centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InputError(f"kmeans needs a non-empty 2-D matrix, got {X.shape}")
    n_distinct = np.unique(X, axis=0).shape[0]
    if not 1 <= k <= n_distinct:
        raise ParameterError(
            f"k must be in [1, {n_distinct}] (distinct points), got {k}"
        )
    if init_centroids is not None:
        centroids = np.asarray(init_centroids, dtype=np.float64).copy()
        if centroids.shape != (k, X.shape[1]):
            raise ParameterError(
                f"init_centroids must be {(k, X.shape[1])}, got {centroids.shape}"
            )
    else:
        if rng is None:
            rng = RngState(0)
        centroids = _kmeans_plus_plus(X, k, rng)
    labels = np.full(X.shape[0], -1)
    history: List[float] = []
    for iteration in range(1, max_iters + 1):
        new_labels, d2 = _nearest(X, centroids)
        history.append(float(d2.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = X[labels == j]
            if len(members) > 0:
                centroids[j] = members.mean(axis=0)
        # Reseed any empty cluster to the currently worst-served point.
        _, d2_now = _nearest(X, centroids)
        for j in range(k):
            if not np.any(labels == j):
                far = int(d2_now.argmax())
                centroids[j] = X[far]
                d2_now[far] = 0.0
    final_labels, final_d2 = _nearest(X, centroids)
    return KMeansModel(centroids=centroids, inertia=float(final_d2.sum()),
                       n_iters=iteration, inertia_history=history)


def kmeans_assign(model: KMeansModel, X: np.ndarray) -> np.ndarray:
    """Nearest-centroid labels (ties to the lowest index)."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise InputError(
            f"points have {X.shape[1]} features, model expects "
            f"{model.n_features}"
        )
    return _nearest(X, model.centroids)[0]


def _require_stochastic(name: str, rows: np.ndarray):
    if np.any(rows < 0):
        raise InputError(f"{name} has negative entries")
    sums = rows.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > 1e-9):
        raise InputError(f"{name} rows must sum to 1 within 1e-9, got {sums}")


@dataclass
class HmmModel:
    """Discrete-emission HMM with its Baum-Welch log-likelihood trace."""

    pi: np.ndarray
    A: np.ndarray
    B: np.ndarray
    log_likelihoods: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        n = self.pi.shape[0]
        if self.pi.ndim != 1 or self.A.shape != (n, n) or \
                self.B.ndim != 2 or self.B.shape[0] != n:
            raise InputError(
                f"inconsistent HMM shapes: pi {self.pi.shape}, "
                f"A {self.A.shape}, B {self.B.shape}"
            )
        _require_stochastic("pi", self.pi[None, :])
        _require_stochastic("A", self.A)
        _require_stochastic("B", self.B)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    @property
    def n_symbols(self) -> int:
        return self.B.shape[1]


def _check_symbols(sequences: Sequence[Sequence[int]], n_symbols: int):
    for seq in sequences:
        for o in seq:
            if not 0 <= o < n_symbols:
                raise InputError(
                    f"symbol {o} outside the alphabet [0, {n_symbols})"
                )


def _forward_backward_batch(pi, A, B, obs):
    """Scaled forward-backward over a (S, T) block of equal-length sequences.

    Returns (alphas, betas, scales) with shapes (S, T, n), (S, T, n), (S, T).
    """
    S, T = obs.shape
    n = len(pi)
    alphas = np.empty((S, T, n))
    scales = np.empty((S, T))
    a = pi[None, :] * B[:, obs[:, 0]].T
    scales[:, 0] = a.sum(axis=1)
    if np.any(scales[:, 0] <= 0):
        raise NumericError("observation sequence impossible under the model")
    alphas[:, 0] = a / scales[:, 0, None]
    for t in range(1, T):
        a = (alphas[:, t - 1] @ A) * B[:, obs[:, t]].T
        scales[:, t] = a.sum(axis=1)
        if np.any(scales[:, t] <= 0):
            raise NumericError(
                "observation sequence impossible under the model"
            )
        alphas[:, t] = a / scales[:, t, None]
    betas = np.empty((S, T, n))
    betas[:, T - 1] = 1.0
    for t in range(T - 2, -1, -1):
        betas[:, t] = ((betas[:, t + 1] * B[:, obs[:, t + 1]].T) @ A.T
                       / scales[:, t + 1, None])
    return alphas, betas, scales


def _baum_welch(sequences, n_states, n_symbols, rng, max_iters, tol):
    pi = rng.uniform(size=n_states) + 0.1
    pi /= pi.sum()
    A = rng.uniform(size=(n_states, n_states)) + 0.1
    A /= A.sum(axis=1, keepdims=True)
    B = rng.uniform(size=(n_states, n_symbols)) + 0.1
    B /= B.sum(axis=1, keepdims=True)
    by_length: dict = {}
    for seq in sequences:
        by_length.setdefault(len(seq), []).append(seq)
    groups = [np.asarray(seqs, dtype=np.int64)
              for _, seqs in sorted(by_length.items())]
    history: List[float] = []
    for _ in range(max_iters):
        pi_acc = np.zeros(n_states)
        xi_outer = np.zeros((n_states, n_states))
        gamma_from_acc = np.zeros(n_states)
        emit_by_symbol = np.zeros((n_symbols, n_states))
        gamma_acc = np.zeros(n_states)
        loglik = 0.0
        for obs in groups:
            alphas, betas, scales = _forward_backward_batch(pi, A, B, obs)
            loglik += float(np.log(scales).sum())
            gamma = alphas * betas
            gamma /= gamma.sum(axis=2, keepdims=True)
            pi_acc += gamma[:, 0].sum(axis=0)
            np.add.at(emit_by_symbol, obs.ravel(),
                      gamma.reshape(-1, n_states))
            gamma_acc += gamma.sum(axis=(0, 1))
            if obs.shape[1] > 1:
                # xi_t = A ⊙ outer(alpha_t, B[:, o_{t+1}]·beta_{t+1}/c_{t+1});
                # only the summed outer product is needed for the M-step.
                v = (betas[:, 1:] * B[:, obs[:, 1:]].transpose(1, 2, 0)
                     / scales[:, 1:, None])
                u = alphas[:, :-1].reshape(-1, n_states)
                xi_outer += u.T @ v.reshape(-1, n_states)
                gamma_from_acc += gamma[:, :-1].sum(axis=(0, 1))
        history.append(loglik)
        if len(history) >= 2 and history[-1] - history[-2] < tol:
            break
        pi = pi_acc / pi_acc.sum()
        A = np.where(gamma_from_acc[:, None] > 0,
                     A * xi_outer / np.maximum(gamma_from_acc[:, None],
                                               1e-300),
                     1.0 / n_states)
        A /= A.sum(axis=1, keepdims=True)
        B = np.where(gamma_acc[:, None] > 0,
                     emit_by_symbol.T / np.maximum(gamma_acc[:, None],
                                                   1e-300),
                     1.0 / n_symbols)
        B /= B.sum(axis=1, keepdims=True)
    return HmmModel(pi=pi, A=A, B=B, log_likelihoods=history)


def hmm_fit(sequences: Sequence[Sequence[int]], n_states: int,
            rng: Optional[RngState] = None, max_iters: int = 100,
            tol: float = 1e-6, n_symbols: Optional[int] = None,
            n_restarts: int = 1) -> HmmModel:
    """Baum-Welch over discrete symbol sequences; best of ``n_restarts``.

    The per-iteration log-likelihood history is kept on the model; EM
    guarantees it is non-decreasing.
    """
    sequences = [list(s) for s in sequences if len(s) > 0]
    if not sequences:
        raise InputError("hmm_fit: no non-empty observation sequences")
    if n_states < 1:
        raise ParameterError(f"n_states must be ≥ 1, got {n_states}")
    if n_restarts < 1:
        raise ParameterError(f"n_restarts must be ≥ 1, got {n_restarts}")
    if n_symbols is None:
        n_symbols = max(max(s) for s in sequences) + 1
    _check_symbols(sequences, n_symbols)
    if rng is None:
        rng = RngState(0)
    best: Optional[HmmModel] = None
    for r in range(n_restarts):
        model = _baum_welch(sequences, n_states, n_symbols,
                            rng.derive(f"bw-restart-{r}"), max_iters, tol)
        if best is None or model.log_likelihoods[-1] > best.log_likelihoods[-1]:
            best = model
    return best


def hmm_decode(model: HmmModel, seq: Sequence[int]) -> List[int]:
    """Log-space Viterbi path.  Symbols outside the alphabet emit uniformly
    (with a warning) instead of crashing."""
    seq = list(seq)
    if not seq:
        return []
    n, V = model.n_states, model.n_symbols
    with np.errstate(divide="ignore"):
        log_pi = np.log(model.pi)
        log_A = np.log(model.A)
        log_B = np.log(model.B)
    uniform_emission = np.full(n, -np.log(V))

    def emission(symbol):
        if 0 <= symbol < V:
            return log_B[:, symbol]
        warnings.warn(
            f"symbol {symbol} outside the alphabet [0, {V}); "
            "using a uniform emission row",
            stacklevel=2,
        )
        return uniform_emission

    T = len(seq)
    dp = np.empty((T, n))
    back = np.zeros((T, n), dtype=np.int64)
    dp[0] = log_pi + emission(seq[0])
    for t in range(1, T):
        cand = dp[t - 1][:, None] + log_A
        back[t] = cand.argmax(axis=0)
        dp[t] = cand[back[t], np.arange(n)] + emission(seq[t])
    path = [int(dp[T - 1].argmax())]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    return path[::-1]


def hmm_sample(model: HmmModel, n_sequences: int, length: int, rng: RngState
               ) -> Tuple[List[List[int]], List[List[int]]]:
    """Draw (state, symbol) sequences from the model; used by recovery tests."""
    states_out, symbols_out = [], []
    for _ in range(n_sequences):
        states, symbols = [], []
        s = rng.choice(model.n_states, p=model.pi)
        for _ in range(length):
            states.append(s)
            symbols.append(rng.choice(model.n_symbols, p=model.B[s]))
            s = rng.choice(model.n_states, p=model.A[s])
        states_out.append(states)
        symbols_out.append(symbols)
    return states_out, symbols_out


def _pair_counts(dialogues: Sequence[Dialogue]) -> List[int]:
    return [len(d.pairs) for d in dialogues]


def _segment(flat: np.ndarray, counts: Sequence[int]) -> List[List[int]]:
    out, cursor = [], 0
    for c in counts:
        out.append([int(x) for x in flat[cursor:cursor + c]])
        cursor += c
    return out


def kmeans_baseline(dialogues: Sequence[Dialogue], tfidf: TfIdfModel, k: int,
                    rng: Optional[RngState] = None) -> List[List[int]]:
    """Cluster ids as states, segmented back into dialogues."""
    X = vectorize_pairs(dialogues, tfidf)
    model = kmeans_fit(X, k, rng=rng)
    return _segment(kmeans_assign(model, X), _pair_counts(dialogues))


def hmm_baseline(dialogues: Sequence[Dialogue], tfidf: TfIdfModel,
                 n_states: int, n_symbols: int,
                 rng: Optional[RngState] = None, max_iters: int = 50,
                 n_restarts: int = 3) -> List[List[int]]:
    """K-Means-quantized observations, HMM states decoded per dialogue."""
    if rng is None:
        rng = RngState(0)
    X = vectorize_pairs(dialogues, tfidf)
    quantizer = kmeans_fit(X, n_symbols, rng=rng.derive("quantize"))
    symbols = _segment(kmeans_assign(quantizer, X), _pair_counts(dialogues))
    model = hmm_fit(symbols, n_states, rng=rng.derive("hmm"),
                    max_iters=max_iters, n_symbols=n_symbols,
                    n_restarts=n_restarts)
    return [hmm_decode(model, seq) for seq in symbols]
