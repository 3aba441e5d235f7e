"""Structure metrics: transition estimation, projection, SED/SCE, DOT export.

A learned structure is compared to ground truth in three steps.  First,
transition matrices are estimated from state-sequence bigrams (T from gold
labels, T′ from predictions).  Second, row-stochastic mapping matrices
between gold and predicted state spaces are counted from co-occurrences,
and T′ is projected into gold space as T″ = P_{gold→pred} · T′ ·
P_{pred→gold}.  Third, the distance between T and T″ is summarized as

    SED = ‖T″ − T‖_F / N        (structure euclidean distance)
    SCE = Σ −ln(max(T″, ε)) ⊙ T / N   (structure cross-entropy)

Because the mapping matrices are counted, any bijective relabeling of the
predictions permutes them exactly and leaves both metrics unchanged.
Projection is computed literally; when it produces rows that are not
stochastic, they are flagged, never renormalized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import CorpusParseError, InputError, ParameterError

SCE_EPSILON = 1e-12


@dataclass
class TransitionMatrix:
    """Bigram-estimated (or given) transition probabilities with raw counts."""

    probs: np.ndarray
    counts: np.ndarray
    uniform_rows: Tuple[int, ...] = ()        # no observations; set uniform
    non_stochastic_rows: Tuple[int, ...] = () # projection output off row-sum 1

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.probs.ndim != 2 or self.probs.shape[0] != self.probs.shape[1]:
            raise InputError(f"transition matrix must be square, got "
                             f"{self.probs.shape}")
        if self.counts.shape != self.probs.shape:
            raise InputError("counts and probs must have the same shape")

    @property
    def n(self) -> int:
        return self.probs.shape[0]


@dataclass
class MappingMatrix:
    """Row-stochastic conditional frequencies from source to target states."""

    probs: np.ndarray
    counts: np.ndarray
    unoccupied_rows: Tuple[int, ...] = ()  # source states never observed

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.counts = np.asarray(self.counts, dtype=np.float64)
        if self.probs.ndim != 2:
            raise InputError("mapping matrix must be 2-D")

    @property
    def n_source(self) -> int:
        return self.probs.shape[0]

    @property
    def n_target(self) -> int:
        return self.probs.shape[1]


@dataclass
class GraphNode:
    state: int
    label: str
    occupancy: int


@dataclass
class GraphEdge:
    source: int
    target: int
    probability: float


@dataclass
class StructureGraph:
    """Thresholded transition graph ready for DOT rendering."""

    nodes: List[GraphNode]
    edges: List[GraphEdge]


def _validate_labels(sequences: Sequence[Sequence[int]], n: int, what: str):
    for seq in sequences:
        for s in seq:
            if not 0 <= s < n:
                raise InputError(f"{what} state id {s} outside [0, {n})")


def estimate_transition(sequences: Sequence[Sequence[int]], n: int,
                        epsilon: float = 0.0) -> TransitionMatrix:
    """Row-normalized bigram counts over adjacent state pairs.

    With ``epsilon`` = 0, rows that were never observed as a bigram source
    become uniform and are flagged in ``uniform_rows``.
    """
    if n < 1:
        raise ParameterError(f"state count must be ≥ 1, got {n}")
    if epsilon < 0:
        raise ParameterError(f"smoothing epsilon must be ≥ 0, got {epsilon}")
    _validate_labels(sequences, n, "observed")
    counts = np.zeros((n, n))
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            counts[a, b] += 1
    probs = np.empty_like(counts)
    uniform: List[int] = []
    for i in range(n):
        denom = counts[i].sum() + n * epsilon
        if denom > 0:
            probs[i] = (counts[i] + epsilon) / denom
        else:
            probs[i] = 1.0 / n
            uniform.append(i)
    return TransitionMatrix(probs=probs, counts=counts,
                            uniform_rows=tuple(uniform))


def mapping_matrix(gold: Sequence[int], pred: Sequence[int], n_gold: int,
                   n_pred: int, direction: str = "gold_to_pred"
                   ) -> MappingMatrix:
    """Conditional co-occurrence frequencies between the two label sets.

    ``gold_to_pred`` rows are gold states, columns predicted states, each
    entry the fraction of that gold state's pairs labeled with the predicted
    state; ``pred_to_gold`` is the transpose orientation.  Source states
    that never occur get uniform rows and are flagged.
    """
    if len(gold) != len(pred):
        raise InputError(
            f"label lists differ in length: {len(gold)} gold vs {len(pred)} "
            "predicted"
        )
    if direction not in ("gold_to_pred", "pred_to_gold"):
        raise ParameterError(f"unknown direction {direction!r}")
    _validate_labels([gold], n_gold, "gold")
    _validate_labels([pred], n_pred, "predicted")
    joint = np.zeros((n_gold, n_pred))
    for g, p in zip(gold, pred):
        joint[g, p] += 1
    counts = joint if direction == "gold_to_pred" else joint.T
    probs = np.empty_like(counts)
    unoccupied: List[int] = []
    for i in range(counts.shape[0]):
        total = counts[i].sum()
        if total > 0:
            probs[i] = counts[i] / total
        else:
            probs[i] = 1.0 / counts.shape[1]
            unoccupied.append(i)
    return MappingMatrix(probs=probs, counts=counts,
                         unoccupied_rows=tuple(unoccupied))


def project_transition(t_pred: TransitionMatrix, map_gold_pred: MappingMatrix,
                       map_pred_gold: MappingMatrix) -> TransitionMatrix:
    """Project predicted transitions into gold space:
    T″ = P_{gold→pred} · T′ · P_{pred→gold}.

    Computed literally; rows whose sum drifts from 1 by more than 1e-9 are
    flagged in ``non_stochastic_rows`` but never renormalized.
    """
    n = map_gold_pred.n_source
    m = t_pred.n
    if map_gold_pred.n_target != m or map_pred_gold.n_source != m \
            or map_pred_gold.n_target != n:
        raise InputError(
            f"inconsistent projection shapes: gold→pred {map_gold_pred.probs.shape}, "
            f"T′ {t_pred.probs.shape}, pred→gold {map_pred_gold.probs.shape}"
        )
    projected = map_gold_pred.probs @ t_pred.probs @ map_pred_gold.probs
    off = np.nonzero(np.abs(projected.sum(axis=1) - 1.0) > 1e-9)[0]
    return TransitionMatrix(probs=projected, counts=np.zeros_like(projected),
                            non_stochastic_rows=tuple(int(i) for i in off))


def _as_probs(t) -> np.ndarray:
    return t.probs if isinstance(t, TransitionMatrix) else np.asarray(
        t, dtype=np.float64)


def sed(t_true, t_proj) -> float:
    """Frobenius norm of (T″ − T) divided by the state count."""
    a, b = _as_probs(t_true), _as_probs(t_proj)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((b - a) ** 2).sum()) / a.shape[0])


def _sce_with_flag(t_true, t_proj, epsilon: float) -> Tuple[float, bool]:
    a, b = _as_probs(t_true), _as_probs(t_proj)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    if epsilon <= 0:
        raise ParameterError(f"sce epsilon must be > 0, got {epsilon}")
    clamped = bool(((b < epsilon) & (a > 0)).any())
    value = float((-np.log(np.maximum(b, epsilon)) * a).sum() / a.shape[0])
    return value, clamped


def sce(t_true, t_proj, epsilon: float = SCE_EPSILON) -> float:
    """Cross-entropy of T against T″ (clamped below at ε), divided by N."""
    return _sce_with_flag(t_true, t_proj, epsilon)[0]


@dataclass
class EvaluationReport:
    """SED/SCE plus every intermediate matrix, for inspection and logging."""

    sed: float
    sce: float
    clamped: bool
    n_true: int
    n_pred: int
    t_true: TransitionMatrix
    t_pred: TransitionMatrix
    t_proj: TransitionMatrix
    map_gold_pred: MappingMatrix
    map_pred_gold: MappingMatrix

    def to_dict(self, include_matrices: bool = True) -> dict:
        out = {
            "sed": self.sed,
            "sce": self.sce,
            "clamped": self.clamped,
            "n_true": self.n_true,
            "n_pred": self.n_pred,
        }
        if include_matrices:
            out["t_true"] = self.t_true.probs.tolist()
            out["t_pred"] = self.t_pred.probs.tolist()
            out["t_proj"] = self.t_proj.probs.tolist()
            out["map_gold_pred"] = self.map_gold_pred.probs.tolist()
            out["map_pred_gold"] = self.map_pred_gold.probs.tolist()
            out["t_proj_non_stochastic_rows"] = list(
                self.t_proj.non_stochastic_rows)
        return out


def evaluate(gold_sequences: Sequence[Sequence[int]],
             pred_sequences: Sequence[Sequence[int]], n_true: int, n_pred: int,
             epsilon: float = SCE_EPSILON) -> EvaluationReport:
    """Estimate, map, project, and score a prediction against gold labels."""
    if len(gold_sequences) != len(pred_sequences):
        raise InputError(
            f"{len(gold_sequences)} gold dialogues vs {len(pred_sequences)} "
            "predicted"
        )
    for i, (g, p) in enumerate(zip(gold_sequences, pred_sequences)):
        if len(g) != len(p):
            raise InputError(
                f"dialogue {i}: {len(g)} gold labels vs {len(p)} predicted"
            )
    t_true = estimate_transition(gold_sequences, n_true)
    t_pred = estimate_transition(pred_sequences, n_pred)
    flat_gold = [s for seq in gold_sequences for s in seq]
    flat_pred = [s for seq in pred_sequences for s in seq]
    map_gp = mapping_matrix(flat_gold, flat_pred, n_true, n_pred,
                            "gold_to_pred")
    map_pg = mapping_matrix(flat_gold, flat_pred, n_true, n_pred,
                            "pred_to_gold")
    t_proj = project_transition(t_pred, map_gp, map_pg)
    sed_value = sed(t_true, t_proj)
    sce_value, clamped = _sce_with_flag(t_true, t_proj, epsilon)
    return EvaluationReport(
        sed=sed_value, sce=sce_value, clamped=clamped, n_true=n_true,
        n_pred=n_pred, t_true=t_true, t_pred=t_pred, t_proj=t_proj,
        map_gold_pred=map_gp, map_pred_gold=map_pg,
    )


def state_occupancy(sequences: Sequence[Sequence[int]], n: int) -> np.ndarray:
    """How many pairs were assigned to each state."""
    _validate_labels(sequences, n, "observed")
    occ = np.zeros(n, dtype=np.int64)
    for seq in sequences:
        for s in seq:
            occ[s] += 1
    return occ


def extract_structure(t: TransitionMatrix,
                      labels: Optional[Sequence[str]] = None,
                      threshold: float = 0.0,
                      occupancy: Optional[Sequence[int]] = None
                      ) -> StructureGraph:
    """Keep edges with probability ≥ threshold; nodes that occur or connect.

    ``occupancy`` defaults to each state's outgoing bigram count.  A node is
    kept when its occupancy is positive or it touches a kept edge, so
    absorbing states (observed only as targets) stay in the graph.
    """
    if not 0.0 <= threshold < 1.0:
        raise ParameterError(
            f"threshold must be in [0, 1), got {threshold}"
        )
    if labels is not None and len(labels) != t.n:
        raise InputError(f"{len(labels)} labels for {t.n} states")
    if occupancy is None:
        occ = t.counts.sum(axis=1).astype(np.int64)
    else:
        occ = np.asarray(occupancy, dtype=np.int64)
        if occ.shape != (t.n,):
            raise InputError(f"occupancy must have length {t.n}")
    edges = [
        GraphEdge(source=i, target=j, probability=float(t.probs[i, j]))
        for i in range(t.n)
        for j in range(t.n)
        if t.probs[i, j] >= threshold and t.probs[i, j] > 0.0
    ]
    keep = {i for i in range(t.n) if occ[i] > 0}
    keep.update(e.source for e in edges)
    keep.update(e.target for e in edges)
    nodes = [
        GraphNode(state=i,
                  label=labels[i] if labels is not None else f"s{i}",
                  occupancy=int(occ[i]))
        for i in sorted(keep)
    ]
    return StructureGraph(nodes=nodes, edges=edges)


def export_dot(graph: StructureGraph) -> str:
    """Deterministic DOT text: nodes sorted by state, edges by (from, to)."""
    lines = ["digraph dialogue_structure {", "  rankdir=LR;"]
    for node in sorted(graph.nodes, key=lambda n: n.state):
        label = node.label
        if node.occupancy > 0:
            label = f"{label} ({node.occupancy})"
        lines.append(f'  s{node.state} [label="{label}"];')
    for edge in sorted(graph.edges, key=lambda e: (e.source, e.target)):
        lines.append(
            f'  s{edge.source} -> s{edge.target} '
            f'[label="{edge.probability:.2f}"];'
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_state_sequences(path, items: Sequence[Tuple[str, Sequence[int]]]
                          ) -> None:
    """JSON-lines dump: one {dialogue_id, states} object per line."""
    lines = [
        json.dumps({"dialogue_id": did, "states": list(states)},
                   sort_keys=True)
        for did, states in items
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_state_sequences(path) -> List[Tuple[str, List[int]]]:
    items: List[Tuple[str, List[int]]] = []
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(
                f"{path}:{lineno}: not valid JSON: {exc}"
            ) from exc
        if "dialogue_id" not in obj or "states" not in obj:
            raise CorpusParseError(
                f"{path}:{lineno}: needs dialogue_id and states"
            )
        items.append((obj["dialogue_id"], [int(s) for s in obj["states"]]))
    return items
