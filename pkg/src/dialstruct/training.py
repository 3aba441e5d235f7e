"""Mini-batch training loop for the dialogue-state model.

Batches are whole dialogues (state distributions are only meaningful over
intact dialogues).  Each epoch shuffles dialogue order, anneals the Gumbel
temperature, optionally augments encoder input with tf-idf keywords for the
first few epochs (reconstruction targets stay clean), applies the configured
balance loss, and logs one JSON record: MLM loss, balance loss, state-usage
histogram, and SED/SCE when gold labels exist.  The best model by SED (or by
total loss on unlabeled corpora) is what the run returns and checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Dialogue
from .errors import CapacityError, InputError, NumericError, ParameterError
from .evaluation import evaluate
from .losses import BalanceLossKind, balance_loss, total_loss
from .model import (
    DialogueStateModel,
    EncodedDialogue,
    ModelConfig,
    TauSchedule,
    build_input,
)
from .tensor import Adam, RngState
from .text import TfIdfModel, Vocabulary, extract_keywords, fit_tfidf


@dataclass
class TrainConfig:
    """Training-loop knobs; architecture lives in ``ModelConfig``."""

    epochs: int = 30
    batch_size: int = 8
    loss: BalanceLossKind = BalanceLossKind.BALANCE_KL
    balance_weight: Optional[float] = None      # None → ModelConfig's λ
    e_greedy: int = 5
    after_greedy: BalanceLossKind = BalanceLossKind.NONE
    learning_rate: float = 3e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    tau: Optional[TauSchedule] = None           # None → ModelConfig's schedule
    e_keywords: int = 3
    n_keywords: int = 3
    seed: int = 0
    checkpoint_path: Optional[str] = None
    log_path: Optional[str] = None
    eval_every: int = 1

    def __post_init__(self):
        self.loss = BalanceLossKind(self.loss)
        self.after_greedy = BalanceLossKind(self.after_greedy)
        if self.after_greedy is BalanceLossKind.GREEDY:
            raise ParameterError(
                "after_greedy must be one of none|balance_kl|top"
            )
        if isinstance(self.tau, dict):
            self.tau = TauSchedule(**self.tau)
        if self.epochs < 0 or self.e_greedy < 0 or self.e_keywords < 0:
            raise ParameterError("epoch counts must be ≥ 0")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be ≥ 1, got {self.batch_size}")
        if self.n_keywords < 1:
            raise ParameterError(f"n_keywords must be ≥ 1, got {self.n_keywords}")
        if self.eval_every < 1:
            raise ParameterError(f"eval_every must be ≥ 1, got {self.eval_every}")
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if self.balance_weight is not None and self.balance_weight < 0:
            raise ParameterError("balance_weight must be ≥ 0")


@dataclass
class TrainResult:
    """Best model plus everything needed to reuse or audit the run."""

    model: DialogueStateModel
    vocab: Vocabulary
    tfidf: TfIdfModel
    log: List[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_metric: Optional[float] = None


@dataclass
class PredictionResult:
    """Per-dialogue state sequences; failures recorded, not fatal."""

    sequences: List[Optional[List[int]]]
    errors: List[Tuple[str, str]] = field(default_factory=list)

    def items(self, dialogues: Sequence[Dialogue]
              ) -> List[Tuple[str, List[int]]]:
        """(dialogue_id, states) pairs for the dialogues that succeeded."""
        return [(d.id, seq) for d, seq in zip(dialogues, self.sequences)
                if seq is not None]


def _corpus_texts(dialogues: Sequence[Dialogue]) -> List[str]:
    texts = []
    for d in dialogues:
        for p in d.pairs:
            texts.append(p.system_text)
            texts.append(p.user_text)
    return texts


def _loss_kind_for_epoch(config: TrainConfig, epoch: int) -> BalanceLossKind:
    if config.loss is BalanceLossKind.GREEDY and epoch >= config.e_greedy:
        return config.after_greedy
    return config.loss


def _usage_histogram(states: Sequence[Sequence[int]], n_state: int
                     ) -> List[float]:
    counts = np.zeros(n_state)
    for seq in states:
        for z in seq:
            counts[z] += 1
    total = counts.sum()
    return (counts / total if total > 0 else counts).tolist()


def train(dialogues: Sequence[Dialogue], config: TrainConfig,
          model_config: ModelConfig) -> TrainResult:
    """Fit the state model on a corpus; deterministic for a given seed.

    The vocabulary (and with it ``model_config.vocab_size``) is derived
    from the corpus, so the ``vocab_size`` the caller passes is ignored.
    Returns the best model: lowest SED when gold labels exist everywhere,
    lowest total loss otherwise.
    """
    if len(dialogues) == 0:
        raise InputError("train: corpus is empty")
    texts = _corpus_texts(dialogues)
    vocab = Vocabulary.build(texts, n_state_tokens=model_config.max_pairs)
    tfidf = fit_tfidf(texts)
    model_config = replace(model_config, vocab_size=len(vocab))
    model = DialogueStateModel(model_config, vocab, seed=config.seed)

    lam = (model_config.balance_weight if config.balance_weight is None
           else config.balance_weight)
    tau_schedule = config.tau if config.tau is not None else model_config.tau
    rng = RngState(config.seed).derive("train")

    clean = [build_input(d, vocab, model_config) for d in dialogues]
    augmented = clean
    if config.e_keywords > 0:
        keywords = [
            [extract_keywords(tfidf, p.system_text + " " + p.user_text,
                              config.n_keywords) for p in d.pairs]
            for d in dialogues
        ]
        augmented = [build_input(d, vocab, model_config, keywords=kw)
                     for d, kw in zip(dialogues, keywords)]

    labeled = all(d.labeled for d in dialogues)
    gold_sequences = [d.gold_states() for d in dialogues] if labeled else None
    n_true = (1 + max(max(seq) for seq in gold_sequences)) if labeled else 0

    optimizer = Adam(model.parameters(), lr=config.learning_rate,
                     betas=config.betas, eps=config.adam_epsilon)
    log: List[dict] = []
    log_file = open(config.log_path, "w", encoding="utf-8") \
        if config.log_path else None

    def emit(record: dict):
        log.append(record)
        if log_file:
            log_file.write(json.dumps(record, sort_keys=True) + "\n")
            log_file.flush()

    best_metric: Optional[float] = None
    best_epoch: Optional[int] = None
    best_params: Optional[Dict[str, np.ndarray]] = None

    try:
        for epoch in range(config.epochs):
            tau = tau_schedule.value(epoch, config.epochs)
            kind = _loss_kind_for_epoch(config, epoch)
            encoder_encs = augmented if epoch < config.e_keywords else clean
            order = rng.derive(f"shuffle-{epoch}").permutation(len(dialogues))
            mlm_sum = 0.0
            mlm_weight = 0.0
            balance_sum = 0.0
            n_batches = 0
            for start in range(0, len(order), config.batch_size):
                batch_idx = order[start:start + config.batch_size]
                enc_batch = [encoder_encs[i] for i in batch_idx]
                dec_batch = [clean[i] for i in batch_idx]
                step_rng = rng.derive(f"gumbel-{epoch}-{start}")
                p_batch, _, mlm = model.forward(
                    enc_batch, tau, step_rng, hard=True,
                    decoder_encs=dec_batch,
                )
                bal = balance_loss(p_batch, kind)
                loss = total_loss(mlm, bal, lam)
                if not np.isfinite(loss.data):
                    ids = [e.dialogue_id for e in enc_batch]
                    emit({
                        "event": "non_finite_loss", "epoch": epoch + 1,
                        "dialogue_ids": ids, "mlm": float(mlm.data),
                        "balance": float(bal.data),
                    })
                    raise NumericError(
                        f"non-finite loss at epoch {epoch + 1} on dialogues "
                        f"{ids}: mlm={float(mlm.data)}, "
                        f"balance={float(bal.data)}"
                    )
                model.zero_grad()
                loss.backward()
                optimizer.step()
                tokens = sum(float(e.attention_mask.sum()) for e in dec_batch)
                mlm_sum += float(mlm.data) * tokens
                mlm_weight += tokens
                balance_sum += float(bal.data)
                n_batches += 1

            predictions = [model.encode(enc).hard_states for enc in clean]
            record = {
                "epoch": epoch + 1,
                "mlm": mlm_sum / mlm_weight,
                "balance": balance_sum / n_batches,
                "usage": _usage_histogram(predictions, model_config.n_state),
            }
            epoch_metric = record["mlm"] + lam * record["balance"]
            if labeled and (epoch + 1) % config.eval_every == 0:
                report = evaluate(gold_sequences, predictions, n_true,
                                  model_config.n_state)
                record["sed"] = report.sed
                record["sce"] = report.sce
                epoch_metric = report.sed
            emit(record)

            is_eval_epoch = not labeled or "sed" in record
            if is_eval_epoch and (best_metric is None
                                  or epoch_metric < best_metric):
                best_metric = epoch_metric
                best_epoch = epoch + 1
                best_params = {k: t.data.copy()
                               for k, t in model.params.items()}
                if config.checkpoint_path:
                    model.save(config.checkpoint_path)
    finally:
        if log_file:
            log_file.close()

    if best_params is not None:
        for name, tensor in model.params.items():
            tensor.data = best_params[name]
    return TrainResult(model=model, vocab=vocab, tfidf=tfidf, log=log,
                       best_epoch=best_epoch, best_metric=best_metric)


def predict_states(model: DialogueStateModel,
                   dialogues: Sequence[Dialogue]) -> PredictionResult:
    """Noise-free hard state sequences, one per dialogue.

    A dialogue the model cannot encode (too many pairs, too long) yields
    ``None`` in its slot plus an error record; the rest still decode.
    """
    sequences: List[Optional[List[int]]] = []
    errors: List[Tuple[str, str]] = []
    for d in dialogues:
        try:
            enc = build_input(d, model.vocab, model.config)
            sequences.append(model.encode(enc).hard_states)
        except (CapacityError, InputError) as exc:
            sequences.append(None)
            errors.append((d.id, str(exc)))
    return PredictionResult(sequences=sequences, errors=errors)
