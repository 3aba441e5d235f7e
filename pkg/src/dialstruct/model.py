"""Encoder–decoder model that assigns a discrete latent state to each pair.

Input layout per dialogue (one token sequence):

    [CLS] s_1 u_1 [SEP] [STATE_0] s_2 u_2 [SEP] [STATE_1] s_3 u_3 [SEP] ...

The first pair is fronted by [CLS]; pair i ≥ 1 by the placeholder token
[STATE_{i-1}].  A transformer encoder reads the sequence; the hidden rows
at those special positions are projected to n_state logits (Φ_special),
softmaxed into the per-pair state distribution P, and expanded back to one
row per token position.  A rowwise hard Gumbel-Softmax discretizes the
expanded features, and a decoder transformer — which sees only an affine
map of those discrete rows plus position embeddings, never the input
tokens — must reconstruct the entire sequence.  The reconstruction loss is
mean cross-entropy over non-pad positions, so states must store what the
pair said.

Encoder attention carries a constant additive prior toward positions of
the same pair (``pair_attn_bias``), so special positions summarize their
own pair from the very first step instead of the dialogue-wide average.
"""

from __future__ import annotations

import base64
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .corpus import Dialogue
from .errors import CapacityError, ConsistencyError, CorpusParseError, ParameterError
from .tensor import (
    RngState,
    Tensor,
    add,
    concat,
    cross_entropy,
    gather_rows,
    gumbel_softmax,
    layer_norm,
    linear,
    multi_head_self_attention,
    relu,
    softmax,
)
from .text import Vocabulary, tokenize

CHECKPOINT_VERSION = 1


@dataclass
class TauSchedule:
    """Linear Gumbel-temperature anneal from ``start`` to ``end``."""

    start: float = 1.0
    end: float = 0.5

    def __post_init__(self):
        if self.start <= 0 or self.end <= 0:
            raise ParameterError("temperatures must be positive")

    def value(self, epoch: int, n_epochs: int) -> float:
        if n_epochs <= 1:
            return self.end
        frac = min(max(epoch / (n_epochs - 1), 0.0), 1.0)
        return self.start + (self.end - self.start) * frac


@dataclass
class ModelConfig:
    """Architecture and objective hyperparameters."""

    vocab_size: int
    n_state: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 2
    max_seq_len: int = 256
    max_pairs: int = 16
    tau: TauSchedule = field(default_factory=TauSchedule)
    balance_weight: float = 1.0
    pair_attn_bias: float = 4.0

    def __post_init__(self):
        if isinstance(self.tau, dict):
            self.tau = TauSchedule(**self.tau)
        if self.n_state < 2:
            raise ParameterError(f"n_state must be ≥ 2, got {self.n_state}")
        if self.d_model % self.n_heads != 0:
            raise ParameterError(
                f"d_model ({self.d_model}) must be divisible by n_heads "
                f"({self.n_heads})"
            )
        if self.max_pairs < 1:
            raise ParameterError("max_pairs must be ≥ 1")
        if self.balance_weight < 0:
            raise ParameterError("balance_weight must be ≥ 0")


@dataclass
class EncodedDialogue:
    """A dialogue rendered as one model-ready token sequence."""

    dialogue_id: str
    token_ids: np.ndarray          # (L,) int64
    special_positions: np.ndarray  # (t,) index of [CLS]/[STATE_i] per pair
    pair_lengths: List[int]        # utterance tokens per pair (no special/[SEP])
    attention_mask: np.ndarray     # (L,) 1.0 = real token

    @property
    def n_pairs(self) -> int:
        return len(self.special_positions)

    @property
    def length(self) -> int:
        return int(self.token_ids.shape[0])


@dataclass
class StateAssignment:
    """Per-pair state distribution, hard choice, and pre-softmax features."""

    probs: Tensor          # (t, n_state), rows sum to 1
    hard_states: List[int]
    phi_special: Tensor    # (t, n_state) pre-softmax rows


def hard_states_from_probs(probs: np.ndarray) -> List[int]:
    """Row argmax with ties resolved to the lowest state index."""
    return [int(i) for i in np.asarray(probs).argmax(axis=1)]


def build_input(dialogue: Dialogue, vocab: Vocabulary, config: ModelConfig,
                keywords: Optional[Sequence[Sequence[str]]] = None
                ) -> EncodedDialogue:
    """Lay out a dialogue as [CLS]/[STATE_i]-fronted, [SEP]-terminated spans.

    ``keywords``, when given, must hold one token list per pair; the tokens
    are inserted at the start of that pair's utterance span.  Sequences
    that would exceed ``max_seq_len`` raise rather than silently truncate.
    """
    pairs = dialogue.pairs
    if len(pairs) > config.max_pairs:
        raise CapacityError(
            f"dialogue {dialogue.id!r} has {len(pairs)} pairs; the model "
            f"accepts at most {config.max_pairs}"
        )
    if keywords is not None and len(keywords) != len(pairs):
        raise ConsistencyError(
            f"dialogue {dialogue.id!r}: {len(keywords)} keyword lists for "
            f"{len(pairs)} pairs"
        )
    ids: List[int] = []
    specials: List[int] = []
    pair_lengths: List[int] = []
    for i, pair in enumerate(pairs):
        specials.append(len(ids))
        ids.append(vocab.cls_id if i == 0 else vocab.state_id(i - 1))
        tokens: List[str] = []
        if keywords is not None:
            tokens.extend(keywords[i])
        tokens.extend(tokenize(pair.system_text))
        tokens.extend(tokenize(pair.user_text))
        ids.extend(vocab.encode_token(t) for t in tokens)
        pair_lengths.append(len(tokens))
        ids.append(vocab.sep_id)
    if len(ids) > config.max_seq_len:
        raise CapacityError(
            f"dialogue {dialogue.id!r} encodes to {len(ids)} tokens, over the "
            f"max_seq_len of {config.max_seq_len}"
        )
    return EncodedDialogue(
        dialogue_id=dialogue.id,
        token_ids=np.asarray(ids, dtype=np.int64),
        special_positions=np.asarray(specials, dtype=np.int64),
        pair_lengths=pair_lengths,
        attention_mask=np.ones(len(ids), dtype=np.float64),
    )


def expansion_index(enc: EncodedDialogue) -> np.ndarray:
    """Pair index owning each token position (special + utterance + [SEP])."""
    idx = np.empty(enc.length, dtype=np.int64)
    cursor = 0
    for i, (start, l_i) in enumerate(zip(enc.special_positions, enc.pair_lengths)):
        span = 1 + l_i + 1
        if start != cursor:
            raise ConsistencyError(
                f"pair {i} starts at {start}, expected {cursor}"
            )
        idx[cursor:cursor + span] = i
        cursor += span
    if cursor != enc.length:
        raise ConsistencyError(
            f"pair spans cover {cursor} positions of a {enc.length}-token input"
        )
    return idx


def expand_features(assignment: StateAssignment, enc: EncodedDialogue) -> Tensor:
    """Repeat each pair's feature row over every position the pair owns."""
    return gather_rows(assignment.phi_special, expansion_index(enc))


class DialogueStateModel:
    """Trainable encoder–decoder with a discrete state bottleneck."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int = 0,
                 params: Optional[Dict[str, Tensor]] = None):
        if config.vocab_size != len(vocab):
            raise ParameterError(
                f"config.vocab_size ({config.vocab_size}) does not match the "
                f"vocabulary ({len(vocab)} tokens)"
            )
        if vocab.n_state_tokens < config.max_pairs:
            raise ParameterError(
                f"vocabulary has {vocab.n_state_tokens} state tokens; "
                f"max_pairs={config.max_pairs} needs at least that many"
            )
        self.config = config
        self.vocab = vocab
        self.seed = seed
        self.params: Dict[str, Tensor] = params if params is not None else (
            self._init_params(RngState(seed).derive("model-init"))
        )

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def _init_params(self, rng: RngState) -> Dict[str, Tensor]:
        cfg = self.config
        d = cfg.d_model
        params: Dict[str, Tensor] = {}

        def weight(name, shape):
            # 1/sqrt(fan_in): keeps layer outputs at the scale of their
            # inputs, so attention and FFN carry signal from the first step.
            params[name] = Tensor(
                rng.normal(size=shape, scale=1.0 / np.sqrt(shape[0])),
                requires_grad=True)

        def lookup(name, shape):
            # Rows are looked up (or mixed by a one-hot), not contracted
            # over: scale by the row width so each row has ~unit norm.
            params[name] = Tensor(
                rng.normal(size=shape, scale=1.0 / np.sqrt(shape[1])),
                requires_grad=True)

        def zeros(name, shape):
            params[name] = Tensor(np.zeros(shape), requires_grad=True)

        def ones(name, shape):
            params[name] = Tensor(np.ones(shape), requires_grad=True)

        def block(prefix):
            for proj in ("wq", "wk", "wv", "wo"):
                weight(f"{prefix}.{proj}", (d, d))
            for bias in ("bq", "bk", "bv", "bo"):
                zeros(f"{prefix}.{bias}", (d,))
            ones(f"{prefix}.ln1_gain", (d,))
            zeros(f"{prefix}.ln1_bias", (d,))
            weight(f"{prefix}.ffn_w1", (d, 4 * d))
            zeros(f"{prefix}.ffn_b1", (4 * d,))
            weight(f"{prefix}.ffn_w2", (4 * d, d))
            zeros(f"{prefix}.ffn_b2", (d,))
            ones(f"{prefix}.ln2_gain", (d,))
            zeros(f"{prefix}.ln2_bias", (d,))

        lookup("enc.tok_emb", (cfg.vocab_size, d))
        # Structural markers ([CLS]/[SEP]/[STATE_i]/[PAD]/[MASK]) and encoder
        # positions start at zero, so a special position's feature is
        # initially its attention-pooled pair content with no pair-index
        # signature.  Balanced splits on index satisfy every balance loss
        # while saying nothing about the dialogue; starting content-dominated
        # keeps the state head from locking onto one.  Both stay trainable.
        structural = [i for i in range(self.vocab.n_reserved)
                      if i != self.vocab.unk_id]
        params["enc.tok_emb"].data[structural] = 0.0
        zeros("enc.pos_emb", (cfg.max_seq_len, d))
        for i in range(cfg.n_layers):
            block(f"enc.layer{i}")
        # Random state head: exact-uniform rows would all argmax to state 0,
        # turning Balance&KL's hard target into a coherent collapse signal.
        weight("enc.state_w", (d, cfg.n_state))
        zeros("enc.state_b", (cfg.n_state,))

        lookup("dec.state_emb_w", (cfg.n_state, d))
        zeros("dec.state_emb_b", (d,))
        lookup("dec.pos_emb", (cfg.max_seq_len, d))
        for i in range(cfg.n_layers):
            block(f"dec.layer{i}")
        weight("dec.out_w", (d, cfg.vocab_size))
        zeros("dec.out_b", (cfg.vocab_size,))
        return params

    def parameters(self) -> List[Tensor]:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    # ------------------------------------------------------------------
    # Forward pieces
    # ------------------------------------------------------------------

    def _transformer(self, x: Tensor, prefix: str,
                     score_bias: Optional[np.ndarray] = None) -> Tensor:
        p = self.params
        for i in range(self.config.n_layers):
            b = f"{prefix}.layer{i}"
            attended = multi_head_self_attention(
                x, p[f"{b}.wq"], p[f"{b}.bq"], p[f"{b}.wk"], p[f"{b}.bk"],
                p[f"{b}.wv"], p[f"{b}.bv"], p[f"{b}.wo"], p[f"{b}.bo"],
                self.config.n_heads, score_bias=score_bias)
            x = layer_norm(add(x, attended), p[f"{b}.ln1_gain"], p[f"{b}.ln1_bias"])
            hidden = linear(relu(linear(x, p[f"{b}.ffn_w1"], p[f"{b}.ffn_b1"])),
                            p[f"{b}.ffn_w2"], p[f"{b}.ffn_b2"])
            x = layer_norm(add(x, hidden), p[f"{b}.ln2_gain"], p[f"{b}.ln2_bias"])
        return x

    def _pair_locality_bias(self, enc: EncodedDialogue) -> Optional[np.ndarray]:
        """Constant attention prior favouring positions of the same pair.

        A freshly initialized transformer attends near-uniformly, so the
        feature at a pair's special position is the dialogue-wide average —
        the same for every pair — and the state head has nothing pair-specific
        to separate.  Biasing the scores toward same-pair positions makes each
        special position pool its own pair's tokens from the first step, the
        role pretrained attention plays for the original model.
        """
        b = self.config.pair_attn_bias
        if b == 0.0:
            return None
        idx = expansion_index(enc)
        return b * (idx[:, None] == idx[None, :])

    def encode(self, enc: EncodedDialogue) -> StateAssignment:
        """Run the encoder and read state distributions at special positions."""
        p = self.params
        positions = np.arange(enc.length)
        x = add(gather_rows(p["enc.tok_emb"], enc.token_ids),
                gather_rows(p["enc.pos_emb"], positions))
        hidden = self._transformer(x, "enc",
                                   score_bias=self._pair_locality_bias(enc))
        phi = linear(hidden, p["enc.state_w"], p["enc.state_b"])
        phi_special = gather_rows(phi, enc.special_positions)
        probs = softmax(phi_special, axis=-1)
        return StateAssignment(
            probs=probs,
            hard_states=hard_states_from_probs(probs.data),
            phi_special=phi_special,
        )

    def decode_logits(self, phi_tilde: Tensor, enc: EncodedDialogue, tau: float,
                       rng: Optional[RngState], hard: bool = True,
                       noise: Optional[np.ndarray] = None) -> Tensor:
        """Discretize expanded features and reconstruct token logits.

        The decoder input is only an affine map of the (straight-through)
        state rows plus position embeddings — token identities are
        unreachable from here, which is what forces states to carry content.
        """
        p = self.params
        p_tilde = gumbel_softmax(phi_tilde, tau=tau, rng=rng, hard=hard,
                                 noise=noise)
        positions = np.arange(enc.length)
        x = add(linear(p_tilde, p["dec.state_emb_w"], p["dec.state_emb_b"]),
                gather_rows(p["dec.pos_emb"], positions))
        hidden = self._transformer(x, "dec")
        return linear(hidden, p["dec.out_w"], p["dec.out_b"])

    def decode_and_mlm_loss(self, phi_tilde: Tensor, enc: EncodedDialogue,
                            tau: float, rng: Optional[RngState],
                            hard: bool = True,
                            noise: Optional[np.ndarray] = None) -> Tensor:
        """Mean cross-entropy of reconstructing every non-pad input token."""
        logits = self.decode_logits(phi_tilde, enc, tau, rng, hard, noise)
        return cross_entropy(logits, enc.token_ids, mask=enc.attention_mask)

    def forward(self, encs: Sequence[EncodedDialogue], tau: float,
                rng: Optional[RngState], hard: bool = True,
                decoder_encs: Optional[Sequence[EncodedDialogue]] = None):
        """Batch pass: stacked state probabilities, hard states, MLM loss.

        Returns ``(P_batch, z_batch, mlm_loss)`` where ``P_batch`` has one
        row per utterance pair across the whole batch (dialogue order
        preserved), ``z_batch`` is one hard-state list per dialogue, and the
        loss is the position-weighted mean cross-entropy over the batch.

        ``decoder_encs``, when given, supplies the reconstruction targets:
        the encoder reads ``encs`` (e.g. keyword-augmented input) while the
        decoder reconstructs the parallel un-augmented sequences.
        """
        if len(encs) == 0:
            raise ParameterError("forward: batch is empty")
        if decoder_encs is None:
            decoder_encs = encs
        elif len(decoder_encs) != len(encs):
            raise ConsistencyError(
                f"{len(encs)} encoder dialogues vs {len(decoder_encs)} "
                "decoder dialogues"
            )
        prob_blocks, z_batch = [], []
        logit_blocks, target_blocks, mask_blocks = [], [], []
        for enc, dec in zip(encs, decoder_encs):
            if dec.n_pairs != enc.n_pairs:
                raise ConsistencyError(
                    f"dialogue {enc.dialogue_id}: encoder has {enc.n_pairs} "
                    f"pairs but decoder target has {dec.n_pairs}"
                )
            assignment = self.encode(enc)
            prob_blocks.append(assignment.probs)
            z_batch.append(assignment.hard_states)
            phi_tilde = expand_features(assignment, dec)
            logit_blocks.append(
                self.decode_logits(phi_tilde, dec, tau, rng, hard))
            target_blocks.append(dec.token_ids)
            mask_blocks.append(dec.attention_mask)
        p_batch = prob_blocks[0] if len(prob_blocks) == 1 else concat(
            prob_blocks, axis=0)
        logits = logit_blocks[0] if len(logit_blocks) == 1 else concat(
            logit_blocks, axis=0)
        mlm = cross_entropy(logits, np.concatenate(target_blocks),
                            mask=np.concatenate(mask_blocks))
        return p_batch, z_batch, mlm

    def predict(self, encs: Sequence[EncodedDialogue]) -> List[StateAssignment]:
        """Noise-free inference: state assignments straight from the encoder."""
        return [self.encode(enc) for enc in encs]

    # ------------------------------------------------------------------
    # Checkpointing
    # ------------------------------------------------------------------

    def save(self, path) -> None:
        """Write a bitwise-reproducible JSON checkpoint."""
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "seed": self.seed,
            "config": asdict(self.config),
            "vocab": self.vocab.id_to_token,
            "params": {
                name: {
                    "shape": list(t.data.shape),
                    "data": base64.b64encode(
                        np.ascontiguousarray(t.data, dtype="<f8").tobytes()
                    ).decode("ascii"),
                }
                for name, t in self.params.items()
            },
        }
        Path(path).write_text(
            json.dumps(payload, indent=1, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "DialogueStateModel":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        version = raw.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise CorpusParseError(
                f"checkpoint {path} has format_version {version!r}; "
                f"this build reads version {CHECKPOINT_VERSION}"
            )
        config = ModelConfig(**raw["config"])
        vocab = Vocabulary(raw["vocab"])
        params: Dict[str, Tensor] = {}
        for name, entry in raw["params"].items():
            buf = base64.b64decode(entry["data"])
            arr = np.frombuffer(buf, dtype="<f8").reshape(entry["shape"]).copy()
            params[name] = Tensor(arr, requires_grad=True)
        model = cls(config, vocab, seed=raw.get("seed", 0), params=params)
        return model
