"""Tokenization, vocabulary construction, and TF-IDF keyword extraction.

Tokenization is deliberately simple: lowercase, split on whitespace, and
split punctuation into standalone tokens.  Real subword tokenizers are out
of scope — the model trains on small synthetic corpora where a word-level
vocabulary stays well under a thousand entries.

Keyword extraction treats each utterance as one document, scores tokens by
tf·idf with a smoothed idf, and prepends the top-k tokens to the encoder
input early in training to stabilize the state assignments.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .errors import CorpusParseError, InputError, ParameterError

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
BASE_SPECIALS = (PAD, CLS, SEP, MASK, UNK)

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def state_token(i: int) -> str:
    """Name of the i-th state placeholder token."""
    return f"[STATE_{i}]"


def tokenize(text: str) -> List[str]:
    """Lowercase and split into words and standalone punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Dense 0-based token ids with a fixed reserved prefix.

    Ids 0..4 are [PAD], [CLS], [SEP], [MASK], [UNK]; the next
    ``n_state_tokens`` ids are [STATE_0]..[STATE_{n-1}] placeholders used to
    mark utterance-pair boundaries in model input.  Corpus tokens follow.
    """

    def __init__(self, tokens: Sequence[str]):
        self.id_to_token: List[str] = list(tokens)
        self.token_to_id: Dict[str, int] = {
            t: i for i, t in enumerate(self.id_to_token)
        }
        if len(self.token_to_id) != len(self.id_to_token):
            raise InputError("vocabulary contains duplicate tokens")
        for i, t in enumerate(BASE_SPECIALS):
            if i >= len(self.id_to_token) or self.id_to_token[i] != t:
                raise InputError(
                    f"vocabulary id {i} must be {t}, got "
                    f"{self.id_to_token[i] if i < len(self.id_to_token) else 'nothing'}"
                )
        n_state = 0
        while len(BASE_SPECIALS) + n_state < len(self.id_to_token) and (
            self.id_to_token[len(BASE_SPECIALS) + n_state] == state_token(n_state)
        ):
            n_state += 1
        self.n_state_tokens = n_state

    @classmethod
    def build(cls, texts: Iterable[str], n_state_tokens: int) -> "Vocabulary":
        """Collect corpus tokens (most frequent first) behind the reserved prefix."""
        counts: Dict[str, int] = {}
        for text in texts:
            for tok in tokenize(text):
                counts[tok] = counts.get(tok, 0) + 1
        specials = list(BASE_SPECIALS) + [state_token(i) for i in range(n_state_tokens)]
        body = sorted(counts, key=lambda t: (-counts[t], t))
        return cls(specials + body)

    # Reserved ids.
    pad_id = 0
    cls_id = 1
    sep_id = 2
    mask_id = 3
    unk_id = 4

    def state_id(self, i: int) -> int:
        if not 0 <= i < self.n_state_tokens:
            raise ParameterError(
                f"state token index {i} outside [0, {self.n_state_tokens})"
            )
        return len(BASE_SPECIALS) + i

    @property
    def n_reserved(self) -> int:
        return len(BASE_SPECIALS) + self.n_state_tokens

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def encode_text(self, text: str) -> List[int]:
        return [self.encode_token(t) for t in tokenize(text)]

    def decode(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def save(self, path) -> None:
        """One token per line; the line number (0-based) is the id."""
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines = lines[:-1]
        if len(lines) < len(BASE_SPECIALS):
            raise CorpusParseError(f"vocabulary file {path} is too short")
        return cls(lines)


@dataclass
class TfIdfModel:
    """Document frequencies over a corpus where each utterance is a document."""

    doc_freq: Dict[str, int]
    n_docs: int

    def idf(self, token: str) -> float:
        """Smoothed inverse document frequency, always ≥ 1."""
        df = self.doc_freq.get(token, 0)
        return np.log((1.0 + self.n_docs) / (1.0 + df)) + 1.0


def fit_tfidf(utterances: Sequence[str]) -> TfIdfModel:
    """Count per-utterance document frequencies for every token."""
    if len(utterances) == 0:
        raise InputError("fit_tfidf: corpus is empty")
    doc_freq: Dict[str, int] = {}
    for utt in utterances:
        for tok in set(tokenize(utt)):
            doc_freq[tok] = doc_freq.get(tok, 0) + 1
    return TfIdfModel(doc_freq=doc_freq, n_docs=len(utterances))


# Lowercased forms a special token could take if it somehow reached raw text.
_SPECIAL_FORMS = {t.lower() for t in BASE_SPECIALS} | {
    t.strip("[]").lower() for t in BASE_SPECIALS
}


def extract_keywords(model: TfIdfModel, utterance: str, k: int = 3) -> List[str]:
    """Top-k tokens of the utterance by tf·idf, ties broken by earlier position."""
    if k < 1:
        raise ParameterError(f"extract_keywords: k must be ≥ 1, got {k}")
    tokens = tokenize(utterance)
    first_pos: Dict[str, int] = {}
    counts: Dict[str, int] = {}
    for pos, tok in enumerate(tokens):
        counts[tok] = counts.get(tok, 0) + 1
        first_pos.setdefault(tok, pos)
    scored = [
        (-counts[tok] * model.idf(tok), first_pos[tok], tok)
        for tok in counts
        if tok not in _SPECIAL_FORMS
    ]
    scored.sort()
    return [tok for _, _, tok in scored[:k]]


def augment_with_keywords(utterance: str, keywords: Sequence[str]) -> str:
    """Prepend the keywords (space-joined) to the utterance."""
    if not keywords:
        return utterance
    return " ".join(list(keywords) + [utterance])
