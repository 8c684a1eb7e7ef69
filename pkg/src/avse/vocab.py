"""Whitespace tokenizer and id vocabulary for cleaned aviation sentences."""
from __future__ import annotations

import re
from collections import Counter

RESERVED = ("[PAD]", "[CLS]", "[SEP]", "[UNK]", "[EOS]")
PAD_ID, CLS_ID, SEP_ID, UNK_ID, EOS_ID = range(len(RESERVED))

_TRAILING_PUNCT = re.compile(r"^(.*?)([.,]*)$", re.DOTALL)


def split_tokens(sentence: str) -> list[str]:
    """Whitespace split with terminal '.' and ',' peeled off as own tokens."""
    out = []
    for piece in sentence.split():
        base, punct = _TRAILING_PUNCT.match(piece).groups()
        if base:
            out.append(base)
        out.extend(punct)
    return out


class Vocab:
    """token <-> id table; ids 0..4 are the reserved markers, in order."""

    def __init__(self, content_tokens: list[str]):
        tokens = list(RESERVED) + list(content_tokens)
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}
        if len(self.token_to_id) != len(tokens):
            raise ValueError("vocabulary contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path: str) -> None:
        from .persistence import atomic_write_text

        atomic_write_text(path, "\n".join(self.id_to_token) + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            tokens = fh.read().split("\n")
        if tokens and tokens[-1] == "":
            tokens.pop()
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"{path}: first {len(RESERVED)} lines must be the reserved tokens {RESERVED}")
        return cls(tokens[len(RESERVED) :])


def build_vocab(sentences, min_count: int = 1) -> Vocab:
    """Count tokens over the corpus and keep those seen at least min_count
    times, ordered by descending frequency then lexicographically."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    counts = Counter()
    for s in sentences:
        counts.update(split_tokens(s))
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocab(kept)


def tokenize(sentence: str, vocab: Vocab, max_len: int) -> list[int]:
    """[CLS] plus content token ids, truncated to max_len. Never empty."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = [CLS_ID] + [vocab.id_of(t) for t in split_tokens(sentence)]
    return ids[:max_len]
