"""Token space for text-image recognition.

A vocabulary is an ordered charset plus two sentinels appended after it:
EOS (id N) terminates the text and pads the tail of every fixed-length
sequence, MASK (id N+1) is the absorbing placeholder of the corruption
process. MASK is a legal *input* token but never a model output class.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_CHARSET = "abcdefghijklmnopqrstuvwxyz0123456789"


@dataclass(frozen=True)
class Vocab:
    chars: str
    char_to_id: dict = field(repr=False)

    @property
    def n_chars(self) -> int:
        return len(self.chars)

    @property
    def eos_id(self) -> int:
        return len(self.chars)

    @property
    def mask_id(self) -> int:
        return len(self.chars) + 1

    @property
    def total_internal(self) -> int:
        """Character classes + EOS + MASK (the input-token alphabet)."""
        return len(self.chars) + 2

    @property
    def n_classes(self) -> int:
        """Predictable classes: characters + EOS, excluding MASK."""
        return len(self.chars) + 1


def build_vocab(charset: str) -> Vocab:
    if not charset:
        raise ValueError("charset must be non-empty")
    seen = set()
    for ch in charset:
        if ch in seen:
            raise ValueError(f"duplicate character in charset: {ch!r}")
        seen.add(ch)
    return Vocab(chars=charset, char_to_id={ch: i for i, ch in enumerate(charset)})


def _lookup(vocab: Vocab, ch: str) -> int:
    # case-insensitive matching: exact hit first, then the lowercased form
    cid = vocab.char_to_id.get(ch)
    if cid is None:
        cid = vocab.char_to_id.get(ch.lower())
    if cid is None:
        raise ValueError(f"character not in charset: {ch!r}")
    return cid


def encode(text: str, vocab: Vocab, length: int) -> np.ndarray:
    """Encode `text` into a fixed-length id sequence, EOS-padded to `length`."""
    if len(text) >= length:
        raise ValueError(f"text of length {len(text)} does not fit below max length {length}")
    ids = np.full(length, vocab.eos_id, dtype=np.int64)
    for i, ch in enumerate(text):
        ids[i] = _lookup(vocab, ch)
    return ids


def decode_text(seq: np.ndarray, vocab: Vocab) -> str:
    """Read characters strictly before the first EOS; reject unfinished input."""
    seq = np.asarray(seq)
    if np.any(seq == vocab.mask_id):
        raise ValueError("sequence still contains MASK tokens (decoding unfinished)")
    out = []
    for tok in seq:
        if tok == vocab.eos_id:
            break
        out.append(vocab.chars[int(tok)])
    return "".join(out)
