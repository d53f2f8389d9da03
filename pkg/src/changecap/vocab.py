"""Caption vocabulary and fixed-length token sequences."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import CaptionLengthError, DataError, VocabError

PAD, START, END, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<start>", "<end>", "<unk>")
VOCAB_HEADER = "CHG2CAP-VOCAB v1"

_PUNCT = re.compile(r"[^\w\s]")


def tokenize(sentence: str) -> list[str]:
    """Lowercase, drop punctuation, split on whitespace."""
    return _PUNCT.sub(" ", sentence.lower()).split()


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    valid_len: int

    def __len__(self):
        return len(self.ids)

    def tolist(self) -> list[int]:
        return [int(i) for i in self.ids]


class Vocabulary:
    def __init__(self, words: Sequence[str]):
        self.id_to_word = list(SPECIALS) + list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise VocabError("duplicate word in vocabulary")

    def __len__(self):
        return len(self.id_to_word)

    @property
    def m(self) -> int:
        return len(self.id_to_word)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.id_to_word == other.id_to_word

    def __contains__(self, word):
        return word in self.word_to_id

    def save(self, path) -> None:
        lines = [VOCAB_HEADER] + self.id_to_word[len(SPECIALS):]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0].strip() != VOCAB_HEADER:
            raise DataError(f"{path}: missing vocabulary header {VOCAB_HEADER!r}")
        return cls([ln for ln in lines[1:] if ln])


def build_vocab(captions: Iterable[Sequence[str]], min_freq: int = 1) -> Vocabulary:
    """Words with frequency >= ``min_freq``, most frequent first, ties alphabetical."""
    if min_freq < 1:
        raise ValueError(f"min_freq must be >= 1, got {min_freq}")
    counts = Counter()
    n = 0
    for words in captions:
        counts.update(words)
        n += 1
    if n == 0:
        raise VocabError("cannot build a vocabulary from an empty corpus")
    kept = [w for w, c in counts.items() if c >= min_freq and w not in SPECIALS]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


def encode_caption(words: Sequence[str], vocab: Vocabulary, n: int) -> TokenSequence:
    k = len(words)
    if k + 2 > n:
        raise CaptionLengthError(f"caption of {k} words needs {k + 2} slots, max length is {n}")
    ids = np.zeros(n, dtype=np.int64)
    ids[0] = START
    ids[1:k + 1] = [vocab.word_to_id.get(w, UNK) for w in words]
    ids[k + 1] = END
    return TokenSequence(ids, k + 2)


def decode_caption(seq, vocab: Vocabulary, return_truncated: bool = False):
    """Words strictly between START and the first END.

    Without an END every non-PAD token after START is returned and the
    truncation flag (second element when ``return_truncated``) is set.
    """
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    ids = [int(i) for i in ids]
    body = ids[1:] if ids and ids[0] == START else ids
    words, truncated = [], True
    for i in body:
        if i == END:
            truncated = False
            break
        if i == PAD:
            continue
        if not 0 <= i < len(vocab):
            raise VocabError(f"token id {i} outside vocabulary of size {len(vocab)}")
        words.append(vocab.id_to_word[i])
    return (words, truncated) if return_truncated else words
