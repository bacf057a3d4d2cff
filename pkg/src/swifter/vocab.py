"""Vocabulary: lowercase, strip punctuation, whitespace-split, min-frequency cut.

Token ids 0..3 are reserved: PAD, BOS, EOS, UNK. Real tokens get ids from 4
up, ordered by descending corpus count then lexicographically, so building
twice from the same corpus gives the same ids.
"""

import string

import numpy as np

from .errors import ContractError, DomainError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})


def normalize(text: str) -> list[str]:
    """Lowercase, replace ASCII punctuation with spaces, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


class Vocabulary:
    def __init__(self, tokens: list[str], min_freq: int = 1):
        self.min_freq = min_freq
        self.id_to_token = list(SPECIALS) + list(tokens)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ContractError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    @classmethod
    def build(cls, corpus: list[str], min_freq: int = 1) -> "Vocabulary":
        if min_freq < 1:
            raise DomainError("min_freq must be >= 1")
        counts: dict[str, int] = {}
        for text in corpus:
            for tok in normalize(text):
                counts[tok] = counts.get(tok, 0) + 1
        kept = sorted(
            (t for t, c in counts.items() if c >= min_freq),
            key=lambda t: (-counts[t], t),
        )
        return cls(kept, min_freq)

    def encode(self, text: str, add_bos: bool = False, add_eos: bool = False) -> list[int]:
        ids = [self.token_to_id.get(t, UNK) for t in normalize(text)]
        if add_bos:
            ids = [BOS] + ids
        if add_eos:
            ids = ids + [EOS]
        return ids

    def decode(self, ids) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i in (PAD, BOS):
                continue
            if i == EOS:
                break
            words.append(self.id_to_token[i] if i < len(self.id_to_token) else SPECIALS[UNK])
        return " ".join(words)

    def save(self, path) -> None:
        """One token per line after the header; line number = id - 4."""
        with open(path, "w", encoding="utf-8") as f:
            f.write(f"#swifter-vocab v1 min_freq={self.min_freq}\n")
            for tok in self.id_to_token[4:]:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            header = f.readline().rstrip("\n")
            if not header.startswith("#swifter-vocab v1"):
                raise ContractError(f"{path} is not a vocab file")
            min_freq = int(header.split("min_freq=")[1])
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tokens, min_freq)


def tokenize(text: str, vocab: Vocabulary) -> list[int]:
    """BOS-free id sequence for ``text`` (OOV words become UNK)."""
    return vocab.encode(text)


def detokenize(ids, vocab: Vocabulary) -> str:
    return vocab.decode(ids)


def pad_batch(seqs: list[list[int]], length: int | None = None) -> np.ndarray:
    """Right-pad id lists with PAD into an int64 matrix."""
    if length is None:
        length = max(len(s) for s in seqs)
    out = np.full((len(seqs), length), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out
