"""Caption tokenization and the index vocabulary used by all decoders.

One tokenizer is shared by vocabulary construction and every caption metric:
lowercase, punctuation stripped to spaces, split on whitespace.
"""

from __future__ import annotations

import json
import os
import string
from collections import Counter
from dataclasses import dataclass, field

from .errors import DataError
from .ioutil import atomic_path

BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
RESERVED = (BOS, EOS, UNK)

_PUNCT_TO_SPACE = str.maketrans({c: " " for c in string.punctuation})


def tokenize(text: str) -> list[str]:
    """Lowercase, strip punctuation to spaces, split on whitespace."""
    return text.lower().translate(_PUNCT_TO_SPACE).split()


@dataclass
class Vocabulary:
    tokens: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise DataError("vocabulary contains duplicate tokens")
        for res in RESERVED:
            if res not in self.tokens:
                raise DataError(f"vocabulary is missing reserved token {res}")
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def bos(self) -> int:
        return self.index[BOS]

    @property
    def eos(self) -> int:
        return self.index[EOS]

    @property
    def unk(self) -> int:
        return self.index[UNK]

    def encode(self, text: str) -> list[int]:
        """Token ids for a caption, unknown words mapped to <unk>."""
        unk = self.unk
        return [self.index.get(w, unk) for w in tokenize(text)]

    def decode(self, ids: list[int]) -> list[str]:
        """Surface words for a hypothesis, reserved tokens dropped."""
        reserved = {self.bos, self.eos, self.unk}
        return [self.tokens[i] for i in ids if i not in reserved]

    def save(self, path: str | os.PathLike) -> None:
        with atomic_path(path) as tmp, open(tmp, "w", encoding="utf-8") as fh:
            json.dump({"tokens": self.tokens}, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(tokens=[str(t) for t in obj["tokens"]])


def build_vocab(captions, min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from captions (or a manifest), frequency-ordered.

    Words seen fewer than ``min_count`` times fall back to <unk>. Ordering is
    deterministic: reserved tokens first, then frequency descending with
    lexicographic tie-break.
    """
    if hasattr(captions, "captions"):
        captions = captions.captions()
    counts: Counter[str] = Counter()
    n_caps = 0
    for cap in captions:
        counts.update(tokenize(cap))
        n_caps += 1
    if n_caps == 0 or not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    kept = [w for w, c in counts.items() if c >= min_count]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(tokens=list(RESERVED) + kept)
