from __future__ import annotations

from typing import Iterable, Sequence

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID = range(4)


class Vocab:
    """Token <-> id table.  Ids 0-3 are always PAD, BOS, EOS, UNK."""

    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[:4]) != SPECIALS:
            raise ValueError("vocabulary must start with the four special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, token_lists: Iterable[Iterable[str]]) -> Vocab:
        seen: dict[str, None] = {}
        for toks in token_lists:
            for t in toks:
                seen.setdefault(t, None)
        return cls(list(SPECIALS) + sorted(t for t in seen if t not in SPECIALS))

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def encode(self, texts: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in texts]

    def decode(self, ids: Iterable[int]) -> list[str]:
        """Token texts up to (not including) the first EOS; specials dropped."""
        out = []
        for i in ids:
            i = int(i)
            if i == EOS_ID:
                break
            if i in (PAD_ID, BOS_ID):
                continue
            out.append(self.tokens[i])
        return out
