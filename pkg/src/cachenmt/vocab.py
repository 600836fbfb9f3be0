"""Token/id bijection with fixed reserved ids."""

from __future__ import annotations

PAD = 0
BOS = 1
EOS = 2
UNK = 3

RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


class Vocab:
    """Dense token<->id bijection; ids 0..3 are PAD/BOS/EOS/UNK forever."""

    def __init__(self, tokens: list[str] | None = None):
        self._tokens: list[str] = list(RESERVED_TOKENS)
        self._ids: dict[str, int] = {t: i for i, t in enumerate(self._tokens)}
        if tokens:
            for t in tokens:
                self.add(t)

    def add(self, token: str) -> int:
        if token in self._ids:
            return self._ids[token]
        idx = len(self._tokens)
        self._tokens.append(token)
        self._ids[token] = idx
        return idx

    def id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def token(self, idx: int) -> str:
        return self._tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __len__(self) -> int:
        return len(self._tokens)

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def decode(self, ids: list[int], skip_reserved: bool = True) -> list[str]:
        if skip_reserved:
            return [self._tokens[i] for i in ids if i > UNK]
        return [self._tokens[i] for i in ids]

    def all_tokens(self) -> list[str]:
        """Full token list in id order, reserved tokens included."""
        return list(self._tokens)

    @classmethod
    def from_token_list(cls, tokens: list[str]) -> "Vocab":
        """Rebuild from a full id-ordered token list (checkpoint loading)."""
        if tuple(tokens[:4]) != RESERVED_TOKENS:
            raise ValueError("token list does not start with the reserved ids")
        return cls(tokens[4:])
