"""Plate alphabet, label normalization, and plate format descriptors.

Everything downstream (forging, metrics, adjudication) speaks in terms of
these types, so they are deliberately small and immutable.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

LETTERS = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
DIGITS = "0123456789"
ALPHABET = LETTERS + DIGITS  # 36 symbol classes

_ALPHABET_SET = frozenset(ALPHABET)
_NON_ALPHANUMERIC = re.compile(r"[^A-Z0-9]+")


def plate_char(symbol: str) -> str:
    """Validate one plate symbol, folding lowercase to uppercase.

    Raises ValueError for anything outside the 36-class alphabet.
    """
    folded = symbol.upper()
    if len(folded) != 1 or folded not in _ALPHABET_SET:
        raise ValueError(f"not a plate symbol: {symbol!r}")
    return folded


@dataclass(frozen=True)
class PlateLabel:
    """A plate string over the A-Z/0-9 alphabet plus the text it came from.

    ``chars`` holds only alphabet symbols; ``raw`` keeps the original text
    verbatim so normalization is auditable. An empty ``chars`` is legal
    (callers decide whether empty is an error for their use).
    """

    chars: str
    raw: str = ""

    def __post_init__(self) -> None:
        bad = set(self.chars) - _ALPHABET_SET
        if bad:
            raise ValueError(f"label contains non-alphabet symbols: {sorted(bad)!r}")
        if not self.raw:
            object.__setattr__(self, "raw", self.chars)

    def __len__(self) -> int:
        return len(self.chars)

    def __bool__(self) -> bool:
        return bool(self.chars)


def normalize_label(raw: str) -> PlateLabel:
    """Uppercase ``raw`` and drop every character outside A-Z/0-9.

    Idempotent on its own output; empty input yields an empty label.
    """
    chars = _NON_ALPHANUMERIC.sub("", raw.upper())
    return PlateLabel(chars=chars, raw=raw)


class PlateLayout(Enum):
    SINGLE_LINE = "single-line"
    TWO_LINE = "two-line"


@dataclass(frozen=True)
class PlateFormat:
    """Letter/digit counts and line layout of a plate.

    The stock Malaysian format is three letters followed by four digits.
    """

    kind: PlateLayout = PlateLayout.SINGLE_LINE
    letters: int = 3
    digits: int = 4

    def __post_init__(self) -> None:
        if self.letters < 1 or self.digits < 1:
            raise ValueError("letter and digit counts must both be >= 1")

    @property
    def length(self) -> int:
        return self.letters + self.digits

    def matches(self, chars: str) -> bool:
        """True iff ``chars`` is exactly letters-then-digits per the counts."""
        if len(chars) != self.length:
            return False
        head, tail = chars[: self.letters], chars[self.letters :]
        return all(c in LETTERS for c in head) and all(c in DIGITS for c in tail)


MALAYSIAN_SINGLE_LINE = PlateFormat(PlateLayout.SINGLE_LINE, letters=3, digits=4)
MALAYSIAN_TWO_LINE = PlateFormat(PlateLayout.TWO_LINE, letters=3, digits=4)
