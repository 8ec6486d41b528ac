"""Core value types: outcomes, battles, battle streams and query annotations."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator, Optional, Sequence, Union

from .errors import DataError

Timestamp = Union[int, float]


class Outcome(enum.Enum):
    """Judgement of model A relative to model B."""

    WIN_A = "win_a"
    DRAW = "draw"
    WIN_B = "win_b"

    @property
    def score(self) -> float:
        return _SCORES[self]

    def flipped(self) -> "Outcome":
        return _FLIPS[self]


_SCORES = {Outcome.WIN_A: 1.0, Outcome.DRAW: 0.5, Outcome.WIN_B: 0.0}
_FLIPS = {Outcome.WIN_A: Outcome.WIN_B, Outcome.DRAW: Outcome.DRAW, Outcome.WIN_B: Outcome.WIN_A}


def outcome_score(o: Outcome) -> Fraction:
    """Exact score of ``o`` for model A: 1, 1/2 or 0."""
    return Fraction(_SCORES[o]).limit_denominator(2)


def flip(o: Outcome) -> Outcome:
    return _FLIPS[o]


@dataclass(frozen=True)
class Battle:
    battle_id: str
    timestamp: Timestamp
    model_a: str
    model_b: str
    outcome: Outcome
    query_text: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.model_a or not self.model_b:
            raise DataError(f"battle {self.battle_id!r}: model ids must be non-empty")
        if self.model_a == self.model_b:
            raise DataError(f"battle {self.battle_id!r}: model_a and model_b are both {self.model_a!r}")
        if not isinstance(self.outcome, Outcome):
            raise DataError(f"battle {self.battle_id!r}: outcome must be an Outcome, got {self.outcome!r}")


@dataclass(frozen=True)
class BattleStream(Sequence[Battle]):
    """Time-ordered, immutable sequence of battles with unique ids."""

    battles: tuple[Battle, ...] = field(default_factory=tuple)

    def __init__(self, battles: Iterable[Battle] = ()) -> None:
        battles = tuple(battles)
        seen: set[str] = set()
        prev: Optional[Timestamp] = None
        for i, b in enumerate(battles):
            if b.battle_id in seen:
                raise DataError(f"duplicate battle_id {b.battle_id!r} at position {i}")
            seen.add(b.battle_id)
            if prev is not None and b.timestamp < prev:
                raise DataError(f"timestamps decrease at position {i} (battle {b.battle_id!r})")
            prev = b.timestamp
        object.__setattr__(self, "battles", battles)

    def __len__(self) -> int:
        return len(self.battles)

    def __getitem__(self, i):  # type: ignore[override]
        if isinstance(i, slice):
            return BattleStream(self.battles[i])
        return self.battles[i]

    def __iter__(self) -> Iterator[Battle]:
        return iter(self.battles)

    @property
    def draw_fraction(self) -> float:
        if not self.battles:
            raise DataError("draw fraction of an empty battle stream is undefined")
        n_draw = sum(1 for b in self.battles if b.outcome is Outcome.DRAW)
        return n_draw / len(self.battles)

    @property
    def models(self) -> list[str]:
        """Model ids in order of first appearance."""
        seen: dict[str, None] = {}
        for b in self.battles:
            seen.setdefault(b.model_a)
            seen.setdefault(b.model_b)
        return list(seen)


@dataclass(frozen=True)
class Annotation:
    battle_id: str
    difficulty: int
    subjectivity: int

    def __post_init__(self) -> None:
        for name in ("difficulty", "subjectivity"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= 5:
                raise DataError(f"annotation {self.battle_id!r}: {name} must be an integer in 0..5, got {value!r}")
