"""Online rating systems and a prequential harness for arena-style pairwise battles."""

from .domain import Annotation, Battle, BattleStream, Outcome, flip, outcome_score
from .errors import ArenaError, DataError, DomainError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "ArenaError",
    "Battle",
    "BattleStream",
    "DataError",
    "DomainError",
    "NumericalError",
    "Outcome",
    "flip",
    "outcome_score",
    "__version__",
]
