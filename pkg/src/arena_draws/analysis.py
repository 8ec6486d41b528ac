"""McNemar paired test, risk ratios and the draw-rate binning analyses."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Optional, Sequence

from .domain import Annotation, BattleStream, Outcome
from .errors import DataError, DomainError
from .numerics import std_normal_cdf
from .prequential import PredictionLog, PredictionRecord, wl_correct

Z_95 = 1.959964
EXACT_MCNEMAR_LIMIT = 1000


@dataclass(frozen=True)
class McNemarResult:
    b: int
    c: int
    p_one_sided: float


@dataclass(frozen=True)
class RiskRatioResult:
    rr: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    exposed_draws: int
    exposed_total: int
    unexposed_draws: int
    unexposed_total: int

    @property
    def defined(self) -> bool:
        return self.ci_low is not None

    def covers(self, value: float) -> bool:
        return self.defined and self.ci_low <= value <= self.ci_high


@dataclass(frozen=True)
class BinnedRR:
    label: str
    result: RiskRatioResult
    low: Optional[float] = None
    high: Optional[float] = None
    degenerate: bool = False


def binomial_upper_tail(k: int, n: int) -> float:
    """P(X >= k) for X ~ Binomial(n, 1/2), exact."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    tail = sum(math.comb(n, j) for j in range(k, n + 1))
    return float(Fraction(tail, 2**n))


def mcnemar_p(b: int, c: int) -> float:
    """One-sided p-value that the first classifier is better (b > c)."""
    n = b + c
    if n == 0:
        return 1.0
    if n <= EXACT_MCNEMAR_LIMIT:
        return binomial_upper_tail(b, n)
    z = (b - n / 2.0 - 0.5) / math.sqrt(n / 4.0)
    return 1.0 - std_normal_cdf(z)


def mcnemar_from_indicators(a_correct: Sequence[bool], b_correct: Sequence[bool]) -> McNemarResult:
    if len(a_correct) != len(b_correct):
        raise DataError("paired indicator sequences differ in length")
    b = sum(1 for x, y in zip(a_correct, b_correct) if x and not y)
    c = sum(1 for x, y in zip(a_correct, b_correct) if y and not x)
    return McNemarResult(b, c, mcnemar_p(b, c))


def _paired_records(
    log_a: PredictionLog, log_b: PredictionLog, validation_only: bool
) -> tuple[list[PredictionRecord], list[PredictionRecord]]:
    ra = log_a.validation() if validation_only else list(log_a.records)
    rb = log_b.validation() if validation_only else list(log_b.records)
    if [r.battle_id for r in ra] != [r.battle_id for r in rb]:
        raise DataError("prediction logs do not cover the same battles in the same order")
    return ra, rb


def mcnemar_one_sided(
    log_a: PredictionLog, log_b: PredictionLog, metric: str = "acc", validation_only: bool = True
) -> McNemarResult:
    """Test whether ``log_a`` predicts better than ``log_b`` on the same battles.

    ``metric="wl_acc"`` restricts to decisive battles and uses win-loss
    correctness with draws disallowed.
    """
    ra, rb = _paired_records(log_a, log_b, validation_only)
    if metric == "acc":
        return mcnemar_from_indicators(
            [r.predicted is r.actual for r in ra], [r.predicted is r.actual for r in rb]
        )
    if metric == "wl_acc":
        pairs = [(x, y) for x, y in zip(ra, rb) if x.actual is not Outcome.DRAW]
        return mcnemar_from_indicators([wl_correct(x) for x, _ in pairs], [wl_correct(y) for _, y in pairs])
    raise DomainError(f"unknown metric {metric!r}")


def risk_ratio(
    exposed_draws: int, exposed_total: int, unexposed_draws: int, unexposed_total: int, z: float = Z_95
) -> RiskRatioResult:
    """Risk ratio of a draw in the exposed group with a Katz log-method interval."""
    a, n1, c, n2 = exposed_draws, exposed_total, unexposed_draws, unexposed_total
    if min(a, n1, c, n2) < 0 or a > n1 or c > n2:
        raise DataError(f"invalid 2x2 counts ({a}/{n1} vs {c}/{n2})")
    if n1 == 0 or n2 == 0 or c == 0:
        return RiskRatioResult(None, None, None, a, n1, c, n2)
    rr = (a / n1) / (c / n2)
    # All four cells of the 2x2 table must be nonzero for a finite interval.
    if a == 0 or a == n1 or c == n2:
        return RiskRatioResult(rr, None, None, a, n1, c, n2)
    se = math.sqrt(1.0 / a - 1.0 / n1 + 1.0 / c - 1.0 / n2)
    log_rr = math.log(rr)
    return RiskRatioResult(rr, math.exp(log_rr - z * se), math.exp(log_rr + z * se), a, n1, c, n2)


def _one_vs_rest(is_draw: Sequence[bool], in_bin: Sequence[bool]) -> RiskRatioResult:
    exp_d = exp_n = un_d = un_n = 0
    for d, inside in zip(is_draw, in_bin):
        if inside:
            exp_n += 1
            exp_d += d
        else:
            un_n += 1
            un_d += d
    return risk_ratio(exp_d, exp_n, un_d, un_n)


def rr_by_annotation(
    battles: BattleStream, annotations: Iterable[Annotation], field: str = "difficulty"
) -> list[BinnedRR]:
    """Draw risk ratio of each score 0..5 against all other annotated battles."""
    if field not in ("difficulty", "subjectivity"):
        raise DomainError(f"field must be 'difficulty' or 'subjectivity', got {field!r}")
    outcome = {b.battle_id: b.outcome for b in battles}
    scores: list[int] = []
    is_draw: list[bool] = []
    for ann in annotations:
        if ann.battle_id not in outcome:
            raise DataError(f"annotation for unknown battle {ann.battle_id!r}")
        scores.append(getattr(ann, field))
        is_draw.append(outcome[ann.battle_id] is Outcome.DRAW)
    return [
        BinnedRR(str(s), _one_vs_rest(is_draw, [x == s for x in scores]), s, s) for s in range(6)
    ]


def percentile_edges(values: Sequence[float], n_bins: int) -> list[float]:
    """Interior bin edges at the k/n_bins quantiles (linear interpolation)."""
    if n_bins < 1:
        raise DomainError("n_bins must be at least 1")
    xs = sorted(values)
    n = len(xs)
    edges = []
    for k in range(1, n_bins):
        pos = k * (n - 1) / n_bins
        lo = math.floor(pos)
        frac = pos - lo
        hi = min(lo + 1, n - 1)
        edges.append(xs[lo] + (xs[hi] - xs[lo]) * frac)
    return edges


def rr_by_gap_values(gaps: Sequence[float], is_draw: Sequence[bool], n_bins: int = 10) -> list[BinnedRR]:
    """Draw risk ratio per percentile bin of the rating gap.

    Values on an edge fall in the lower bin.  Duplicate edges collapse
    their bins, and the surviving bins are flagged degenerate.
    """
    if not gaps:
        raise DataError("no gaps to bin")
    if len(gaps) != len(is_draw):
        raise DataError("gaps and outcomes differ in length")
    raw = percentile_edges(gaps, n_bins)
    top = max(gaps)
    # An edge at the maximum would leave an empty top bin.
    edges = sorted(e for e in set(raw) if e < top)
    degenerate = len(edges) < len(raw) or n_bins == 1
    bounds = [min(gaps)] + edges + [top]
    idx = [bisect.bisect_left(edges, g) for g in gaps]
    out = []
    n_eff = len(edges) + 1
    for k in range(n_eff):
        label = f"{100 * k // n_eff}-{100 * (k + 1) // n_eff}" if not degenerate else f"bin{k}"
        out.append(BinnedRR(label, _one_vs_rest(is_draw, [i == k for i in idx]), bounds[k], bounds[k + 1], degenerate))
    return out


def rr_by_rating_gap(log: PredictionLog, n_bins: int = 10, validation_only: bool = False) -> list[BinnedRR]:
    records = log.validation() if validation_only else list(log.records)
    if not records:
        raise DataError("empty prediction log")
    return rr_by_gap_values([r.pre_gap for r in records], [r.actual is Outcome.DRAW for r in records], n_bins)


def gaps_from_ratings(battles: BattleStream, ratings: Mapping[str, float]) -> list[float]:
    """Absolute gaps under a fixed external rating table (e.g. a final leaderboard)."""
    try:
        return [abs(ratings[b.model_a] - ratings[b.model_b]) for b in battles]
    except KeyError as exc:
        raise DataError(f"no rating for model {exc.args[0]!r}") from None
