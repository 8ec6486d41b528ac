"""Chronological predict-then-update replay, draw-margin calibration,
draw-update ablations and draw/win-loss trade-off curves."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import BattleStream, Outcome
from .errors import DataError, DomainError, NumericalError
from .rating_systems import OutcomeProbs, RatingSystem, draw_margin_from_probability, trueskill_probs_from

# Decision-margin sweep: 0.05, 0.10, ..., 0.45.
EPSILON_GRID: tuple[float, ...] = tuple(round(0.05 * k, 2) for k in range(1, 10))
CALIBRATION_FRACTION = 0.05


class Treatment(str, enum.Enum):
    APPLY_ALL = "apply_all"
    SKIP_DRAW_UPDATES = "skip_draws"
    RANDOM_OMIT = "random_omit"


@dataclass(frozen=True)
class TreatmentPolicy:
    kind: Treatment = Treatment.APPLY_ALL
    omit_rate: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", Treatment(self.kind))
        if self.kind is Treatment.RANDOM_OMIT:
            if self.omit_rate is None or not 0.0 <= self.omit_rate <= 1.0:
                raise DomainError("RANDOM_OMIT needs an omit_rate in [0, 1]")
            if self.seed is None:
                object.__setattr__(self, "seed", 0)
        elif self.omit_rate is not None:
            raise DomainError(f"omit_rate only applies to {Treatment.RANDOM_OMIT.value}")

    @classmethod
    def apply_all(cls) -> "TreatmentPolicy":
        return cls(Treatment.APPLY_ALL)

    @classmethod
    def skip_draws(cls) -> "TreatmentPolicy":
        return cls(Treatment.SKIP_DRAW_UPDATES)

    @classmethod
    def random_omit(cls, rate: float, seed: int = 0) -> "TreatmentPolicy":
        return cls(Treatment.RANDOM_OMIT, rate, seed)


@dataclass(frozen=True, slots=True)
class PredictionRecord:
    battle_id: str
    predicted: Outcome
    actual: Outcome
    probs: OutcomeProbs
    pre_gap: float
    in_calibration: bool
    e_a: float
    mean_diff: float = 0.0
    spread: Optional[float] = None
    updated: bool = True


@dataclass(frozen=True)
class PredictionLog:
    records: tuple[PredictionRecord, ...]
    system: str
    policy: TreatmentPolicy
    epsilon: float
    beta: Optional[float] = None

    def __len__(self) -> int:
        return len(self.records)

    def validation(self) -> list[PredictionRecord]:
        return [r for r in self.records if not r.in_calibration]


@dataclass(frozen=True)
class MetricsReport:
    acc: Optional[float]
    wl_acc: Optional[float]
    draw_acc: Optional[float]
    n: int
    n_wl: int
    n_draw: int


def decide(probs: OutcomeProbs, epsilon: float) -> Outcome:
    if epsilon < 0:
        raise DomainError("decision margin must be non-negative")
    if probs.p_draw > 0.0:
        best = max(probs.p_draw, probs.p_win_a, probs.p_loss_a)
        if probs.p_draw == best:
            return Outcome.DRAW
        return Outcome.WIN_A if probs.p_win_a == best else Outcome.WIN_B
    diff = probs.p_win_a - probs.p_loss_a
    if epsilon == 0.0:
        return Outcome.WIN_A if diff >= 0 else Outcome.WIN_B
    if diff > epsilon:
        return Outcome.WIN_A
    if -diff > epsilon:
        return Outcome.WIN_B
    return Outcome.DRAW


def _native_probs(mean_diff: float, spread: float, epsilon: float, beta: float) -> OutcomeProbs:
    # For systems with a native draw model the decision margin is read as a
    # draw probability and converted to a performance-space margin.
    if epsilon >= 1.0:
        return OutcomeProbs(0.0, 1.0, 0.0)
    margin = draw_margin_from_probability(epsilon, beta)
    return trueskill_probs_from(mean_diff, spread, margin)


def record_probs(record: PredictionRecord, epsilon: float, beta: Optional[float]) -> OutcomeProbs:
    """Outcome distribution of ``record`` re-read at decision margin ``epsilon``."""
    if record.spread is None:
        return record.probs
    return _native_probs(record.mean_diff, record.spread, epsilon, beta)


def redecide(log: PredictionLog, epsilon: float) -> PredictionLog:
    """The log a replay at ``epsilon`` would have produced.

    Rating updates never depend on the decision margin, so only the
    predictions change.
    """
    records = tuple(
        _replace_prediction(r, decide(p := record_probs(r, epsilon, log.beta), epsilon), p) for r in log.records
    )
    return PredictionLog(records, log.system, log.policy, epsilon, log.beta)


def _replace_prediction(r: PredictionRecord, predicted: Outcome, probs: OutcomeProbs) -> PredictionRecord:
    return PredictionRecord(
        r.battle_id, predicted, r.actual, probs, r.pre_gap, r.in_calibration, r.e_a, r.mean_diff, r.spread, r.updated
    )


def calibration_size(n: int, calibration_fraction: float) -> int:
    if not 0.0 <= calibration_fraction <= 1.0:
        raise DomainError("calibration_fraction must lie in [0, 1]")
    # Guard against float noise such as 0.05 * 100 = 5.000000000000001.
    return min(n, math.ceil(round(calibration_fraction * n, 9)))


def replay(
    stream: BattleStream,
    system: RatingSystem,
    policy: TreatmentPolicy = TreatmentPolicy(),
    epsilon: float = 0.1,
    calibration_fraction: float = CALIBRATION_FRACTION,
) -> PredictionLog:
    n = len(stream)
    if n == 0:
        raise DataError("cannot replay an empty battle stream")
    if epsilon < 0:
        raise DomainError("decision margin must be non-negative")
    n_cal = calibration_size(n, calibration_fraction)
    beta = getattr(system.config, "beta", None) if system.native_draws else None

    if policy.kind is Treatment.RANDOM_OMIT:
        # One variate per battle so the skip pattern does not depend on epsilon.
        skips = np.random.Generator(np.random.PCG64(policy.seed)).random(n) < policy.omit_rate
    else:
        skips = None
    skip_draws = policy.kind is Treatment.SKIP_DRAW_UPDATES

    states: dict = {}
    records = []
    for i, battle in enumerate(stream):
        sa = states.get(battle.model_a)
        if sa is None:
            sa = system.initial_state()
        sb = states.get(battle.model_b)
        if sb is None:
            sb = system.initial_state()
        pred = system.predict(sa, sb)
        if pred.spread is None:
            probs = OutcomeProbs.binary(pred.e_a)
        else:
            probs = _native_probs(pred.mean_diff, pred.spread, epsilon, beta)
        y = battle.outcome
        if skips is not None:
            update = not skips[i]
        else:
            update = not (skip_draws and y is Outcome.DRAW)
        records.append(
            PredictionRecord(
                battle.battle_id,
                decide(probs, epsilon),
                y,
                probs,
                pred.gap,
                i < n_cal,
                pred.e_a,
                pred.mean_diff,
                pred.spread,
                update,
            )
        )
        if update:
            try:
                states[battle.model_a], states[battle.model_b] = system.update(sa, sb, y)
            except (NumericalError, OverflowError, ZeroDivisionError) as exc:
                raise NumericalError(f"{system.name} update failed at battle {i} ({battle.battle_id!r}): {exc}") from exc
        else:
            states[battle.model_a] = sa
            states[battle.model_b] = sb
    return PredictionLog(tuple(records), system.name, policy, epsilon, beta)


def _ratio(num: int, den: int) -> Optional[float]:
    return num / den if den else None


def wl_correct(record: PredictionRecord, mode: str = "eps0") -> bool:
    """Win-loss correctness of a decisive battle.

    ``eps0`` re-decides with draws disallowed (ties go to A); ``margin``
    keeps the stored prediction and counts a predicted draw as wrong.
    """
    if mode == "eps0":
        guess = Outcome.WIN_A if record.e_a >= 0.5 else Outcome.WIN_B
        return guess is record.actual
    if mode == "margin":
        return record.predicted is record.actual
    raise DomainError(f"unknown win-loss metric mode {mode!r}")


def metrics(log: PredictionLog, validation_only: bool = True, wl_mode: str = "eps0") -> MetricsReport:
    records = log.validation() if validation_only else log.records
    if not records:
        raise DataError("no records to score")
    n_correct = n_wl = n_wl_correct = n_draw = n_draw_correct = 0
    for r in records:
        correct = r.predicted is r.actual
        n_correct += correct
        if r.actual is Outcome.DRAW:
            n_draw += 1
            n_draw_correct += correct
        else:
            n_wl += 1
            n_wl_correct += wl_correct(r, wl_mode)
    return MetricsReport(
        n_correct / len(records),
        _ratio(n_wl_correct, n_wl),
        _ratio(n_draw_correct, n_draw),
        len(records),
        n_wl,
        n_draw,
    )


def calibrate_margin(
    stream: BattleStream,
    system: RatingSystem,
    calibration_fraction: float = CALIBRATION_FRACTION,
    grid: Sequence[float] = EPSILON_GRID,
) -> float:
    """Grid point with the best overall accuracy on the calibration slice (smallest on ties)."""
    n_cal = calibration_size(len(stream), calibration_fraction)
    if n_cal == 0:
        raise DataError("calibration slice is empty")
    if not grid:
        raise DomainError("empty epsilon grid")
    base = replay(stream[:n_cal], system, TreatmentPolicy.apply_all(), grid[0], calibration_fraction=0.0)
    best_eps, best_hits = None, -1
    for eps in sorted(grid):
        hits = sum(r.predicted is r.actual for r in redecide(base, eps).records)
        if hits > best_hits:
            best_eps, best_hits = eps, hits
    return best_eps


# -- experiments -------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentRow:
    system: str
    treatment: str
    epsilon: float
    acc: float
    wl_acc: Optional[float]
    draw_acc: Optional[float]
    n: int
    rel_acc: float
    rel_wl_acc: Optional[float]
    delta_pct: float
    p_acc: float
    p_wl_acc: float


@dataclass(frozen=True)
class ExperimentReport:
    rows: tuple[ExperimentRow, ...]
    draw_fraction: float
    calibration_fraction: float
    seed: int
    params: dict = field(default_factory=dict)

    def row(self, system: str, treatment: str) -> ExperimentRow:
        for r in self.rows:
            if r.system == system and r.treatment == Treatment(treatment).value:
                return r
        raise KeyError((system, treatment))


def _rel(new: Optional[float], base: Optional[float]) -> Optional[float]:
    if new is None or not base:
        return None
    return 100.0 * (new - base) / base


def policy_for(kind: Treatment, draw_fraction: float, seed: int) -> TreatmentPolicy:
    kind = Treatment(kind)
    if kind is Treatment.RANDOM_OMIT:
        return TreatmentPolicy.random_omit(draw_fraction, seed)
    return TreatmentPolicy(kind)


def _system_rows(
    stream: BattleStream,
    system: RatingSystem,
    treatments: Sequence[Treatment],
    draw_fraction: float,
    seed: int,
    calibration_fraction: float,
    epsilon: Optional[float],
) -> list[ExperimentRow]:
    from .analysis import mcnemar_one_sided

    eps = calibrate_margin(stream, system, calibration_fraction) if epsilon is None else epsilon
    base_log = replay(stream, system, TreatmentPolicy.apply_all(), eps, calibration_fraction)
    base = metrics(base_log)
    rows = []
    for kind in treatments:
        kind = Treatment(kind)
        if kind is Treatment.APPLY_ALL:
            log = base_log
        else:
            log = replay(stream, system, policy_for(kind, draw_fraction, seed), eps, calibration_fraction)
        m = metrics(log)
        rel_acc = _rel(m.acc, base.acc) or 0.0
        rel_wl = _rel(m.wl_acc, base.wl_acc)
        deltas = [d for d in (rel_acc, rel_wl) if d is not None]
        rows.append(
            ExperimentRow(
                system.name,
                kind.value,
                eps,
                m.acc,
                m.wl_acc,
                m.draw_acc,
                m.n,
                rel_acc,
                rel_wl,
                sum(deltas) / len(deltas),
                mcnemar_one_sided(log, base_log).p_one_sided,
                mcnemar_one_sided(log, base_log, metric="wl_acc").p_one_sided,
            )
        )
    return rows


def run_experiment(
    stream: BattleStream,
    systems: Sequence[RatingSystem],
    treatments: Sequence[Treatment] = tuple(Treatment),
    seed: int = 0,
    calibration_fraction: float = CALIBRATION_FRACTION,
    epsilon: Optional[float] = None,
    jobs: int = 1,
) -> ExperimentReport:
    """Table-style grid: every system under every treatment, scored on the validation slice.

    The decision margin is calibrated once per system under APPLY_ALL and
    reused for all treatments; random omission runs at the stream's draw rate.
    """
    draw_fraction = stream.draw_fraction
    args = [(stream, s, list(treatments), draw_fraction, seed, calibration_fraction, epsilon) for s in systems]
    if jobs > 1 and len(systems) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            # map() yields in submission order, keeping the grid order fixed.
            chunks = list(pool.map(_system_rows_star, args))
    else:
        chunks = [_system_rows(*a) for a in args]
    params = {s.name: s.params() for s in systems}
    return ExperimentReport(tuple(r for c in chunks for r in c), draw_fraction, calibration_fraction, seed, params)


def _system_rows_star(args) -> list[ExperimentRow]:
    return _system_rows(*args)


def global_average(reports: Sequence[ExperimentReport], system: str, treatment: str) -> float:
    """Mean relative change over every dataset and both accuracy metrics."""
    cells = []
    for rep in reports:
        row = rep.row(system, treatment)
        cells.append(row.rel_acc)
        if row.rel_wl_acc is not None:
            cells.append(row.rel_wl_acc)
    return sum(cells) / len(cells)


@dataclass(frozen=True)
class CurvePoint:
    epsilon: float
    draw_acc: Optional[float]
    wl_acc: Optional[float]


def tradeoff_curve(
    stream: BattleStream,
    system: RatingSystem,
    policy: TreatmentPolicy = TreatmentPolicy(),
    epsilon_grid: Sequence[float] = EPSILON_GRID,
    calibration_fraction: float = CALIBRATION_FRACTION,
) -> list[CurvePoint]:
    """Draw recall and margin win-loss accuracy for each decision margin."""
    if not epsilon_grid:
        raise DomainError("empty epsilon grid")
    log = replay(stream, system, policy, epsilon_grid[0], calibration_fraction)
    points = []
    for eps in epsilon_grid:
        m = metrics(redecide(log, eps), wl_mode="margin")
        points.append(CurvePoint(eps, m.draw_acc, m.wl_acc))
    return points
