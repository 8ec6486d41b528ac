"""Synthetic arena generator with query-driven, skill-independent draws.

Randomness comes from numpy's PCG64 bit generator seeded with the config
seed, consumed in a fixed order: skills, pairs, orientation, difficulty,
subjectivity, draw variates, win variates.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .domain import Annotation, Battle, BattleStream, Outcome
from .errors import DomainError

SCORES = tuple(range(6))
UNIFORM6 = (1 / 6,) * 6


def uniform_draw_model(p: float) -> tuple[tuple[float, ...], ...]:
    return tuple((p,) * 6 for _ in SCORES)


def factored_draw_model(
    base: float, difficulty_factors: Sequence[float], subjectivity_factors: Sequence[float]
) -> tuple[tuple[float, ...], ...]:
    """``p(d, s) = base * f[d] * g[s]``."""
    return tuple(tuple(base * fd * gs for gs in subjectivity_factors) for fd in difficulty_factors)


def hypothesis_draw_model(
    draw_fraction: float = 0.35, rr_difficulty: float = 1.37, rr_subjectivity: float = 1.35
) -> tuple[tuple[float, ...], ...]:
    """Draw table where score 0 of each field carries the given risk ratio.

    With uniform score distributions the overall draw rate is ``draw_fraction``.
    """
    f = (rr_difficulty,) + (1.0,) * 5
    g = (rr_subjectivity,) + (1.0,) * 5
    base = draw_fraction / (np.mean(f) * np.mean(g))
    return factored_draw_model(float(base), f, g)


@dataclass(frozen=True)
class SimulatorConfig:
    n_models: int = 20
    n_battles: int = 50_000
    skill_scale: float = 1.0
    difficulty_dist: tuple[float, ...] = UNIFORM6
    subjectivity_dist: tuple[float, ...] = UNIFORM6
    draw_model: tuple[tuple[float, ...], ...] = field(default_factory=lambda: uniform_draw_model(0.35))
    gap_coupling: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "difficulty_dist", tuple(float(x) for x in self.difficulty_dist))
        object.__setattr__(self, "subjectivity_dist", tuple(float(x) for x in self.subjectivity_dist))
        object.__setattr__(self, "draw_model", tuple(tuple(float(x) for x in row) for row in self.draw_model))
        if self.n_models < 2:
            raise DomainError("need at least two models")
        if self.n_battles < 0:
            raise DomainError("n_battles must be non-negative")
        if not self.skill_scale > 0:
            raise DomainError("skill_scale must be positive")
        if self.gap_coupling < 0:
            raise DomainError("gap_coupling must be non-negative")
        for name in ("difficulty_dist", "subjectivity_dist"):
            dist = getattr(self, name)
            if len(dist) != 6 or min(dist) < 0 or abs(sum(dist) - 1.0) > 1e-9:
                raise DomainError(f"{name} must be six probabilities summing to 1")
        if len(self.draw_model) != 6 or any(len(row) != 6 for row in self.draw_model):
            raise DomainError("draw_model must be a 6x6 table indexed by (difficulty, subjectivity)")
        if any(not 0.0 <= p < 1.0 for row in self.draw_model for p in row):
            raise DomainError("draw probabilities must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["difficulty_dist"] = list(self.difficulty_dist)
        d["subjectivity_dist"] = list(self.subjectivity_dist)
        d["draw_model"] = [list(r) for r in self.draw_model]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimulatorConfig":
        d = dict(d)
        for key in ("difficulty_dist", "subjectivity_dist"):
            if key in d:
                d[key] = tuple(d[key])
        if "draw_model" in d:
            dm = d["draw_model"]
            d["draw_model"] = uniform_draw_model(dm) if isinstance(dm, (int, float)) else tuple(map(tuple, dm))
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    skills: dict[str, float]
    difficulty: tuple[int, ...]
    subjectivity: tuple[int, ...]
    p_draw: tuple[float, ...]


def model_name(i: int, n: int) -> str:
    return f"model-{i:0{len(str(n - 1))}d}"


def simulate(cfg: SimulatorConfig) -> tuple[BattleStream, list[Annotation], GroundTruth]:
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    n, m = cfg.n_battles, cfg.n_models
    skills = rng.normal(0.0, cfg.skill_scale, m)

    first = rng.integers(0, m, n)
    second = rng.integers(0, m - 1, n)
    second = second + (second >= first)  # uniform over ordered pairs of distinct models

    diff = rng.choice(6, n, p=cfg.difficulty_dist)
    subj = rng.choice(6, n, p=cfg.subjectivity_dist)
    table = np.asarray(cfg.draw_model)
    gap = np.abs(skills[first] - skills[second])
    p_draw = np.clip(table[diff, subj] - cfg.gap_coupling * gap, 0.0, 1.0)

    is_draw = rng.random(n) < p_draw
    p_win_a = 1.0 / (1.0 + np.exp(skills[second] - skills[first]))
    win_a = rng.random(n) < p_win_a

    names = [model_name(i, m) for i in range(m)]
    width = len(str(max(n - 1, 0)))
    battles = []
    annotations = []
    for i in range(n):
        if is_draw[i]:
            y = Outcome.DRAW
        else:
            y = Outcome.WIN_A if win_a[i] else Outcome.WIN_B
        bid = f"sim-{i:0{width}d}"
        battles.append(Battle(bid, i, names[first[i]], names[second[i]], y))
        annotations.append(Annotation(bid, int(diff[i]), int(subj[i])))
    truth = GroundTruth(
        dict(zip(names, map(float, skills))),
        tuple(int(x) for x in diff),
        tuple(int(x) for x in subj),
        tuple(float(x) for x in p_draw),
    )
    return BattleStream(battles), annotations, truth


def theoretical_rr(cfg: SimulatorConfig, field: str, bin: int) -> float:
    """Expected draw risk ratio of ``field == bin`` vs the rest (no gap coupling only)."""
    if cfg.gap_coupling != 0:
        raise DomainError("closed-form risk ratios need gap_coupling = 0")
    if bin not in SCORES:
        raise DomainError("bin must be in 0..5")
    table = np.asarray(cfg.draw_model)
    pd = np.asarray(cfg.difficulty_dist)
    ps = np.asarray(cfg.subjectivity_dist)
    if field == "difficulty":
        marginal, weights = table @ ps, pd
    elif field == "subjectivity":
        marginal, weights = pd @ table, ps
    else:
        raise DomainError(f"unknown field {field!r}")
    rest = np.array([v != bin for v in SCORES])
    if weights[bin] == 0 or weights[rest].sum() == 0:
        raise DomainError(f"bin {bin} or its complement has zero probability")
    inside = marginal[bin]
    outside = float(marginal[rest] @ weights[rest]) / float(weights[rest].sum())
    return float(inside / outside)
