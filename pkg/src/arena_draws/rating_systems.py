"""Elo, Glicko-2, online Bradley-Terry and TrueSkill update rules.

Each system exposes pure functions (state in, state out) plus a small
``RatingSystem`` adapter that the prequential replay drives.  Both sides
of every update are computed from the pre-battle states.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Iterable, Optional, Sequence

from .domain import Outcome
from .errors import DomainError
from .numerics import (
    solve_volatility,
    std_normal_cdf,
    std_normal_inv_cdf,
    truncated_moments_draw,
    truncated_moments_win,
)

GLICKO2_SCALE = 173.7178


@dataclass(frozen=True)
class OutcomeProbs:
    p_win_a: float
    p_draw: float
    p_loss_a: float

    def __post_init__(self) -> None:
        total = self.p_win_a + self.p_draw + self.p_loss_a
        if abs(total - 1.0) > 1e-9:
            raise DomainError(f"outcome probabilities sum to {total!r}, not 1")

    @classmethod
    def binary(cls, e_a: float) -> "OutcomeProbs":
        return cls(e_a, 0.0, 1.0 - e_a)


# -- Elo ---------------------------------------------------------------------


@dataclass(frozen=True)
class EloConfig:
    k_factor: float = 32.0
    initial_rating: float = 1500.0

    def __post_init__(self) -> None:
        if not self.k_factor > 0:
            raise DomainError("k_factor must be positive")


@dataclass(frozen=True)
class EloState:
    rating: float = 1500.0


def expect_elo(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


def update_elo(a: EloState, b: EloState, y: Outcome, cfg: EloConfig = EloConfig()) -> tuple[EloState, EloState]:
    e_a = expect_elo(a.rating, b.rating)
    delta = cfg.k_factor * (y.score - e_a)
    # The b-side delta K((1 - y) - E_b) is exactly -delta.
    return EloState(a.rating + delta), EloState(b.rating - delta)


# -- Glicko-2 ----------------------------------------------------------------


@dataclass(frozen=True)
class Glicko2Config:
    tau: float = 0.5
    initial_rating: float = 1500.0
    initial_rd: float = 350.0
    initial_volatility: float = 0.06

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise DomainError("tau must be positive")
        if not (self.initial_rd > 0 and self.initial_volatility > 0):
            raise DomainError("initial RD and volatility must be positive")


@dataclass(frozen=True)
class Glicko2State:
    """Rating on the internal Glicko-2 scale."""

    mu: float = 0.0
    phi: float = 350.0 / GLICKO2_SCALE
    sigma: float = 0.06

    def __post_init__(self) -> None:
        if not (self.phi > 0 and self.sigma > 0):
            raise DomainError("Glicko-2 phi and sigma must be positive")

    @classmethod
    def from_display(cls, rating: float, rd: float, sigma: float) -> "Glicko2State":
        return cls((rating - 1500.0) / GLICKO2_SCALE, rd / GLICKO2_SCALE, sigma)

    @property
    def rating(self) -> float:
        return 1500.0 + GLICKO2_SCALE * self.mu

    @property
    def rd(self) -> float:
        return GLICKO2_SCALE * self.phi


def _g(phi: float) -> float:
    return 1.0 / math.sqrt(1.0 + 3.0 * phi * phi / (math.pi * math.pi))


def expect_glicko2(a: Glicko2State, b: Glicko2State) -> float:
    return 1.0 / (1.0 + math.exp(-_g(b.phi) * (a.mu - b.mu)))


def update_glicko2_period(
    p: Glicko2State,
    opponents: Sequence[tuple[Glicko2State, float]],
    cfg: Glicko2Config = Glicko2Config(),
) -> Glicko2State:
    if not opponents:
        raise DomainError("a rating period needs at least one game")
    v_inv = 0.0
    surprise = 0.0
    for opp, score in opponents:
        g = _g(opp.phi)
        e = 1.0 / (1.0 + math.exp(-g * (p.mu - opp.mu)))
        v_inv += g * g * e * (1.0 - e)
        surprise += g * (score - e)
    v = 1.0 / v_inv
    delta = v * surprise
    phi_sq = p.phi * p.phi
    sigma = solve_volatility(delta * delta, phi_sq, v, p.sigma, cfg.tau)
    phi_star_sq = phi_sq + sigma * sigma
    phi = 1.0 / math.sqrt(1.0 / phi_star_sq + 1.0 / v)
    mu = p.mu + phi * phi * surprise
    return Glicko2State(mu, phi, sigma)


def update_glicko2_game(
    a: Glicko2State, b: Glicko2State, y: Outcome, cfg: Glicko2Config = Glicko2Config()
) -> tuple[Glicko2State, Glicko2State]:
    s = y.score
    return (
        update_glicko2_period(a, [(b, s)], cfg),
        update_glicko2_period(b, [(a, 1.0 - s)], cfg),
    )


# -- Bradley-Terry (online) --------------------------------------------------


@dataclass(frozen=True)
class BTConfig:
    eta: float = 0.1
    initial_rating: float = 0.0

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise DomainError("eta must be positive")


def expect_bt(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + math.exp(r_b - r_a))


def update_bt(r_a: float, r_b: float, y: Outcome, cfg: BTConfig = BTConfig()) -> tuple[float, float]:
    e_a = expect_bt(r_a, r_b)
    if y is Outcome.DRAW:
        # Simultaneous win and loss updates from the same pre-battle ratings.
        delta = cfg.eta * (1.0 - e_a) + cfg.eta * (0.0 - e_a)
    else:
        delta = cfg.eta * (y.score - e_a)
    return r_a + delta, r_b - delta


# -- TrueSkill ---------------------------------------------------------------


def draw_margin_from_probability(p_draw: float, beta: float) -> float:
    """Performance-space draw margin that yields ``p_draw`` between two exact skills."""
    if not (0.0 <= p_draw < 1.0):
        raise DomainError(f"draw probability must lie in [0, 1), got {p_draw!r}")
    if not beta > 0:
        raise DomainError("beta must be positive")
    if p_draw == 0.0:
        return 0.0
    return math.sqrt(2.0) * beta * std_normal_inv_cdf((p_draw + 1.0) / 2.0)


@dataclass(frozen=True)
class TrueSkillConfig:
    mu: float = 25.0
    sigma: float = 25.0 / 3.0
    beta: float = 25.0 / 6.0
    tau_dynamics: float = 25.0 / 300.0
    draw_probability: Optional[float] = 0.10
    draw_margin: Optional[float] = None

    def __post_init__(self) -> None:
        if not (self.beta > 0 and self.sigma > 0):
            raise DomainError("beta and sigma must be positive")
        if self.tau_dynamics < 0:
            raise DomainError("tau_dynamics must be non-negative")
        if self.draw_margin is not None and self.draw_margin < 0:
            raise DomainError("draw_margin must be non-negative")
        if self.draw_margin is None and self.draw_probability is None:
            raise DomainError("give either draw_margin or draw_probability")

    @property
    def epsilon(self) -> float:
        if self.draw_margin is not None:
            return self.draw_margin
        return draw_margin_from_probability(self.draw_probability, self.beta)


@dataclass(frozen=True)
class TrueSkillState:
    mu: float = 25.0
    sigma: float = 25.0 / 3.0

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise DomainError("TrueSkill sigma must be positive")


def _ts_spread(a: TrueSkillState, b: TrueSkillState, beta: float) -> float:
    return math.sqrt(2.0 * beta * beta + a.sigma * a.sigma + b.sigma * b.sigma)


def trueskill_probs_from(mean_diff: float, spread: float, epsilon: float) -> OutcomeProbs:
    """Three-way outcome distribution for a performance difference ~ N(mean_diff, spread^2)."""
    p_win = 1.0 - std_normal_cdf((epsilon - mean_diff) / spread)
    p_loss = 1.0 - std_normal_cdf((epsilon + mean_diff) / spread)
    p_draw = max(0.0, 1.0 - p_win - p_loss)
    return OutcomeProbs(p_win, p_draw, 1.0 - p_win - p_draw)


def probs_trueskill(a: TrueSkillState, b: TrueSkillState, cfg: TrueSkillConfig = TrueSkillConfig()) -> OutcomeProbs:
    return trueskill_probs_from(a.mu - b.mu, _ts_spread(a, b, cfg.beta), cfg.epsilon)


def update_trueskill(
    a: TrueSkillState, b: TrueSkillState, y: Outcome, cfg: TrueSkillConfig = TrueSkillConfig()
) -> tuple[TrueSkillState, TrueSkillState]:
    tau_sq = cfg.tau_dynamics * cfg.tau_dynamics
    var_a = a.sigma * a.sigma + tau_sq
    var_b = b.sigma * b.sigma + tau_sq
    c = math.sqrt(2.0 * cfg.beta * cfg.beta + var_a + var_b)
    alpha = cfg.epsilon / c
    if y is Outcome.DRAW:
        m = truncated_moments_draw((a.mu - b.mu) / c, alpha)
        # v is the mean shift of the performance difference a - b.
        mu_a = a.mu + var_a / c * m.v
        mu_b = b.mu - var_b / c * m.v
    else:
        sign = 1.0 if y is Outcome.WIN_A else -1.0
        m = truncated_moments_win(sign * (a.mu - b.mu) / c, alpha)
        mu_a = a.mu + sign * var_a / c * m.v
        mu_b = b.mu - sign * var_b / c * m.v
    sigma_a = math.sqrt(var_a * (1.0 - var_a / (c * c) * m.w))
    sigma_b = math.sqrt(var_b * (1.0 - var_b / (c * c) * m.w))
    return TrueSkillState(mu_a, sigma_a), TrueSkillState(mu_b, sigma_b)


# -- adapters driven by the replay engine ------------------------------------


@dataclass(frozen=True)
class Prediction:
    """What a system knows about a pairing before the battle.

    ``e_a`` is the probability that A beats B given a decisive result.
    ``spread`` is set only for systems with a native draw model.
    """

    e_a: float
    gap: float
    mean_diff: float = 0.0
    spread: Optional[float] = None


class RatingSystem:
    name: ClassVar[str]
    native_draws: ClassVar[bool] = False

    def initial_state(self):
        raise NotImplementedError

    def predict(self, a, b) -> Prediction:
        raise NotImplementedError

    def update(self, a, b, y: Outcome):
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Elo(RatingSystem):
    config: EloConfig = field(default_factory=EloConfig)
    name: ClassVar[str] = "elo"

    def initial_state(self) -> EloState:
        return EloState(self.config.initial_rating)

    def predict(self, a: EloState, b: EloState) -> Prediction:
        return Prediction(expect_elo(a.rating, b.rating), abs(a.rating - b.rating))

    def update(self, a, b, y):
        return update_elo(a, b, y, self.config)

    def params(self) -> dict:
        return {"k_factor": self.config.k_factor, "initial_rating": self.config.initial_rating}


@dataclass(frozen=True)
class Glicko2(RatingSystem):
    config: Glicko2Config = field(default_factory=Glicko2Config)
    name: ClassVar[str] = "glicko2"

    def initial_state(self) -> Glicko2State:
        c = self.config
        return Glicko2State.from_display(c.initial_rating, c.initial_rd, c.initial_volatility)

    def predict(self, a: Glicko2State, b: Glicko2State) -> Prediction:
        return Prediction(expect_glicko2(a, b), abs(a.mu - b.mu))

    def update(self, a, b, y):
        return update_glicko2_game(a, b, y, self.config)

    def params(self) -> dict:
        c = self.config
        return {
            "tau": c.tau,
            "initial_rating": c.initial_rating,
            "initial_rd": c.initial_rd,
            "initial_volatility": c.initial_volatility,
        }


@dataclass(frozen=True)
class BradleyTerry(RatingSystem):
    config: BTConfig = field(default_factory=BTConfig)
    name: ClassVar[str] = "bt"

    def initial_state(self) -> float:
        return self.config.initial_rating

    def predict(self, a: float, b: float) -> Prediction:
        return Prediction(expect_bt(a, b), abs(a - b))

    def update(self, a, b, y):
        return update_bt(a, b, y, self.config)

    def params(self) -> dict:
        return {"eta": self.config.eta, "initial_rating": self.config.initial_rating}


@dataclass(frozen=True)
class TrueSkill(RatingSystem):
    config: TrueSkillConfig = field(default_factory=TrueSkillConfig)
    name: ClassVar[str] = "trueskill"
    native_draws: ClassVar[bool] = True

    def initial_state(self) -> TrueSkillState:
        return TrueSkillState(self.config.mu, self.config.sigma)

    def predict(self, a: TrueSkillState, b: TrueSkillState) -> Prediction:
        diff = a.mu - b.mu
        spread = _ts_spread(a, b, self.config.beta)
        return Prediction(std_normal_cdf(diff / spread), abs(diff), diff, spread)

    def update(self, a, b, y):
        return update_trueskill(a, b, y, self.config)

    def params(self) -> dict:
        c = self.config
        return {
            "mu": c.mu,
            "sigma": c.sigma,
            "beta": c.beta,
            "tau_dynamics": c.tau_dynamics,
            "draw_probability": c.draw_probability,
            "draw_margin": c.draw_margin,
        }


SYSTEMS: dict[str, tuple[type, type]] = {
    "elo": (Elo, EloConfig),
    "glicko2": (Glicko2, Glicko2Config),
    "bt": (BradleyTerry, BTConfig),
    "trueskill": (TrueSkill, TrueSkillConfig),
}


def make_system(name: str, **params) -> RatingSystem:
    """Build a rating system by name, e.g. ``make_system("elo", k_factor=16)``."""
    try:
        cls, cfg_cls = SYSTEMS[name]
    except KeyError:
        raise DomainError(f"unknown rating system {name!r}; choose from {', '.join(SYSTEMS)}") from None
    return cls(cfg_cls(**params))


def all_systems(names: Iterable[str] = SYSTEMS) -> list[RatingSystem]:
    return [make_system(n) for n in names]
