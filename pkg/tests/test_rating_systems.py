import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arena_draws.domain import Outcome
from arena_draws.errors import DomainError
from arena_draws.rating_systems import (
    GLICKO2_SCALE,
    BTConfig,
    EloConfig,
    EloState,
    Glicko2Config,
    Glicko2State,
    OutcomeProbs,
    TrueSkillConfig,
    TrueSkillState,
    all_systems,
    draw_margin_from_probability,
    expect_bt,
    expect_elo,
    expect_glicko2,
    make_system,
    probs_trueskill,
    update_bt,
    update_elo,
    update_glicko2_game,
    update_glicko2_period,
    update_trueskill,
)

outcomes = st.sampled_from(list(Outcome))
ratings = st.floats(-3000, 3000, allow_nan=False)


def glicko2_by_hand(rating, rd, vol, games, tau):
    """Oracle: the reference eight-step procedure, volatility by plain bisection."""
    mu, phi = (rating - 1500) / 173.7178, rd / 173.7178
    v_inv, total = 0.0, 0.0
    for r_j, rd_j, s in games:
        mu_j, phi_j = (r_j - 1500) / 173.7178, rd_j / 173.7178
        g = 1 / math.sqrt(1 + 3 * phi_j**2 / math.pi**2)
        e = 1 / (1 + math.exp(-g * (mu - mu_j)))
        v_inv += g * g * e * (1 - e)
        total += g * (s - e)
    v = 1 / v_inv
    delta = v * total
    a = math.log(vol**2)

    def f(x):
        ex = math.exp(x)
        return ex * (delta**2 - phi**2 - v - ex) / (2 * (phi**2 + v + ex) ** 2) - (x - a) / tau**2

    lo, hi = a - 20, a + 20
    for _ in range(200):
        mid = (lo + hi) / 2
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    vol_new = math.exp(lo / 2)
    phi_star = math.sqrt(phi**2 + vol_new**2)
    phi_new = 1 / math.sqrt(1 / phi_star**2 + 1 / v)
    mu_new = mu + phi_new**2 * total
    return 173.7178 * mu_new + 1500, 173.7178 * phi_new, vol_new


WORKED_GAMES = [(1400, 30, 1.0), (1550, 100, 0.0), (1700, 300, 0.0)]


class TestElo:
    def test_expectation(self):
        assert expect_elo(1500, 1500) == 0.5
        assert expect_elo(1600, 1400) == pytest.approx(0.759747, abs=1e-6)
        assert expect_elo(1400, 1600) == pytest.approx(0.240253, abs=1e-6)

    @pytest.mark.parametrize(
        "ra, rb, y, expected",
        [
            (1500, 1500, Outcome.WIN_A, (1516, 1484)),
            (1500, 1500, Outcome.DRAW, (1500, 1500)),
            (1600, 1400, Outcome.DRAW, (1591.688, 1408.312)),
        ],
    )
    def test_update_examples(self, ra, rb, y, expected):
        a, b = update_elo(EloState(ra), EloState(rb), y, EloConfig(k_factor=32))
        # Direct evaluation of the two update equations.
        e_a = 1 / (1 + 10 ** ((rb - ra) / 400))
        assert a.rating == pytest.approx(ra + 32 * (y.score - e_a), abs=1e-9)
        assert (a.rating, b.rating) == pytest.approx(expected, abs=1e-3)

    @given(ratings, ratings, outcomes)
    def test_zero_sum(self, ra, rb, y):
        a, b = update_elo(EloState(ra), EloState(rb), y)
        assert a.rating + b.rating == pytest.approx(ra + rb, abs=1e-9)

    def test_k_must_be_positive(self):
        with pytest.raises(DomainError):
            EloConfig(k_factor=0)


class TestGlicko2:
    def test_worked_example(self):
        player = Glicko2State.from_display(1500, 200, 0.06)
        opponents = [(Glicko2State.from_display(r, rd, 0.06), s) for r, rd, s in WORKED_GAMES]
        new = update_glicko2_period(player, opponents, Glicko2Config(tau=0.5))
        rating, rd, vol = glicko2_by_hand(1500, 200, 0.06, WORKED_GAMES, 0.5)
        assert new.rating == pytest.approx(rating, abs=1e-4)
        assert new.rd == pytest.approx(rd, abs=1e-4)
        assert new.sigma == pytest.approx(vol, abs=1e-7)
        # Published values of the worked example.
        assert new.rating == pytest.approx(1464.06, abs=0.5)
        assert new.rd == pytest.approx(151.52, abs=0.5)
        assert new.sigma == pytest.approx(0.05999, abs=1e-4)

    def test_expectation(self):
        s = Glicko2State()
        assert expect_glicko2(s, s) == 0.5
        a = Glicko2State(0.7, 1.0, 0.06)
        b = Glicko2State(-0.2, 1e-12, 0.06)
        assert expect_glicko2(a, b) == pytest.approx(1 / (1 + math.exp(-0.9)), abs=1e-12)
        game1 = expect_glicko2(Glicko2State.from_display(1500, 200, 0.06), Glicko2State.from_display(1400, 30, 0.06))
        assert game1 == pytest.approx(0.639, abs=0.002)

    def test_display_scale(self):
        s = Glicko2State.from_display(1700, 300, 0.06)
        assert s.mu == pytest.approx(200 / GLICKO2_SCALE)
        assert (s.rating, s.rd) == pytest.approx((1700, 300))

    def test_symmetric_draw_only_shrinks_deviation(self):
        s = Glicko2State()
        new = update_glicko2_period(s, [(s, 0.5)])
        assert new.mu == pytest.approx(s.mu, abs=1e-15)
        assert new.phi < s.phi

    def test_game_symmetry(self):
        s = Glicko2State()
        a, b = update_glicko2_game(s, s, Outcome.DRAW)
        assert a == b
        assert a.mu == pytest.approx(0.0, abs=1e-15)
        assert a.phi < s.phi
        a, b = update_glicko2_game(s, s, Outcome.WIN_A)
        assert a.mu == pytest.approx(-b.mu, abs=1e-12)
        assert a.mu > 0

    def test_win_loss_mirror(self):
        p, opp = Glicko2State(0.3, 0.8, 0.06), Glicko2State(0.3, 0.5, 0.06)
        win = update_glicko2_period(p, [(opp, 1.0)])
        loss = update_glicko2_period(p, [(opp, 0.0)])
        assert win.mu - p.mu == pytest.approx(-(loss.mu - p.mu), rel=1e-6)

    def test_fuzz_states_stay_valid(self):
        import random

        rng = random.Random(3)
        system = make_system("glicko2")
        states = [system.initial_state() for _ in range(8)]
        for _ in range(10_000):
            i, j = rng.sample(range(8), 2)
            y = rng.choice(list(Outcome))
            states[i], states[j] = update_glicko2_game(states[i], states[j], y)
            assert states[i].phi > 0 and states[i].sigma > 0
            assert states[j].phi > 0 and states[j].sigma > 0

    def test_empty_period(self):
        with pytest.raises(DomainError):
            update_glicko2_period(Glicko2State(), [])


class TestBradleyTerry:
    def test_expectation(self):
        assert expect_bt(0, 0) == 0.5
        assert expect_bt(1, 0) == pytest.approx(0.731059, abs=1e-6)
        assert expect_bt(0, 1) == pytest.approx(0.268941, abs=1e-6)

    def test_update_examples(self):
        assert update_bt(0, 0, Outcome.WIN_A, BTConfig(eta=0.1)) == pytest.approx((0.05, -0.05), abs=1e-12)
        assert update_bt(0, 0, Outcome.DRAW, BTConfig(eta=0.1)) == (0, 0)
        e = 1 / (1 + math.exp(-1.0))
        a, b = update_bt(1.0, 0.0, Outcome.DRAW, BTConfig(eta=0.1))
        assert a == pytest.approx(1.0 + 0.1 * (1 - 2 * e), abs=1e-12)
        assert (a, b) == pytest.approx((0.9537883, 0.0462117), abs=1e-6)

    def test_draw_is_simultaneous_not_chained(self):
        a, _ = update_bt(1.0, 0.0, Outcome.DRAW, BTConfig(eta=0.5))
        a1, b1 = update_bt(1.0, 0.0, Outcome.WIN_A, BTConfig(eta=0.5))
        a2, _ = update_bt(a1, b1, Outcome.WIN_B, BTConfig(eta=0.5))
        assert a != pytest.approx(a2, abs=1e-6)

    @given(ratings, ratings, outcomes)
    def test_zero_sum(self, ra, rb, y):
        ra, rb = ra / 400, rb / 400
        a, b = update_bt(ra, rb, y)
        assert a + b == pytest.approx(ra + rb, abs=1e-9)


class TestTrueSkill:
    def test_symmetric_win(self):
        cfg = TrueSkillConfig(tau_dynamics=0.0, draw_margin=0.0)
        a, b = update_trueskill(TrueSkillState(), TrueSkillState(), Outcome.WIN_A, cfg)
        assert (a.mu, a.sigma) == pytest.approx((29.2052, 7.1945), abs=1e-3)
        assert (b.mu, b.sigma) == pytest.approx((50 - 29.2052, 7.1945), abs=1e-3)
        # Closed-form evaluation.
        c = math.sqrt(2 * (25 / 6) ** 2 + 2 * (25 / 3) ** 2)
        assert c == pytest.approx(13.17616, abs=1e-5)
        var = (25 / 3) ** 2
        assert a.mu == pytest.approx(25 + var / c * 0.7978845608, abs=1e-8)
        assert a.sigma == pytest.approx(math.sqrt(var * (1 - var / c**2 * 0.6366197724)), abs=1e-8)

    def test_equal_draw(self):
        a, b = update_trueskill(TrueSkillState(), TrueSkillState(), Outcome.DRAW)
        assert a.mu == b.mu == 25.0
        assert a.sigma == b.sigma < 25 / 3

    def test_probs_examples(self):
        s = TrueSkillState()
        assert probs_trueskill(s, s, TrueSkillConfig(draw_margin=0.0)) == OutcomeProbs(0.5, 0.0, 0.5)
        p = probs_trueskill(s, s, TrueSkillConfig(draw_margin=0.740467))
        c = 13.17616
        assert p.p_draw == pytest.approx(2 * 0.5 * (1 + math.erf(0.740467 / c / math.sqrt(2))) - 1, abs=1e-6)
        assert p.p_draw == pytest.approx(0.04482, abs=1e-5)

    @given(st.floats(0, 50), st.floats(0.5, 10), st.floats(0, 50), st.floats(0.5, 10), st.floats(0, 3))
    def test_relabeling_and_normalization(self, m1, s1, m2, s2, eps):
        a, b = TrueSkillState(m1, s1), TrueSkillState(m2, s2)
        cfg = TrueSkillConfig(draw_margin=eps)
        p, q = probs_trueskill(a, b, cfg), probs_trueskill(b, a, cfg)
        assert p.p_win_a == pytest.approx(q.p_loss_a, abs=1e-12)
        assert p.p_win_a + p.p_draw + p.p_loss_a == pytest.approx(1, abs=1e-9)
        assert p.p_draw >= 0

    def test_fuzz_posterior_shrinks(self):
        import random

        rng = random.Random(11)
        cfg = TrueSkillConfig()
        tau_sq = cfg.tau_dynamics**2
        for _ in range(10_000):
            a = TrueSkillState(rng.uniform(0, 50), rng.uniform(0.5, 9))
            b = TrueSkillState(rng.uniform(0, 50), rng.uniform(0.5, 9))
            y = rng.choice(list(Outcome))
            if y is Outcome.DRAW and abs(a.mu - b.mu) > 30:
                continue
            na, nb = update_trueskill(a, b, y, cfg)
            assert na.sigma**2 <= a.sigma**2 + tau_sq
            assert nb.sigma**2 <= b.sigma**2 + tau_sq


class TestDrawMargin:
    def test_examples(self):
        assert draw_margin_from_probability(0, 3.0) == 0
        assert draw_margin_from_probability(0.10, 25 / 6) == pytest.approx(0.740467, abs=1e-5)
        assert draw_margin_from_probability(0.10, 25 / 6) == pytest.approx(
            math.sqrt(2) * 25 / 6 * 0.12566134685507402, abs=1e-9
        )

    @given(st.floats(0, 0.99), st.floats(0.1, 20))
    def test_round_trip(self, p, beta):
        eps = draw_margin_from_probability(p, beta)
        recovered = 2 * (0.5 * (1 + math.erf(eps / (math.sqrt(2) * beta) / math.sqrt(2)))) - 1
        assert recovered == pytest.approx(p, abs=1e-9)

    def test_round_trip_through_probs(self):
        beta = 25 / 6
        eps = draw_margin_from_probability(0.10, beta)
        # Zero-variance priors make the spread exactly sqrt(2) * beta.
        tiny = TrueSkillState(25, 1e-9)
        p = probs_trueskill(tiny, tiny, TrueSkillConfig(beta=beta, draw_margin=eps))
        assert p.p_draw == pytest.approx(0.10, abs=1e-6)

    def test_domain(self):
        with pytest.raises(DomainError):
            draw_margin_from_probability(1.0, 1.0)


# -- cross-system properties --------------------------------------------------


def _pair(system, lo, hi, gap_seed):
    """Two distinct, valid states for ``system`` with a nonzero gap."""
    name = system.name
    if name == "elo":
        return EloState(lo), EloState(hi)
    if name == "bt":
        return lo / 400, hi / 400
    if name == "glicko2":
        return Glicko2State(lo / 400, 0.3 + gap_seed, 0.06), Glicko2State(hi / 400, 1.2 - gap_seed, 0.06)
    return TrueSkillState(25 + lo / 100, 2 + 5 * gap_seed), TrueSkillState(25 + hi / 100, 7 - 5 * gap_seed)


def _position(system, s):
    if system.name == "elo":
        return s.rating
    if system.name == "bt":
        return s
    return s.mu


@pytest.mark.parametrize("system", all_systems(), ids=lambda s: s.name)
def test_draw_contracts_gap(system):
    import random

    rng = random.Random(5)
    for _ in range(2_500):
        lo, hi = sorted(rng.uniform(-1000, 1000) for _ in range(2))
        if hi - lo < 1e-3:
            continue
        a, b = _pair(system, lo, hi, rng.random())
        if rng.random() < 0.5:
            a, b = b, a
        na, nb = system.update(a, b, Outcome.DRAW)
        before = abs(_position(system, a) - _position(system, b))
        after = abs(_position(system, na) - _position(system, nb))
        assert after < before


@pytest.mark.parametrize("system", all_systems(), ids=lambda s: s.name)
def test_draw_at_zero_gap_keeps_gap(system):
    s = system.initial_state()
    na, nb = system.update(s, s, Outcome.DRAW)
    assert _position(system, na) == _position(system, nb)


@pytest.mark.parametrize("system", all_systems(), ids=lambda s: s.name)
@given(lo=st.floats(-800, 800), hi=st.floats(-800, 800), y=outcomes, k=st.floats(0, 1))
@settings(max_examples=60, deadline=None)
def test_relabeling_symmetry(system, lo, hi, y, k):
    a, b = _pair(system, lo, hi, k)
    na, nb = system.update(a, b, y)
    mb, ma = system.update(b, a, y.flipped())
    assert _position(system, na) == pytest.approx(_position(system, ma), abs=1e-9)
    assert _position(system, nb) == pytest.approx(_position(system, mb), abs=1e-9)


@pytest.mark.parametrize("system", all_systems(), ids=lambda s: s.name)
@given(lo=st.floats(-800, 800), step=st.floats(1, 300))
@settings(max_examples=60, deadline=None)
def test_expectation_monotone_in_own_rating(system, lo, step):
    a, b = _pair(system, lo, 0.0, 0.5)
    a2, _ = _pair(system, lo + step, 0.0, 0.5)
    assert system.predict(a2, b).e_a > system.predict(a, b).e_a


def test_make_system():
    assert make_system("elo", k_factor=16).config.k_factor == 16
    with pytest.raises(DomainError):
        make_system("chess")


def test_outcome_probs_normalization():
    with pytest.raises(DomainError):
        OutcomeProbs(0.5, 0.2, 0.5)
