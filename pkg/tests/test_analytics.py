import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from reference import co_reference, upper_bound_reference

from edgecache import analytics
from edgecache.analytics import (
    EventDrivenCurve,
    LinearCurve,
    PolicyParams,
    RandomizedParams,
    TimeDrivenCurve,
    check_convexity,
    concavity_defects,
    evaluate,
    evaluate_co,
    hit_ratio_co,
    occupancy_co,
    popular_sets,
    region,
    separability_check,
    theorem4_gap_bound,
    theorem5_gap_bound,
    upper_bound,
)
from edgecache.demand import Catalog, DemandProfile, Population, popularity

INF = math.inf
UNIT = DemandProfile(1.0, 1.0)

positive = st.floats(0.05, 5.0)


@st.composite
def tuples(draw):
    s, beta, lam = draw(positive), draw(positive), draw(positive)
    tau = draw(st.floats(0.0, 3 * s))
    omega = tau + draw(st.one_of(st.just(0.0), st.floats(0.0, 3 * s)))
    return s, beta, lam, tau, omega


# -- closed forms against the quadrature oracle ------------------------------


def test_unit_example_values():
    h, r = evaluate_co(UNIT, 1.0, PolicyParams(0.0, 0.0))
    assert h == pytest.approx(1 - 0.5 * math.exp(-1), abs=1e-14)
    assert r == pytest.approx(0.5 * (math.exp(-1) / 2 + 1), abs=1e-14)
    assert h == pytest.approx(0.81606, abs=5e-6)
    assert r == pytest.approx(0.59197, abs=5e-6)
    ref = co_reference(1.0, 1.0, 1.0, 0.0, 0.0)
    assert (h, r) == pytest.approx(ref, abs=1e-10)


def test_mixture_is_linear_in_weights():
    mix = RandomizedParams((0.5, 0.5), (INF, 0.0), (INF, 0.0))
    h, r = evaluate(UNIT, 1.0, mix)
    assert h == pytest.approx(0.5 + 0.5 * (1 - 0.5 * math.exp(-1)), abs=1e-14)
    assert h == pytest.approx(0.90803, abs=5e-6)
    assert r == pytest.approx(0.5 + 0.5 * 0.5 * (math.exp(-1) / 2 + 1), abs=1e-14)


def test_trivial_extremes():
    assert evaluate_co(UNIT, 1.0, PolicyParams(INF, INF)) == (1.0, 1.0)
    assert occupancy_co(UNIT, 1.0, PolicyParams(0.0, INF)) == 0.0
    assert hit_ratio_co(UNIT, 1.0, PolicyParams(0.0, INF)) == 0.0


def test_never_overhearing_reduces_to_caching():
    prof = DemandProfile(1.5, 0.7)
    for tau in (2.0, 4.0):
        h = hit_ratio_co(prof, 3.0, PolicyParams(tau, INF))
        assert h == pytest.approx(1 - math.exp(-prof.beta * (tau - prof.s)), abs=1e-14)


@pytest.mark.parametrize(
    "s, beta, lam, tau, omega",
    [
        (1.0, 1.0, 1.0, 0.0, 0.0),
        (2.0, 0.5, 3.0, 0.5, 1.5),  # tau <= omega <= s
        (1.0, 2.0, 0.3, 0.5, 2.5),  # tau <= s < omega
        (0.5, 1.0, 2.0, 1.0, 1.7),  # s < tau <= omega
        (0.5, 1.0, 2.0, 1.0, INF),
        (3.0, 0.2, 0.01, 0.0, 3.0),
    ],
)
def test_cases_match_oracle(s, beta, lam, tau, omega):
    got = evaluate_co(DemandProfile(s, beta), lam, PolicyParams(tau, omega))
    assert got == pytest.approx(co_reference(s, beta, lam, tau, omega), abs=1e-10)


@settings(max_examples=150, deadline=None)
@given(tuples())
def test_closed_forms_match_oracle(t):
    s, beta, lam, tau, omega = t
    got = evaluate_co(DemandProfile(s, beta), lam, PolicyParams(tau, omega))
    assert got == pytest.approx(co_reference(s, beta, lam, tau, omega), abs=1e-9)


def test_regions():
    assert region(1.0, 0.2, 0.5) == 1
    assert region(1.0, 0.2, 2.0) == 2
    assert region(1.0, 1.5, 2.0) == 3


def test_tiny_rate_uses_caching_only_limit():
    prof = DemandProfile(2.0, 1.0)
    h0, r0 = evaluate_co(prof, 0.0, PolicyParams(0.5, 1.0))
    h1, r1 = evaluate_co(prof, 1e-12, PolicyParams(0.5, 1.0))
    assert h0 == h1 == 0.0
    assert r0 == pytest.approx(0.5 / prof.mean_gap)
    assert abs(r1 - r0) < 1e-9
    h, _ = evaluate_co(prof, 1e-12, PolicyParams(3.0, 4.0))
    assert h == pytest.approx(1 - math.exp(-1.0), abs=1e-9)


def test_policy_params_validation():
    with pytest.raises(ValueError):
        PolicyParams(2.0, 1.0)
    with pytest.raises(ValueError):
        PolicyParams(-1.0, 1.0)
    with pytest.raises(ValueError):
        RandomizedParams((0.5, 0.6), (0.0, 0.0), (0.0, 0.0))


# -- invariants ----------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(positive, positive, positive, st.floats(0.0, 1.0), st.floats(0.0, 5.0))
def test_continuity_at_boundaries(s, beta, lam, frac, extra):
    tau = frac * s
    a = analytics._case1(s, beta, lam, tau, s)
    b = analytics._case2(s, beta, lam, tau, s)
    assert a == pytest.approx(b, abs=1e-12)
    omega = s + extra
    b = analytics._case2(s, beta, lam, s, omega)
    c = analytics._case3(s, beta, lam, s, omega)
    assert b == pytest.approx(c, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(tuples())
def test_separability(t):
    s, beta, lam, tau, omega = t
    prof = DemandProfile(s, beta)
    h, r = evaluate_co(prof, lam, PolicyParams(tau, omega))
    (hc, rc), (ho, ro) = separability_check(prof, lam, PolicyParams(tau, omega))
    assert h == pytest.approx(hc + ho, abs=1e-12)
    assert r == pytest.approx(rc + ro, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(tuples(), st.floats(0.0, 2.0))
def test_monotone_in_timers(t, step):
    s, beta, lam, tau, omega = t
    prof = DemandProfile(s, beta)
    base = evaluate_co(prof, lam, PolicyParams(tau, omega))
    # a longer caching timer (same deaf timer) adds hits and occupancy
    longer = evaluate_co(prof, lam, PolicyParams(min(tau + step, omega), omega))
    later = evaluate_co(prof, lam, PolicyParams(tau, omega + step))
    assert longer[0] >= base[0] - 1e-12 and longer[1] >= base[1] - 1e-12
    assert later[0] <= base[0] + 1e-12 and later[1] <= base[1] + 1e-12


@settings(max_examples=100, deadline=None)
@given(tuples())
def test_values_are_fractions(t):
    s, beta, lam, tau, omega = t
    h, r = evaluate_co(DemandProfile(s, beta), lam, PolicyParams(tau, omega))
    assert 0.0 <= h <= 1.0 and 0.0 <= r <= 1.0


# -- boundary curves -----------------------------------------------------------


def test_curve_endpoints_and_inversion():
    c = TimeDrivenCurve(UNIT, 1.0)
    assert c.h(1.0) == 1.0 and c.h(0.0) == 0.0
    omega = c.omega_for(0.3)
    assert occupancy_co(UNIT, 1.0, PolicyParams(0.0, omega)) == pytest.approx(0.3, abs=1e-9)
    assert c.h(0.3) == pytest.approx(hit_ratio_co(UNIT, 1.0, PolicyParams(0.0, omega)), abs=1e-9)
    pol = c.policy(1.0)
    assert pol.q[0] == 1.0 and pol.taus[0] == INF


@settings(max_examples=60, deadline=None)
@given(positive, positive, positive, st.floats(0.0, 1.0))
def test_curve_policy_realizes_its_point(s, beta, lam, r):
    prof = DemandProfile(s, beta)
    c = TimeDrivenCurve(prof, lam)
    h_pol, r_pol = evaluate(prof, lam, c.policy(r))
    assert r_pol == pytest.approx(r, abs=1e-9)
    assert h_pol == pytest.approx(c.h(r), abs=1e-9)


def test_linear_piece_slope():
    prof = DemandProfile(2.0, 0.5)
    c = TimeDrivenCurve(prof, 1.0)
    r = 0.5 * c.r_lin
    assert c.h(r) == pytest.approx((prof.beta * prof.s + 1) * r, rel=1e-12)


def test_zero_rate_curve_is_caching_chord():
    c = TimeDrivenCurve(DemandProfile(1.0, 2.0), 0.0)
    for r in (0.0, 0.25, 0.7, 1.0):
        assert c.h(r) == pytest.approx(r)


def test_chord_is_tangent_at_breakpoint():
    c = TimeDrivenCurve(UNIT, 1.0)
    assert c.slope_at_depth(UNIT.s) == pytest.approx(c.chord, rel=1e-9)


def test_curves_are_concave_and_convexity_claim_logged(caplog):
    rng = np.random.default_rng(0)
    for _ in range(5):
        s, beta, lam = rng.uniform(0.1, 4, 3)
        c = TimeDrivenCurve(DemandProfile(s, beta), lam)
        assert concavity_defects(c, 512).max() <= 1e-9
        with caplog.at_level(logging.WARNING, logger="edgecache.analytics"):
            assert check_convexity(c, 512) is False
    assert "not convex" in caplog.text
    assert check_convexity(LinearCurve(UNIT)) is True


def test_dominance_small_grid():
    rng = np.random.default_rng(1)
    for _ in range(3):
        s, beta, lam = rng.uniform(0.1, 4, 3)
        prof = DemandProfile(s, beta)
        c = TimeDrivenCurve(prof, lam)
        grid = list(np.linspace(0, 3 * s, 20)) + [INF]
        for tau in grid:
            for omega in grid:
                if omega >= tau:
                    h, r = evaluate_co(prof, lam, PolicyParams(tau, omega))
                    assert h <= c.h(r) + 1e-9


def test_caching_only_hull_dominates_caching_family():
    prof = DemandProfile(1.0, 1.0)
    for tau in np.linspace(0, 5, 30):
        h, r = evaluate_co(prof, 0.0, PolicyParams(tau, INF))
        assert h <= LinearCurve(prof).h(r) + 1e-12


def test_event_curve_policies():
    prof = DemandProfile(1.0, 1.0)
    c = EventDrivenCurve(prof, 0.4)
    assert c.segments() == [(0.4, 2.0), (0.6, pytest.approx(0.2 / 0.6))]
    assert c.h(0.2) == pytest.approx(0.4) and c.h(1.0) == pytest.approx(1.0)
    assert c.policy(0.0) == PolicyParams(0.0, INF)
    assert c.policy(1.0) == PolicyParams(INF, INF)
    assert c.policy(0.4) == PolicyParams(0.0, 1.0)
    low = c.policy(0.1)
    assert low.q == (0.25, 0.75) and low.omegas == (1.0, INF)
    high = c.policy(0.7)
    assert high.q[0] == pytest.approx(0.5) and high.taus == (INF, 0.0) and high.omegas == (INF, 1.0)
    # estimates above the ceiling are clipped; the default is the ceiling
    assert EventDrivenCurve(prof, 0.9).breakpoint == 0.5
    assert EventDrivenCurve(prof).breakpoint == 0.5


# -- bounds --------------------------------------------------------------------


def test_upper_bound_single_item():
    cat = Catalog.from_arrays([2.0], [1.0])
    h, K = upper_bound(cat, 0.2)
    assert K == 0 and h == pytest.approx(3.0 * 0.2)


def test_upper_bound_matches_reference_fill():
    rng = np.random.default_rng(4)
    for _ in range(30):
        n = int(rng.integers(1, 12))
        s, beta = rng.uniform(0, 3, n), rng.uniform(0.1, 3, n)
        b = float(rng.uniform(0.01, n))
        h, _ = upper_bound(Catalog.from_arrays(s, beta), b)
        assert h == pytest.approx(upper_bound_reference(s, beta, b), abs=1e-12)


def test_upper_bound_full_budget_and_errors():
    cat = Catalog.zipf(10, 0.8)
    assert upper_bound(cat, 10) == (1.0, 10)
    with pytest.raises(ValueError):
        upper_bound(cat, 0.0)


def test_upper_bound_experiment_two():
    h, K = upper_bound(Catalog.zipf(1000, 0.8), 50)
    p = popularity(Catalog.zipf(1000, 0.8))
    assert K == 100
    assert h == pytest.approx(p[:100].sum(), abs=1e-12)


def test_popular_sets_reversed_preferences():
    beta = np.array([[4.0, 3.0, 2.0, 1.0], [1.0, 2.0, 3.0, 4.0]])
    pop = Population(1 / beta, beta)
    sets = popular_sets(pop, 1.0)
    assert sets.K == [2, 2]
    assert sets.D == [[0, 1], [2, 3]]
    assert sets.C == [[0], [0], [1], [1]]


def test_popular_sets_single_user_matches_upper_bound():
    cat = Catalog.zipf(30, 0.8)
    pop = Population.homogeneous_from(cat, 1)
    sets = popular_sets(pop, 4.0)
    _, K = upper_bound(cat, 4.0)
    assert sets.K == [K]
    assert [bool(c) for c in sets.C] == [i < K for i in range(30)]


def test_gap_bounds():
    cat = Catalog.zipf(1000, 0.8)
    assert theorem4_gap_bound(cat, 100) == pytest.approx(2 * math.sqrt(0.02))
    assert theorem4_gap_bound(cat, 100) == pytest.approx(0.2828, abs=5e-5)
    beta = np.array([[4.0, 3.0, 2.0, 1.0], [1.0, 2.0, 3.0, 4.0]])
    pop = Population(1 / beta, beta)
    # items 0 and 1 are popular only for user 0: the smaller rate wins
    rate = 3.0 / 2
    assert theorem5_gap_bound(pop, 1.0) == pytest.approx(1.0 + 2 * math.sqrt(4.0) / math.sqrt(rate))
