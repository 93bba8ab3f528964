import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from auctionmm.clearing import (ClearingProblem, ClearingStats, DegenerateBookError, Method,
                                NoCrossingError, NonConvergenceError, contraction_margin,
                                estimate_clearing, hypothetical_step, solve_fixed_point,
                                solve_linear, solve_monotone_root)
from auctionmm.market_core import AuctionAgentHistory, Clamp, SupplyCurve

from clearing_fixtures import Lipschitz, agent


# ---- closed form

def test_solve_linear_examples():
    assert solve_linear(ClearingProblem.from_arrays([1, 1], [10, 20], net_market_volume=4)).price == 13
    assert solve_linear(ClearingProblem.from_arrays([1], [15])).price == 15
    sol = solve_linear(ClearingProblem.from_arrays([1], [10], agent((1, 20))))
    assert sol.price == 15 and sol.iterations == 0 and sol.method is Method.CLOSED_FORM


def test_solve_linear_degenerate():
    with pytest.raises(DegenerateBookError):
        solve_linear(ClearingProblem.from_arrays([0.0], [10]))


# ---- monotone root

def test_monotone_root_examples():
    assert solve_monotone_root(lambda p: p - 15, (0, 100), tol=1e-9).price == pytest.approx(15, abs=1e-9)
    f = lambda p: 2 * max(p - 10, 0) + (p - 20) - 5
    sol = solve_monotone_root(f, (0, 100), tol=1e-9)
    assert sol.price == pytest.approx(15, abs=1e-9)
    grid = np.linspace(0, 100, 100_001)
    vals = np.array([f(p) for p in grid])
    assert grid[np.argmin(np.abs(vals))] == pytest.approx(15, abs=1e-3)


def test_monotone_root_no_crossing():
    with pytest.raises(NoCrossingError):
        solve_monotone_root(lambda p: p + 1, (0, 10_000))
    with pytest.raises(NoCrossingError):
        solve_monotone_root(lambda p: -1.0, (0, 10_000))


def test_monotone_root_expands_bracket():
    sol = solve_monotone_root(lambda p: p - 25_000, (0, 10_000))
    assert sol.price == pytest.approx(25_000, abs=1e-6)


# ---- fixed point and contraction margin

def test_fixed_point_examples():
    sol = solve_fixed_point(ClearingProblem.from_arrays([1], [10], agent((1, 20))), p0=0.0, tol=1e-12)
    assert sol.price == pytest.approx(15, abs=1e-9)
    zero = Lipschitz([0.0], [0.0], 0.0)
    sol = solve_fixed_point(ClearingProblem((zero,), agent((1, 12))), p0=50.0)
    assert sol.price == 12 and sol.iterations == 1


def test_fixed_point_needs_live_slope():
    with pytest.raises(DegenerateBookError):
        solve_fixed_point(ClearingProblem.from_arrays([1], [10]), p0=1.0)


def test_fixed_point_nonconvergence_reports_ratio():
    prob = ClearingProblem.from_arrays([3, 3], [10, 20], agent((1, 20)))
    with pytest.raises(NonConvergenceError) as err:
        solve_fixed_point(prob, p0=0.0, max_iter=50, damping=1.0)
    assert err.value.ratio > 1


def test_contraction_margin_examples():
    curves = (Lipschitz([0], [0.4], 0.0), Lipschitz([0], [0.4], 0.0))
    assert contraction_margin(ClearingProblem(curves, agent((1, 10)))) == pytest.approx(0.8)
    assert contraction_margin(ClearingProblem((), agent((1, 10)))) == 0.0
    three = ClearingProblem.from_arrays([1, 1, 1], [1, 2, 3], agent((1, 10)))
    assert contraction_margin(three) == pytest.approx(3.0)


def random_lipschitz_problem(rng, n_curves=10, margin=0.9):
    k_live = rng.uniform(1, 10)
    L = margin * k_live / n_curves
    curves = []
    for _ in range(n_curves):
        knots = np.sort(rng.uniform(50, 150, size=3))
        slopes = rng.dirichlet(np.ones(3)) * L
        curves.append(Lipschitz(knots, slopes, rng.uniform(-20, 0)))
    return ClearingProblem(tuple(curves), agent((k_live, rng.uniform(90, 110))), rng.uniform(-10, 10)), L


def test_fixed_point_geometric_rate_on_certified_instances():
    rng = np.random.default_rng(3)
    for _ in range(50):
        prob, L = random_lipschitz_problem(rng)
        margin = contraction_margin(prob, L)
        assert margin <= 0.9 + 1e-12
        p0 = rng.uniform(0, 200)
        sol = solve_fixed_point(prob, p0, tol=1e-9)
        d0 = abs(p0 - sol.price)
        bound = max(1, math.ceil(math.log(1e-9 / max(d0, 1e-9)) / math.log(0.9))) + 2 if d0 > 1e-9 else 2
        assert sol.iterations <= bound
        assert all(r <= margin + 0.05 for r in sol.ratios if np.isfinite(r))


# ---- routing and residual contract

def test_estimate_clearing_routing():
    prob = ClearingProblem.from_arrays([1, 2], [10, 20], agent((3, 12)), net_market_volume=1.5)
    assert estimate_clearing(prob).price == solve_linear(prob).price
    empty = ClearingProblem((), None, 0.0)
    assert estimate_clearing(empty, previous=100.0).price == 100.0
    with pytest.raises(DegenerateBookError):
        estimate_clearing(empty)


def test_estimate_clearing_sell_only_agent_uses_monotone_root():
    h = AuctionAgentHistory.empty(3).submit(SupplyCurve(50, 100, Clamp.SELL_ONLY))
    prob = ClearingProblem.from_arrays([1, 1], [99, 101], h, net_market_volume=-3)
    sol = estimate_clearing(prob, previous=100.0)
    assert sol.method is Method.MONOTONE_ROOT
    assert abs(prob.aggregate(sol.price)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_residual_contract(seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(1, 20)
    K, S = rng.uniform(0.1, 2, m), rng.uniform(90, 110, m)
    h = agent(*[(rng.choice([0, 3.33, 6.66]), rng.uniform(95, 105)) for _ in range(rng.integers(0, 5))])
    prob = ClearingProblem.from_arrays(K, S, h, rng.uniform(-20, 20))
    sol = estimate_clearing(prob, previous=100.0)
    if sol.price >= 0:
        assert abs(prob.aggregate(sol.price)) <= 1e-9 * max(1.0, abs(sol.price))


def test_canceled_order_neutrality():
    a = ClearingProblem.from_arrays([1, 2], [10, 20], agent((3, 12), (5, 30), canceled=(1,)), 2.0)
    b = ClearingProblem.from_arrays([1, 2], [10, 20], agent((3, 12)), 2.0)
    assert solve_linear(a).price == solve_linear(b).price


# ---- continuous-phase estimator

def test_hypothetical_constant_single_level():
    stats = ClearingStats(alpha=0.01, smoothing=1.0, current_estimate=100.0)
    for _ in range(5):
        stats, H = hypothetical_step(stats, [(1000, 5)])
        ks, K = stats.slopes()
        assert K[0] == pytest.approx(5 / 0.01)
        assert H == pytest.approx(10.0, abs=1e-12)


def test_hypothetical_smoothing_example():
    stats = ClearingStats(alpha=0.01, smoothing=0.95, current_estimate=100.0)
    _, H = hypothetical_step(stats, [(1000, 5)])
    assert H == pytest.approx(100 + 0.95 * (10 - 100), rel=4e-16) and H == pytest.approx(14.5)


def test_hypothetical_symmetric_levels():
    stats = ClearingStats(alpha=0.01, smoothing=1.0)
    _, H = hypothetical_step(stats, [(9990, 4), (10010, 4)])
    assert H == pytest.approx(0.01 * (9990 + 10010) / 2)


def test_hypothetical_hold_last_cases():
    stats = ClearingStats(current_estimate=42.0)
    s1, H = hypothetical_step(stats, [])
    assert H == 42.0 and s1.step_count == 1 and s1.last_flag == "empty"
    # a level seen once with a big volume then missing: slope turns negative
    s = ClearingStats(current_estimate=42.0)
    s, _ = hypothetical_step(s, [(500, 10)])
    for _ in range(3):
        s, H = hypothetical_step(s, [(500, 0)])
    assert s.last_flag in ("empty", "nonpositive_slopes")
    assert H == s.current_estimate


def test_hypothetical_aggregates_same_level():
    a, Ha = hypothetical_step(ClearingStats(smoothing=1.0), [(100, 2), (100, 3), (101, 5)])
    b, Hb = hypothetical_step(ClearingStats(smoothing=1.0), {100: 5.0, 101: 5.0})
    assert Ha == Hb and a.level_volume_sums == b.level_volume_sums


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.tuples(st.integers(9990, 10010), st.integers(1, 30)), min_size=1, max_size=6),
                min_size=1, max_size=10), st.floats(0.01, 1.0))
def test_hypothetical_convex_combination_and_jensen(steps, tau):
    stats = ClearingStats(smoothing=tau, current_estimate=100.0)
    always = None
    for orders in steps:
        prev = stats.current_estimate
        stats, H = hypothetical_step(stats, orders)
        levels = {k for k, _ in orders}
        always = levels if always is None else always & levels
        if stats.last_flag == "":
            ks, K = stats.slopes()
            pt = float(np.dot(K[K > 0], 0.01 * ks[K > 0]) / K[K > 0].sum())
            assert min(prev, pt) - 1e-9 <= H <= max(prev, pt) + 1e-9
    ks, e, s = stats.moments()
    for k, ei, si in zip(ks, e, s):
        if k in always:
            assert si >= ei * ei * (1 - 1e-12)
