import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from auctionmm.benchmarks import (AsParams, AsPolicy, TwapPolicy, as_quote, as_quote_real,
                                  as_value, auction_heuristic, mean_max_price, twap_volume)
from auctionmm.clearing import ClearingProblem, estimate_clearing
from auctionmm.market_core import (AuctionAgentHistory, SupplyCurve, agent_cleared_volume,
                                   eval_supply, round_half_away)
from auctionmm.mdp import run_episode

import as_oracle

# A e^-1 (T - t) = 1 at t = 0
UNIT = AsParams(A=math.e / 119, k=100.0, alpha=0.01)


def test_as_value_examples():
    assert as_value(0, 50, UNIT) == 1.0
    assert as_value(1, 0, UNIT) == pytest.approx(2.0)
    assert all(as_value(q, UNIT.T, UNIT) == 1.0 for q in range(10))


def test_as_value_matches_rk4():
    p = AsParams(A=0.05, k=70.0)
    for t in (0.0, 37.0, 100.0):
        v = as_oracle.rk4_values(p.A, p.T, t)
        for q in range(21):
            assert abs(as_value(q, t, p) / v[q] - 1) <= 1e-6


def test_as_quote_examples():
    assert as_quote_real(1, 0, UNIT) == pytest.approx(1 + math.log(2))
    assert as_quote(1, 0, UNIT) == 2
    p = AsParams(A=0.05, k=40.0)
    assert as_quote(5, p.T, p) == round_half_away(1 / (0.01 * 40.0)) == 3


def test_as_quote_table_monotone():
    p = AsParams(A=0.05, k=69.5)
    table = np.array([[as_quote(q, t, p) for q in range(1, p.Q + 1)] for t in range(p.T + 1)])
    real = np.array([[as_quote_real(q, t, p) for q in range(1, p.Q + 1)] for t in range(p.T + 1)])
    assert np.all(np.isfinite(real)) and np.all(table >= 0)
    assert np.all(np.diff(table, axis=1) <= 0)
    assert np.all(np.diff(table, axis=0) <= 0)
    assert np.all(table[-1] == round_half_away(1 / (0.01 * 69.5)))


def test_as_zero_inventory(env, streams):
    state = env.reset(streams[0])
    state = state.__class__(**{**state.__dict__, "inventory": 0.0})
    act = AsPolicy(AsParams(A=0.05, k=70.0)).act(state, env)
    assert act.lob_volume == 0 and act.lob_level >= state.mid_tick


def test_twap_examples():
    assert twap_volume(100, 116, 119) == 25
    assert twap_volume(37, 119, 119) == 37
    assert twap_volume(0, 10, 119) == 0


def test_heuristic_examples():
    fills = [(10.0, 3), (12.0, 1)]
    assert mean_max_price(fills) == pytest.approx(11.5)
    curve = auction_heuristic(fills, 4, z=10)
    assert eval_supply(curve, 11.5 + 0.5) == pytest.approx(20.0)
    assert eval_supply(curve, 11.0) == 0.0
    assert auction_heuristic(fills, 0).slope == 0
    assert auction_heuristic([], 5, fallback_mid=20.0).ref_price == 20.0
    with pytest.raises(ValueError):
        auction_heuristic([], 5)


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 100), st.floats(5, 200), st.floats(0.1, 50), st.floats(-100, 100),
       st.floats(1, 100))
def test_sell_only_never_buys(q, ref, K_exo, net, S_exo):
    curve = auction_heuristic([(ref, 1)], q)
    assume(K_exo * S_exo > net + 1e-3)  # a crossing at a nonnegative price
    history = AuctionAgentHistory.empty(30).submit(curve)
    prob = ClearingProblem((SupplyCurve(K_exo, S_exo),), history, net)
    H = estimate_clearing(prob, S_exo).price
    assert agent_cleared_volume(history, H) >= 0.0


def test_twap_liquidates_when_unconstrained(env, streams):
    res = run_episode(TwapPolicy(), env, streams[0])
    assert res.inventory_at_open == 100 - sum(v for _, v in res.fills)


def test_policies_admissible(env, streams):
    for policy in (TwapPolicy(), AsPolicy(AsParams(A=0.05, k=70.0))):
        run_episode(policy, env, streams[1], check_invariants=True)
