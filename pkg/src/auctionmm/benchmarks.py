"""Benchmark liquidation policies.

Avellaneda-Stoikov quotes with zero risk aversion, a TWAP schedule, and the
single-order auction heuristic both benchmarks share.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .market_core import Clamp, SupplyCurve, round_half_away
from .mdp import AgentAction, MarketEnv, Phase, SessionState


@dataclass(frozen=True)
class AsParams:
    """``A`` and ``k`` of the fill intensity ``A exp(-alpha k delta)``; ``T`` in steps."""

    A: float
    k: float
    alpha: float = 0.01
    T: int = 119
    Q: int = 100
    table: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.A <= 0 or self.k <= 0:
            raise ValueError("A and k must be positive")
        object.__setattr__(self, "table", _value_table(self.A, self.T, self.Q))


def _value_table(A: float, T: int, Q: int) -> np.ndarray:
    """``v[t, q]`` for integer ``t in [0, T]`` and ``q in [0, Q]``."""
    x = A * math.exp(-1.0) * (T - np.arange(T + 1, dtype=float))
    v = np.empty((T + 1, Q + 1))
    term = np.ones(T + 1)
    v[:, 0] = 1.0
    for j in range(1, Q + 1):
        term = term * x / j
        v[:, j] = v[:, j - 1] + term
    return v


def as_value(q: int, t: float, params: AsParams) -> float:
    """Partial exponential sum ``sum_{j<=q} (A e^-1 (T - t))^j / j!``."""
    x = params.A * math.exp(-1.0) * (params.T - t)
    total, term = 1.0, 1.0
    for j in range(1, int(q) + 1):
        term *= x / j
        total += term
    return total


def as_quote_real(q: int, t: float, params: AsParams) -> float:
    scale = 1.0 / (params.alpha * params.k)
    if q <= 0:
        return scale
    q = min(int(q), params.Q)
    if float(t).is_integer() and 0 <= t <= params.T:
        v = params.table[int(t)]
        ratio = v[q] / v[q - 1]
    else:
        ratio = as_value(q, t, params) / as_value(q - 1, t, params)
    return scale * (1.0 + math.log(ratio))


def as_quote(q: int, t: float, params: AsParams) -> int:
    """Optimal ask offset in whole ticks, floored at 0."""
    t = min(max(t, 0), params.T)
    return max(0, round_half_away(as_quote_real(q, t, params)))


def twap_volume(q: float, t: int, T: int) -> int:
    if q <= 0:
        return 0
    return int(math.ceil(q / (T - t + 1)))


def mean_max_price(fills) -> float | None:
    prices = [p for p, v in fills if v > 0]
    if not prices:
        return None
    return 0.5 * (float(np.mean(prices)) + max(prices))


def auction_heuristic(continuous_fills, q_at_open: float, z: float = 10.0,
                      fallback_mid: float | None = None) -> SupplyCurve:
    """Sell-only curve ``z q (p - S~)+`` with ``S~`` the mean/max average fill price."""
    ref = mean_max_price(continuous_fills)
    if ref is None:
        if fallback_mid is None:
            raise ValueError("no fills and no fallback mid price")
        ref = fallback_mid
    return SupplyCurve(z * max(q_at_open, 0.0), ref, Clamp.SELL_ONLY)


class _HeuristicAuction:
    z: float = 10.0

    def auction_action(self, state: SessionState, env: MarketEnv) -> AgentAction:
        if state.t == state.tau_op:
            curve = auction_heuristic(env.fills, state.inventory, self.z, fallback_mid=state.mid)
            return AgentAction(auction_slope=curve.slope, auction_price=curve.ref_price,
                               auction_clamp=Clamp.SELL_ONLY)
        return AgentAction(auction_price=state.mid)


class TwapPolicy(_HeuristicAuction):
    """Residual inventory spread evenly over the remaining steps, one tick above mid."""

    def __init__(self, T: int = 119, z: float = 10.0, offset: int = 1):
        self.T, self.z, self.offset = T, z, offset

    def act(self, state, env, rng=None):
        if state.phase is Phase.CONTINUOUS:
            return twap_policy(state, self.T, self.offset)
        return self.auction_action(state, env)


def twap_policy(state: SessionState, T: int, offset: int = 1) -> AgentAction:
    v = twap_volume(state.inventory, min(state.t, T), T)
    return AgentAction(lob_volume=v, lob_level=state.mid_tick + offset)


class AsPolicy(_HeuristicAuction):
    """Whole inventory quoted at the optimal Avellaneda-Stoikov ask."""

    def __init__(self, params: AsParams, z: float = 10.0):
        self.params, self.z = params, z

    def act(self, state, env, rng=None):
        if state.phase is Phase.CONTINUOUS:
            return as_policy(state, self.params)
        return self.auction_action(state, env)


def as_policy(state: SessionState, params: AsParams) -> AgentAction:
    q = int(state.inventory)
    delta = as_quote(q, state.t, params)
    return AgentAction(lob_volume=q, lob_level=state.mid_tick + delta)
