"""Clearing prices for the closing auction.

Three solvers for the aggregate excess-supply equation

    sum_i g_i(p) + sum_s (1 - theta_s) K_s (p - S_s) + net_market_volume = 0

plus the routing used by the environment and the continuous-phase estimator
of the future clearing price built from standing LOB liquidity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Sequence

import numpy as np

from .market_core import AuctionAgentHistory, Clamp, SupplyCurve

XTOL_FRACTION = 2.0 ** -16
RESIDUAL_TOL = 1e-9
FIXED_POINT_TOL = 1e-9
FIXED_POINT_MAX_ITER = 10_000
BRACKET_EXPANSIONS = 8


class ClearingError(RuntimeError):
    pass


class DegenerateBookError(ClearingError):
    """No live slope in the book: the clearing equation has no unique root."""


class NoCrossingError(ClearingError):
    """The aggregate excess supply never changes sign on the admissible range."""


class NonConvergenceError(ClearingError):
    def __init__(self, msg: str, ratio: float = float("nan")):
        super().__init__(msg)
        self.ratio = ratio


class Method(str, Enum):
    CLOSED_FORM = "closed_form"
    MONOTONE_ROOT = "monotone_root"
    FIXED_POINT = "fixed_point"


@dataclass(frozen=True)
class ClearingSolution:
    price: float
    residual: float
    iterations: int
    method: Method
    ratios: tuple[float, ...] = ()


@dataclass(frozen=True)
class ClearingProblem:
    """Auction book at one instant.

    ``exo_curves`` holds :class:`SupplyCurve` objects or arbitrary increasing
    callables (optionally carrying a ``lipschitz`` attribute).
    ``net_market_volume`` is signed with sells positive.
    """

    exo_curves: tuple = ()
    agent_history: AuctionAgentHistory | None = None
    net_market_volume: float = 0.0
    _lin: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        curves = tuple(self.exo_curves)
        object.__setattr__(self, "exo_curves", curves)
        sc = [c for c in curves if isinstance(c, SupplyCurve)]
        K = np.array([c.slope for c in sc], dtype=float)
        S = np.array([c.ref_price for c in sc], dtype=float)
        so = np.array([c.clamp is Clamp.SELL_ONLY for c in sc], dtype=bool)
        other = tuple(c for c in curves if not isinstance(c, SupplyCurve))
        object.__setattr__(self, "_lin", (K, S, so, other))

    @classmethod
    def from_arrays(cls, K, S, agent_history=None, net_market_volume=0.0) -> "ClearingProblem":
        curves = tuple(SupplyCurve(float(k), float(s)) for k, s in zip(K, S))
        return cls(curves, agent_history, float(net_market_volume))

    @property
    def n_exo(self) -> int:
        return len(self.exo_curves)

    @property
    def all_linear(self) -> bool:
        K, S, so, other = self._lin
        agent_ok = self.agent_history is None or self.agent_history.all_two_sided
        return not other and not so.any() and agent_ok

    @property
    def live_agent_slope(self) -> float:
        return 0.0 if self.agent_history is None else self.agent_history.live_slope

    def exo_supply(self, p: float) -> float:
        K, S, so, other = self._lin
        d = p - S
        if so.any():
            d = np.where(so, np.maximum(d, 0.0), d)
        total = float(np.dot(K, d))
        for g in other:
            total += float(g(p))
        return total

    def agent_supply(self, p: float) -> float:
        if self.agent_history is None:
            return 0.0
        return float(self.agent_history.order_volumes(p).sum())

    def aggregate(self, p: float) -> float:
        return self.exo_supply(p) + self.agent_supply(p) + self.net_market_volume

    def exo_lipschitz(self, price_range: tuple[float, float] | None = None, n: int = 257) -> float:
        """Uniform Lipschitz bound of the exogenous curves.

        Exact for :class:`SupplyCurve`; callables without a ``lipschitz``
        attribute are bounded by finite differences on ``price_range``.
        """
        K, _, _, other = self._lin
        L = float(K.max()) if K.size else 0.0
        for g in other:
            lip = getattr(g, "lipschitz", None)
            if lip is None:
                lo, hi = price_range if price_range is not None else (0.0, 200.0)
                grid = np.linspace(lo, hi, n)
                vals = np.array([g(p) for p in grid])
                lip = float(np.max(np.abs(np.diff(vals)) / np.diff(grid)))
            L = max(L, float(lip))
        return L


def solve_linear(problem: ClearingProblem) -> ClearingSolution:
    """Closed-form price when every live curve is two-sided linear."""
    if not problem.all_linear:
        raise ClearingError("solve_linear requires two-sided linear curves only")
    K, S, _, _ = problem._lin
    num = float(np.dot(K, S)) - problem.net_market_volume
    den = float(K.sum())
    h = problem.agent_history
    if h is not None:
        w = h.live * h.slopes
        num += float(np.dot(w, h.ref_prices))
        den += float(w.sum())
    if den <= 0.0:
        raise DegenerateBookError("total live slope is zero")
    price = num / den
    if price < 0.0:
        raise NoCrossingError(f"linear clearing price {price:.6g} is negative")
    return ClearingSolution(price, problem.aggregate(price), 0, Method.CLOSED_FORM)


def solve_monotone_root(aggregate: Callable[[float], float],
                        bracket: tuple[float, float] = (0.0, 10_000.0),
                        tol: float = RESIDUAL_TOL, xtol: float | None = None,
                        alpha: float = 0.01, max_expansions: int = BRACKET_EXPANSIONS,
                        max_iter: int = 200) -> ClearingSolution:
    """Bisection on an increasing aggregate, finished by one secant step.

    The upper end of ``bracket`` is doubled up to ``max_expansions`` times
    until the aggregate changes sign.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    xtol = alpha * XTOL_FRACTION if xtol is None else xtol
    f_lo, f_hi = aggregate(lo), aggregate(hi)
    n_exp = 0
    while f_hi < 0.0 and n_exp < max_expansions:
        lo, f_lo = hi, f_hi
        hi *= 2.0
        f_hi = aggregate(hi)
        n_exp += 1
    if f_lo > 0.0 or f_hi < 0.0:
        raise NoCrossingError(f"aggregate has no sign change on [{bracket[0]}, {hi}]")
    if abs(f_lo) <= tol:
        return ClearingSolution(lo, f_lo, 0, Method.MONOTONE_ROOT)
    if abs(f_hi) <= tol:
        return ClearingSolution(hi, f_hi, 0, Method.MONOTONE_ROOT)

    it = 0
    best, f_best = lo, f_lo
    while it < max_iter:
        it += 1
        mid = 0.5 * (lo + hi)
        f_mid = aggregate(mid)
        if abs(f_mid) < abs(f_best):
            best, f_best = mid, f_mid
        if abs(f_mid) <= tol:
            break
        if f_mid < 0.0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
        if hi - lo <= xtol:
            break

    # secant polish inside the final bracket; exact once the bracket sits on one linear piece
    if f_hi != f_lo:
        p = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        if lo <= p <= hi:
            fp = aggregate(p)
            if abs(fp) <= abs(f_best):
                best, f_best = p, fp
    return ClearingSolution(best, f_best, it, Method.MONOTONE_ROOT)


def contraction_margin(problem: ClearingProblem, lipschitz: float | None = None) -> float:
    """``L * M / live agent slope``; below 1 the fixed-point map contracts."""
    M = problem.n_exo
    if M == 0:
        return 0.0
    k_live = problem.live_agent_slope
    if k_live <= 0.0:
        raise DegenerateBookError("contraction margin needs a live agent slope")
    L = problem.exo_lipschitz() if lipschitz is None else lipschitz
    return L * M / k_live


def solve_fixed_point(problem: ClearingProblem, p0: float, tol: float = FIXED_POINT_TOL,
                      max_iter: int = FIXED_POINT_MAX_ITER, damping: float | None = None,
                      lipschitz: float | None = None) -> ClearingSolution:
    """Iterate ``p <- (1 - w) p + w phi(p)`` with ``phi`` isolating the agent's price.

    With ``damping=None`` the plain map (w = 1) is used when the contraction
    margin is below 1, else ``w = K / (K + L M)``, under which the map
    contracts for any increasing exogenous book.
    """
    h = problem.agent_history
    if h is None or h.live_slope <= 0.0:
        raise DegenerateBookError("fixed-point iteration needs a live agent slope")
    if not h.all_two_sided:
        raise ClearingError("fixed-point map assumes two-sided agent curves")
    w = h.live * h.slopes
    k_live = float(w.sum())
    ks = float(np.dot(w, h.ref_prices))
    net = problem.net_market_volume
    if damping is None:
        L = problem.exo_lipschitz() if lipschitz is None else lipschitz
        LM = L * problem.n_exo
        damping = 1.0 if LM < k_live else k_live / (k_live + LM)

    def phi(p):
        return -(problem.exo_supply(p) + net - ks) / k_live

    p = float(p0)
    ratios: list[float] = []
    prev_step = None
    for it in range(1, max_iter + 1):
        p_new = (1.0 - damping) * p + damping * phi(p)
        step = abs(p_new - p)
        if not math.isfinite(p_new):
            raise NonConvergenceError("fixed-point iterate diverged", ratios[-1] if ratios else float("nan"))
        if prev_step is not None and prev_step > 0.0:
            ratios.append(step / prev_step)
        prev_step = step
        p = p_new
        if step <= tol:
            # the last map evaluation only confirmed convergence
            return ClearingSolution(p, problem.aggregate(p), max(it - 1, 1), Method.FIXED_POINT,
                                    tuple(ratios))
    raise NonConvergenceError(f"no convergence in {max_iter} iterations",
                              ratios[-1] if ratios else float("nan"))


def estimate_clearing(problem: ClearingProblem, previous: float | None = None,
                      alpha: float = 0.01, max_price: float = 10_000.0,
                      tol: float = RESIDUAL_TOL) -> ClearingSolution:
    """Route to the cheapest solver that certifies a unique root.

    Degenerate books (no live slope at all) hold ``previous``.
    """
    exo_slope = sum(getattr(c, "slope", 1.0) for c in problem.exo_curves)
    if exo_slope <= 0.0 and problem.live_agent_slope <= 0.0 and not problem._lin[3]:
        if previous is None:
            raise DegenerateBookError("empty book and no previous estimate")
        return ClearingSolution(float(previous), float("nan"), 0, Method.CLOSED_FORM)

    if problem.all_linear:
        return solve_linear(problem)

    h = problem.agent_history
    if problem.live_agent_slope > 0.0 and h.all_two_sided:
        try:
            if contraction_margin(problem) < 1.0:
                p0 = previous if previous is not None else 0.5 * max_price
                return solve_fixed_point(problem, p0, tol=tol)
        except NonConvergenceError:
            pass
    return solve_monotone_root(problem.aggregate, (0.0, max_price), tol=tol, alpha=alpha)


@dataclass(frozen=True)
class ClearingStats:
    """Running per-level volume moments for the continuous-phase estimator."""

    alpha: float = 0.01
    smoothing: float = 0.95
    current_estimate: float = 100.0
    step_count: int = 0
    level_volume_sums: dict = field(default_factory=dict)
    level_volume_sq_sums: dict = field(default_factory=dict)
    last_flag: str = ""

    def __post_init__(self):
        if not 0.0 < self.smoothing <= 1.0:
            raise ValueError("smoothing must lie in (0, 1]")

    def moments(self):
        """Levels (ticks), mean volume and mean squared volume per step."""
        if not self.level_volume_sums:
            empty = np.zeros(0)
            return empty.astype(np.int64), empty, empty
        ks = np.fromiter(self.level_volume_sums.keys(), dtype=np.int64)
        e = np.fromiter(self.level_volume_sums.values(), dtype=float) / self.step_count
        s = np.fromiter((self.level_volume_sq_sums[k] for k in ks), dtype=float) / self.step_count
        return ks, e, s

    def slopes(self):
        ks, e, s = self.moments()
        with np.errstate(divide="ignore", invalid="ignore"):
            K = np.where(e > 0, (2.0 * e - s / e) / self.alpha, 0.0)
        return ks, K


def aggregate_levels(standing_orders: Iterable[tuple[int, float]]) -> dict[int, float]:
    """Sum volumes of standing orders sharing a price tick."""
    out: dict[int, float] = {}
    for k, v in standing_orders:
        if v > 0:
            out[int(k)] = out.get(int(k), 0.0) + float(v)
    return out


def hypothetical_step(stats: ClearingStats, standing_orders) -> tuple[ClearingStats, float]:
    """One smoothed update of the projected clearing price.

    ``standing_orders`` is an iterable of ``(price_tick, volume)`` pairs or a
    ready ``{tick: volume}`` mapping.
    """
    levels = standing_orders if isinstance(standing_orders, dict) else aggregate_levels(standing_orders)
    sums = dict(stats.level_volume_sums)
    sq = dict(stats.level_volume_sq_sums)
    for k, v in levels.items():
        if v > 0:
            sums[k] = sums.get(k, 0.0) + v
            sq[k] = sq.get(k, 0.0) + v * v
    new = replace(stats, step_count=stats.step_count + 1,
                  level_volume_sums=sums, level_volume_sq_sums=sq, last_flag="")
    H_prev = stats.current_estimate
    if not levels:
        new = replace(new, last_flag="empty")
        return new, H_prev
    ks, K = new.slopes()
    pos = K > 0
    if not pos.any():
        new = replace(new, last_flag="nonpositive_slopes")
        return new, H_prev
    p_tilde = stats.alpha * float(np.dot(K[pos], ks[pos]) / K[pos].sum())
    # convex form so that full smoothing returns p_tilde bit for bit
    H = (1.0 - stats.smoothing) * H_prev + stats.smoothing * p_tilde
    return replace(new, current_estimate=H), H
