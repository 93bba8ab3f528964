"""Order-book and auction-order primitives.

Price grid, linear supply curves, LOB ladders, execution of the agent's
sell limit order, cancellation bookkeeping and the agent's cleared volume.
All objects are immutable; updates return new values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np


class MarketError(ValueError):
    """Raised when an order-book primitive receives inconsistent input."""


class InadmissibleActionError(MarketError):
    """An action violates the admissibility constraints of the current state."""


def round_half_away(x):
    """Round to the nearest integer, ties away from zero (scalar or array)."""
    a = np.asarray(x, dtype=float)
    out = np.sign(a) * np.floor(np.abs(a) + 0.5)
    if out.ndim == 0:
        return int(out)
    return out.astype(np.int64)


@dataclass(frozen=True)
class TickGrid:
    """Price/slope granularity and the global bounds on the market."""

    alpha: float = 0.01
    beta: float = 3.33
    max_price_ticks: int = 1_000_000
    max_slope_steps: int = 10
    max_volume: int = 100
    max_depth: int = 10
    max_participants: int = 64

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise MarketError("alpha and beta must be positive")
        for name in ("max_price_ticks", "max_slope_steps", "max_volume",
                     "max_depth", "max_participants"):
            v = getattr(self, name)
            if int(v) != v or v <= 0:
                raise MarketError(f"{name} must be a positive integer, got {v}")

    @property
    def max_price(self) -> float:
        return self.alpha * self.max_price_ticks

    def to_ticks(self, price: float) -> int:
        return round_half_away(price / self.alpha)

    def snap(self, price: float) -> float:
        return self.alpha * self.to_ticks(price)

    def on_grid(self, price: float, atol: float = 1e-9) -> bool:
        k = price / self.alpha
        return abs(k - round(k)) <= atol * max(1.0, abs(k)) and 0 <= round(k) <= self.max_price_ticks

    def slope_grid(self) -> np.ndarray:
        return self.beta * np.arange(self.max_slope_steps + 1)


class Clamp(str, Enum):
    TWO_SIDED = "two_sided"
    SELL_ONLY = "sell_only"


@dataclass(frozen=True)
class SupplyCurve:
    """Signed linear supply schedule ``p -> K (p - S)``.

    ``SELL_ONLY`` curves evaluate to ``K max(0, p - S)``; they only exist for
    the benchmark auction heuristic.
    """

    slope: float
    ref_price: float
    clamp: Clamp = Clamp.TWO_SIDED

    def __post_init__(self):
        if self.slope < 0:
            raise MarketError(f"supply slope must be nonnegative, got {self.slope}")

    @property
    def lipschitz(self) -> float:
        return self.slope

    @property
    def is_linear(self) -> bool:
        return self.clamp is Clamp.TWO_SIDED

    def __call__(self, p):
        return eval_supply(self, p)


def eval_supply(curve: SupplyCurve, p):
    """Shares offered by ``curve`` at price ``p`` (negative means bought)."""
    d = np.asarray(p, dtype=float) - curve.ref_price
    if curve.clamp is Clamp.SELL_ONLY:
        d = np.maximum(d, 0.0)
    out = curve.slope * d
    return float(out) if out.ndim == 0 else out


class Side(str, Enum):
    ASK = "ask"
    BID = "bid"


@dataclass(frozen=True)
class LobLadder:
    """Exogenous limit-order volumes by level; ``volumes[0]`` is level 1."""

    side: Side
    volumes: tuple[int, ...]

    def __post_init__(self):
        for v in self.volumes:
            if v < 0 or int(v) != v:
                raise MarketError(f"ladder volumes must be nonnegative integers, got {v}")

    @classmethod
    def from_array(cls, side: Side, volumes) -> "LobLadder":
        return cls(side, tuple(int(v) for v in np.asarray(volumes).ravel()))

    @property
    def depth(self) -> int:
        return ladder_depth(self.volumes)

    def as_array(self, length: int) -> np.ndarray:
        out = np.zeros(length, dtype=np.int64)
        n = min(length, len(self.volumes))
        out[:n] = self.volumes[:n]
        return out


def ladder_depth(volumes: Sequence[int]) -> int:
    """Smallest level ``j >= 1`` with zero volume (``len + 1`` if none)."""
    for j, v in enumerate(volumes, start=1):
        if v == 0:
            return j
    return len(volumes) + 1


def executed_shares(posted_volume: int, posted_level_offset: int,
                    incoming_buy_volume: float, ask_ladder: LobLadder | Sequence[int],
                    max_depth: int | None = None) -> int:
    """Shares of the agent's sell order filled by incoming market buys.

    The order posted ``posted_level_offset`` ticks above the mid queues behind
    the first ``posted_level_offset`` ladder entries.
    """
    if posted_volume < 0 or posted_level_offset < 0 or incoming_buy_volume < 0:
        raise MarketError("executed_shares inputs must be nonnegative")
    vols = ask_ladder.volumes if isinstance(ask_ladder, LobLadder) else ask_ladder
    limit = len(vols) if max_depth is None else max_depth
    if posted_level_offset > limit:
        raise MarketError(f"level offset {posted_level_offset} beyond book depth bound {limit}")
    ahead = sum(vols[:posted_level_offset])
    return int(max(0, min(posted_volume, incoming_buy_volume - ahead)))


@dataclass(frozen=True)
class CancellationLedger:
    """One cancellation bit per auction trading time, plus the unit cost."""

    theta: np.ndarray
    unit_cost: float = 0.1

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=np.int8)
        if th.ndim != 1 or np.any((th != 0) & (th != 1)):
            raise MarketError("theta must be a 0/1 vector")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @classmethod
    def empty(cls, n_auction_steps: int, unit_cost: float = 0.1) -> "CancellationLedger":
        return cls(np.zeros(n_auction_steps, dtype=np.int8), unit_cost)

    @property
    def n_canceled(self) -> int:
        return int(self.theta.sum())


def apply_cancellations(ledger: CancellationLedger, c, current_index: int | None = None
                        ) -> tuple[CancellationLedger, int]:
    """Flip the bits in ``c``; returns the new ledger and ``||c||_1``.

    ``current_index`` is the auction step (0-based) at which ``c`` is applied;
    only orders submitted strictly before it may be canceled.
    """
    c = np.asarray(c, dtype=np.int8)
    if c.shape != ledger.theta.shape:
        raise InadmissibleActionError(f"cancel vector has shape {c.shape}, expected {ledger.theta.shape}")
    if np.any((c != 0) & (c != 1)):
        raise InadmissibleActionError("cancel vector must be 0/1")
    if np.any(c > 1 - ledger.theta):
        raise InadmissibleActionError("order canceled twice")
    if current_index is not None and np.any(c[current_index:]):
        raise InadmissibleActionError("cannot cancel the current or a future order")
    return replace(ledger, theta=ledger.theta + c), int(c.sum())


@dataclass(frozen=True)
class AuctionAgentHistory:
    """The agent's auction orders in submission order, with cancellation bits.

    Arrays have one slot per auction trading time; slots not yet reached hold
    zeros.
    """

    slopes: np.ndarray
    ref_prices: np.ndarray
    ledger: CancellationLedger
    sell_only: np.ndarray = field(default=None)
    n_submitted: int = 0

    def __post_init__(self):
        n = self.ledger.theta.shape[0]
        so = np.zeros(n, dtype=bool) if self.sell_only is None else np.asarray(self.sell_only, dtype=bool)
        sl = np.asarray(self.slopes, dtype=float)
        rp = np.asarray(self.ref_prices, dtype=float)
        if sl.shape != (n,) or rp.shape != (n,) or so.shape != (n,):
            raise MarketError("history arrays must match the ledger length")
        if np.any(sl < 0):
            raise MarketError("negative slope in agent history")
        for a in (sl, rp, so):
            a.setflags(write=False)
        object.__setattr__(self, "slopes", sl)
        object.__setattr__(self, "ref_prices", rp)
        object.__setattr__(self, "sell_only", so)

    @classmethod
    def empty(cls, n_auction_steps: int, unit_cost: float = 0.1) -> "AuctionAgentHistory":
        z = np.zeros(n_auction_steps)
        return cls(z, z.copy(), CancellationLedger.empty(n_auction_steps, unit_cost))

    @property
    def live(self) -> np.ndarray:
        """Weight ``1 - theta`` restricted to submitted slots."""
        w = 1.0 - self.ledger.theta.astype(float)
        w[self.n_submitted:] = 0.0
        return w

    @property
    def live_slope(self) -> float:
        return float(np.dot(self.live, self.slopes))

    @property
    def all_two_sided(self) -> bool:
        return not bool(np.any(self.sell_only[: self.n_submitted] & (self.live[: self.n_submitted] > 0)))

    def oldest_live(self) -> int | None:
        """Index of the oldest submitted, uncanceled order with positive slope."""
        idx = np.flatnonzero((self.live > 0) & (self.slopes > 0))
        return int(idx[0]) if idx.size else None

    def submit(self, curve: SupplyCurve) -> "AuctionAgentHistory":
        i = self.n_submitted
        if i >= self.slopes.shape[0]:
            raise MarketError("no auction slot left for a new order")
        sl, rp, so = self.slopes.copy(), self.ref_prices.copy(), self.sell_only.copy()
        sl[i], rp[i], so[i] = curve.slope, curve.ref_price, curve.clamp is Clamp.SELL_ONLY
        return replace(self, slopes=sl, ref_prices=rp, sell_only=so, n_submitted=i + 1)

    def cancel(self, c) -> tuple["AuctionAgentHistory", int]:
        ledger, count = apply_cancellations(self.ledger, c, current_index=self.n_submitted)
        return replace(self, ledger=ledger), count

    def order_volumes(self, p: float) -> np.ndarray:
        """Per-order signed volume at price ``p``, zero for canceled orders."""
        d = p - self.ref_prices
        d = np.where(self.sell_only, np.maximum(d, 0.0), d)
        return self.live * self.slopes * d


def agent_cleared_volume(history: AuctionAgentHistory, clearing_price: float) -> float:
    """Signed volume the agent sells at the clearing price (Z)."""
    if clearing_price < 0:
        raise MarketError("clearing price must be nonnegative")
    return float(history.order_volumes(clearing_price).sum())
