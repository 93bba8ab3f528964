"""Generative stochastic market for one trading session.

Continuous phase: Poisson taker arrivals on both sides, a presence-enforcing
event grid, Pareto order sizes and geometrically decaying LOB ladders that are
refreshed each step. Auction phase: Bernoulli arrivals/cancellations of
exogenous supply curves and market orders. The mid price comes from a rough
Heston path or a historical file.

Everything exogenous is drawn up front into a :class:`MarketEventStream`, so
two policies run on the same seed see the identical market.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .market_core import LobLadder, Side, TickGrid, round_half_away

SECONDS_PER_TRADING_YEAR = 252 * 6.5 * 3600


class IngestionError(ValueError):
    pass


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class GenerativeParams:
    tau_op: int = 120
    tau_cl: int = 150
    I0: int = 100
    lambda0: float = 1.0
    v_m: float = 2.0
    gamma_m: float = 2.5
    V_inf: float = 15.0
    beta_a: float = 2.0
    beta_b: float = 5.0
    rho: float = 0.5
    V: float = 30.0
    U1: float = 0.1
    U2: float = 2.0
    M1: int = 10
    M2: int = -10
    p1: float = 0.3
    p2: float = 0.2
    p3: float = 0.3
    p4: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.rho <= 1.0:
            raise ValueError("rho must lie in (0, 1]")
        for name in ("p1", "p2", "p3", "p4"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        if self.U1 > self.U2:
            raise ValueError("U1 must not exceed U2")
        if not 0 < self.tau_op < self.tau_cl:
            raise ValueError("need 0 < tau_op < tau_cl")
        if self.lambda0 <= 0 or self.v_m <= 0 or self.gamma_m <= 0 or self.V < self.v_m:
            raise ValueError("invalid order-flow parameters")

    @property
    def n_auction_steps(self) -> int:
        return self.tau_cl - self.tau_op

    @property
    def price_offsets(self) -> tuple[int, int]:
        return min(self.M1, self.M2), max(self.M1, self.M2)


@dataclass(frozen=True)
class RoughHestonParams:
    S0: float = 100.0
    V0: float = 0.02
    theta: float = 0.04
    lam: float = 0.3
    nu: float = 0.3
    H: float = 0.1
    rho_corr: float = -0.7
    # year fraction represented by one session time unit (one second by default)
    dt_per_unit: float = 1.0 / SECONDS_PER_TRADING_YEAR

    def __post_init__(self):
        if not -1.0 <= self.rho_corr <= 1.0:
            raise ValueError("rho_corr must lie in [-1, 1]")
        if not 0.0 < self.H < 1.0:
            raise ValueError("Hurst exponent must lie in (0, 1)")


# ---------------------------------------------------------------- continuous phase

def sample_poisson_flow(lambda0: float, horizon: float, rng: np.random.Generator
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Arrival times of two independent homogeneous Poisson processes on [0, horizon]."""
    if lambda0 <= 0:
        raise ValueError("lambda0 must be positive")
    out = []
    for _ in range(2):
        n = rng.poisson(lambda0 * horizon)
        out.append(np.sort(rng.uniform(0.0, horizon, size=n)))
    return out[0], out[1]


def build_time_grid(arrivals: tuple[np.ndarray, np.ndarray], tau_op: int) -> np.ndarray:
    """Event grid of ``tau_op`` points, each step seeing a new taker on both sides.

    Once arrivals run out (or time reaches ``tau_op - 1``) the grid collapses
    onto ``tau_op - 1``.
    """
    last = float(tau_op - 1)
    plus, minus = arrivals
    grid = np.empty(tau_op)
    grid[0] = 0.0
    t = 0.0
    for i in range(1, tau_op):
        if t < last:
            nxt = []
            for arr in (plus, minus):
                j = np.searchsorted(arr, t, side="right")
                nxt.append(arr[j] if j < arr.size else math.inf)
            t = min(max(t + 1.0, max(nxt)), last)
        grid[i] = t
    return grid


def step_edges(grid: np.ndarray, tau_op: int) -> np.ndarray:
    """Interval boundaries: continuous step k covers (edges[k], edges[k+1]]."""
    return np.append(grid, float(tau_op))


def sample_order_volume(v_m: float, gamma_m: float, V: float, rng: np.random.Generator,
                        size=None):
    """Pareto(v_m, gamma_m) order size capped at ``V`` and rounded to shares."""
    z = v_m * (1.0 + rng.pareto(gamma_m, size=size))
    vol = np.maximum(round_half_away(np.minimum(z, V)), 1)
    return int(vol) if size is None else np.asarray(vol, dtype=np.int64)


def sample_lob_ladder(V_inf: float, beta_a: float, beta_b: float, rho: float,
                      max_depth: int, rng: np.random.Generator, side: Side = Side.ASK,
                      size: int | None = None):
    """Geometric ladder from a Beta-distributed top-of-book volume.

    With ``size`` set, returns a ``(size, max_depth)`` integer array instead
    of a single :class:`LobLadder`.
    """
    n = 1 if size is None else size
    top = V_inf * rng.beta(beta_a, beta_b, size=n)
    raw = top[:, None] * rho ** np.arange(max_depth)[None, :]
    vols = round_half_away(raw).reshape(n, max_depth)
    # truncate at the first empty level
    zero_seen = np.cumsum(vols == 0, axis=1) > 0
    vols[zero_seen] = 0
    if size is None:
        return LobLadder.from_array(side, vols[0])
    return vols


# ---------------------------------------------------------------- auction phase

@dataclass(frozen=True)
class AuctionBook:
    """Exogenous auction book: supply curves and market orders per side.

    Canceled market orders keep their slot with zero volume.
    """

    exo_K: tuple[float, ...] = ()
    exo_S: tuple[float, ...] = ()
    takers_sell: tuple[int, ...] = ()
    takers_buy: tuple[int, ...] = ()

    @property
    def n_makers(self) -> int:
        return len(self.exo_K)

    @property
    def net_market_volume(self) -> float:
        return float(sum(self.takers_sell) - sum(self.takers_buy))


def step_auction_flow(params: GenerativeParams, book: AuctionBook, S_mid_tau_op: float,
                      rng: np.random.Generator, alpha: float = 0.01,
                      events: list | None = None, t: int | None = None) -> AuctionBook:
    """Apply one auction step of maker/taker arrivals and cancellations."""
    add_maker = rng.random() < params.p1
    drop_maker = rng.random() < params.p2
    add_sell = rng.random() < params.p3
    add_buy = rng.random() < params.p3
    drop_taker = rng.random() < params.p4
    K, S = list(book.exo_K), list(book.exo_S)
    sells, buys = list(book.takers_sell), list(book.takers_buy)

    if add_maker:
        lo, hi = params.price_offsets
        k = float(rng.uniform(params.U1, params.U2))
        s = S_mid_tau_op + alpha * int(rng.integers(lo, hi + 1))
        K.append(k)
        S.append(s)
        if events is not None:
            events.append({"t": t, "kind": "maker_add", "slope": k, "ref_price": s})
    if drop_maker and K:
        i = int(rng.integers(len(K)))
        if events is not None:
            events.append({"t": t, "kind": "maker_cancel", "index": i})
        del K[i], S[i]
    for side, lst, flag in (("sell", sells, add_sell), ("buy", buys, add_buy)):
        if flag:
            v = sample_order_volume(params.v_m, params.gamma_m, params.V, rng)
            lst.append(v)
            if events is not None:
                events.append({"t": t, "kind": "taker_add", "side": side, "volume": v})
    if drop_taker:
        live = [("sell", i) for i, v in enumerate(sells) if v > 0] + \
               [("buy", i) for i, v in enumerate(buys) if v > 0]
        if live:
            side, i = live[int(rng.integers(len(live)))]
            (sells if side == "sell" else buys)[i] = 0
            if events is not None:
                events.append({"t": t, "kind": "taker_cancel", "side": side, "index": i})
    return AuctionBook(tuple(K), tuple(S), tuple(sells), tuple(buys))


# ---------------------------------------------------------------- mid-price models

def fractional_kernel(u, H: float):
    """``u^(H - 1/2) / Gamma(H + 1/2)`` for ``u > 0``."""
    return np.asarray(u, dtype=float) ** (H - 0.5) / gamma_fn(H + 0.5)


def simulate_rough_heston(params: RoughHestonParams, times, rng: np.random.Generator,
                          n_paths: int = 1, return_noise: bool = False):
    """Euler scheme for the rough Heston model on an increasing time grid.

    ``times`` are in session units; ``params.dt_per_unit`` converts them to
    years. Returns prices of shape ``(n_paths, len(times))`` (and the Brownian
    increments ``dB, dB_perp`` of shape ``(n_paths, len(times) - 1)`` when
    ``return_noise`` is set).
    """
    t = np.asarray(times, dtype=float) * params.dt_per_unit
    n = t.size
    if n > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be strictly increasing")
    dt = np.diff(t)
    dB = rng.standard_normal((n_paths, max(n - 1, 0))) * np.sqrt(dt)
    dBp = rng.standard_normal((n_paths, max(n - 1, 0))) * np.sqrt(dt)
    rho = params.rho_corr
    rho_perp = math.sqrt(max(0.0, 1.0 - rho * rho))

    Y = np.empty((n_paths, n))
    V = np.empty((n_paths, n))
    Y[:, 0] = math.log(params.S0)
    V[:, 0] = params.V0
    terms = np.empty((n_paths, max(n - 1, 0)))
    for k in range(1, n):
        vp = np.maximum(V[:, k - 1], 0.0)
        sv = np.sqrt(vp)
        Y[:, k] = Y[:, k - 1] - 0.5 * vp * dt[k - 1] + sv * (rho * dB[:, k - 1] + rho_perp * dBp[:, k - 1])
        terms[:, k - 1] = (params.theta - params.lam * vp) * dt[k - 1] + params.nu * sv * dB[:, k - 1]
        kern = fractional_kernel(t[k] - t[:k], params.H)
        V[:, k] = params.V0 + terms[:, :k] @ kern
    S = np.exp(Y)
    if return_noise:
        return S, dB, dBp
    return S


def load_historical_mid(path, grid, alpha: float = 0.01, origin: float | None = None
                        ) -> np.ndarray:
    """Mid prices from a ``timestamp,mid`` file, carried forward onto ``grid``.

    ``grid`` holds offsets from ``origin`` (default: first timestamp) in file
    time units. Grid points before the first row take the first price.
    Returns tick-snapped prices.
    """
    ts, mids = read_mid_file(path)
    base = ts[0] if origin is None else float(origin)
    g = base + np.asarray(grid, dtype=float)
    idx = np.searchsorted(ts, g, side="right") - 1
    idx = np.clip(idx, 0, ts.size - 1)
    ticks = round_half_away(mids[idx] / alpha)
    return alpha * np.asarray(ticks, dtype=float)


def read_mid_file(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    ts, mids = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path}: empty file")
        if [h.strip().lower() for h in header[:2]] != ["timestamp", "mid"]:
            raise IngestionError(f"{path}: row 1: expected header 'timestamp,mid', got {header}")
        for row_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                t, m = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                raise IngestionError(f"{path}: row {row_no}: cannot parse {row}") from None
            if not (math.isfinite(t) and math.isfinite(m)):
                raise IngestionError(f"{path}: row {row_no}: non-finite value")
            if m <= 0:
                raise IngestionError(f"{path}: row {row_no}: non-positive price {m}")
            if ts and t <= ts[-1]:
                raise IngestionError(f"{path}: row {row_no}: timestamps must be strictly increasing")
            ts.append(t)
            mids.append(m)
    if not ts:
        raise IngestionError(f"{path}: no data rows")
    return np.array(ts), np.array(mids)


@dataclass(frozen=True)
class RoughHestonModel:
    params: RoughHestonParams = RoughHestonParams()

    @property
    def S0(self) -> float:
        return self.params.S0

    def mid_prices(self, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return simulate_rough_heston(self.params, times, rng)[0]


@dataclass(frozen=True)
class HistoricalModel:
    """Replays one realized mid path; every episode sees the same prices."""

    path: str
    seconds_per_unit: float = 60.0
    alpha: float = 0.01

    @property
    def S0(self) -> float:
        return float(read_mid_file(self.path)[1][0])

    def mid_prices(self, times: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return load_historical_mid(self.path, np.asarray(times) * self.seconds_per_unit, self.alpha)


def step_sigma(mid_prices, log: bool = False) -> float:
    """Sample standard deviation of one-step mid increments (or log returns)."""
    p = np.asarray(mid_prices, dtype=float)
    if p.size < 3:
        return 0.0
    d = np.diff(np.log(p)) if log else np.diff(p)
    return float(np.std(d, ddof=1))


# ---------------------------------------------------------------- event stream

@dataclass
class MarketEventStream:
    """All exogenous randomness of one session, indexed by decision step.

    Continuous steps ``k = 0 .. tau_op - 1`` and auction steps
    ``j = 0 .. tau_cl - tau_op - 1`` (absolute step ``tau_op + j``). Auction
    arrays are snapshots after the exogenous events of each step, padded to
    ``max_participants`` columns.
    """

    grid: np.ndarray
    edges: np.ndarray
    buy_volume: np.ndarray
    sell_volume: np.ndarray
    n_buy: np.ndarray
    n_sell: np.ndarray
    ask_ladders: np.ndarray
    bid_ladders: np.ndarray
    mid_ticks: np.ndarray
    exo_K: np.ndarray
    exo_S: np.ndarray
    n_exo: np.ndarray
    takers_sell: np.ndarray
    takers_buy: np.ndarray
    n_takers_sell: np.ndarray
    n_takers_buy: np.ndarray
    alpha: float
    S0: float
    events: list = field(default_factory=list)

    @property
    def tau_op(self) -> int:
        return self.grid.size

    @property
    def n_auction_steps(self) -> int:
        return self.n_exo.size

    def presence_ok(self) -> bool:
        """Every unclamped step has at least one new taker on each side."""
        last = self.tau_op - 1
        unclamped = self.edges[1:] < last
        return bool(np.all((self.n_buy[unclamped] >= 1) & (self.n_sell[unclamped] >= 1)))

    def auction_book(self, j: int) -> AuctionBook:
        m = int(self.n_exo[j])
        return AuctionBook(tuple(self.exo_K[j, :m]), tuple(self.exo_S[j, :m]),
                           tuple(int(v) for v in self.takers_sell[j, : self.n_takers_sell[j]]),
                           tuple(int(v) for v in self.takers_buy[j, : self.n_takers_buy[j]]))

    def net_market_volume(self, j: int) -> float:
        return float(self.takers_sell[j].sum() - self.takers_buy[j].sum())

    def fingerprint(self) -> bytes:
        parts = [self.grid, self.buy_volume, self.sell_volume, self.ask_ladders, self.bid_ladders,
                 self.mid_ticks, self.exo_K, self.exo_S, self.takers_sell, self.takers_buy]
        return b"".join(np.ascontiguousarray(p).tobytes() for p in parts)

    def dump_events(self, path) -> None:
        """Line-delimited JSON, one object per event, fixed key order."""
        with open(path, "w") as fh:
            for k in range(self.tau_op):
                rec = {"t": k, "phase": "continuous", "kind": "lob_step",
                       "time": float(self.grid[k]), "mid_tick": int(self.mid_ticks[k]),
                       "buy_volume": int(self.buy_volume[k]), "sell_volume": int(self.sell_volume[k]),
                       "n_buy": int(self.n_buy[k]), "n_sell": int(self.n_sell[k]),
                       "ask": [int(v) for v in self.ask_ladders[k]],
                       "bid": [int(v) for v in self.bid_ladders[k]]}
                fh.write(json.dumps(rec) + "\n")
            for ev in self.events:
                rec = {"t": ev["t"], "phase": "auction"}
                rec.update({k: v for k, v in ev.items() if k != "t"})
                fh.write(json.dumps(rec) + "\n")


def stream_rng(root_seed: int, index: int) -> np.random.Generator:
    """Independent generator for stream ``index`` derived from ``root_seed``."""
    return np.random.default_rng(np.random.SeedSequence([int(root_seed), int(index)]))


def generate_stream(params: GenerativeParams, grid_spec: TickGrid, price_model,
                    rng: np.random.Generator) -> MarketEventStream:
    """Draw one full session."""
    tau_op, h = params.tau_op, params.n_auction_steps
    N, L, alpha = grid_spec.max_participants, grid_spec.max_depth, grid_spec.alpha

    plus, minus = sample_poisson_flow(params.lambda0, float(tau_op), rng)
    grid = build_time_grid((plus, minus), tau_op)
    edges = step_edges(grid, tau_op)

    def per_step(arr):
        vols = sample_order_volume(params.v_m, params.gamma_m, params.V, rng, size=arr.size)
        k = np.searchsorted(edges, arr, side="left") - 1
        ok = k >= 0
        return (np.bincount(k[ok], weights=vols[ok], minlength=tau_op).astype(np.int64),
                np.bincount(k[ok], minlength=tau_op).astype(np.int64))

    buy_volume, n_buy = per_step(plus)
    sell_volume, n_sell = per_step(minus)
    ask = sample_lob_ladder(params.V_inf, params.beta_a, params.beta_b, params.rho, L, rng, size=tau_op)
    bid = sample_lob_ladder(params.V_inf, params.beta_a, params.beta_b, params.rho, L, rng, size=tau_op)

    uniq, inv = np.unique(grid, return_inverse=True)
    prices = np.asarray(price_model.mid_prices(uniq, rng), dtype=float)
    cont_ticks = round_half_away(prices / alpha)[inv]
    mid_ticks = np.empty(params.tau_cl + 1, dtype=np.int64)
    mid_ticks[:tau_op] = cont_ticks
    mid_ticks[tau_op:] = cont_ticks[-1]
    S_mid_op = alpha * int(cont_ticks[-1])

    exo_K = np.zeros((h, N))
    exo_S = np.zeros((h, N))
    n_exo = np.zeros(h, dtype=np.int64)
    t_sell = np.zeros((h, N), dtype=np.int64)
    t_buy = np.zeros((h, N), dtype=np.int64)
    n_ts = np.zeros(h, dtype=np.int64)
    n_tb = np.zeros(h, dtype=np.int64)
    events: list = []
    book = AuctionBook()
    for j in range(h):
        book = step_auction_flow(params, book, S_mid_op, rng, alpha, events, tau_op + j)
        m, ns, nb = book.n_makers, len(book.takers_sell), len(book.takers_buy)
        if max(m, ns, nb) > N:
            raise AssertionError(f"participant count exceeds bound {N}")
        exo_K[j, :m], exo_S[j, :m], n_exo[j] = book.exo_K, book.exo_S, m
        t_sell[j, :ns], t_buy[j, :nb], n_ts[j], n_tb[j] = book.takers_sell, book.takers_buy, ns, nb

    V_bound = grid_spec.max_volume
    for a in (ask, bid, t_sell, t_buy):
        if a.size and (a.min() < 0 or a.max() > V_bound):
            raise AssertionError("generated volume outside [0, max_volume]")
    if mid_ticks.min() < 0 or mid_ticks.max() > grid_spec.max_price_ticks:
        raise AssertionError("mid price outside the price grid")

    return MarketEventStream(grid, edges, buy_volume, sell_volume, n_buy, n_sell, ask, bid,
                             mid_ticks, exo_K, exo_S, n_exo, t_sell, t_buy, n_ts, n_tb,
                             alpha, float(price_model.S0), events)


# ---------------------------------------------------------------- AS calibration

@dataclass(frozen=True)
class AsCalibration:
    A: float
    k: float
    sigma: float
    K: float


def price_move(ladder: np.ndarray, Q: float, alpha: float) -> float:
    """Price move (currency) after a market order of size ``Q`` walks ``ladder``."""
    cum = np.cumsum(ladder)
    return alpha * int(np.count_nonzero((cum <= Q) & (ladder > 0)))


def calibrate_as(params: GenerativeParams, n_samples: int, rng: np.random.Generator,
                 mid_path=None, alpha: float = 0.01, max_depth: int = 10,
                 return_samples: bool = False):
    """Benchmark constants ``A, k, sigma`` from the generative market.

    ``K`` solves the no-intercept least squares ``K dp = ln Q``; the fitted
    per-currency decay is used as ``k`` so that ``alpha * k`` is the per-tick
    decay entering the quotes.
    """
    if n_samples < 1000:
        raise ValueError("calibration needs at least 1000 samples")
    A = params.lambda0 / params.gamma_m
    ladders = sample_lob_ladder(params.V_inf, params.beta_a, params.beta_b, params.rho,
                                max_depth, rng, size=n_samples)
    Q = sample_order_volume(params.v_m, params.gamma_m, params.V, rng, size=n_samples).astype(float)
    cum = np.cumsum(ladders, axis=1)
    dp = alpha * np.count_nonzero((cum <= Q[:, None]) & (ladders > 0), axis=1)
    lnQ = np.log(Q)
    denom = float(np.dot(dp, dp))
    if denom == 0.0:
        raise CalibrationError("every sampled order left the best price unchanged")
    K = float(np.dot(dp, lnQ) / denom)
    if mid_path is None:
        mid_path = RoughHestonModel().mid_prices(np.arange(params.tau_op, dtype=float), rng)
    sigma = step_sigma(mid_path)
    cal = AsCalibration(A=A, k=K, sigma=sigma, K=K)
    if return_samples:
        return cal, dp, lnQ
    return cal
