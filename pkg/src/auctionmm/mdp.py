"""The liquidation MDP: state, admissible actions, rewards and the episode loop.

One episode runs the continuous steps ``0 .. tau_op - 1``, the auction steps
``tau_op .. tau_cl - 1`` and the action-free clearing at ``tau_cl``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Protocol

import numpy as np

from .clearing import (ClearingError, ClearingProblem, ClearingStats, estimate_clearing,
                       hypothetical_step)
from .market_core import (AuctionAgentHistory, Clamp, InadmissibleActionError, SupplyCurve,
                          TickGrid, agent_cleared_volume, eval_supply, executed_shares,
                          ladder_depth, round_half_away)
from .market_sim import GenerativeParams, MarketEventStream


class Phase(str, Enum):
    CONTINUOUS = "continuous"
    AUCTION = "auction"
    TERMINAL = "terminal"


@dataclass(frozen=True)
class RewardParams:
    lam: float = 0.5
    q_pen: float = 1.0
    k_star: float = 1000.0
    d: float = 0.1
    chi: float = 0.99


def f_c(x: float, params: RewardParams, alpha: float) -> float:
    return max(x, 0.0) / (params.k_star * alpha)


def f_a(x: float, params: RewardParams) -> float:
    """Wrong-side correction: offsets a fraction ``q`` of a negative gain.

    With ``q = 1`` a wrong-side order earns exactly nothing.
    """
    return params.q_pen * max(-x, 0.0)


@dataclass(frozen=True)
class SessionState:
    """Full observable state; LOB fields are zero in the auction and vice versa."""

    t: int
    phase: Phase
    inventory: float
    cleared_volume: float
    clearing_estimate: float
    ask_depth: int
    bid_depth: int
    n_exo_makers: int
    n_takers_sell: int
    n_takers_buy: int
    cancellations: np.ndarray
    mid: float
    taker_volumes_sell: np.ndarray
    taker_volumes_buy: np.ndarray
    ask_ladder: np.ndarray
    bid_ladder: np.ndarray
    exo_curves: np.ndarray
    agent_price_history: np.ndarray
    agent_slope_history: np.ndarray
    mid_tick: int = 0
    tau_op: int = 0

    def masking_violations(self) -> list[str]:
        """Names of fields that break the phase masking."""
        bad = []
        lob = {"ask_depth": self.ask_depth, "bid_depth": self.bid_depth,
               "ask_ladder": self.ask_ladder, "bid_ladder": self.bid_ladder}
        auc = {"n_exo_makers": self.n_exo_makers, "n_takers_sell": self.n_takers_sell,
               "n_takers_buy": self.n_takers_buy, "cancellations": self.cancellations,
               "taker_volumes_sell": self.taker_volumes_sell,
               "taker_volumes_buy": self.taker_volumes_buy, "exo_curves": self.exo_curves,
               "agent_price_history": self.agent_price_history,
               "agent_slope_history": self.agent_slope_history}
        zero = auc if self.phase is Phase.CONTINUOUS else lob
        for name, v in zero.items():
            if np.any(np.asarray(v) != 0):
                bad.append(name)
        if self.phase is not Phase.TERMINAL and self.cleared_volume != 0:
            bad.append("cleared_volume")
        return bad


@dataclass(frozen=True)
class AgentAction:
    lob_volume: int = 0
    lob_level: int = 0
    auction_slope: float = 0.0
    auction_price: float = 0.0
    cancel: tuple[int, ...] = ()
    auction_clamp: Clamp = Clamp.TWO_SIDED

    def curve(self) -> SupplyCurve:
        return SupplyCurve(self.auction_slope, self.auction_price, self.auction_clamp)

    def cancel_vector(self, n: int) -> np.ndarray:
        c = np.zeros(n, dtype=np.int8)
        c[list(self.cancel)] = 1
        return c


@dataclass(frozen=True)
class FeatureScaling:
    S0: float = 100.0
    max_volume: float = 100.0
    max_participants: float = 64.0
    I0: float = 100.0
    max_depth: float = 10.0

    def as_dict(self) -> dict:
        return {"S0": self.S0, "max_volume": self.max_volume,
                "max_participants": self.max_participants, "I0": self.I0,
                "max_depth": self.max_depth}


N_CONT_FEATURES = 7
N_AUCTION_FEATURES = 8


def pruned_features(state: SessionState, scale: FeatureScaling) -> np.ndarray:
    """Reduced, scaled feature vector (7 continuous, 8 auction)."""
    if state.phase is Phase.CONTINUOUS:
        return np.array([
            state.inventory / scale.I0,
            state.clearing_estimate / scale.S0,
            state.ask_depth / scale.max_depth,
            state.bid_depth / scale.max_depth,
            state.mid / scale.S0,
            state.ask_ladder[0] / scale.max_volume,
            state.bid_ladder[0] / scale.max_volume,
        ])
    if state.phase is Phase.AUCTION:
        return np.array([
            state.inventory / scale.I0,
            0.0,
            state.clearing_estimate / scale.S0,
            state.n_exo_makers / scale.max_participants,
            state.n_takers_sell / scale.max_participants,
            state.n_takers_buy / scale.max_participants,
            float(state.cancellations.sum()) / scale.max_participants,
            state.mid / scale.S0,
        ])
    raise ValueError("terminal states carry no features")


@dataclass(frozen=True)
class ActionGrid:
    """Enumerated actions per phase.

    Continuous index ``a = 5 * i + delta``: volume fraction ``fractions[i]`` of
    the inventory (rounded up) posted ``delta`` ticks above the mid.
    Auction index ``a = 2 * (11 * k + j) + c``: slope ``beta * k``, price
    ``alpha * (round(H / alpha) + j - 5)``, ``c = 1`` cancels the oldest live order.
    """

    tick: TickGrid = TickGrid()
    fractions: tuple[float, ...] = (0.0, 0.25, 0.5, 1.0)
    n_offsets: int = 5
    price_half_width: int = 5

    @property
    def n_continuous(self) -> int:
        return len(self.fractions) * self.n_offsets

    @property
    def n_prices(self) -> int:
        return 2 * self.price_half_width + 1

    @property
    def n_auction(self) -> int:
        return (self.tick.max_slope_steps + 1) * self.n_prices * 2

    def size(self, phase: Phase) -> int:
        return self.n_continuous if phase is Phase.CONTINUOUS else self.n_auction

    def spec(self) -> dict:
        return {"fractions": list(self.fractions), "n_offsets": self.n_offsets,
                "price_half_width": self.price_half_width, "alpha": self.tick.alpha,
                "beta": self.tick.beta, "max_slope_steps": self.tick.max_slope_steps,
                "n_continuous": self.n_continuous, "n_auction": self.n_auction}

    def decode(self, a: int, state: SessionState) -> AgentAction:
        a = int(a)
        if state.phase is Phase.CONTINUOUS:
            if not 0 <= a < self.n_continuous:
                raise InadmissibleActionError(f"continuous action {a} out of range")
            i, delta = divmod(a, self.n_offsets)
            vol = int(math.ceil(self.fractions[i] * state.inventory))
            return AgentAction(lob_volume=vol, lob_level=state.mid_tick + delta)
        if state.phase is Phase.AUCTION:
            if not 0 <= a < self.n_auction:
                raise InadmissibleActionError(f"auction action {a} out of range")
            kj, c = divmod(a, 2)
            k, j = divmod(kj, self.n_prices)
            alpha = self.tick.alpha
            price = alpha * (round_half_away(state.clearing_estimate / alpha) + j - self.price_half_width)
            cancel = ()
            if c:
                idx = oldest_live(state)
                cancel = () if idx is None else (idx,)
            return AgentAction(auction_slope=self.tick.beta * k, auction_price=price, cancel=cancel)
        raise InadmissibleActionError("no action at the terminal step")


def oldest_live(state: SessionState) -> int | None:
    live = (state.cancellations == 0) & (state.agent_slope_history > 0)
    idx = np.flatnonzero(live)
    return int(idx[0]) if idx.size else None


def admissible_mask(state: SessionState, grid: ActionGrid) -> np.ndarray:
    if state.phase is Phase.CONTINUOUS:
        mask = np.ones(grid.n_continuous, dtype=bool)
        if state.inventory <= 0:
            n = grid.n_offsets
            for i, f in enumerate(grid.fractions):
                if f > 0:
                    mask[i * n:(i + 1) * n] = False
        return mask
    if state.phase is Phase.AUCTION:
        mask = np.ones(grid.n_auction, dtype=bool)
        if oldest_live(state) is None:
            mask[1::2] = False
        base = round_half_away(state.clearing_estimate / grid.tick.alpha) - grid.price_half_width
        ticks = base + np.arange(grid.n_prices)
        bad_price = (ticks < 0) | (ticks > grid.tick.max_price_ticks)
        if bad_price.any():
            m = mask.reshape(-1, grid.n_prices, 2)
            m[:, bad_price, :] = False
        return mask
    return np.zeros(0, dtype=bool)


def check_admissible(state: SessionState, action: AgentAction, tick: TickGrid) -> None:
    """Raise :class:`InadmissibleActionError` if ``action`` is not allowed in ``state``."""
    if state.phase is Phase.CONTINUOUS:
        if action.lob_volume < 0 or action.lob_volume > state.inventory:
            raise InadmissibleActionError(
                f"volume {action.lob_volume} outside [0, inventory={state.inventory}]")
        if action.lob_level < state.mid_tick:
            raise InadmissibleActionError("limit price below the mid")
        if action.auction_slope != 0 or action.cancel:
            raise InadmissibleActionError("auction components must be zero in the continuous phase")
    elif state.phase is Phase.AUCTION:
        if action.lob_volume != 0:
            raise InadmissibleActionError("LOB components must be zero in the auction")
        if action.auction_slope < 0 or not 0 <= action.auction_price <= tick.max_price:
            raise InadmissibleActionError("auction order outside the slope/price bounds")
        for i in action.cancel:
            if not 0 <= i < state.t - state.tau_op or state.cancellations[i]:
                raise InadmissibleActionError(f"cannot cancel order {i}")
    else:
        raise InadmissibleActionError("no action at the terminal step")


# ---------------------------------------------------------------- rewards

def reward_continuous(state: SessionState, action: AgentAction, executed: float,
                      params: RewardParams, alpha: float) -> float:
    s = alpha * action.lob_level
    band = params.k_star * alpha
    return s * executed * f_c(band - (state.clearing_estimate - s), params, alpha)


def reward_auction(state: SessionState, action: AgentAction, H: float,
                   params: RewardParams) -> float:
    gain = H * eval_supply(action.curve(), H)
    return gain + f_a(gain, params) - params.d * len(action.cancel)


def reward_terminal(history: AuctionAgentHistory, S_cl: float, I_final: float,
                    params: RewardParams) -> float:
    total = 0.0
    for g in S_cl * history.order_volumes(S_cl):
        total += g + f_a(float(g), params)
    return total - params.lam * I_final ** 2


# ---------------------------------------------------------------- environment

def _residual_queue(ladder: np.ndarray, incoming: float, agent_offset: int | None = None,
                    agent_volume: float = 0.0) -> tuple[np.ndarray, float]:
    """Consume ``incoming`` through a ladder, the agent queued after ``agent_offset`` levels."""
    rest = ladder.astype(float).copy()
    left = float(incoming)
    agent_left = float(agent_volume)
    n = rest.size
    for j in range(n + 1):
        if agent_offset is not None and j == min(agent_offset, n):
            take = min(agent_left, left)
            agent_left -= take
            left -= take
        if j == n or left <= 0:
            break
        take = min(rest[j], left)
        rest[j] -= take
        left -= take
    return rest, agent_left


@dataclass
class StepInfo:
    regime: str
    executed: float = 0.0
    clearing_held: bool = False
    terminal_reward: float | None = None
    cleared_volume: float = 0.0
    clearing_price: float | None = None


class MarketEnv:
    """Episode driver over a pre-generated :class:`MarketEventStream`."""

    def __init__(self, gen: GenerativeParams = GenerativeParams(), tick: TickGrid = TickGrid(),
                 reward: RewardParams = RewardParams(), grid: ActionGrid | None = None,
                 smoothing: float = 0.95, h0: float | None = 100.0,
                 include_agent_order: bool = True, solver_tol: float = 1e-9):
        self.gen = gen
        self.tick = tick
        self.reward = reward
        self.grid = grid if grid is not None else ActionGrid(tick)
        self.smoothing = smoothing
        self.h0 = h0
        self.include_agent_order = include_agent_order
        self.solver_tol = solver_tol
        self.hist_len = gen.tau_cl - gen.tau_op + 1
        self.stream: MarketEventStream | None = None

    def scaling(self, S0: float) -> FeatureScaling:
        return FeatureScaling(S0=S0, max_volume=self.tick.max_volume,
                              max_participants=self.tick.max_participants,
                              I0=self.gen.I0, max_depth=self.tick.max_depth)

    # -- episode lifecycle
    def reset(self, stream: MarketEventStream) -> SessionState:
        if stream.tau_op != self.gen.tau_op or stream.n_auction_steps != self.gen.n_auction_steps:
            raise ValueError("stream does not match the session length")
        self.stream = stream
        self.scale = self.scaling(stream.S0)
        self.t = 0
        self.inventory = float(self.gen.I0)
        self.inventory_at_open = None
        h0 = stream.alpha * stream.mid_ticks[0] if self.h0 is None else self.h0
        self.stats = ClearingStats(alpha=self.tick.alpha, smoothing=self.smoothing, current_estimate=h0)
        self.H = float(h0)
        self.history = AuctionAgentHistory.empty(self.gen.n_auction_steps, self.reward.d)
        self.fills: list[tuple[float, float]] = []
        self.cleared_volume = 0.0
        self.clearing_price = None
        self.state = self._make_state()
        return self.state

    @property
    def phase(self) -> Phase:
        if self.t < self.gen.tau_op:
            return Phase.CONTINUOUS
        if self.t < self.gen.tau_cl:
            return Phase.AUCTION
        return Phase.TERMINAL

    def features(self, state: SessionState | None = None) -> np.ndarray:
        return pruned_features(self.state if state is None else state, self.scale)

    def mask(self, state: SessionState | None = None) -> np.ndarray:
        return admissible_mask(self.state if state is None else state, self.grid)

    def _make_state(self) -> SessionState:
        s, g, L, N = self.stream, self.gen, self.tick.max_depth, self.tick.max_participants
        phase = self.phase
        zL = np.zeros(L, dtype=np.int64)
        zN = np.zeros(N, dtype=np.int64)
        zh = np.zeros(self.hist_len)
        mid_tick = int(s.mid_ticks[min(self.t, s.mid_ticks.size - 1)])
        kw = dict(t=self.t, phase=phase, inventory=self.inventory, cleared_volume=0.0,
                  clearing_estimate=self.H, ask_depth=0, bid_depth=0, n_exo_makers=0,
                  n_takers_sell=0, n_takers_buy=0,
                  cancellations=np.zeros(self.hist_len, dtype=np.int8), mid=s.alpha * mid_tick,
                  taker_volumes_sell=zN, taker_volumes_buy=zN, ask_ladder=zL, bid_ladder=zL,
                  exo_curves=np.zeros((N, 2)), agent_price_history=zh, agent_slope_history=zh)
        if phase is Phase.CONTINUOUS:
            ask, bid = s.ask_ladders[self.t], s.bid_ladders[self.t]
            kw.update(ask_depth=ladder_depth(ask[:L]), bid_depth=ladder_depth(bid[:L]),
                      ask_ladder=ask.copy(), bid_ladder=bid.copy())
        else:
            j = min(self.t - g.tau_op, g.n_auction_steps - 1)
            n = self.history.n_submitted
            th = np.zeros(self.hist_len, dtype=np.int8)
            th[:n] = self.history.ledger.theta[:n]
            ph, sh = zh.copy(), zh.copy()
            ph[:n] = self.history.ref_prices[:n]
            sh[:n] = self.history.slopes[:n]
            exo = np.zeros((N, 2))
            m = int(s.n_exo[j])
            exo[:m, 0], exo[:m, 1] = s.exo_K[j, :m], s.exo_S[j, :m]
            kw.update(n_exo_makers=m, n_takers_sell=int(s.n_takers_sell[j]),
                      n_takers_buy=int(s.n_takers_buy[j]), cancellations=th,
                      taker_volumes_sell=s.takers_sell[j].copy(),
                      taker_volumes_buy=s.takers_buy[j].copy(), exo_curves=exo,
                      agent_price_history=ph, agent_slope_history=sh)
            if phase is Phase.TERMINAL:
                kw["cleared_volume"] = self.cleared_volume
        return SessionState(**kw, mid_tick=mid_tick, tau_op=g.tau_op)

    def resolve(self, action) -> tuple[AgentAction, int]:
        if isinstance(action, AgentAction):
            return action, -1
        a = int(action)
        if not self.mask()[a]:
            raise InadmissibleActionError(f"action {a} masked out at t={self.t}")
        return self.grid.decode(a, self.state), a

    def step(self, action) -> tuple[SessionState, float, StepInfo]:
        if self.stream is None or self.phase is Phase.TERMINAL:
            raise RuntimeError("call reset() before stepping")
        act, _ = self.resolve(action)
        state = self.state
        check_admissible(state, act, self.tick)
        if state.phase is Phase.CONTINUOUS:
            r, info = self._step_continuous(state, act)
        else:
            r, info = self._step_auction(state, act)
        self.state = self._make_state()
        return self.state, r, info

    def _step_continuous(self, state: SessionState, act: AgentAction):
        s, k = self.stream, self.t
        L = self.tick.max_depth
        offset = act.lob_level - state.mid_tick
        ask, bid = s.ask_ladders[k], s.bid_ladders[k]
        incoming = float(s.buy_volume[k])
        E = executed_shares(act.lob_volume, min(offset, L), incoming, ask[:L], max_depth=L)
        r = reward_continuous(state, act, E, self.reward, s.alpha)
        I_next = self.inventory - E
        if I_next < 0:
            raise AssertionError("inventory conservation violated")
        self.inventory = I_next
        if E > 0:
            self.fills.append((s.alpha * act.lob_level, float(E)))

        ask_rest, agent_rest = _residual_queue(ask, incoming, offset, act.lob_volume)
        bid_rest, _ = _residual_queue(bid, float(s.sell_volume[k]))
        mt = state.mid_tick
        levels: dict[int, float] = {}
        for j in range(L):
            if ask_rest[j] > 0:
                levels[mt + j + 1] = levels.get(mt + j + 1, 0.0) + ask_rest[j]
            if bid_rest[j] > 0 and mt - j - 1 >= 0:
                levels[mt - j - 1] = levels.get(mt - j - 1, 0.0) + bid_rest[j]
        if self.include_agent_order and agent_rest > 0:
            levels[act.lob_level] = levels.get(act.lob_level, 0.0) + agent_rest
        self.stats, self.H = hypothetical_step(self.stats, levels)
        self.t += 1
        if self.t == self.gen.tau_op:
            self.inventory_at_open = self.inventory
        return r, StepInfo("continuous", executed=float(E))

    def _step_auction(self, state: SessionState, act: AgentAction):
        s, g = self.stream, self.gen
        j = self.t - g.tau_op
        r = reward_auction(state, act, self.H, self.reward)
        hist, n_cancel = self.history.cancel(act.cancel_vector(g.n_auction_steps))
        hist = hist.submit(act.curve())
        self.history = hist
        m = int(s.n_exo[j])
        problem = ClearingProblem.from_arrays(s.exo_K[j, :m], s.exo_S[j, :m], hist,
                                              s.net_market_volume(j))
        held = False
        try:
            sol = estimate_clearing(problem, previous=self.H, alpha=self.tick.alpha,
                                    max_price=self.tick.max_price, tol=self.solver_tol)
            held = math.isnan(sol.residual)
            self.H = float(sol.price)
        except ClearingError:
            held = True
        self.t += 1
        info = StepInfo("auction", clearing_held=held)
        if self.t == g.tau_cl:
            I_open = self.inventory
            if held:
                Z, S_cl = 0.0, None
                r_term = -self.reward.lam * I_open ** 2
            else:
                S_cl = self.H
                Z = agent_cleared_volume(hist, S_cl)
                r_term = reward_terminal(hist, S_cl, I_open - Z, self.reward)
            self.cleared_volume = Z
            self.clearing_price = S_cl
            self.inventory = I_open - Z
            info.terminal_reward = r_term
            info.cleared_volume = Z
            info.clearing_price = S_cl
        return r, info


# ---------------------------------------------------------------- episodes

class Policy(Protocol):
    def act(self, state: SessionState, env: MarketEnv, rng: np.random.Generator): ...


class NullPolicy:
    """Never trades: zero volume in the LOB, zero-slope orders in the auction."""

    def act(self, state, env, rng):
        if state.phase is Phase.CONTINUOUS:
            return 0
        i0 = env.grid.price_half_width * 2
        return i0


class RandomPolicy:
    """Uniform over admissible grid actions."""

    def act(self, state, env, rng):
        idx = np.flatnonzero(env.mask(state))
        return int(idx[rng.integers(idx.size)])


@dataclass
class EpisodeResult:
    rewards: np.ndarray
    phases: list
    actions: list
    action_indices: np.ndarray
    transitions: dict
    final_inventory: float
    inventory_at_open: float
    clob_reward: float
    auction_reward: float
    terminal_reward: float
    undiscounted_return: float
    discounted_return: float
    trace: list = field(default_factory=list)
    cleared_volume: float = 0.0
    clearing_price: float | None = None
    fills: list = field(default_factory=list)


TRACE_HEADER = ("t", "phase", "inventory", "mid", "H_cl", "lob_volume", "lob_level",
                "auction_slope", "auction_price", "n_cancel", "reward")


def run_episode(policy, env: MarketEnv, stream: MarketEventStream,
                rng: np.random.Generator | None = None, record: bool = True,
                check_invariants: bool = False) -> EpisodeResult:
    """Roll one episode; transitions are stored as arrays per phase.

    The last auction transition is terminal and carries ``r_m + chi * r_cl``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    chi = env.reward.chi
    state = env.reset(stream)
    g = env.gen
    rewards, phases, actions, idxs, trace = [], [], [], [], []
    buf = {Phase.CONTINUOUS: [], Phase.AUCTION: []}
    feats = env.features(state) if record else None
    mask = env.mask(state)
    while state.phase is not Phase.TERMINAL:
        a = policy.act(state, env, rng)
        act, ai = env.resolve(a)
        if check_invariants:
            if ai >= 0 and not mask[ai]:
                raise AssertionError("inadmissible grid action")
            viol = state.masking_violations()
            if viol:
                raise AssertionError(f"phase masking violated at t={state.t}: {viol}")
        inv_before = env.inventory
        theta_before = env.history.ledger.theta.copy()
        nxt, r, info = env.step(act)
        if check_invariants:
            if state.phase is Phase.CONTINUOUS and env.inventory != inv_before - info.executed:
                raise AssertionError("continuous inventory conservation violated")
            if state.phase is Phase.AUCTION and nxt.phase is Phase.AUCTION and env.inventory != inv_before:
                raise AssertionError("inventory changed during the auction")
            if np.any(env.history.ledger.theta < theta_before):
                raise AssertionError("cancellation bit reverted")
        rewards.append(r)
        phases.append(state.phase)
        actions.append(act)
        idxs.append(ai)
        if record:
            trace.append((state.t, state.phase.value, state.inventory, state.mid,
                          state.clearing_estimate, act.lob_volume, act.lob_level,
                          act.auction_slope, act.auction_price, len(act.cancel), r))
            terminal = nxt.phase is Phase.TERMINAL
            r_store = r + chi * info.terminal_reward if terminal else r
            if terminal:
                nf, nph, nm = np.zeros(N_AUCTION_FEATURES), Phase.TERMINAL, np.zeros(0, dtype=bool)
            else:
                nf, nph, nm = env.features(nxt), nxt.phase, env.mask(nxt)
            buf[state.phase].append((feats, ai, r_store, nf, nph, nm, terminal))
            feats = nf
        mask = env.mask(nxt) if nxt.phase is not Phase.TERMINAL else None
        if info.terminal_reward is not None:
            r_term = info.terminal_reward
            if record:
                trace.append((nxt.t, nxt.phase.value, nxt.inventory, nxt.mid,
                              nxt.clearing_estimate, 0, 0, 0.0, 0.0, 0, r_term))
        state = nxt
    rewards.append(r_term)
    phases.append(Phase.TERMINAL)
    rewards = np.asarray(rewards, dtype=float)
    ph = np.array([p.value for p in phases])
    disc = chi ** np.arange(rewards.size)
    clob = float(rewards[ph == Phase.CONTINUOUS.value].sum())
    auc = float(rewards[ph == Phase.AUCTION.value].sum())
    if check_invariants:
        if rewards.size != g.tau_cl + 1:
            raise AssertionError("reward stream has the wrong length")
        if abs(env.inventory - (env.inventory_at_open - env.cleared_volume)) > 1e-9:
            raise AssertionError("clearing inventory identity violated")
    return EpisodeResult(
        rewards=rewards, phases=phases, actions=actions, action_indices=np.array(idxs),
        transitions={p: _stack(v) for p, v in buf.items()} if record else {},
        final_inventory=env.inventory, inventory_at_open=env.inventory_at_open,
        clob_reward=clob, auction_reward=auc, terminal_reward=float(r_term),
        undiscounted_return=float(rewards.sum()), discounted_return=float(disc @ rewards),
        trace=trace, cleared_volume=env.cleared_volume, clearing_price=env.clearing_price,
        fills=list(env.fills))


def _stack(rows: list) -> dict:
    if not rows:
        return {}
    n_next = max(N_AUCTION_FEATURES, N_CONT_FEATURES)
    n_mask = max(len(r[5]) for r in rows)
    n_mask = max(n_mask, 1)
    f = np.array([r[0] for r in rows])
    nf = np.zeros((len(rows), n_next))
    nm = np.zeros((len(rows), n_mask), dtype=bool)
    for i, r in enumerate(rows):
        nf[i, : r[3].size] = r[3]
        nm[i, : r[5].size] = r[5]
    return {"features": f, "actions": np.array([r[1] for r in rows], dtype=np.int64),
            "rewards": np.array([r[2] for r in rows]), "next_features": nf,
            "next_phase": np.array([_PHASE_CODE[r[4]] for r in rows], dtype=np.int8),
            "next_mask": nm, "terminal": np.array([r[6] for r in rows], dtype=bool)}


_PHASE_CODE = {Phase.CONTINUOUS: 0, Phase.AUCTION: 1, Phase.TERMINAL: 2}


def write_trace(result: EpisodeResult, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_HEADER)
        for row in result.trace:
            w.writerow([_fmt(v) for v in row])


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def pseudo_regret(benchmark_values, learned_values) -> np.ndarray:
    """Cumulative sum of per-episode value gaps (benchmark minus learner)."""
    b = np.asarray(benchmark_values, dtype=float)
    l_ = np.asarray(learned_values, dtype=float)
    if b.shape != l_.shape:
        raise ValueError(f"length mismatch: {b.shape} vs {l_.shape}")
    return np.cumsum(b - l_)
