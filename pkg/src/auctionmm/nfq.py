"""Neural-fitted Q-iteration with one small MLP per trading phase.

Forward and backward passes are written out in numpy. Each network has a
ring replay buffer and a frozen target copy that is hard-updated once per
episode after ``M`` full shuffled passes over the buffer.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .mdp import (N_AUCTION_FEATURES, N_CONT_FEATURES, MarketEnv, Phase, run_episode)

CONTINUOUS, AUCTION, TERMINAL = 0, 1, 2
PHASE_CODE = {Phase.CONTINUOUS: CONTINUOUS, Phase.AUCTION: AUCTION}

MAGIC = b"AMMQ"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


# ---------------------------------------------------------------- network

class QNet:
    """MLP ``n_in -> hidden... -> n_out`` with ReLU hidden layers."""

    def __init__(self, dims, rng: np.random.Generator | None = None):
        self.dims = tuple(int(d) for d in dims)
        self.W: list[np.ndarray] = []
        self.b: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            if rng is None:
                self.W.append(np.zeros((fan_in, fan_out)))
                self.b.append(np.zeros(fan_out))
            else:
                lim = 1.0 / math.sqrt(fan_in)
                self.W.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
                self.b.append(rng.uniform(-lim, lim, size=fan_out))

    @property
    def n_in(self) -> int:
        return self.dims[0]

    @property
    def n_out(self) -> int:
        return self.dims[-1]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, v: np.ndarray) -> None:
        v = np.asarray(v, dtype=float)
        i = 0
        for p in self.params():
            p[...] = v[i:i + p.size].reshape(p.shape)
            i += p.size
        if i != v.size:
            raise CheckpointError(f"parameter count mismatch: expected {i}, got {v.size}")

    def copy(self) -> "QNet":
        other = QNet(self.dims)
        other.W = [w.copy() for w in self.W]
        other.b = [b.copy() for b in self.b]
        return other

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())

    def forward(self, X, cache: bool = False):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        if X.shape[1] != self.n_in:
            raise ValueError(f"expected {self.n_in} features, got {X.shape[1]}")
        acts = [X]
        h = X
        last = len(self.W) - 1
        for i, (W, b) in enumerate(zip(self.W, self.b)):
            z = h @ W + b
            h = z if i == last else np.maximum(z, 0.0)
            if i != last:
                acts.append(h)
        if cache:
            return h, acts
        return h[0] if single else h

    def backward(self, acts, dout):
        """Gradients of ``sum(dout * output)`` w.r.t. ``W`` and ``b``."""
        gW = [None] * len(self.W)
        gb = [None] * len(self.b)
        d = dout
        for i in range(len(self.W) - 1, -1, -1):
            gW[i] = acts[i].T @ d
            gb[i] = d.sum(axis=0)
            if i > 0:
                d = (d @ self.W[i].T) * (acts[i] > 0.0)
        return gW, gb


def huber(u):
    a = np.abs(u)
    return np.where(a <= 1.0, 0.5 * u * u, a - 0.5)


def huber_grad(u):
    return np.clip(u, -1.0, 1.0)


def batch_loss_and_grad(net: QNet, X, actions, y):
    """Mean Huber TD loss on the taken actions and its parameter gradients."""
    Q, acts = net.forward(X, cache=True)
    n = X.shape[0]
    rows = np.arange(n)
    u = Q[rows, actions] - y
    loss = float(huber(u).mean())
    dout = np.zeros_like(Q)
    dout[rows, actions] = huber_grad(u) / n
    gW, gb = net.backward(acts, dout)
    return loss, gW, gb


# ---------------------------------------------------------------- replay

class ReplayBuffer:
    """FIFO ring of transitions for one phase."""

    def __init__(self, n_features: int, capacity: int = 50_000, min_fill: int = 5_000,
                 n_next_features: int = N_AUCTION_FEATURES, n_next_actions: int = 242,
                 phase: int = CONTINUOUS):
        self.capacity, self.min_fill, self.phase = capacity, min_fill, phase
        self.features = np.zeros((capacity, n_features))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_features = np.zeros((capacity, n_next_features))
        self.next_phase = np.zeros(capacity, dtype=np.int8)
        self.next_mask = np.zeros((capacity, n_next_actions), dtype=bool)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._head = 0

    @property
    def ready(self) -> bool:
        return self.size >= self.min_fill

    def push(self, batch: dict, reward_scale: float = 1.0) -> None:
        if not batch:
            return
        n = batch["actions"].size
        for i in range(n):
            j = self._head
            self.features[j] = batch["features"][i]
            self.actions[j] = batch["actions"][i]
            self.rewards[j] = batch["rewards"][i] * reward_scale
            nf = batch["next_features"][i]
            self.next_features[j] = 0.0
            self.next_features[j, : nf.size] = nf
            self.next_phase[j] = batch["next_phase"][i]
            nm = batch["next_mask"][i]
            self.next_mask[j] = False
            self.next_mask[j, : min(nm.size, self.next_mask.shape[1])] = nm[: self.next_mask.shape[1]]
            self.terminal[j] = batch["terminal"][i]
            self._head = (j + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def view(self) -> dict:
        s = slice(0, self.size)
        return {"features": self.features[s], "actions": self.actions[s],
                "rewards": self.rewards[s], "next_features": self.next_features[s],
                "next_phase": self.next_phase[s], "next_mask": self.next_mask[s],
                "terminal": self.terminal[s]}


# ---------------------------------------------------------------- learning

@dataclass
class TrainConfig:
    eta: float = 3e-4
    epochs_per_episode: int = 3
    batch: int = 128
    discount: float = 0.99
    episodes: int = 2000
    eps_warmup: int = 100
    eps_start: float = 1.0
    eps_end: float = 0.01
    buffer_capacity: int = 50_000
    min_fill: int = 5_000
    hidden: tuple = (16, 16, 16)
    reward_scale: float = 1e-3
    masked_targets: bool = True
    regret_rollouts: int = 1

    def __post_init__(self):
        if self.episodes < 1 or self.batch < 1 or self.epochs_per_episode < 0:
            raise ValueError("episodes, batch must be positive")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 < self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("need 0 < eps_end <= eps_start <= 1")
        self.hidden = tuple(int(h) for h in self.hidden)


def epsilon(episode: int, cfg: TrainConfig) -> float:
    """Exploration rate for 1-based ``episode``."""
    if episode < 1:
        raise ValueError("episodes are counted from 1")
    if episode <= cfg.eps_warmup:
        return cfg.eps_start
    span = max(cfg.episodes - cfg.eps_warmup, 1)
    kappa = math.log(cfg.eps_start / cfg.eps_end) / span
    return max(cfg.eps_end, cfg.eps_start * math.exp(-kappa * (episode - cfg.eps_warmup)))


def select_action(q_values, mask, eps: float, rng: np.random.Generator) -> int:
    """Epsilon-greedy over admissible indices; ties go to the lowest index."""
    mask = np.asarray(mask, dtype=bool)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise ValueError("no admissible action")
    if eps > 0.0 and rng.random() < eps:
        return int(idx[rng.integers(idx.size)])
    q = np.where(mask, q_values, -np.inf)
    return int(np.argmax(q))


def compute_targets(batch: dict, target_nets: dict, chi: float, masked: bool = True) -> np.ndarray:
    """``r + chi * max_a' Q^-(x', a')`` with the max routed by the next phase."""
    y = np.array(batch["rewards"], dtype=float)
    nph = batch["next_phase"]
    for code, net in target_nets.items():
        sel = np.flatnonzero((nph == code) & ~batch["terminal"])
        if sel.size == 0:
            continue
        Q = net.forward(batch["next_features"][sel, : net.n_in])
        if masked:
            m = batch["next_mask"][sel, : net.n_out]
            Q = np.where(m, Q, -np.inf)
            best = Q.max(axis=1)
            best[~np.isfinite(best)] = 0.0
        else:
            best = Q.max(axis=1)
        y[sel] += chi * best
    return y


def sgd_epoch(net: QNet, X, actions, y, eta: float, batch: int,
              rng: np.random.Generator) -> float:
    """One shuffled pass of plain SGD in place; returns the mean batch loss."""
    n = X.shape[0]
    if n == 0:
        return float("nan")
    perm = rng.permutation(n)
    losses = []
    for start in range(0, n, batch):
        sl = perm[start:start + batch]
        loss, gW, gb = batch_loss_and_grad(net, X[sl], actions[sl], y[sl])
        if eta != 0.0:
            for i in range(len(net.W)):
                net.W[i] -= eta * gW[i]
                net.b[i] -= eta * gb[i]
        losses.append(loss)
    return float(np.mean(losses))


class NFQLearner:
    """Phase-indexed nets, target copies and buffers."""

    def __init__(self, layout: dict, cfg: TrainConfig, rng: np.random.Generator,
                 n_next_features: int | None = None, n_next_actions: int | None = None):
        """``layout`` maps phase code to ``(n_features, n_actions)``."""
        self.cfg = cfg
        self.layout = dict(layout)
        nnf = n_next_features or max(f for f, _ in layout.values())
        nna = n_next_actions or max(a for _, a in layout.values())
        self.nets = {code: QNet((f, *cfg.hidden, a), rng) for code, (f, a) in sorted(layout.items())}
        self.targets = {c: n.copy() for c, n in self.nets.items()}
        self.buffers = {c: ReplayBuffer(f, cfg.buffer_capacity, cfg.min_fill, nnf, nna, c)
                        for c, (f, _) in self.layout.items()}

    def act(self, code: int, features, mask, eps: float, rng) -> int:
        return select_action(self.nets[code].forward(features), mask, eps, rng)

    def store(self, code: int, batch: dict) -> None:
        if batch and np.any(batch["actions"] < 0):
            raise ValueError("transitions must carry grid action indices")
        self.buffers[code].push(batch, self.cfg.reward_scale)

    def fit_episode(self, rng: np.random.Generator) -> dict:
        """Targets from the frozen copies, ``M`` passes per ready buffer, then hard update."""
        targets = {}
        for code, buf in self.buffers.items():
            if buf.ready:
                targets[code] = compute_targets(buf.view(), self.targets, self.cfg.discount,
                                                self.cfg.masked_targets)
        losses = {code: float("nan") for code in self.buffers}
        for code, y in targets.items():
            v = self.buffers[code].view()
            ep_losses = []
            for _ in range(self.cfg.epochs_per_episode):
                ep_losses.append(sgd_epoch(self.nets[code], v["features"], v["actions"], y,
                                           self.cfg.eta, self.cfg.batch, rng))
            losses[code] = float(np.mean(ep_losses)) if ep_losses else float("nan")
            if not self.nets[code].all_finite() or not math.isfinite(losses[code]):
                raise TrainingDivergedError(f"non-finite parameters or loss in net {code}")
        self.targets = {c: n.copy() for c, n in self.nets.items()}
        return losses


# ---------------------------------------------------------------- tabular fallback

class TabularQ:
    """Classical Q-learning with step size ``1 / visits(x, a)``."""

    def __init__(self, n_states: int, n_actions: int, chi: float):
        self.Q = np.zeros((n_states, n_actions))
        self.visits = np.zeros((n_states, n_actions), dtype=np.int64)
        self.chi = chi

    def update(self, s: int, a: int, r: float, s_next: int | None, next_mask=None) -> None:
        self.visits[s, a] += 1
        eta = 1.0 / self.visits[s, a]
        boot = 0.0
        if s_next is not None:
            q = self.Q[s_next]
            if next_mask is not None:
                q = np.where(next_mask, q, -np.inf)
            boot = self.chi * float(q.max())
        self.Q[s, a] += eta * (r + boot - self.Q[s, a])


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(nets: dict, path, action_grid: dict | None = None,
                    feature_scaling: dict | None = None, extra: dict | None = None) -> None:
    """``nets`` maps a name (``continuous``/``auction``) to a :class:`QNet`."""
    names = list(nets)
    header = {"nets": [{"name": n, "dims": list(nets[n].dims)} for n in names],
              "action_grid": action_grid or {}, "feature_scaling": feature_scaling or {},
              "extra": extra or {}}
    flat = np.concatenate([nets[n].flat() for n in names]).astype("<f8")
    header["n_params"] = int(flat.size)
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
        fh.write(hb)
        fh.write(flat.tobytes())


def load_checkpoint(path, expected_outputs: dict | None = None) -> tuple[dict, dict]:
    """Returns ``(nets, header)``; ``expected_outputs`` maps net name to output width."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    if len(data) < 12 + hlen:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(data[12:12 + hlen])
    except ValueError as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    body = data[12 + hlen:]
    n = header["n_params"]
    if len(body) != 8 * n:
        raise CheckpointError(f"{path}: truncated parameter block ({len(body)} of {8 * n} bytes)")
    flat = np.frombuffer(body, dtype="<f8").astype(float)
    nets, i = {}, 0
    for spec in header["nets"]:
        net = QNet(spec["dims"])
        k = net.flat().size
        net.set_flat(flat[i:i + k])
        i += k
        nets[spec["name"]] = net
    for name, width in (expected_outputs or {}).items():
        if name not in nets or nets[name].n_out != width:
            got = nets[name].n_out if name in nets else None
            raise CheckpointError(f"{path}: net '{name}' has {got} outputs, expected {width}")
    return nets, header


# ---------------------------------------------------------------- market training loop

class GreedyPolicy:
    """Acts with phase nets; ``eps = 0`` gives the pure greedy policy."""

    def __init__(self, nets: dict, eps: float = 0.0):
        self.nets = nets
        self.eps = eps

    def act(self, state, env: MarketEnv, rng):
        code = PHASE_CODE[state.phase]
        return select_action(self.nets[code].forward(env.features(state)), env.mask(state),
                             self.eps, rng)


def market_layout(env: MarketEnv) -> dict:
    return {CONTINUOUS: (N_CONT_FEATURES, env.grid.n_continuous),
            AUCTION: (N_AUCTION_FEATURES, env.grid.n_auction)}


def init_learner(env: MarketEnv, cfg: TrainConfig, seed: int) -> NFQLearner:
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    return NFQLearner(market_layout(env), cfg, rng)


def named_nets(learner: NFQLearner) -> dict:
    return {"continuous": learner.nets[CONTINUOUS], "auction": learner.nets[AUCTION]}


def nets_by_code(nets: dict) -> dict:
    return {CONTINUOUS: nets["continuous"], AUCTION: nets["auction"]}


@dataclass
class TrainResult:
    learner: NFQLearner
    clob_loss: np.ndarray
    auction_loss: np.ndarray
    returns: np.ndarray
    benchmark_returns: np.ndarray
    pregret: np.ndarray
    epsilons: np.ndarray = field(default=None)


def train(env: MarketEnv, stream_factory: Callable[[int], object], cfg: TrainConfig, seed: int,
          benchmark=None, benchmark_streams: Callable[[int, int], object] | None = None,
          progress: Callable[[int, dict], None] | None = None,
          diagnostic_path=None) -> TrainResult:
    """Train both phase nets for ``cfg.episodes`` episodes.

    ``stream_factory(e)`` returns the market stream of episode ``e`` (0-based).
    With ``benchmark`` set, its discounted return on the same stream(s) feeds
    the pseudo-regret series.
    """
    learner = init_learner(env, cfg, seed)
    explore_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 2]))
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    bench_rng = np.random.default_rng(np.random.SeedSequence([int(seed), 4]))
    E = cfg.episodes
    clob_loss = np.full(E, np.nan)
    auc_loss = np.full(E, np.nan)
    returns = np.zeros(E)
    bench = np.full(E, np.nan)
    eps_hist = np.zeros(E)
    for e in range(E):
        eps = epsilon(e + 1, cfg)
        eps_hist[e] = eps
        stream = stream_factory(e)
        policy = GreedyPolicy(learner.nets, eps)
        res = run_episode(policy, env, stream, explore_rng)
        returns[e] = res.discounted_return
        for phase, code in PHASE_CODE.items():
            learner.store(code, res.transitions[phase])
        try:
            losses = learner.fit_episode(shuffle_rng)
        except TrainingDivergedError:
            if diagnostic_path is not None:
                save_checkpoint(named_nets(learner), diagnostic_path, env.grid.spec(),
                                extra={"episode": e, "reason": "diverged"})
            raise
        clob_loss[e], auc_loss[e] = losses[CONTINUOUS], losses[AUCTION]
        if benchmark is not None:
            vals = []
            for r in range(cfg.regret_rollouts):
                s = stream if benchmark_streams is None else benchmark_streams(e, r)
                vals.append(run_episode(benchmark, env, s, bench_rng, record=False).discounted_return)
            bench[e] = float(np.mean(vals))
        if progress is not None:
            progress(e, {"eps": eps, "return": returns[e], "clob_loss": clob_loss[e],
                         "auction_loss": auc_loss[e]})
    pregret = np.cumsum(bench - returns) if benchmark is not None else np.full(E, np.nan)
    return TrainResult(learner, clob_loss, auc_loss, returns, bench, pregret, eps_hist)


def write_curves(result: TrainResult, path) -> None:
    with open(path, "w") as fh:
        fh.write("episode,clob_loss,auction_loss,pregret\n")
        for e in range(result.returns.size):
            fh.write(f"{e + 1},{float(result.clob_loss[e])!r},{float(result.auction_loss[e])!r},"
                     f"{float(result.pregret[e])!r}\n")
