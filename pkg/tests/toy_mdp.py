"""Layered 3-step, 4-state, 2-action MDP with a backward-induction oracle.

State 0 at t=0, states 1-2 at t=1, state 3 at t=2, terminal afterwards.
"""

import numpy as np

from auctionmm.nfq import NFQLearner, TabularQ, TrainConfig, epsilon

N_STATES, N_ACTIONS = 4, 2
CHI = 0.9
# P[s, a] = distribution over next states (all zeros = terminal)
P = np.zeros((N_STATES, N_ACTIONS, N_STATES))
P[0, 0, [1, 2]] = [0.7, 0.3]
P[0, 1, [1, 2]] = [0.2, 0.8]
P[1, :, 3] = 1.0
P[2, :, 3] = 1.0
R = np.array([[0.1, 0.0],
              [0.5, 0.2],
              [0.0, 0.9],
              [0.3, 0.6]])


def exact_q(chi=CHI):
    Q = np.zeros((N_STATES, N_ACTIONS))
    for s in (3, 2, 1, 0):
        V = Q.max(axis=1)
        Q[s] = R[s] + chi * P[s] @ V
    return Q


def one_hot(s):
    x = np.zeros(N_STATES)
    x[s] = 1.0
    return x


def rollout(choose, rng):
    """Yield ``(s, a, r, s_next)`` with ``s_next=None`` at the end."""
    s = 0
    while True:
        a = choose(s)
        p = P[s, a]
        s_next = int(rng.choice(N_STATES, p=p)) if p.sum() > 0 else None
        yield s, a, float(R[s, a]), s_next
        if s_next is None:
            return
        s = s_next


def train_nfq(episodes=500, seed=0, hidden=(16, 16, 16)):
    cfg = TrainConfig(eta=0.05, batch=32, discount=CHI, episodes=episodes, eps_warmup=100,
                      buffer_capacity=5000, min_fill=30, hidden=hidden, reward_scale=1.0)
    rng = np.random.default_rng(seed)
    learner = NFQLearner({0: (N_STATES, N_ACTIONS)}, cfg, rng)
    mask = np.ones(N_ACTIONS, dtype=bool)
    for e in range(1, episodes + 1):
        eps = epsilon(e, cfg)
        rows = list(rollout(lambda s: learner.act(0, one_hot(s), mask, eps, rng), rng))
        batch = {
            "features": np.array([one_hot(s) for s, *_ in rows]),
            "actions": np.array([a for _, a, _, _ in rows]),
            "rewards": np.array([r for *_, r, _ in rows]),
            "next_features": np.array([one_hot(sn if sn is not None else 0) for *_, sn in rows]),
            "next_phase": np.zeros(len(rows), dtype=np.int8),
            "next_mask": np.ones((len(rows), N_ACTIONS), dtype=bool),
            "terminal": np.array([sn is None for *_, sn in rows]),
        }
        learner.store(0, batch)
        learner.fit_episode(rng)
    return learner.nets[0].forward(np.eye(N_STATES))


def train_tabular(episodes=20000, seed=0):
    rng = np.random.default_rng(seed)
    tq = TabularQ(N_STATES, N_ACTIONS, CHI)
    for _ in range(episodes):
        for s, a, r, sn in rollout(lambda s: int(rng.integers(N_ACTIONS)), rng):
            tq.update(s, a, r, sn)
    return tq.Q
