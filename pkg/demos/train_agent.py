"""
Training a small NFQ agent
==========================

Two Q-networks, one per trading phase, learn from replayed transitions
against frozen target copies. This runs a short schedule. The full
2,000-episode run is ``auctionmm train --config configs/default.cfg``.
"""

# %%
from pathlib import Path

import numpy as np

from auctionmm.config import load_config
from auctionmm.evaluation import build_session, evaluate, format_improvements
from auctionmm.nfq import save_checkpoint, named_nets, train

cfg = load_config(Path(__file__).resolve().parents[1] / "configs" / "default.cfg")
cfg = cfg.with_overrides(episodes=300, min_fill=2000, n_eval=20)
session = build_session(cfg)

# %%
# Exploration starts fully random and decays to 1% by the last episode.
result = train(session.env, session.train_stream, session.train_cfg, session.seed)
for lo in range(0, 300, 60):
    print(f"episodes {lo + 1:3d}-{lo + 60:3d}: mean discounted return "
          f"{np.mean(result.returns[lo:lo + 60]):8.1f}")

# %%
# Compare the greedy policy with the benchmarks on common evaluation streams.
ckpt = Path("demo_checkpoint.ammq")
save_checkpoint(named_nets(result.learner), ckpt, session.env.grid.spec())
report = evaluate(session, ["nfq", "initial_nfq", "as", "twap"], ckpt)
for name, m in report.metrics().items():
    print(f"{name:12s} mean return {m['mean_return']:9.1f}   left {m['mean_final_inventory']:5.1f}")
print(format_improvements(report))
ckpt.unlink()
