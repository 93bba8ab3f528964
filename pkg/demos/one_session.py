"""
One simulated trading session
=============================

A session has 120 continuous-trading steps followed by 30 auction steps
and a final clearing. The agent starts long 100 shares and must sell them.
"""

# %%
# Build the market and draw one event stream. The stream fixes all
# exogenous randomness, so policies can be compared on identical markets.
import numpy as np

from auctionmm.market_core import TickGrid
from auctionmm.mdp import MarketEnv, NullPolicy, run_episode
from auctionmm.benchmarks import TwapPolicy
from auctionmm.market_sim import GenerativeParams, RoughHestonModel, generate_stream, stream_rng

gen, tick = GenerativeParams(), TickGrid()
env = MarketEnv(gen, tick)
stream = generate_stream(gen, tick, RoughHestonModel(), stream_rng(7, 0))
mid = stream.mid_ticks * tick.alpha
print(f"mid price opens at {mid[0]:.2f} and ends continuous trading at {mid[gen.tau_op - 1]:.2f}")

# %%
# Doing nothing keeps the whole position and pays the inventory penalty.
idle = run_episode(NullPolicy(), env, stream)
print(f"null policy: return {idle.undiscounted_return:.1f}, inventory left {idle.final_inventory:g}")

# %%
# TWAP sells evenly one tick above mid, then places a single sell-only curve
# in the auction priced from its continuous fills.
twap = run_episode(TwapPolicy(), env, stream)
print(f"TWAP: sold {100 - twap.inventory_at_open:g} shares before the auction, "
      f"{twap.cleared_volume:g} at clearing price {twap.clearing_price:.2f}")
print(f"      continuous reward {twap.clob_reward:.1f}, auction reward {twap.auction_reward:.1f}, "
      f"terminal {twap.terminal_reward:.1f}")

# %%
# The trace records the state and action at each step.
inventory = np.array([row[2] for row in twap.trace])
for t in (0, 30, 60, 90, 119, 120, 149, 150):
    print(f"t={t:3d}  phase={twap.trace[t][1]:<10s}  inventory={inventory[t]:5.0f}  "
          f"H={twap.trace[t][4]:.3f}")
