"""
Clearing a closing-auction book
===============================

An auction book holds linear supply curves ``K (p - S)`` from exogenous
market makers, the agent's own curves, and a net flow of market orders.
The clearing price zeroes the aggregate supply.
"""

# %%
# A small book: three makers, one agent order, 5 shares of net selling.
import numpy as np

from auctionmm.clearing import (ClearingProblem, ClearingStats, contraction_margin,
                                hypothetical_step, solve_fixed_point, solve_linear,
                                solve_monotone_root)
from auctionmm.market_core import AuctionAgentHistory, Clamp, SupplyCurve

history = AuctionAgentHistory.empty(30).submit(SupplyCurve(2.0, 50.40))
book = ClearingProblem.from_arrays([1.5, 0.8, 3.0], [50.10, 50.55, 50.25], history,
                                   net_market_volume=5.0)

# %%
# With every curve linear the price has a closed form. The other two
# solvers land on the same number.
exact = solve_linear(book)
fixed = solve_fixed_point(book, p0=45.0, tol=1e-12)
root = solve_monotone_root(book.aggregate, (0.0, 10_000.0), tol=1e-12)
print(f"closed form   {exact.price:.10f}")
print(f"fixed point   {fixed.price:.10f}  ({fixed.iterations} iterations)")
print(f"monotone root {root.price:.10f}  ({root.iterations} bisections)")

# %%
# The fixed-point map contracts when the exogenous slopes are small against
# the agent's live slope. Here they are not, so the solver damps itself.
print("contraction margin:", round(contraction_margin(book), 3))
print("observed step ratios:", np.round(fixed.ratios[:5], 3))

# %%
# A sell-only curve is not linear everywhere, so only the root finder applies.
sell_only = AuctionAgentHistory.empty(30).submit(SupplyCurve(40.0, 50.60, Clamp.SELL_ONLY))
kinked = ClearingProblem.from_arrays([1.5, 0.8, 3.0], [50.10, 50.55, 50.25], sell_only, -12.0)
sol = solve_monotone_root(kinked.aggregate, (0.0, 10_000.0), tol=1e-12)
print(f"sell-only book clears at {sol.price:.6f}, residual {sol.residual:.1e}")

# %%
# During continuous trading the price is only projected, from the standing
# limit-order volume at each tick. A steady ladder pulls the estimate in.
stats = ClearingStats(alpha=0.01, smoothing=0.95, current_estimate=100.0)
ladder = [(5010, 4.0), (5011, 7.0), (5012, 5.0)]
for step in range(4):
    stats, H = hypothetical_step(stats, ladder)
    print(f"step {step + 1}: projected clearing price {H:.4f}")
