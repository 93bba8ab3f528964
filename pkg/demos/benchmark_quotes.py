"""
Benchmark quotes
================

The Avellaneda-Stoikov liquidation quote with zero risk aversion depends
only on the remaining inventory and time. TWAP slices what is left evenly.
"""

# %%
import numpy as np

from auctionmm.benchmarks import AsParams, as_quote, twap_volume

params = AsParams(A=0.4, k=70.0)

# %%
# Quote offsets in ticks above mid. A bigger inventory means a more
# aggressive quote, and the offset relaxes toward ``1 / (alpha k)`` at the end.
qs = [1, 2, 5, 10, 50, 100]
print("t \\ q " + "".join(f"{q:>5d}" for q in qs))
for t in (0, 40, 80, 110, 119):
    print(f"{t:5d} " + "".join(f"{as_quote(q, t, params):>5d}" for q in qs))

# %%
# TWAP volumes for a position that never fills beyond its own slices.
q, sizes = 100, []
for t in range(120):
    v = twap_volume(q, t, 119)
    sizes.append(v)
    q -= v
print("first slices:", sizes[:8], " total:", sum(sizes))
print("distinct slice sizes:", np.unique(sizes))
