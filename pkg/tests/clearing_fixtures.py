"""Shared auction-book builders for clearing tests."""

import numpy as np

from auctionmm.market_core import AuctionAgentHistory, SupplyCurve


def agent(*orders, canceled=(), n=10):
    h = AuctionAgentHistory.empty(n)
    for K, S in orders:
        h = h.submit(SupplyCurve(K, S))
    if canceled:
        c = np.zeros(n, dtype=np.int8)
        c[list(canceled)] = 1
        h, _ = h.cancel(c)
    return h


class Lipschitz:
    """Increasing piecewise-linear exogenous curve with a known Lipschitz bound."""

    def __init__(self, knots, slopes, offset):
        self.knots, self.slopes, self.offset = np.asarray(knots), np.asarray(slopes), offset
        self.lipschitz = float(np.sum(slopes))

    def __call__(self, p):
        return self.offset + float(np.sum(self.slopes * np.clip(p - self.knots, 0.0, None)))
