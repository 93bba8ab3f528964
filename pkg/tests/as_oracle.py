"""RK4 integration of the linear ODE chain behind the liquidation value."""

import math

import numpy as np


def rk4_values(A, T, t, q_max=20, n_steps=10_000):
    """Integrate ``v_q' = -A e^-1 v_{q-1}`` backwards from ``v_q(T) = 1`` to ``t``."""
    c = A * math.exp(-1.0)

    def rhs(v):
        d = np.zeros_like(v)
        d[1:] = -c * v[:-1]
        return d

    v = np.ones(q_max + 1)
    h = -(T - t) / n_steps
    for _ in range(n_steps):
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * h * k1)
        k3 = rhs(v + 0.5 * h * k2)
        k4 = rhs(v + h * k3)
        v = v + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return v
