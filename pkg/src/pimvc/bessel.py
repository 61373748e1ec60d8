"""Dirichlet spectrum of the unit disk from Bessel-function zeros."""

from __future__ import annotations

import numpy as np
from scipy import optimize, special


def bessel_zeros(order: int, count: int, step: float = 0.05) -> np.ndarray:
    """First ``count`` positive zeros of J_order by sign scan and bracketing."""
    zeros = []
    x = max(step, order * 0.5)
    fx = special.jv(order, x)
    while len(zeros) < count:
        y = x + step
        fy = special.jv(order, y)
        if fx == 0.0:
            zeros.append(x)
        elif fx * fy < 0:
            zeros.append(optimize.brentq(lambda s: special.jv(order, s), x, y, xtol=1e-15, rtol=1e-15))
        x, fx = y, fy
    return np.array(zeros[:count])


def disk_dirichlet_eigenvalues(count: int):
    """Smallest ``count`` eigenvalues of -Laplace on the unit disk, u = 0 on the circle.

    Returns a list of ``(value, order, index)`` tuples in ascending order. Modes
    with ``order > 0`` appear twice (cosine and sine).
    """
    modes = []
    per_order = count + 1
    for order in range(count + 1):
        for k, j in enumerate(bessel_zeros(order, per_order), start=1):
            modes.extend([(float(j * j), order, k)] * (1 if order == 0 else 2))
    modes.sort(key=lambda m: m[0])
    return modes[:count]
