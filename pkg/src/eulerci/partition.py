"""Smooth cutoffs whose sixth powers form partitions of unity in time and space.

theta_m(s) = theta_0(s - m) on the slab clock s = t / tau, with theta_0 = 1 on
[1/8, 7/8] and support in (-1/8, 9/8). chi_n(y) = prod_i c(y_i - 2 pi n_i)
with c = 1 on [-7pi/8, 7pi/8] and support in (-9pi/8, 9pi/8).

Both are built from one smooth step s(u) = g(u)/(g(u) + g(1-u)),
g(u) = exp(-1/u), via  bump^6 = s((x - a)/w) * (1 - s((x - b)/w)).
Neighbouring bumps share the transition intervals, so the sixth powers sum
to one exactly (up to rounding).
"""
from __future__ import annotations

import math

import numpy as np

from . import jet as J


def _g(u):
    """exp(-1/u) for u > 0 with its first two derivatives (jets pass through)."""
    x = J.value(u)
    pos = x > 0
    xs = np.where(pos, x, 1.0)
    e = np.where(pos, np.exp(-1.0 / xs), 0.0)
    f1 = np.where(pos, e / xs ** 2, 0.0)
    f2 = np.where(pos, e * (1 - 2 * xs) / xs ** 4, 0.0)
    return J.chain(u, e, f1, f2) if isinstance(u, J.Jet) else e


def smooth_step(u):
    """0 for u <= 0, 1 for u >= 1, C-infinity and monotone in between."""
    a, b = _g(u), _g(1.0 - u)
    return a / (a + b)


def bump_power(x, plateau: float, support: float, p: float):
    """bump(x)^p where bump^6 is the partition profile; x may be a jet."""
    w = support - plateau
    s1 = smooth_step((x + support) * (1.0 / w))
    s2 = smooth_step((x - plateau) * (1.0 / w))
    S = s1 * (1.0 - s2)
    return J.power(S, p / 6.0)


THETA_PLATEAU = (1 / 8, 7 / 8)


def theta(s, m: int, p: float = 1.0):
    """theta_m(s)^p on the slab clock (plain floats or arrays)."""
    x = np.asarray(s, float) - m - 0.5
    return bump_power(x, 3 / 8, 5 / 8, p)


def theta_prime(s, m: int, p: float = 1.0) -> np.ndarray:
    """d/ds theta_m(s)^p, exact through a one-variable jet."""
    x = np.atleast_1d(np.asarray(s, float)) - m - 0.5
    X = J.Jet(x, np.stack([np.ones_like(x), np.zeros_like(x), np.zeros_like(x)], -1))
    return bump_power(X, 3 / 8, 5 / 8, p).g[..., 0]


def active_slabs(s: float) -> list:
    """Slabs m with theta_m(s) != 0."""
    lo = math.floor(s - 9 / 8) + 1
    return [m for m in range(lo - 1, lo + 3) if m - 1 / 8 < s < m + 9 / 8]


def chi_1d(y, n: int, p: float = 1.0):
    """One-dimensional factor of chi_n(y)^p along an axis."""
    return bump_power(y - 2 * math.pi * n, 7 * math.pi / 8, 9 * math.pi / 8, p)


def chi(y, n, p: float = 1.0):
    """chi_n(y)^p for y (P, 3) (array or jet) and integer cells n (P, 3) or (3,)."""
    n = np.asarray(n)
    out = None
    for i in range(3):
        yi = y[:, i] if isinstance(y, J.Jet) else y[..., i]
        ni = n[..., i]
        f = chi_1d(yi, ni, p)
        out = f if out is None else out * f
    return out


def candidate_cells(y: np.ndarray) -> np.ndarray:
    """Integer cells that can carry chi_n(y) != 0, as (8, P, 3)."""
    base = np.floor(np.asarray(y) / (2 * math.pi)).astype(np.int64)
    offs = np.array([(a, b, c) for a in (0, 1) for b in (0, 1) for c in (0, 1)])
    return base[None, :, :] + offs[:, None, :]


def partition_residual(n_samples: int = 4001) -> dict:
    """Max deviation of sum theta_m^6 and sum chi_n^6 from 1 on a fine 1D sample."""
    s = np.linspace(-2.0, 2.0, n_samples)
    th = sum(theta(s, m, 6.0) for m in range(-4, 4))
    y = np.linspace(-3 * math.pi, 3 * math.pi, n_samples)
    ch = sum(chi_1d(y, n, 6.0) for n in range(-3, 4))
    return {"theta": float(np.abs(th - 1).max()), "chi": float(np.abs(ch - 1).max())}
