"""Inverse divergence operators as exact Fourier multipliers.

Tensor version, for a mode k != 0 with coefficient f:

    R_ij(k) = (i/|k|^2) [ -(k_i f_j + k_j f_i) + (k.f)/2 delta_ij
                          + (k.f)/2 k_i k_j/|k|^2 ]

which is symmetric, trace free for every f, and satisfies
i k_j R_ij = f_i, i.e. div(R f) = f - <f>. Scalar version:
(R g)_i has symbol -i k_i g/|k|^2, so div(R g) = g - <g>.
Modes on the Nyquist planes are set to zero.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

from .fields import PeriodicField, fft, ifft, wavenumbers


@lru_cache(maxsize=8)
def _kk(n: int):
    k1, k2, k3 = wavenumbers(n, zero_nyquist=True)
    shape = (n, n, n // 2 + 1)
    k = np.stack([np.broadcast_to(k1, shape), np.broadcast_to(k2, shape),
                  np.broadcast_to(k3, shape)])
    raw = wavenumbers(n, zero_nyquist=False)
    nyq = ((np.abs(raw[0]) == n // 2) | (np.abs(raw[1]) == n // 2) | (raw[2] == n // 2))
    k2sum = (k ** 2).sum(axis=0)
    inv = np.zeros(shape)
    good = (k2sum > 0) & ~np.broadcast_to(nyq, shape)
    inv[good] = 1.0 / k2sum[good]
    return k, inv


def tensor_symbol_apply(fh: np.ndarray, n: int) -> np.ndarray:
    """Apply the tensor symbol to a vector spectrum; returns 6-component spectrum."""
    k, inv = _kk(n)
    kf = (k * fh).sum(axis=0)
    out = []
    for i, j in ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)):
        term = -(k[i] * fh[j] + k[j] * fh[i]) + 0.5 * kf * k[i] * k[j] * inv
        if i == j:
            term = term + 0.5 * kf
        out.append(1j * inv * term)
    return np.stack(out)


def inv_div_tensor_arr(f: np.ndarray) -> np.ndarray:
    n = f.shape[-1]
    return ifft(tensor_symbol_apply(fft(f), n), n)


def inv_div_vector_arr(g: np.ndarray) -> np.ndarray:
    n = g.shape[-1]
    k, inv = _kk(n)
    gh = fft(g)[0]
    return ifft(-1j * k * inv * gh, n)


def inv_div_tensor(f: PeriodicField) -> PeriodicField:
    if f.rank != "vector3":
        raise ValueError("tensor inverse divergence takes a vector field")
    n = f.grid.n
    return PeriodicField(ifft(tensor_symbol_apply(f.spectrum, n), n), "symtensor3")


def inv_div_vector(g: PeriodicField) -> PeriodicField:
    if g.rank != "scalar":
        raise ValueError("vector inverse divergence takes a scalar field")
    return PeriodicField(inv_div_vector_arr(g.values), "vector3")
