"""Band-limited periodic fields on T^3 = [-pi, pi)^3.

Arrays carry a leading component axis: scalars (1, n, n, n), vectors
(3, n, n, n), symmetric tensors (6, n, n, n) in the order
(11, 22, 33, 12, 13, 23). Spectra use the real-FFT layout normalised so
that the k = 0 coefficient is the spatial mean.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import combinations_with_replacement

import numpy as np
import scipy.fft as sfft

RANKS = {"scalar": 1, "vector3": 3, "symtensor3": 6}
SYM_IDX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))
_FULL_TO_SYM = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])
WORKERS = 1


class ResolutionError(RuntimeError):
    pass


class UnderResolvedWarning(RuntimeWarning):
    pass


def set_threads(n: int) -> None:
    """FFT worker count; reductions stay in a fixed order regardless."""
    global WORKERS
    WORKERS = max(1, int(n))


@dataclass(frozen=True)
class Grid:
    n: int
    dealias: Fraction = Fraction(3, 2)

    def __post_init__(self):
        if self.n < 16 or self.n & (self.n - 1):
            raise ValueError(f"grid size {self.n} must be a power of two >= 16")

    @property
    def spacing(self) -> float:
        return 2 * math.pi / self.n

    @property
    def x1d(self) -> np.ndarray:
        return -math.pi + self.spacing * np.arange(self.n)

    def mesh(self) -> np.ndarray:
        """Collocation points, shape (3, n, n, n)."""
        x = self.x1d
        return np.stack(np.meshgrid(x, x, x, indexing="ij"))

    def points(self) -> np.ndarray:
        return self.mesh().reshape(3, -1).T

    def padded(self, factor) -> int:
        m = int(math.ceil(self.n * Fraction(factor)))
        return m + (m % 2)


@lru_cache(maxsize=16)
def wavenumbers(n: int, zero_nyquist: bool = True):
    """Integer wavenumber arrays (k1, k2, k3) broadcastable to the rfft layout."""
    k = np.fft.fftfreq(n, 1.0 / n)
    kr = np.arange(n // 2 + 1, dtype=float)
    if zero_nyquist:
        k = k.copy()
        k[n // 2] = 0.0
        kr = kr.copy()
        kr[n // 2] = 0.0
    return k[:, None, None], k[None, :, None], kr[None, None, :]


@lru_cache(maxsize=16)
def kmag(n: int) -> np.ndarray:
    k1, k2, k3 = wavenumbers(n, zero_nyquist=False)
    return np.sqrt(k1 ** 2 + k2 ** 2 + k3 ** 2)


def fft(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    return sfft.rfftn(a, axes=(-3, -2, -1), workers=WORKERS) / n ** 3


def ifft(ah: np.ndarray, n: int) -> np.ndarray:
    return sfft.irfftn(ah * n ** 3, s=(n, n, n), axes=(-3, -2, -1), workers=WORKERS)


def _copy_low(src: np.ndarray, dst: np.ndarray, n: int) -> None:
    h = n // 2
    dst[..., :h, :h, :h] = src[..., :h, :h, :h]
    dst[..., -h + 1:, :h, :h] = src[..., -h + 1:, :h, :h]
    dst[..., :h, -h + 1:, :h] = src[..., :h, -h + 1:, :h]
    dst[..., -h + 1:, -h + 1:, :h] = src[..., -h + 1:, -h + 1:, :h]


def pad_spectrum(ah: np.ndarray, n: int, m: int) -> np.ndarray:
    out = np.zeros(ah.shape[:-3] + (m, m, m // 2 + 1), dtype=complex)
    _copy_low(ah, out, n)
    return out


def truncate_spectrum(ah: np.ndarray, m: int, n: int) -> np.ndarray:
    out = np.zeros(ah.shape[:-3] + (n, n, n // 2 + 1), dtype=complex)
    _copy_low(ah, out, n)
    return out


def refine(a: np.ndarray, m: int) -> np.ndarray:
    """Spectral interpolation onto an m^3 grid (Nyquist modes dropped)."""
    n = a.shape[-1]
    return ifft(pad_spectrum(fft(a), n, m), m)


def coarsen(a: np.ndarray, n: int) -> np.ndarray:
    m = a.shape[-1]
    return ifft(truncate_spectrum(fft(a), m, n), n)


def product(a: np.ndarray, b: np.ndarray, factor=Fraction(3, 2)) -> np.ndarray:
    """Dealiased pointwise product of equally shaped (broadcastable) arrays."""
    n = a.shape[-1]
    m = Grid(n).padded(factor)
    return coarsen(refine(a, m) * refine(b, m), n)


def product3(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    m = 2 * n
    return coarsen(refine(a, m) * refine(b, m) * refine(c, m), n)


def outer_sym(a: np.ndarray, b: np.ndarray, factor=Fraction(3, 2)) -> np.ndarray:
    """Symmetrised dealiased outer product (a (x) b + b (x) a)/2 as 6 components."""
    n = a.shape[-1]
    m = Grid(n).padded(factor)
    af, bf = refine(a, m), refine(b, m)
    out = np.stack([0.5 * (af[i] * bf[j] + af[j] * bf[i]) for i, j in SYM_IDX])
    return coarsen(out, n)


def sym_to_full(s: np.ndarray) -> np.ndarray:
    return s[_FULL_TO_SYM]


def full_to_sym(a: np.ndarray) -> np.ndarray:
    return np.stack([a[i, j] for i, j in SYM_IDX])


def sym_trace(s: np.ndarray) -> np.ndarray:
    return s[0] + s[1] + s[2]


def sym_identity(shape_tail, value=1.0) -> np.ndarray:
    out = np.zeros((6,) + tuple(shape_tail))
    out[:3] = value
    return out


def sym_apply(s: np.ndarray, v: np.ndarray, factor=Fraction(3, 2)) -> np.ndarray:
    """Dealiased (S v)_i = S_ij v_j."""
    n = v.shape[-1]
    m = Grid(n).padded(factor)
    sf, vf = refine(s, m), refine(v, m)
    full = sf[_FULL_TO_SYM]
    return coarsen(np.einsum("ij...,j...->i...", full, vf), n)


def sym_contract(s: np.ndarray, a: np.ndarray, factor=Fraction(3, 2)) -> np.ndarray:
    """Dealiased S : A for symmetric S (6 comps) and a full 3x3 array A."""
    n = a.shape[-1]
    m = Grid(n).padded(factor)
    sf = refine(s, m)[_FULL_TO_SYM]
    af = refine(a.reshape((9,) + a.shape[2:]), m).reshape((3, 3) + (m,) * 3)
    return coarsen(np.einsum("ij...,ij...->...", sf, af)[None], n)


# --- calculus -------------------------------------------------------------

def d_hat(ah: np.ndarray, axis: int, n: int) -> np.ndarray:
    k = wavenumbers(n)[axis]
    return 1j * k * ah


def derivative_arr(a: np.ndarray, axis: int) -> np.ndarray:
    n = a.shape[-1]
    return ifft(d_hat(fft(a), axis, n), n)


def grad_arr(a: np.ndarray) -> np.ndarray:
    """Gradient of each component: shape (ncomp, 3, n, n, n)."""
    n = a.shape[-1]
    ah = fft(a)
    return np.stack([ifft(d_hat(ah, i, n), n) for i in range(3)], axis=1)


def div_vec(v: np.ndarray) -> np.ndarray:
    n = v.shape[-1]
    vh = fft(v)
    return ifft(sum(d_hat(vh[i], i, n) for i in range(3)), n)[None]


def div_sym(s: np.ndarray) -> np.ndarray:
    n = s.shape[-1]
    sh = fft(s)
    full = sh[_FULL_TO_SYM]
    out = [sum(d_hat(full[i, j], j, n) for j in range(3)) for i in range(3)]
    return ifft(np.stack(out), n)


def div_full(a: np.ndarray) -> np.ndarray:
    """Row divergence of a full (3, 3, n, n, n) array."""
    n = a.shape[-1]
    ah = fft(a)
    return ifft(np.stack([sum(d_hat(ah[i, j], j, n) for j in range(3)) for i in range(3)]), n)


def curl_arr(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    ah = fft(a)
    d = lambda c, ax: d_hat(ah[c], ax, n)
    out = np.stack([d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)])
    return ifft(out, n)


def gradient_scalar(p: np.ndarray) -> np.ndarray:
    return grad_arr(p)[0]


def spatial_average_arr(a: np.ndarray) -> np.ndarray:
    return a.mean(axis=(-3, -2, -1))


# --- Littlewood-Paley -----------------------------------------------------

def _g(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def lp_symbol(s) -> np.ndarray:
    """Radial profile: 1 on [0,1], 0 on [2,inf), smooth and monotone between."""
    s = np.asarray(s, dtype=float)
    a, b = _g(2.0 - s), _g(s - 1.0)
    return a / (a + b)


def lp_level(S: float) -> int:
    if S < 1:
        raise ValueError("LP cut S must be >= 1")
    J = int(math.floor(math.log2(S)))
    while 2.0 ** (J + 1) <= S:
        J += 1
    while 2.0 ** J > S:
        J -= 1
    return J


def lp_multiplier(n: int, J: int) -> np.ndarray:
    return lp_symbol(kmag(n) / 2.0 ** J)


def lp_leq_arr(a: np.ndarray, S: float) -> np.ndarray:
    n = a.shape[-1]
    return ifft(fft(a) * lp_multiplier(n, lp_level(S)), n)


def lp_band_arr(a: np.ndarray, j: int) -> np.ndarray:
    n = a.shape[-1]
    mult = lp_multiplier(n, j) - lp_multiplier(n, j - 1)
    return ifft(fft(a) * mult, n)


def tail_fraction(a: np.ndarray) -> float:
    """Energy fraction in the top third of resolved wavenumbers."""
    n = a.shape[-1]
    ah = fft(a)
    k1, k2, k3 = wavenumbers(n, zero_nyquist=False)
    kmax = np.maximum(np.maximum(np.abs(k1), np.abs(k2)), np.abs(k3))
    w = np.full(kmax.shape, 2.0)
    w[..., 0] = 1.0
    if n % 2 == 0:
        w[..., -1] = 1.0
    e = np.abs(ah) ** 2 * w
    tot = e.sum()
    if tot == 0:
        return 0.0
    return float(e[..., kmax > n / 3.0].sum() / tot)


def c_norm_arr(a: np.ndarray, N: int) -> float:
    """Collocation max of all order-N spatial derivatives."""
    if N == 0:
        return float(np.abs(a).max()) if a.size else 0.0
    n = a.shape[-1]
    ah = fft(a)
    best = 0.0
    for combo in combinations_with_replacement(range(3), N):
        h = ah
        for ax in combo:
            h = d_hat(h, ax, n)
        best = max(best, float(np.abs(ifft(h, n)).max()))
    return best


# --- field containers -----------------------------------------------------

class PeriodicField:
    """Immutable sampled field with lazily computed spectrum."""

    __slots__ = ("rank", "grid", "_v", "_h")

    def __init__(self, values: np.ndarray, rank: str = None):
        values = np.asarray(values, dtype=float)
        if values.ndim == 3:
            values = values[None]
        if rank is None:
            rank = {1: "scalar", 3: "vector3", 6: "symtensor3"}[values.shape[0]]
        if values.shape[0] != RANKS[rank]:
            raise ValueError(f"{rank} needs {RANKS[rank]} components")
        self.rank = rank
        self.grid = Grid(values.shape[-1])
        self._v = values
        self._v.setflags(write=False)
        self._h = None

    @classmethod
    def from_spectrum(cls, ah: np.ndarray, n: int, rank: str = None) -> "PeriodicField":
        return cls(ifft(ah, n), rank)

    @classmethod
    def from_function(cls, grid: Grid, fn, rank: str = None) -> "PeriodicField":
        x = grid.mesh()
        return cls(np.asarray(fn(x[0], x[1], x[2]), dtype=float), rank)

    @property
    def values(self) -> np.ndarray:
        return self._v

    @property
    def spectrum(self) -> np.ndarray:
        if self._h is None:
            self._h = fft(self._v)
        return self._h

    @property
    def mean(self) -> np.ndarray:
        return self.spectrum[..., 0, 0, 0].real

    def __add__(self, o):
        return PeriodicField(self._v + (o._v if isinstance(o, PeriodicField) else o), self.rank)

    def __sub__(self, o):
        return PeriodicField(self._v - (o._v if isinstance(o, PeriodicField) else o), self.rank)

    def __mul__(self, c: float):
        return PeriodicField(self._v * c, self.rank)

    __rmul__ = __mul__

    def __neg__(self):
        return PeriodicField(-self._v, self.rank)


def derivative(f: PeriodicField, axis: int) -> PeriodicField:
    """Spectral partial derivative; axis is 1, 2 or 3."""
    if axis not in (1, 2, 3):
        raise ValueError("axis must be 1, 2 or 3")
    n = f.grid.n
    return PeriodicField(ifft(d_hat(f.spectrum, axis - 1, n), n), f.rank)


def lp_project_leq(f: PeriodicField, S: float) -> PeriodicField:
    n = f.grid.n
    return PeriodicField(ifft(f.spectrum * lp_multiplier(n, lp_level(S)), n), f.rank)


def lp_project_gt(f: PeriodicField, S: float) -> PeriodicField:
    return f - lp_project_leq(f, S)


def lp_band(f: PeriodicField, j: int) -> PeriodicField:
    n = f.grid.n
    mult = lp_multiplier(n, j) - lp_multiplier(n, j - 1)
    return PeriodicField(ifft(f.spectrum * mult, n), f.rank)


def pointwise_product(f: PeriodicField, g: PeriodicField) -> PeriodicField:
    """Scalar times field, or componentwise product of equal ranks."""
    if f.grid != g.grid:
        raise ValueError("grid mismatch")
    a, b = f.values, g.values
    if a.shape[0] == 1 and b.shape[0] != 1:
        return PeriodicField(product(np.broadcast_to(a, b.shape), b), g.rank)
    if b.shape[0] == 1 and a.shape[0] != 1:
        return PeriodicField(product(a, np.broadcast_to(b, a.shape)), f.rank)
    if a.shape != b.shape:
        raise ValueError("rank mismatch")
    return PeriodicField(product(a, b), f.rank)


def outer_product(u: PeriodicField, v: PeriodicField) -> PeriodicField:
    return PeriodicField(outer_sym(u.values, v.values), "symtensor3")


def tensor_contract(s: PeriodicField, v: PeriodicField) -> PeriodicField:
    """S v for a symmetric tensor S and vector v."""
    return PeriodicField(sym_apply(s.values, v.values), "vector3")


def dot(u: PeriodicField, v: PeriodicField) -> PeriodicField:
    return PeriodicField(product(u.values, v.values).sum(axis=0), "scalar")


def trace(s: PeriodicField) -> PeriodicField:
    return PeriodicField(sym_trace(s.values)[None], "scalar")


transpose_apply = tensor_contract  # symmetric storage: S^T v = S v


def spatial_average(f: PeriodicField):
    m = f.mean
    return float(m[0]) if f.rank == "scalar" else m


def c_norm(f, N: int = 0) -> float:
    """C^0_t C^N_x norm over collocation points (and time samples)."""
    if not 0 <= N <= 4:
        raise ValueError("N must be in 0..4")
    if isinstance(f, TimeSeries):
        arrays = [f.data[i] for i in range(len(f))]
    elif isinstance(f, PeriodicField):
        arrays = [f.values]
    else:
        arrays = [np.asarray(f)]
    out = 0.0
    for a in arrays:
        frac = tail_fraction(a)
        if frac > 0.01:
            warnings.warn(f"top-third spectral shell holds {frac:.1%} of the energy",
                          UnderResolvedWarning, stacklevel=2)
        out = max(out, c_norm_arr(a, N))
    return out


class TimeSeries:
    """Uniformly sampled snapshots of one rank on one grid."""

    def __init__(self, t0: float, dt: float, data: np.ndarray, rank: str = None):
        data = np.asarray(data, dtype=float)
        if data.ndim == 4:
            data = data[:, None]
        if rank is None:
            rank = {1: "scalar", 3: "vector3", 6: "symtensor3"}[data.shape[1]]
        if rank != "raw" and data.shape[1] != RANKS[rank]:
            raise ValueError("component count does not match rank")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.t0, self.dt, self.data, self.rank = float(t0), float(dt), data, rank

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(len(self))

    @property
    def grid(self) -> Grid:
        return Grid(self.data.shape[-1])

    def __getitem__(self, i: int) -> PeriodicField:
        return PeriodicField(self.data[i], self.rank)

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        i = int(round((t - self.t0) / self.dt))
        if not 0 <= i < len(self) or abs(self.t0 + i * self.dt - t) > tol * self.dt:
            raise KeyError(f"time {t} is not a sample")
        return i

    def same_clock(self, other: "TimeSeries") -> bool:
        return (len(self) == len(other) and abs(self.t0 - other.t0) <= 1e-12 * max(1, abs(self.t0))
                and abs(self.dt - other.dt) <= 1e-12 * self.dt)


def fd_time(data: np.ndarray, dt: float, i: int) -> np.ndarray:
    """Second-order d/dt at sample i (one-sided at the ends)."""
    nt = data.shape[0]
    if nt < 3:
        raise ValueError("need at least 3 snapshots")
    if i == 0:
        return (4 * (data[1] - data[0]) - (data[2] - data[0])) / (2 * dt)
    if i == nt - 1:
        return (4 * (data[-1] - data[-2]) - (data[-1] - data[-3])) / (2 * dt)
    return (data[i + 1] - data[i - 1]) / (2 * dt)


def time_derivative(ts: TimeSeries, t_index: int) -> PeriodicField:
    return PeriodicField(fd_time(ts.data, ts.dt, t_index), ts.rank)


def transport_term(F: np.ndarray, v: np.ndarray, form: str = "advective") -> np.ndarray:
    """(v . grad) F, either directly or as div(F (x) v)."""
    n = v.shape[-1]
    if form == "advective":
        g = grad_arr(F)
        return sum(product(np.broadcast_to(v[j], F.shape), g[:, j]) for j in range(3))
    if form == "conservative":
        vh = [refine(v[j], Grid(n).padded(Fraction(3, 2))) for j in range(3)]
        Ff = refine(F, Grid(n).padded(Fraction(3, 2)))
        flux = [coarsen(Ff * vh[j], n) for j in range(3)]
        return sum(derivative_arr(flux[j], j) for j in range(3))
    raise ValueError(f"unknown form {form!r}")


def advective_derivative(F: TimeSeries, v: TimeSeries, form: str = "advective") -> TimeSeries:
    """D_t F = d_t F + (v . grad) F with FD time derivative and spectral space derivative.

    form="conservative" evaluates the transport term as div(F (x) v), which agrees
    with the advective form for solenoidal v and keeps flux identities exact on
    the grid.
    """
    if not F.same_clock(v) or F.grid != v.grid:
        raise ValueError("time grid or space grid mismatch")
    out = np.empty_like(F.data)
    for i in range(len(F)):
        out[i] = fd_time(F.data, F.dt, i) + transport_term(F.data[i], v.data[i], form)
    return TimeSeries(F.t0, F.dt, out, F.rank)
