"""Flow maps of the mollified drift and mollification along its trajectories."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from . import jet as J
from .fields import Grid, TimeSeries, grad_arr, transport_term

MODE_CAP = 4096


class StepInstability(RuntimeError):
    pass


class WindowError(ValueError):
    pass


# --- off-grid evaluation ----------------------------------------------------

class SpectralSampler:
    """Exact trigonometric interpolant of grid data, evaluated off the grid.

    Modes below rel_tol of the largest coefficient are dropped; above
    MODE_CAP modes the sampler falls back to trilinear interpolation and
    says so through `fallback`.
    """

    def __init__(self, data: np.ndarray, rel_tol: float = 1e-15, cap: int = MODE_CAP):
        data = np.asarray(data, float)
        if data.ndim == 3:
            data = data[None]
        self.ncomp, n = data.shape[0], data.shape[-1]
        self.n = n
        self.data = data
        F = np.fft.fftn(data, axes=(1, 2, 3)) / n ** 3
        k1 = np.fft.fftfreq(n, 1.0 / n)
        if n % 2 == 0:
            F[:, n // 2] = 0
            F[:, :, n // 2] = 0
            F[:, :, :, n // 2] = 0
        K = np.stack(np.meshgrid(k1, k1, k1, indexing="ij"), -1)
        # samples sit at x_j = -pi + j h
        F = F * np.cos(np.pi * K.sum(-1))[None]
        amp = np.abs(F).max(axis=0)
        top = amp.max()
        keep = amp > rel_tol * top if top > 0 else np.zeros_like(amp, bool)
        self.fallback = int(keep.sum()) > cap
        self.k = K[keep]
        self.c = F[:, keep].T           # (M, ncomp)

    @property
    def n_modes(self) -> int:
        return len(self.k)

    def evaluate(self, pts: np.ndarray, order: int = 0) -> list:
        """[value (P, c), grad (P, c, 3), hess (P, c, 3, 3), third (P, c, 3, 3, 3)] up to order."""
        pts = np.asarray(pts, float).reshape(-1, 3)
        P = len(pts)
        out = [np.zeros((P, self.ncomp) + (3,) * r) for r in range(order + 1)]
        if self.n_modes == 0:
            return out
        if self.fallback:
            if order > 0:
                raise StepInstability("derivatives need the spectral path; mode cap exceeded")
            out[0] = _trilinear(self.data, pts)
            return out
        for s in range(0, P, 4096):
            ph = np.exp(1j * pts[s:s + 4096] @ self.k.T)      # (p, M)
            out[0][s:s + 4096] = (ph @ self.c).real
            for r in range(1, order + 1):
                for combo in combinations_with_replacement(range(3), r):
                    fac = np.prod([1j * self.k[:, a] for a in combo], axis=0)
                    val = (ph @ (fac[:, None] * self.c)).real
                    for perm in set(_perms(combo)):
                        out[r][(slice(s, s + 4096), slice(None)) + perm] = val
        return out


def _perms(combo):
    return itertools.permutations(combo)


def _trilinear(data: np.ndarray, pts: np.ndarray) -> np.ndarray:
    n = data.shape[-1]
    h = 2 * math.pi / n
    u = (pts + math.pi) / h
    i0 = np.floor(u).astype(int)
    fr = u - i0
    out = np.zeros((len(pts), data.shape[0]))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                w = (np.where(dx, fr[:, 0], 1 - fr[:, 0]) * np.where(dy, fr[:, 1], 1 - fr[:, 1])
                     * np.where(dz, fr[:, 2], 1 - fr[:, 2]))
                idx = (i0 + np.array([dx, dy, dz])) % n
                out += w[:, None] * data[:, idx[:, 0], idx[:, 1], idx[:, 2]].T
    return out


class TimeInterp:
    """Cubic Lagrange interpolation of a time series between samples."""

    def __init__(self, ts: TimeSeries):
        self.ts = ts

    def at(self, t: float) -> np.ndarray:
        ts = self.ts
        u = (t - ts.t0) / ts.dt
        if u < -1e-9 or u > len(ts) - 1 + 1e-9:
            raise WindowError(f"time {t} outside the series")
        i = int(round(u))
        if abs(u - i) < 1e-9:
            return ts.data[i]
        j = min(max(int(math.floor(u)) - 1, 0), len(ts) - 4)
        x = u - j
        nodes = np.arange(4)
        w = [np.prod([(x - nodes[b]) / (nodes[a] - nodes[b]) for b in range(4) if b != a]) for a in range(4)]
        return sum(w[a] * ts.data[j + a] for a in range(4))


def drift_is_zero(v: TimeSeries) -> bool:
    return not np.any(v.data)


# --- Eulerian backward flow -------------------------------------------------

def _transport_rhs(zeta: np.ndarray, v: np.ndarray) -> np.ndarray:
    """-(v . grad) zeta - v for the periodic displacement zeta = xi - x."""
    return -transport_term(zeta, v) - v


@dataclass
class SlabFlow:
    """Backward flow xi_m = x + zeta_m of one slab, sampled on the drift clock."""
    m: int
    t_m: float
    zeta: TimeSeries
    zero: bool = False
    _samplers: dict = field(default_factory=dict, repr=False)

    def index(self, t: float) -> int:
        return self.zeta.index_of(t)

    def grid_xi(self, t: float):
        """xi - x and grad xi on the grid at sample time t."""
        n = self.zeta.data.shape[-1]
        if self.zero:
            return np.zeros((3, n, n, n)), np.broadcast_to(np.eye(3)[:, :, None, None, None], (3, 3, n, n, n))
        z = self.zeta.data[self.index(t)]
        g = grad_arr(z) + np.eye(3)[:, :, None, None, None]
        return z, g

    def sampler(self, t: float) -> SpectralSampler:
        i = self.index(t)
        if i not in self._samplers:
            self._samplers[i] = SpectralSampler(self.zeta.data[i])
        return self._samplers[i]

    def xi_jets(self, t: float, pts: np.ndarray, order: int = 2):
        """(xi, grad xi) at points: xi as a jet of `order`, grad xi one order higher in xi.

        With order = 0 both are plain arrays.
        """
        pts = np.asarray(pts, float)
        P = len(pts)
        if self.zero:
            d = [np.zeros((P, 3) + (3,) * r) for r in range(order + 2)]
        else:
            d = self.sampler(t).evaluate(pts, order + 1)
        xi_v = pts + d[0]
        G_v = np.eye(3)[None] + d[1]
        if order == 0:
            return xi_v, G_v
        if order == 1:
            return J.Jet(xi_v, G_v), J.Jet(G_v, d[2])
        return J.Jet(xi_v, G_v, d[2]), J.Jet(G_v, d[2], d[3])

    def flow_bound(self) -> dict:
        """max |Id - grad xi| over the slab samples (operator 2-norm)."""
        if self.zero:
            return {"max_id_minus_grad": 0.0}
        worst = 0.0
        for i in range(len(self.zeta)):
            g = grad_arr(self.zeta.data[i])
            A = np.moveaxis(g, (0, 1), (-2, -1)).reshape(-1, 3, 3)
            worst = max(worst, float(np.linalg.norm(A, ord=2, axis=(1, 2)).max()))
        return {"max_id_minus_grad": worst}


def backward_flow_slab(v: TimeSeries, m: int, tau: float, lo: float = None, hi: float = None) -> SlabFlow:
    """Solve d_t zeta + v.grad zeta + v = 0, zeta(t_m) = 0 over [t_m - tau/2, t_m + 3 tau/2].

    The window is clipped to the drift's clock; RK4 uses the sample step
    with cubic-in-time drift at the half steps.
    """
    t_m = m * tau
    lo = t_m - 0.5 * tau if lo is None else lo
    hi = t_m + 1.5 * tau if hi is None else hi
    times = v.times
    sel = np.where((times >= lo - 1e-9 * v.dt) & (times <= hi + 1e-9 * v.dt))[0]
    if len(sel) == 0:
        raise WindowError(f"slab {m} does not meet the drift window")
    i0, i1 = sel[0], sel[-1]
    n = v.data.shape[-1]
    nt = i1 - i0 + 1
    if drift_is_zero(v):
        zeros = np.broadcast_to(np.zeros((1, 3, n, n, n)), (nt, 3, n, n, n))
        return SlabFlow(m, t_m, TimeSeries(times[i0], v.dt, zeros), zero=True)
    gmax = max(float(np.abs(grad_arr(v.data[i])).max()) for i in range(len(v)))
    if gmax * v.dt > 0.5:
        raise StepInstability(f"|grad v| dt = {gmax * v.dt:.3g} > 0.5")
    # start at the sample nearest t_m
    im = int(round((t_m - v.t0) / v.dt))
    if abs(v.t0 + im * v.dt - t_m) > 1e-9 * v.dt:
        raise WindowError("slab start time is not a sample of the drift clock")
    interp = TimeInterp(v)
    out = np.zeros((nt, 3, n, n, n))
    h = v.dt

    def rk4(z, t, hh):
        k1 = _transport_rhs(z, interp.at(t))
        k2 = _transport_rhs(z + 0.5 * hh * k1, interp.at(t + 0.5 * hh))
        k3 = _transport_rhs(z + 0.5 * hh * k2, interp.at(t + 0.5 * hh))
        k4 = _transport_rhs(z + hh * k3, interp.at(t + hh))
        return z + hh / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    if not i0 <= im <= i1:
        raise WindowError("slab start time outside the drift window")
    z = np.zeros((3, n, n, n))
    for i in range(im, i1):
        z = rk4(z, v.t0 + i * h, h)
        out[i + 1 - i0] = z
    z = np.zeros((3, n, n, n))
    for i in range(im, i0, -1):
        z = rk4(z, v.t0 + i * h, -h)
        out[i - 1 - i0] = z
    return SlabFlow(m, t_m, TimeSeries(times[i0], v.dt, out))


# --- Lagrangian flow --------------------------------------------------------

@dataclass
class FlowMap:
    t0: float
    times: np.ndarray
    positions: np.ndarray           # (nt, P, 3), unreduced
    gradients: np.ndarray = None    # (nt, P, 3, 3)

    def det_error(self) -> float:
        if self.gradients is None:
            return float("nan")
        return float(np.abs(np.linalg.det(self.gradients) - 1).max())


def forward_flow(v: TimeSeries, t0: float, t1: float, pts: np.ndarray,
                 with_gradient: bool = False) -> FlowMap:
    """RK4 for dX/dt = v(t, X), X(t0) = x, on the drift's sample step."""
    pts = np.asarray(pts, float).reshape(-1, 3)
    ts_lo, ts_hi = v.t0, v.times[-1]
    if not (ts_lo - 1e-12 <= min(t0, t1) and max(t0, t1) <= ts_hi + 1e-12 * max(1, abs(ts_hi))):
        raise WindowError("flow interval outside the drift window")
    nsteps = int(round(abs(t1 - t0) / v.dt))
    h = (t1 - t0) / nsteps if nsteps else 0.0
    times = t0 + h * np.arange(nsteps + 1)
    P = len(pts)
    X = pts.copy()
    G = np.broadcast_to(np.eye(3), (P, 3, 3)).copy() if with_gradient else None
    pos = np.zeros((nsteps + 1, P, 3))
    grads = np.zeros((nsteps + 1, P, 3, 3)) if with_gradient else None
    pos[0] = X
    if with_gradient:
        grads[0] = G
    if nsteps == 0 or drift_is_zero(v):
        pos[:] = X
        if with_gradient:
            grads[:] = G
        return FlowMap(t0, times, pos, grads)
    interp = TimeInterp(v)
    cache = {}

    def field_at(t):
        key = round((t - v.t0) / v.dt * 2)
        if key not in cache:
            cache.clear()
            cache[key] = SpectralSampler(interp.at(t))
        return cache[key]

    def rhs(t, X, G):
        vals = field_at(t).evaluate(X, 1 if with_gradient else 0)
        dX = vals[0]
        dG = np.einsum("pij,pjk->pik", vals[1], G) if with_gradient else None
        return dX, dG

    gmax = max(float(np.abs(grad_arr(v.data[i])).max()) for i in range(len(v)))
    if gmax * abs(h) > 0.5:
        raise StepInstability(f"|grad v| h = {gmax * abs(h):.3g} > 0.5")
    for s in range(nsteps):
        t = times[s]
        k1 = rhs(t, X, G)
        k2 = rhs(t + h / 2, X + h / 2 * k1[0], None if G is None else G + h / 2 * k1[1])
        k3 = rhs(t + h / 2, X + h / 2 * k2[0], None if G is None else G + h / 2 * k2[1])
        k4 = rhs(t + h, X + h * k3[0], None if G is None else G + h * k3[1])
        X = X + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        if G is not None:
            G = G + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
            grads[s + 1] = G
        pos[s + 1] = X
    return FlowMap(t0, times, pos, grads)


# --- mollification along trajectories ---------------------------------------

def rho(s) -> np.ndarray:
    """Unnormalized even bump exp(-1/(1 - s^2)) on (-1, 1)."""
    s = np.asarray(s, float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2))
    return out


def mollifier_weights(delta: float, dt: float) -> tuple:
    """Offsets (in samples) and normalized weights of rho_delta on the sample grid."""
    J_ = int(math.ceil(delta / dt))
    offs = np.arange(-J_, J_ + 1)
    w = rho(offs * dt / delta) if delta > 0 else (offs == 0).astype(float)
    if w.sum() == 0:
        w = (offs == 0).astype(float)
    keep = w > 0
    return offs[keep], w[keep] / w[keep].sum()


@dataclass
class MollReport:
    delta_requested: float
    delta_used: float
    clamped: bool
    samples: int


def moll_along_flow(F: TimeSeries, v: TimeSeries, delta: float, t_lo: float, t_hi: float,
                    clamp: bool = False):
    """(rho_delta *_Phi F)(t, x) on the output samples in [t_lo, t_hi].

    F and v share one clock. With clamp=True a window shorter than
    [t_lo - delta, t_hi + delta] shrinks delta to fit instead of failing.
    """
    if not F.same_clock(v):
        raise ValueError("F and v must share the clock")
    times = F.times
    i_lo = F.index_of(t_lo)
    i_hi = F.index_of(t_hi)
    margin = min(t_lo - times[0], times[-1] - t_hi)
    d_use = delta
    if delta > margin + 1e-12 * max(1.0, delta):
        if not clamp:
            raise WindowError(f"window margin {margin:.3g} below delta {delta:.3g}")
        d_use = max(margin, 0.0)
    offs, w = mollifier_weights(d_use, F.dt)
    nt = i_hi - i_lo + 1
    out = np.zeros((nt,) + F.data.shape[1:])
    if drift_is_zero(v):
        for a in range(nt):
            i = i_lo + a
            out[a] = np.tensordot(w, F.data[i + offs], axes=(0, 0))
    else:
        n = F.data.shape[-1]
        pts = Grid(n).points()
        for a in range(nt):
            i = i_lo + a
            t = times[i]
            acc = np.zeros(F.data.shape[1:])
            fwd = forward_flow(v, t, times[i + offs.max()], pts) if offs.max() > 0 else None
            bwd = forward_flow(v, t, times[i + offs.min()], pts) if offs.min() < 0 else None
            for o, wt in zip(offs, w):
                if o == 0:
                    acc += wt * F.data[i]
                    continue
                fm = fwd if o > 0 else bwd
                X = fm.positions[abs(o)]
                vals = SpectralSampler(F.data[i + o]).evaluate(X, 0)[0]
                acc += wt * vals.T.reshape(F.data.shape[1:])
            out[a] = acc
    rep = MollReport(delta, d_use, d_use < delta, len(offs))
    return TimeSeries(times[i_lo], F.dt, out, F.rank), rep
