"""New Reynolds stress, new unsolved current and the time functions varrho_0..2.

All fields arrive on one working clock that extends the output window by
two samples on each side; time derivatives use the five-point central
stencil, so every assembled quantity lives on the inner clock.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .fields import (TimeSeries, div_sym, div_vec, grad_arr, lp_leq_arr, outer_sym,
                     product, product3, sym_apply, sym_contract, sym_identity, sym_trace,
                     transport_term)
from .invdiv import inv_div_tensor_arr, inv_div_vector_arr

MEAN_TOL = 1e-8


class AssemblyError(RuntimeError):
    """A field handed to the inverse divergence had a nonzero mean."""


def ddt4(data: np.ndarray, dt: float, j: int) -> np.ndarray:
    """Fourth-order central d/dt at sample j (needs two neighbours on each side)."""
    if j < 2 or j > data.shape[0] - 3:
        raise IndexError("five-point stencil leaves the clock")
    # differences first, so constant-in-time data gives exactly zero
    return (8 * (data[j + 1] - data[j - 1]) - (data[j + 2] - data[j - 2])) / (12 * dt)


def _check_mean(f: np.ndarray, what: str, tol: float = MEAN_TOL) -> None:
    m = np.abs(f.mean(axis=(-3, -2, -1))).max()
    scale = float(np.abs(f).max()) if f.size else 0.0
    if m > tol * scale + 1e-300 and m > 1e-14:
        raise AssemblyError(f"{what}: mean {m:.3g} against scale {scale:.3g}")


def R_vec(f: np.ndarray, what: str) -> np.ndarray:
    _check_mean(f, what)
    return inv_div_tensor_arr(f)


def R_scal(g: np.ndarray, what: str) -> np.ndarray:
    _check_mean(g, what)
    return inv_div_vector_arr(g)


def dot3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return sum(product(a[i:i + 1], b[i:i + 1]) for i in range(3))


def q_commutator(v: TimeSeries, ell: float) -> TimeSeries:
    """Q = div(v_l (x) v_l - (v (x) v)_l) for every snapshot."""
    S = 1.0 / ell
    out = np.empty_like(v.data)
    for i in range(len(v)):
        vi = v.data[i]
        vl = lp_leq_arr(vi, S)
        out[i] = div_sym(outer_sym(vl, vl) - lp_leq_arr(outer_sym(vi, vi), S))
    return TimeSeries(v.t0, v.dt, out, "vector3")


@dataclass
class StressBreakdown:
    R_T: TimeSeries
    R_N: TimeSeries
    R_O1: TimeSeries
    R_O2: TimeSeries
    R_M: TimeSeries
    varrho: tuple = None
    R_q1: TimeSeries = None
    kappa_q1: TimeSeries = None

    def star_sum(self) -> np.ndarray:
        return self.R_T.data + self.R_N.data + self.R_O1.data + self.R_O2.data + self.R_M.data

    def with_varrho(self, varrho) -> "StressBreakdown":
        v = sum(np.asarray(x, float) for x in varrho)
        star = self.star_sum()
        R = star + (2.0 / 3.0) * v[:, None, None, None, None] * sym_identity(star.shape[-3:])[None]
        kap = 0.5 * sym_trace(np.moveaxis(self.R_O2.data + self.R_M.data, 1, 0))[:, None] \
            + v[:, None, None, None, None]
        self.varrho = tuple(np.asarray(x, float) for x in varrho)
        self.R_q1 = TimeSeries(self.R_T.t0, self.R_T.dt, R, "symtensor3")
        self.kappa_q1 = TimeSeries(self.R_T.t0, self.R_T.dt, kap, "scalar")
        return self

    def trace_bookkeeping(self) -> float:
        """max |kappa - tr(R)/2|, which is zero up to rounding by construction."""
        tr = 0.5 * sym_trace(np.moveaxis(self.R_q1.data, 1, 0))
        return float(np.abs(self.kappa_q1.data[:, 0] - tr).max())

    def norms(self) -> dict:
        return {k: float(np.abs(getattr(self, k).data).max())
                for k in ("R_T", "R_N", "R_O1", "R_O2", "R_M")}


PHI_PIECES = ("phi_T1", "phi_T2", "phi_O1", "phi_O2", "phi_R", "phi_M", "phi_H1", "phi_H2")


@dataclass
class CurrentBreakdown:
    pieces: dict
    phi_q1: TimeSeries
    varrho: tuple
    varrho_prime: tuple = field(default=None)

    def norms(self) -> dict:
        return {k: float(np.abs(v.data).max()) for k, v in self.pieces.items()}


@dataclass
class Inputs:
    """Everything the assembly reads, on the working clock (two extra samples per side)."""
    t0: float
    dt: float
    w_o: np.ndarray
    w_c: np.ndarray
    v: np.ndarray
    v_l: np.ndarray
    p: np.ndarray
    p_l: np.ndarray
    R: np.ndarray
    R_l: np.ndarray
    phi: np.ndarray
    phi_l: np.ndarray
    delta: float
    ell: float

    @property
    def nt(self) -> int:
        return self.v.shape[0]

    def inner(self):
        return range(2, self.nt - 2)

    @property
    def t_inner0(self) -> float:
        return self.t0 + 2 * self.dt


def _series(inp: Inputs, data: np.ndarray, rank: str) -> TimeSeries:
    return TimeSeries(inp.t_inner0, inp.dt, data, rank)


def build_stress(inp: Inputs) -> StressBreakdown:
    """The five star pieces on the inner clock; varrho is filled by build_current."""
    n = inp.v.shape[-1]
    ni = inp.nt - 4
    out = {k: np.zeros((ni, 6, n, n, n)) for k in ("R_T", "R_N", "R_O1", "R_O2", "R_M")}
    w_all = inp.w_o + inp.w_c
    for a, j in enumerate(inp.inner()):
        w = w_all[j]
        vl = inp.v_l[j]
        Dw = ddt4(w_all, inp.dt, j) + transport_term(w, vl, "conservative")
        out["R_T"][a] = R_vec(Dw, "D_t w")
        out["R_N"][a] = R_vec(transport_term(vl, w, "conservative"), "w.grad v_l")
        out["R_O1"][a] = R_vec(div_sym(outer_sym(inp.w_o[j], inp.w_o[j]) + inp.R_l[j]),
                               "div(w_o w_o + R_l)")
        out["R_O2"][a] = 2 * outer_sym(inp.w_o[j], inp.w_c[j]) + outer_sym(inp.w_c[j], inp.w_c[j])
        dv = inp.v[j] - vl
        out["R_M"][a] = inp.R[j] - inp.R_l[j] + 2 * outer_sym(dv, w)
    return StressBreakdown(**{k: _series(inp, x, "symtensor3") for k, x in out.items()})


def _integral_from_zero(t: np.ndarray, f: np.ndarray) -> np.ndarray:
    """int_0^t f by the trapezoid rule; 0 must be a sample."""
    i0 = int(np.argmin(np.abs(t)))
    if abs(t[i0]) > 1e-9 * (t[1] - t[0]):
        raise ValueError("t = 0 is not a sample of the clock")
    F = np.zeros_like(f)
    F[i0:] = cumulative_trapezoid(f[i0:], t[i0:], initial=0.0)
    F[:i0 + 1] = -cumulative_trapezoid(f[i0::-1], -t[i0::-1], initial=0.0)[::-1]
    return F


def build_current(inp: Inputs, stress: StressBreakdown, Q: np.ndarray = None):
    """Eight current pieces and varrho_0..2; fills stress.R_q1 and stress.kappa_q1.

    Q is the commutator on the working clock (computed here when omitted).
    """
    n = inp.v.shape[-1]
    ni = inp.nt - 4
    S = 1.0 / inp.ell
    times = inp.t_inner0 + inp.dt * np.arange(ni)
    w_all = inp.w_o + inp.w_c
    trX = np.stack([(sym_trace(outer_sym(inp.w_o[j], inp.w_o[j])) - 3 * inp.delta
                     + sym_trace(inp.R_l[j]))[None] for j in range(inp.nt)])
    star = stress.star_sum()
    # time-function arguments and their means
    argT2, argH1, argH2 = [], [], []
    for a, j in enumerate(inp.inner()):
        w = w_all[j]
        vl = inp.v_l[j]
        argT2.append(0.5 * (ddt4(trX, inp.dt, j) + transport_term(trX[j], vl, "conservative")))
        PR = lp_leq_arr(inp.R[j], S)
        if Q is None:
            vlq = lp_leq_arr(inp.v[j], S)
            Qj = div_sym(outer_sym(vlq, vlq) - lp_leq_arr(outer_sym(inp.v[j], inp.v[j]), S))
        else:
            Qj = Q[j]
        argH1.append(dot3(div_sym(PR) + Qj, w))
        dv = inp.v[j] - vl
        Y = (outer_sym(w, w) - inp.delta * sym_identity((n, n, n)) + inp.R[j] - star[a]
             + 2 * outer_sym(dv, w))
        gv = grad_arr(vl)           # gv[i, k] = d_k v_i
        argH2.append(sym_contract(Y, gv))
    rp = [np.array([x.mean() for x in arr]) for arr in (argT2, argH1, argH2)]
    varrho = tuple(_integral_from_zero(times, r) for r in rp)
    stress.with_varrho(varrho)
    pieces = {k: np.zeros((ni, 3, n, n, n)) for k in PHI_PIECES}
    for a, j in enumerate(inp.inner()):
        w, wo = w_all[j], inp.w_o[j]
        vl = inp.v_l[j]
        dv = inp.v[j] - vl
        half_tr = 0.5 * sym_trace(stress.R_O2.data[a] + stress.R_M.data[a])[None]
        pieces["phi_T1"][a] = -product(np.broadcast_to(half_tr, w.shape), w) \
            + 0.5 * product(np.broadcast_to(trX[j], dv.shape), dv)
        pieces["phi_T2"][a] = R_scal(argT2[a] - rp[0][a], "phi_T2 argument")
        wo2 = sum(product3(wo[i:i + 1], wo[i:i + 1], wo) for i in range(3))
        w2 = sum(product3(w[i:i + 1], w[i:i + 1], w) for i in range(3))
        pieces["phi_O1"][a] = R_scal(div_vec(0.5 * wo2 + inp.phi_l[j]), "phi_O1 argument")
        pieces["phi_O2"][a] = R_scal(div_vec(0.5 * (w2 - wo2)), "phi_O2 argument")
        pieces["phi_R"][a] = -sym_apply(star[a], w)
        scal = 0.5 * dot3(dv, dv) + inp.p[j] - inp.p_l[j]
        B = (outer_sym(w, w) - inp.delta * sym_identity((n, n, n)) + inp.R[j] - star[a])
        pieces["phi_M"][a] = (product(np.broadcast_to(scal, w.shape), w) + inp.phi[j] - inp.phi_l[j]
                              + sym_apply(B, dv))
        pieces["phi_H1"][a] = R_scal(argH1[a] - rp[1][a], "phi_H1 argument")
        pieces["phi_H2"][a] = R_scal(argH2[a] - rp[2][a], "phi_H2 argument")
    total = sum(pieces.values())
    return CurrentBreakdown({k: _series(inp, x, "vector3") for k, x in pieces.items()},
                            _series(inp, total, "vector3"), varrho, tuple(rp))


def energy_loss_check(v: TimeSeries, E: np.ndarray, kappa: TimeSeries = None, dE: np.ndarray = None) -> dict:
    """Kinetic energy change against the prescribed loss.

    Integrating the relaxed energy identity over the torus gives
    d/dt avg(|v|^2/2 - kappa) = E'/2, so the balance compares
    avg(|v|^2/2 - kappa)(t) - (same)(0) with E(t)/2 (averages over the torus).
    """
    ke = 0.5 * (v.data ** 2).sum(axis=1).mean(axis=(-3, -2, -1))
    kap = np.zeros_like(ke) if kappa is None else kappa.data[:, 0].mean(axis=(-3, -2, -1))
    t = v.times
    i0 = int(np.argmin(np.abs(t)))
    bal = (ke - kap) - (ke[i0] - kap[i0])
    E = np.asarray(E, float)
    rep = {"max_balance_error": float(np.abs(bal - 0.5 * E).max()),
           "kinetic_change_end": float(ke[-1] - ke[i0]),
           "E_end": float(E[-1]), "E_at_0": float(E[i0]),
           "E_nonincreasing": bool(np.all(np.diff(E) <= 1e-15))}
    if dE is not None:
        rep["max_dE"] = float(np.max(dE))
        rep["dE_nonpositive"] = bool(np.all(np.asarray(dE) <= 0))
    return rep
