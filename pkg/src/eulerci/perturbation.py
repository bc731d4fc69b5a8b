"""Weights, the principal perturbation w_o, its corrector w_c and the coefficient tables.

Every index I = (m, n, kind, k) carries

    w_I = a_I  ft_I  psi_I(lam xi_m - z_I),    ft_I = (grad xi_m)^{-1} f_I,
    a_I = theta_m^p(t/tau) chi_n^p(xi_m/mu) gamma_I,

with p = 3 for stress directions and p = 2 for current directions. The
corrector is w_c = lam^{-1} sum grad a_I x (grad xi_m^T V_I), so that
w_o + w_c = curl A - (det grad xi - 1) w_o with A = lam^{-1} sum a_I grad xi_m^T V_I.

Evaluation works on arbitrary point sets, either as plain values or as
second-order jets (the latter for exact divergence and curl checks at
points placed on the tubes, which the grid cannot resolve).
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import jet as J
from .fields import (Grid, ResolutionError, TimeSeries, UnderResolvedWarning, _FULL_TO_SYM)
from .geometry import FamilyTable, OutsideLemmaDomain, class_index
from .mikado import MikadoProfile, build_profile, fourier_coeffs
from .params import LevelParams
from .partition import chi, chi_1d, theta
from .shifts import ShiftAssignment, assign_all_shifts, reduce_transverse, transverse_frame
from .transport import SlabFlow, SpectralSampler

KIND_OF = {"R": "Reynolds", "phi": "Current"}
SYM_I = np.array([0, 1, 2, 0, 0, 1])
SYM_J = np.array([0, 1, 2, 1, 2, 2])


@dataclass
class PerturbationContext:
    """Everything the perturbation needs at one level, fixed before any evaluation."""
    lp: LevelParams
    table: FamilyTable
    shifts: ShiftAssignment
    flows: dict                     # m -> SlabFlow
    R_l: TimeSeries                 # symtensor, on the drift clock
    phi_l: TimeSeries               # vector, same clock
    N0_phi: float = 3.0
    flip: frozenset = frozenset()   # slabs whose stress weights change sign
    demo_mode: bool = True
    profiles: dict = field(default_factory=dict)
    _arr: dict = field(default_factory=dict, repr=False)
    _samplers: dict = field(default_factory=dict, repr=False)

    @property
    def lam(self) -> int:
        return self.lp.lambda_q1

    @property
    def delta(self) -> float:
        return self.lp.delta_q1

    @property
    def tau(self) -> float:
        return self.lp.tau_q

    @property
    def r0(self) -> float:
        return min(self.table.d0 / 4, self.table.eta / 10)

    @property
    def slabs(self) -> list:
        return sorted(self.flows)

    def active(self, t: float) -> list:
        """(m, theta_m(t/tau)) for slabs whose cutoff is nonzero at t."""
        s = t / self.tau
        out = []
        for m in self.slabs:
            th = float(theta(s, m))
            if th > 0:
                out.append((m, th))
        return out

    def field_at(self, which: str, t: float, pts: np.ndarray, order: int, grid_idx=None):
        """R_l (full 3x3) or phi_l at points, as arrays (order 0) or jets."""
        ts = self.R_l if which == "R" else self.phi_l
        i = ts.index_of(t)
        if grid_idx is not None:
            val = ts.data[i].reshape(ts.data.shape[1], -1).T[grid_idx]
            d = [val]
        else:
            key = (which, i)
            if key not in self._samplers:
                if len(self._samplers) > 8:
                    self._samplers.clear()
                self._samplers[key] = SpectralSampler(ts.data[i])
            d = self._samplers[key].evaluate(pts, order)
        if which == "R":
            d = [x[:, _FULL_TO_SYM] for x in d]
        if order == 0:
            return d[0]
        return J.Jet(d[0], d[1], d[2] if order >= 2 else None)


def build_profiles(table: FamilyTable) -> dict:
    """One profile per (class, kind, k) at radius min(d0/4, eta/10)."""
    r0 = min(table.d0 / 4, table.eta / 10)
    out = {}
    for j, kind, k, f in table.directions():
        out[(j, kind, k)] = build_profile(KIND_OF[kind], f, r0, d0=table.d0, eta=table.eta)
    return out


def _arrays(ctx: PerturbationContext) -> dict:
    """Per-class direction arrays and moments, built once."""
    if ctx._arr:
        return ctx._arr
    if not ctx.profiles:
        ctx.profiles = build_profiles(ctx.table)
    tb = ctx.table
    fR = np.array([fam.f for fam in tb.R], float)                 # (27, 6, 3)
    fP = np.array([fam.f for fam in tb.phi], float)               # (27, 4, 3)
    fn = fP / (fP ** 2).sum(-1, keepdims=True)
    fn[:, 3] = 0.0
    dual = np.array([fam.dual for fam in tb.R])                   # (27, 6, 6)
    CR = np.array([fam.C for fam in tb.R])
    M2R = np.array([[ctx.profiles[(j, "R", k)].moments[1] for k in range(6)] for j in range(27)])
    M2P = np.array([[ctx.profiles[(j, "phi", k)].moments[1] for k in range(4)] for j in range(27)])
    M3P = np.array([[ctx.profiles[(j, "phi", k)].moments[2] for k in range(4)] for j in range(27)])
    pR = np.array([[tb.pbar.get((j, "R", k), np.zeros(3)) for k in range(6)] for j in range(27)])
    pP = np.array([[tb.pbar.get((j, "phi", k), np.zeros(3)) for k in range(4)] for j in range(27)])
    ctx._arr.update(fR=fR, fP=fP, fn=fn, dual=dual, CR=CR, M2R=M2R, M2P=M2P, M3P=M3P,
                    pR=pR, pP=pP, ztab={})
    return ctx._arr


def _take(x, idx):
    return x[idx] if isinstance(x, J.Jet) else np.asarray(x)[idx]


def _scatter(P: int, idx, x):
    """Dense copy of x (values on idx) with zeros elsewhere; jets keep their order."""
    if isinstance(x, J.Jet):
        v = np.zeros((P,) + x.v.shape[1:])
        g = np.zeros((P,) + x.g.shape[1:])
        v[idx], g[idx] = x.v, x.g
        h = None
        if x.h is not None:
            h = np.zeros((P,) + x.h.shape[1:])
            h[idx] = x.h
        return J.Jet(v, g, h)
    out = np.zeros((P,) + x.shape[1:])
    out[idx] = x
    return out


@dataclass
class Block:
    """Weights of slab m on the points whose candidate cell (offset c) carries chi > 0."""
    m: int
    theta: float
    idx: np.ndarray            # point indices
    n: np.ndarray              # (p, 3) integer cells
    cls: np.ndarray            # (p,) class index
    xi: object                 # (p, 3)
    G: object                  # (p, 3, 3)
    aP: object = None          # (p, 4)
    ftP: object = None         # (p, 4, 3)
    aR: object = None          # (p, 6)
    ftR: object = None         # (p, 6, 3)
    non_neighbour: int = 0


@dataclass
class _Base:
    """The time-cutoff-free part of a block: cells, flow data, current weights."""
    idx: np.ndarray
    n: np.ndarray
    cls: np.ndarray
    xi: object
    G: object
    identity_G: bool
    gamP: object               # gamma_J chi^2, (p, 4)
    ftP: object
    ftR: object
    chi3: object
    Rf: object
    SP: object                 # sum_k gamma_J^2 chi^4 M2 ft (x) ft, (p, 3, 3)


def _bases(ctx, flow, t, pts, order, grid, Rf, Pf) -> list:
    A = _arrays(ctx)
    lp = ctx.lp
    mu_inv = lp.mu_inv
    dl = ctx.delta
    coef_u = -2.0 * lp.lambda_q ** (3 * lp.gamma) * dl ** -1.5
    amp_P = lp.lambda_q ** -lp.gamma * math.sqrt(dl)
    if grid and order == 0:
        z, g = flow.grid_xi(t)
        xi = pts + z.reshape(3, -1).T
        G = np.moveaxis(np.asarray(g).reshape(3, 3, -1), -1, 0)
    else:
        xi, G = flow.xi_jets(t, pts, order)
    y = xi * float(mu_inv)
    yv = J.value(y)
    base = np.floor(yv / (2 * math.pi)).astype(np.int64)
    six = [[chi_1d(yv[:, i], base[:, i] + o, 6.0) for o in (0, 1)] for i in range(3)]
    out = []
    for c in range(8):
        o = ((c >> 2) & 1, (c >> 1) & 1, c & 1)
        c6 = six[0][o[0]] * six[1][o[1]] * six[2][o[2]]
        idx = np.nonzero(c6 > 0)[0]
        if len(idx) == 0:
            continue
        n = base[idx] + np.array(o)
        cls = 9 * (n[:, 0] % 3) + 3 * (n[:, 1] % 3) + n[:, 2] % 3
        yb = _take(y, idx)
        if order == 0:
            c6b = c6[idx]
            chi2, chi3 = c6b ** (1 / 3), np.sqrt(c6b)
        else:
            chi2, chi3 = chi(yb, n, 2.0), chi(yb, n, 3.0)
        Gb = _take(G, idx)
        ident = flow.zero
        Gi = J.inv3(Gb) if not ident else Gb
        phib = _take(Pf, idx)
        u = (J.einsum("pij,pj->pi", Gb, phib) if not ident else phib) * coef_u
        un = np.linalg.norm(J.value(u), axis=-1)
        if np.any(un > ctx.N0_phi):
            raise OutsideLemmaDomain(f"|u| = {un.max():.4g} exceeds N0 = {ctx.N0_phi}")
        Gam = J.einsum("pi,pki->pk", u, A["fn"][cls]) + 2.0 * ctx.N0_phi
        fP, fR = A["fP"][cls], A["fR"][cls]
        ftP = J.einsum("pij,pkj->pki", Gi, fP) if not ident else fP
        ftR = J.einsum("pij,pkj->pki", Gi, fR) if not ident else fR
        ftn2 = J.einsum("pki,pki->pk", ftP, ftP)
        gam = J.cbrt(Gam) * J.power(ftn2, -1.0 / 3.0) * amp_P
        gamP = gam * J.stack([chi2] * 4, 1)
        SP = J.einsum("pki,pkj->pij", J.einsum("pk,pki->pki", gamP * gamP * A["M2P"][cls], ftP), ftP)
        out.append(_Base(idx, n, cls, _take(xi, idx), Gb, ident, gamP, ftP, ftR, chi3,
                         _take(Rf, idx), SP))
    return out


def blocks_at(ctx: PerturbationContext, t: float, pts: np.ndarray, order: int = 0,
              grid: bool = False, check: bool = True, cache: dict = None,
              field_key=None) -> list:
    """All nonzero weight blocks at time t and points pts (P, 3).

    order 0 returns plain arrays; order 1 or 2 returns jets of that order.
    grid=True means pts are the collocation points in C order, which lets
    flows and fields be read off the grid instead of resampled. With a cache
    and a field_key identifying the R_l, phi_l snapshots, the cutoff-free
    part of each block is reused between times (and, for zero drift,
    between slabs).
    """
    A = _arrays(ctx)
    P = len(pts)
    mu_inv = ctx.lp.mu_inv
    dl = ctx.delta
    i_t = ctx.R_l.index_of(t)
    fields = None
    bases = {}
    for m, th in ctx.active(t):
        flow = ctx.flows[m]
        key = None
        if cache is not None and field_key is not None:
            key = ("zero", field_key) if flow.zero else (m, i_t, field_key)
        if key is not None and key in cache:
            bases[m] = cache[key]
            continue
        if fields is None:
            gidx = np.arange(P) if grid else None
            fields = (ctx.field_at("R", t, pts, order, grid_idx=gidx),
                      ctx.field_at("phi", t, pts, order, grid_idx=gidx))
        bases[m] = _bases(ctx, flow, t, pts, order, grid, *fields)
        if key is not None:
            cache[key] = bases[m]
    thetas = dict(ctx.active(t))
    # sum of the current terms over every active block, then per stress block
    # the neighbouring part of it (non-neighbours are subtracted and counted)
    S_all = _scatter_sum(P, [(bs.idx, bs.SP * thetas[m] ** 4) for m in bases for bs in bases[m]])
    out = []
    for m, bl in bases.items():
        th = thetas[m]
        for bs in bl:
            b = Block(m, th, bs.idx, bs.n, bs.cls, bs.xi, bs.G)
            b.aP = bs.gamP * th ** 2
            b.ftP = bs.ftP
            b.ftR = bs.ftR
            S = _take(S_all, bs.idx)
            for m2, bl2 in bases.items():
                if m2 == m or (ctx.flows[m].zero and ctx.flows[m2].zero):
                    continue     # candidate cells of one map are always neighbours
                for bs2 in bl2:
                    pos = np.minimum(np.searchsorted(bs2.idx, bs.idx), len(bs2.idx) - 1)
                    hit = bs2.idx[pos] == bs.idx
                    if not hit.any():
                        continue
                    d = (bs.n - bs2.n[pos]) % mu_inv
                    far = hit & ~np.all(np.minimum(d, mu_inv - d) <= 1, axis=1)
                    if abs(m2 - m) > 1:
                        far = hit
                    if far.any():
                        b.non_neighbour += int(far.sum())
                        S = S - _take(bs2.SP, pos) * (far * thetas[m2] ** 4)[:, None, None]
            M = dl * np.eye(3)[None] - bs.Rf - S
            if bs.identity_G:
                Am = M * (1.0 / dl)
            else:
                Am = J.einsum("pik,plk->pil", J.einsum("pij,pjk->pik", bs.G, M), bs.G) * (1.0 / dl)
            A6 = Am[(slice(None), SYM_I, SYM_J)]
            L = J.einsum("pa,pba->pb", A6, A["dual"][bs.cls])
            if check:
                lo = J.value(L).min(axis=1) - 1.0 / (2 * A["CR"][bs.cls])
                if np.any(lo < 0):
                    raise OutsideLemmaDomain(f"min L_i(A) below 1/(2C) by {-lo.min():.3g}")
            sign = -1.0 if m in ctx.flip else 1.0
            b.aR = J.sqrt(L) * J.stack([bs.chi3] * 6, 1) * (sign * math.sqrt(dl) * th ** 3)
            out.append(b)
    return out


def _scatter_sum(P, items):
    """Dense sum of (idx, values) pieces; jets keep their order."""
    acc = None
    for idx, x in items:
        d = _scatter(P, idx, x)
        acc = d if acc is None else acc + d
    return acc if acc is not None else np.zeros((P, 3, 3))


# --- cancellation -------------------------------------------------------------

def cancellation_residual(ctx: PerturbationContext, t: float, pts: np.ndarray, grid: bool = False,
                          cache: dict = None, field_key=None) -> dict:
    """Max residuals of the two low-frequency identities at (t, pts)."""
    A = _arrays(ctx)
    P = len(pts)
    blocks = blocks_at(ctx, t, pts, 0, grid=grid, cache=cache, field_key=field_key)
    S = np.zeros((P, 3, 3))
    F = np.zeros((P, 3))
    nn = 0
    for b in blocks:
        cR = b.aR ** 2 * A["M2R"][b.cls]
        S[b.idx] += J.einsum("pki,pkj->pij", cR[..., None] * b.ftR, b.ftR)
        cP = b.aP ** 2 * A["M2P"][b.cls]
        S[b.idx] += J.einsum("pki,pkj->pij", cP[..., None] * b.ftP, b.ftP)
        n2 = (b.ftP ** 2).sum(-1)
        F[b.idx] += 0.5 * J.einsum("pk,pki->pi", b.aP ** 3 * A["M3P"][b.cls] * n2, b.ftP)
        nn += b.non_neighbour
    gidx = np.arange(P) if grid else None
    R = ctx.field_at("R", t, pts, 0, grid_idx=gidx)
    phi = ctx.field_at("phi", t, pts, 0, grid_idx=gidx)
    resR = S - (ctx.delta * np.eye(3)[None] - R)
    resP = F + phi
    return {"R": float(np.abs(resR).max()), "phi": float(np.abs(resP).max()), "non_neighbour": nn}


def _time_keys(ctx: PerturbationContext, times) -> tuple:
    """Exact-input keys per time, and the snapshot key of the fields."""
    keys, fkeys = [], []
    for t in times:
        i = ctx.R_l.index_of(t)
        fk = (hash(ctx.R_l.data[i].tobytes()), hash(ctx.phi_l.data[i].tobytes()))
        act = ctx.active(t)
        zero = all(ctx.flows[m].zero for m, _ in act)
        if zero:
            # with xi = x on every slab the slab label only matters through a sign flip
            keys.append((tuple((th, m in ctx.flip) for m, th in act), fk, "zero"))
        else:
            keys.append((tuple(act), fk, i))
        fkeys.append(fk)
    return keys, fkeys


def cancellation_sweep(ctx: PerturbationContext, grid: Grid, times, chunk: int = 32768) -> dict:
    """Both identities at every collocation point and every listed time.

    Times with identical inputs (active cutoff values, field snapshots, zero
    drift) share one evaluation; within a chunk of points the cutoff-free
    part of the weights is shared between times.
    """
    if grid.n != ctx.R_l.data.shape[-1]:
        raise ValueError("sweep grid must match the field grid")
    pts_all = grid.points()
    keys, fkeys = _time_keys(ctx, times)
    distinct = {}
    for t, k, fk in zip(times, keys, fkeys):
        distinct.setdefault(k, (t, fk))
    res = {k: {"R": 0.0, "phi": 0.0, "non_neighbour": 0} for k in distinct}
    for s in range(0, len(pts_all), chunk):
        sl = np.arange(s, min(s + chunk, len(pts_all)))
        sub = _GridChunk(ctx, sl)
        cache = {}
        for k, (t, fk) in distinct.items():
            rr = cancellation_residual(sub, t, pts_all[sl], cache=cache, field_key=fk)
            r = res[k]
            r["R"], r["phi"] = max(r["R"], rr["R"]), max(r["phi"], rr["phi"])
            r["non_neighbour"] += rr["non_neighbour"]
    worstR = max((r["R"] for r in res.values()), default=0.0)
    worstP = max((r["phi"] for r in res.values()), default=0.0)
    nn = sum(res[k]["non_neighbour"] for k in keys)
    d = ctx.delta
    return {"max_R": worstR, "max_phi": worstP, "tol_R": 1e-8 * d, "tol_phi": 1e-8 * d ** 1.5,
            "pass": worstR <= 1e-8 * d and worstP <= 1e-8 * d ** 1.5,
            "times": len(times), "distinct_evaluations": len(distinct), "points": len(pts_all),
            "non_neighbour_overlaps": nn}


class _GridChunk:
    """Context view whose fields and flows are read at a slice of the collocation points."""

    def __init__(self, ctx, sl):
        self._ctx, self._sl = ctx, sl
        self.flows = {m: _FlowChunk(f, sl) for m, f in ctx.flows.items()}

    def __getattr__(self, name):
        return getattr(self._ctx, name)

    def active(self, t):
        return self._ctx.active(t)

    def field_at(self, which, t, pts, order, grid_idx=None):
        return self._ctx.field_at(which, t, pts, order, grid_idx=self._sl)


class _FlowChunk:
    def __init__(self, flow: SlabFlow, sl):
        self.flow, self.sl = flow, sl
        self.zero = flow.zero

    def xi_jets(self, t, pts, order):
        if order:
            return self.flow.xi_jets(t, pts, order)
        z, g = self.flow.grid_xi(t)
        xi = pts + z.reshape(3, -1).T[self.sl]
        G = np.moveaxis(np.asarray(g).reshape(3, 3, -1), -1, 0)[self.sl]
        return xi, G


# --- the fast part --------------------------------------------------------------

def _shift_table(ctx, m):
    zt = ctx._arr["ztab"]
    if m not in zt:
        zt[m] = ctx.shifts.z_table(m)
    return zt[m]


@dataclass
class Piece:
    m: int
    n: np.ndarray              # (p, 3) cells
    cls: int
    kind: str
    k: int
    idx: np.ndarray
    w_o: np.ndarray
    w_c: np.ndarray = None
    A: np.ndarray = None
    div: np.ndarray = None
    curl_A: np.ndarray = None


def pieces_at(ctx: PerturbationContext, t: float, pts: np.ndarray, order: int = 0,
              grid: bool = False, blocks=None) -> list:
    """Nonzero w_I at points, one Piece per index I and point group.

    order 0: w_o only. order 1: also w_c and the potential (values).
    order 2: additionally div(w_o + w_c) and curl A from jets.
    """
    A = _arrays(ctx)
    lam = float(ctx.lam)
    mu_inv = ctx.lp.mu_inv
    if blocks is None:
        blocks = blocks_at(ctx, t, pts, order, grid=grid)
    out = []
    for b in blocks:
        nmod = b.n % mu_inv
        zc = _shift_table(ctx, b.m)[nmod[:, 0], nmod[:, 1], nmod[:, 2]]
        xi_v = J.value(b.xi)
        for kind, aa, ff, pb, K in (("R", b.aR, b.ftR, A["pR"], 6), ("phi", b.aP, b.ftP, A["pP"], 4)):
            for k in range(K):
                for j, sel in _classes(b.cls):
                    prof = ctx.profiles[(j, kind, k)]
                    Y = lam * xi_v[sel] - zc[sel] - pb[j, k][None]
                    want = ("psi",) if order == 0 else ("psi", "gpsi", "V", "gV")
                    ev = prof.evaluate(Y, want)
                    ins = np.nonzero(ev["inside"])[0]
                    if len(ins) == 0:
                        continue
                    loc = sel[ins]
                    a = aa[loc][(slice(None), k)] if isinstance(aa, J.Jet) else aa[loc, k]
                    f = ff[loc][(slice(None), k)] if isinstance(ff, J.Jet) else ff[loc, k]
                    psi = ev["psi"][ins]
                    pc = Piece(b.m, b.n[loc], j, kind, k, b.idx[loc],
                               np.zeros((len(loc), 3)))
                    if order == 0:
                        pc.w_o = (J.value(a) * psi)[:, None] * J.value(f)
                        out.append(pc)
                        continue
                    G = _take(b.G, loc)
                    G1 = G.lower() if isinstance(G, J.Jet) and G.h is not None else G
                    gpsi = ev["gpsi"][ins]
                    V = ev["V"][ins]
                    gV = ev["gV"][ins]
                    Gv1 = J.value(G1)
                    psiJ = J.Jet(psi, lam * np.einsum("pji,pj->pi", Gv1, gpsi))
                    VJ = J.Jet(V, lam * np.einsum("paj,pjb->pab", gV, Gv1))
                    a1 = a.lower() if a.h is not None else a
                    f1 = f.lower() if isinstance(f, J.Jet) and f.h is not None else f
                    wo = f1 * J.stack([a1 * psiJ] * 3, 1)
                    GtV = J.einsum("pji,pj->pi", G1, VJ)
                    pot = GtV * J.stack([a1] * 3, 1) * (1.0 / lam)
                    if order >= 2:
                        ga = a.grad()
                    else:
                        ga = J.Jet(a.g, np.zeros(a.g.shape + (3,)))
                    wc = J.cross(ga, GtV) * (1.0 / lam)
                    pc.w_o = wo.v
                    pc.w_c = wc.v
                    pc.A = pot.v
                    if order >= 2:
                        pc.div = J.divergence(wo) + J.divergence(wc)
                        pc.curl_A = J.curl(pot)
                        pc.grad_w = wo.g + wc.g
                    out.append(pc)
    return out


def _classes(cls: np.ndarray):
    """(class, point positions) groups of a class-index array."""
    order = np.argsort(cls, kind="stable")
    bounds = np.searchsorted(cls[order], np.arange(28))
    return [(j, order[bounds[j]:bounds[j + 1]]) for j in range(27) if bounds[j + 1] > bounds[j]]


def build_w(ctx: PerturbationContext, grid: Grid, times, need_corrector: bool = True) -> dict:
    """w_o, w_c on the collocation grid for every listed time.

    Points inside tubes get the full treatment (jets for the corrector);
    the grid check for resolvability is a warning in demo mode and an
    error otherwise.
    """
    pts = grid.points()
    P = len(pts)
    n = grid.n
    nt = len(times)
    wo = np.zeros((nt, 3, n, n, n))
    wc = np.zeros((nt, 3, n, n, n))
    per_index = []
    need_K = 160.0 / ctx.r0
    if ctx.lam * need_K > n / 3:
        msg = (f"grid {n}^3 cannot resolve tubes: lam*K = {ctx.lam * need_K:.3g} "
               f"modes against {n // 3} resolvable")
        if not ctx.demo_mode:
            raise ResolutionError(msg)
        warnings.warn(msg, UnderResolvedWarning, stacklevel=2)
    for it, t in enumerate(times):
        pcs = pieces_at(ctx, t, pts, 0, grid=True)
        inside = np.unique(np.concatenate([p.idx for p in pcs])) if pcs else np.zeros(0, int)
        flat_o = np.zeros((P, 3))
        flat_c = np.zeros((P, 3))
        for p in pcs:
            flat_o[p.idx] += p.w_o
        if need_corrector and len(inside):
            sub = pieces_at(ctx, t, pts[inside], 1)
            for p in sub:
                flat_c[inside[p.idx]] += p.w_c
        per_index.append(len(pcs))
        wo[it] = flat_o.T.reshape(3, n, n, n)
        wc[it] = flat_c.T.reshape(3, n, n, n)
    return {"w_o": wo, "w_c": wc, "pieces_per_time": per_index, "inside_points": int(sum(per_index))}


# --- probes on the tubes ------------------------------------------------------------

def _invert_xi(flow: SlabFlow, t: float, target: np.ndarray, iters: int = 30) -> np.ndarray:
    """x with xi(t, x) = target (Newton, starting from the target)."""
    x = target.copy()
    if flow.zero:
        return x
    for _ in range(iters):
        xi, G = flow.xi_jets(t, x, 0)
        r = xi - target
        x = x - np.linalg.solve(G, r[..., None])[..., 0]
        if np.abs(r).max() < 1e-15:
            break
    return x


def tube_probes(ctx: PerturbationContext, t: float, m: int, cells, radii=(0.0, 0.35, 0.7),
                per_dir: int = 1, seed: int = 0) -> np.ndarray:
    """Physical points inside the tubes of slab m near the given cell centres.

    For every direction of the cell's class a point of the tube axis nearest
    the cell centre is moved transversally by radii * r0 (random angle).
    """
    A = _arrays(ctx)
    rng = np.random.default_rng(seed)
    lam = float(ctx.lam)
    mu = 1.0 / ctx.lp.mu_inv
    flow = ctx.flows[m]
    out = []
    for n in cells:
        n = np.asarray(n, int)
        nmod = n % ctx.lp.mu_inv
        z = _shift_table(ctx, m)[tuple(nmod)]
        j = class_index(n)
        centre = 2 * math.pi * mu * n
        for kind, pb, K in (("R", A["pR"], 6), ("phi", A["pP"], 4)):
            for k in range(K):
                prof = ctx.profiles[(j, kind, k)]
                e1, e2, fh = _frame(prof)
                for _ in range(per_dir):
                    Y0 = lam * centre - z - pb[j, k]
                    Y0 = Y0 + rng.uniform(-0.3, 0.3) * np.asarray(prof.f, float)
                    u = np.array([Y0 @ e1, Y0 @ e2])
                    ur = reduce_transverse(u[None], prof.fp)[0]
                    Yaxis = Y0 - ur[0] * e1 - ur[1] * e2
                    for r in radii:
                        ang = rng.uniform(0, 2 * math.pi)
                        Y = Yaxis + r * prof.r0 * (math.cos(ang) * e1 + math.sin(ang) * e2)
                        out.append((Y + z + pb[j, k]) / lam)
    target = np.array(out)
    return _invert_xi(flow, t, target)


def _frame(prof: MikadoProfile):
    return transverse_frame(prof.fp)


def probe_checks(ctx: PerturbationContext, t: float, pts: np.ndarray) -> dict:
    """Divergence, curl-potential and support checks at on-tube points (jets)."""
    pcs = pieces_at(ctx, t, pts, 2)
    P = len(pts)
    w = np.zeros((P, 3))
    curlA = np.zeros((P, 3))
    div = np.zeros(P)
    gw = np.zeros((P, 3, 3))
    owners = np.zeros(P, int)
    for p in pcs:
        w[p.idx] += p.w_o + p.w_c
        curlA[p.idx] += p.curl_A
        div[p.idx] += p.div
        gw[p.idx] += p.grad_w
        owners[p.idx] += 1
    w1 = float(np.abs(gw).max())
    wn = np.linalg.norm(w, axis=1)
    w0 = float(wn.max(initial=0.0))
    mis = float(np.linalg.norm(w - curlA, axis=1).max(initial=0.0))
    # products |w_I||w_J| for I != J at each probe
    prod = 0.0
    by_point = {}
    for p in pcs:
        nrm = np.linalg.norm(p.w_o, axis=1)
        for i, v in zip(p.idx, nrm):
            by_point.setdefault(int(i), []).append(v)
    for vals in by_point.values():
        if len(vals) > 1:
            vals = sorted(vals, reverse=True)
            prod = max(prod, vals[0] * vals[1])
    return {"points": P, "covered": int((owners > 0).sum()), "max_owners": int(owners.max(initial=0)),
            "max_div": float(np.abs(div).max(initial=0.0)), "w_C1": w1,
            "div_ratio": float(np.abs(div).max(initial=0.0) / w1) if w1 > 0 else 0.0,
            "curl_mismatch": mis, "rel_curl_mismatch": mis / w0 if w0 > 0 else 0.0,
            "max_pair_product": prod, "w_C0": w0}


# --- coefficient tables ---------------------------------------------------------------

@dataclass
class CoeffTables:
    """Fast-variable Fourier representation of w_o and its quadratic/cubic parts.

    For slab m and wavevector k the coefficients are sums over the indices
    of that slab of the weight factors times the profile coefficients times
    exp(-i k.z_I); here they are kept per index and evaluated on demand.
    """
    ctx: PerturbationContext
    K_max: int
    coeffs: dict              # (class, kind, k) -> MikadoCoeffs

    def evaluate(self, t: float, pts: np.ndarray) -> dict:
        """sum over m, k of b, c, d, e times exp(i lam k.xi_m) at the points."""
        ctx = self.ctx
        A = _arrays(ctx)
        lam = float(ctx.lam)
        P = len(pts)
        out = {"w_o": np.zeros((P, 3)), "oo": np.zeros((P, 3, 3)), "cub": np.zeros((P, 3)),
               "half_sq": np.zeros(P), "vanishing_ok": True}
        for b in blocks_at(ctx, t, pts, 0):
            nmod = b.n % ctx.lp.mu_inv
            zc = _shift_table(ctx, b.m)[nmod[:, 0], nmod[:, 1], nmod[:, 2]]
            for kind, aa, ff, pb, K in (("R", b.aR, b.ftR, A["pR"], 6), ("phi", b.aP, b.ftP, A["pP"], 4)):
                for k in range(K):
                    for j, sel in _classes(b.cls):
                        mc = self.coeffs[(j, kind, k)]
                        f = np.asarray(ctx.profiles[(j, kind, k)].fp)
                        if np.any(mc.k @ f != 0):
                            out["vanishing_ok"] = False
                        zI = zc[sel] + pb[j, k][None]
                        ph = np.exp(1j * (lam * b.xi[sel] - zI) @ mc.k.T)     # (p, Nk)
                        psi = (ph @ mc.b).real
                        psi2 = (ph @ mc.c).real
                        psi3 = (ph @ mc.d).real
                        a = aa[sel, k]
                        ft = ff[sel, k]
                        ix = b.idx[sel]
                        out["w_o"][ix] += (a * psi)[:, None] * ft
                        out["oo"][ix] += (a * a * psi2)[:, None, None] * ft[:, :, None] * ft[:, None, :]
                        n2 = (ft ** 2).sum(-1)
                        out["cub"][ix] += 0.5 * (a ** 3 * psi3 * n2)[:, None] * ft
                        out["half_sq"][ix] += 0.5 * a * a * psi2 * n2
        return out


def coeff_tables(ctx: PerturbationContext, K_max: int, tail_tol: float = 1e-8) -> CoeffTables:
    _arrays(ctx)
    co = {key: fourier_coeffs(p, K_max, tail_tol=tail_tol) for key, p in ctx.profiles.items()}
    return CoeffTables(ctx, K_max, co)


# --- assembling a context ----------------------------------------------------------------

def frozen_offsets(ctx_flows: dict, lp: LevelParams, samples: int = 3):
    """frozen_offset(m, n) for assign_all_shifts from the slab flows at the handover times."""
    mu = 1.0 / lp.mu_inv
    lam = lp.lambda_q1

    def fo(m, n):
        if (m - 1) not in ctx_flows:
            return tuple(n), np.zeros(3), 0.0
        prev = ctx_flows[m - 1]
        t_m = m * lp.tau_q
        try:
            prev.index(t_m)
        except KeyError:
            return tuple(n), np.zeros(3), 0.0
        if prev.zero:
            return tuple(n), np.zeros(3), 0.0
        xc = 2 * math.pi * mu * np.asarray(n, float)
        h = 9 * math.pi * mu / 8
        g = np.linspace(-h, h, samples)
        pts = xc[None] + np.array(np.meshgrid(g, g, g, indexing="ij")).reshape(3, -1).T
        xi_c, _ = prev.xi_jets(t_m, xc[None], 0)
        xi_s, _ = prev.xi_jets(t_m, pts, 0)
        base = xi_c[0] - xc
        dev = float(lam * np.abs((xi_s - pts) - base[None]).max())
        nbar = tuple(int(x) for x in np.round(xi_c[0] / (2 * math.pi * mu)).astype(int) % lp.mu_inv)
        return nbar, lam * base, dev
    return fo


def make_context(lp: LevelParams, table: FamilyTable, flows: dict, R_l: TimeSeries, phi_l: TimeSeries,
                 demo_mode: bool = True, N0_phi: float = 3.0, profiles: dict = None,
                 shifts: ShiftAssignment = None) -> PerturbationContext:
    """Profiles, shift assignment (with frozen-flow offsets) and the context."""
    m_range = sorted(flows)
    if shifts is None:
        classes = [table.lines(j) for j in range(27)]
        zero = all(f.zero for f in flows.values())
        fo = None if zero else frozen_offsets(flows, lp)
        shifts = assign_all_shifts(m_range, classes, lambda n: class_index(n), table.d0, table.eta,
                                   lp.mu_inv, lp.lambda_q1, frozen_offset=fo)
    ctx = PerturbationContext(lp=lp, table=table, shifts=shifts, flows=flows, R_l=R_l, phi_l=phi_l,
                              N0_phi=N0_phi, demo_mode=demo_mode, profiles=profiles or {})
    _arrays(ctx)
    return ctx


# --- L2 mass of the stress tubes ------------------------------------------------------

def _axis_segments(prof: MikadoProfile, lo: np.ndarray, hi: np.ndarray):
    """Tube axes of one profile (in Y) that cross the box [lo, hi]: (base, s0, s1) rows."""
    from .shifts import lattice_basis
    e1, e2, fh = _frame(prof)
    B = lattice_basis(prof.fp)
    corners = np.array([[lo[0] if c & 4 else hi[0], lo[1] if c & 2 else hi[1],
                         lo[2] if c & 1 else hi[2]] for c in range(8)])
    uc = np.linalg.solve(B, np.stack([corners @ e1, corners @ e2]))
    rng = [np.arange(math.floor(uc[i].min()) - 1, math.ceil(uc[i].max()) + 2) for i in range(2)]
    cc = np.stack(np.meshgrid(*rng, indexing="ij"), -1).reshape(-1, 2)
    u = cc @ B.T
    base = u[:, :1] * e1[None] + u[:, 1:] * e2[None]
    s0 = np.full(len(base), -np.inf)
    s1 = np.full(len(base), np.inf)
    for i in range(3):
        if abs(fh[i]) < 1e-14:
            ok = (base[:, i] >= lo[i]) & (base[:, i] <= hi[i])
            s0 = np.where(ok, s0, np.inf)
            continue
        a, b = (lo[i] - base[:, i]) / fh[i], (hi[i] - base[:, i]) / fh[i]
        s0 = np.maximum(s0, np.minimum(a, b))
        s1 = np.minimum(s1, np.maximum(a, b))
    keep = s1 > s0
    return base[keep], s0[keep], s1[keep], fh


def tube_l2(ctx: PerturbationContext, t: float, m: int, nodes: int = 24, chunk: int = 200000) -> dict:
    """sum_I int |w_I|^2 dx over the stress pieces of slab m, by quadrature along tube axes.

    The transverse integral of psi^2 is exact (moment times covolume over
    lambda^2 in xi), the axial one is Gauss-Legendre on each axis segment
    clipped to the cell box; the flow Jacobian enters as 1/det G.
    """
    A = _arrays(ctx)
    lam = float(ctx.lam)
    mu_inv = ctx.lp.mu_inv
    flow = ctx.flows[m]
    gx, gw = np.polynomial.legendre.leggauss(nodes)
    ztab = _shift_table(ctx, m)
    pts, wts, nk = [], [], []
    half = 9 * math.pi / 8
    lines = 0
    for n in itertools.product(range(mu_inv), repeat=3):
        n = np.array(n)
        j = class_index(n)
        z = ztab[tuple(n)]
        for k in range(6):
            prof = ctx.profiles[(j, "R", k)]
            shift = z + A["pR"][j, k]
            lo = lam * (2 * math.pi * n - half) / mu_inv - shift
            hi = lam * (2 * math.pi * n + half) / mu_inv - shift
            base, s0, s1, fh = _axis_segments(prof, lo, hi)
            if len(base) == 0:
                continue
            lines += len(base)
            mid, rad = (s0 + s1) / 2, (s1 - s0) / 2
            s = mid[:, None] + rad[:, None] * gx[None]
            Y = base[:, None, :] + s[..., None] * fh
            mass = prof.moments[1] * prof.covolume / lam ** 3
            pts.append(((Y + shift) / lam).reshape(-1, 3))
            wts.append((rad[:, None] * gw[None] * mass).ravel())
            nk.append(np.broadcast_to(np.r_[n, k], (Y.shape[0] * nodes, 4)))
    if not pts:
        return {"integral": 0.0, "lines": 0, "points": 0}
    xi = np.concatenate(pts)
    wq = np.concatenate(wts)
    nk = np.concatenate(nk)
    total = 0.0
    for c0 in range(0, len(xi), chunk):
        sl = slice(c0, c0 + chunk)
        x = _invert_xi(flow, t, xi[sl])
        x = (x + math.pi) % (2 * math.pi) - math.pi
        dens = np.zeros(len(x))
        for b in blocks_at(ctx, t, x, 0, check=False):
            if b.m != m:
                continue
            want = nk[sl][b.idx]
            hit = np.all(b.n % mu_inv == want[:, :3], axis=1)
            if not hit.any():
                continue
            r = np.nonzero(hit)[0]
            k = want[r, 3]
            a = b.aR[r, k]
            f = b.ftR[r, k]
            jac = np.abs(np.linalg.det(b.G[r])) if not flow.zero else 1.0
            dens[b.idx[r]] = a * a * (f * f).sum(-1) / jac
        total += float((dens * wq[sl]).sum())
    return {"integral": total, "lines": lines, "points": int(len(xi))}


def mean_field_l2(ctx: PerturbationContext, t: float, m: int, n: int = 64) -> float:
    """int sum_k a_k^2 |f~_k|^2 M2 dx for slab m: the high-frequency mean of sum |w_I|^2."""
    A = _arrays(ctx)
    g = Grid(n)
    pts = g.points()
    tot = 0.0
    for b in blocks_at(ctx, t, pts, 0, check=False):
        if b.m != m:
            continue
        tot += float((b.aR ** 2 * (b.ftR ** 2).sum(-1) * A["M2R"][b.cls]).sum())
    return tot * (2 * math.pi / n) ** 3
