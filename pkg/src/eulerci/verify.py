"""Residual checks for Euler-Reynolds tuples and scaling diagnostics.

Every report row carries a tag, the measured value, the comparison scale
and whether a miss is an error ("hard") or a warning ("soft").
"""
from __future__ import annotations

import math

import numpy as np

from .errors import dot3
from .fields import (Grid, c_norm_arr, div_sym, div_vec, fd_time, grad_arr, ifft, kmag,
                     lp_leq_arr, lp_symbol, outer_sym, product, sym_apply, tail_fraction,
                     transport_term)

EPS = np.finfo(float).eps


def row(tag: str, value: float, scale: float, kind: str = "hard", ok: bool = None, **meta) -> dict:
    ok = bool(value <= scale) if ok is None else bool(ok)
    return dict(tag=tag, value=float(value), scale=float(scale), kind=kind, ok=ok, **meta)


def _third_diff(a: np.ndarray, dt: float) -> float:
    """Size of the third time derivative; wider strides keep rounding noise out."""
    best = math.inf
    for k in (1, 2, 4, 8, 16):
        if a.shape[0] < 3 * k + 1:
            break
        d = a[3 * k:] - 3 * a[2 * k:-k] + 3 * a[k:-2 * k] - a[:-3 * k]
        best = min(best, float(np.abs(d).max()) / (k * dt) ** 3)
    return 0.0 if best == math.inf else best


# --- the three lines of the relaxed system ------------------------------------

def residual_suite(tup, C_round: float = 8.0) -> dict:
    """Momentum, incompressibility and relaxed-energy residuals with their tolerances.

    tol = C1 dt^2 + C2 sqrt(tail) + C_round eps F/dt, where C1 bounds the
    third time derivative (from third differences), C2 is the size of the
    differentiated terms, tail the top-shell spectral energy fraction and F
    the size of the time-differentiated field (storage rounding floor).
    """
    v, p, R = tup.v.data, tup.p.data, tup.R.data
    kap, phi = tup.kappa.data, tup.phi.data
    dE = np.asarray(tup.dE, float)
    dt = tup.v.dt
    nt = v.shape[0]
    e = np.stack([0.5 * dot3(v[i], v[i]) for i in range(nt)])
    r_mom = r_div = r_en = 0.0
    s_mom = s_en = 0.0
    tail = 0.0
    for i in range(nt):
        dv = fd_time(v, dt, i)
        conv = div_sym(outer_sym(v[i], v[i]))
        gp = grad_arr(p[i])[0]
        dR = div_sym(R[i])
        r_mom = max(r_mom, float(np.abs(dv + conv + gp - dR).max()))
        s_mom = max(s_mom, *(float(np.abs(x).max()) for x in (dv, conv, gp, dR)))
        r_div = max(r_div, float(np.abs(div_vec(v[i])).max()))
        lhs = fd_time(e, dt, i) + div_vec(product(np.broadcast_to(e[i] + p[i], v[i].shape), v[i]))
        Dk = fd_time(kap, dt, i) + transport_term(kap[i], v[i])
        rhs = Dk + 0.5 * dE[i] + div_vec(sym_apply(R[i], v[i])) + div_vec(phi[i])
        r_en = max(r_en, float(np.abs(lhs - rhs).max()))
        s_en = max(s_en, float(np.abs(lhs).max()), float(np.abs(rhs).max()))
        if i % max(1, nt // 8) == 0:
            tail = max(tail, tail_fraction(v[i]), tail_fraction(R[i]), tail_fraction(p[i]))
    C1_mom = _third_diff(v, dt)
    C1_en = max(_third_diff(e, dt), _third_diff(kap, dt))
    F_mom = float(np.abs(v).max())
    F_en = max(float(np.abs(e).max()), float(np.abs(kap).max()))
    floor_mom = C_round * EPS * F_mom / dt
    floor_en = C_round * EPS * F_en / dt
    tol_mom = C1_mom * dt ** 2 + s_mom * math.sqrt(tail) + floor_mom
    tol_en = C1_en * dt ** 2 + s_en * math.sqrt(tail) + floor_en
    tol_div = s_mom * math.sqrt(tail) + 1e3 * EPS * max(float(c_norm_arr(v[nt // 2], 1)), 1e-300)
    rows = [
        row("momentum", r_mom, tol_mom, C1=C1_mom, C2=s_mom, rounding_floor=floor_mom),
        row("incompressibility", r_div, tol_div),
        row("relaxed_energy", r_en, tol_en, C1=C1_en, C2=s_en, rounding_floor=floor_en),
    ]
    return {"rows": rows, "pass": all(r["ok"] for r in rows), "dt": dt, "n": int(v.shape[-1]),
            "samples": nt, "tail": tail, "momentum": r_mom, "energy": r_en, "divergence": r_div}


# --- inductive estimates ----------------------------------------------------------

def _adv_norm(F: np.ndarray, v: np.ndarray, dt: float, N: int, stride: int) -> float:
    best = 0.0
    for i in range(0, F.shape[0], stride):
        D = fd_time(F, dt, i) + transport_term(F[i], v[i])
        best = max(best, c_norm_arr(D, N))
    return best


def _norm(F: np.ndarray, N: int, stride: int) -> float:
    return max(c_norm_arr(F[i], N) for i in range(0, F.shape[0], stride))


def inductive_report(tup, lp, level_offset: int = 0, max_samples: int = 33) -> dict:
    """Inductive bounds at the tuple's level (lp must be that level's parameters).

    Advective rows with N = 0 are empty statements and are skipped.
    """
    lam, dq, dq1 = lp.lambda_q, lp.delta_q, lp.delta_q1
    g3 = 3 * lp.gamma
    v, p, R, phi = tup.v.data, tup.p.data, tup.R.data, tup.phi.data
    dt = tup.v.dt
    stride = max(1, v.shape[0] // max_samples)
    rows = [row("v C0", _norm(v, 0, stride), 1 - math.sqrt(dq))]
    for N in (1, 2):
        rows.append(row(f"v C{N}", _norm(v, N, stride), lp.M * lam ** N * math.sqrt(dq)))
        rows.append(row(f"p C{N}", _norm(p, N, stride), lam ** N * dq))
        rows.append(row(f"Dt p C{N - 1}", _adv_norm(p, v, dt, N - 1, stride), dq ** 1.5 * lam ** N))
    for N in (0, 1, 2):
        rows.append(row(f"R C{N}", _norm(R, N, stride), lam ** (N - g3) * dq1))
        rows.append(row(f"phi C{N}", _norm(phi, N, stride), lam ** (N - g3) * dq1 ** 1.5))
        if N >= 1:
            rows.append(row(f"Dt R C{N - 1}", _adv_norm(R, v, dt, N - 1, stride),
                            lam ** (N - g3) * math.sqrt(dq) * dq1))
            rows.append(row(f"Dt phi C{N - 1}", _adv_norm(phi, v, dt, N - 1, stride),
                            lam ** (N - g3) * math.sqrt(dq) * dq1 ** 1.5))
    tr = 0.5 * (R[:, 0] + R[:, 1] + R[:, 2])
    rows.append(row("kappa = tr R / 2", float(np.abs(tup.kappa.data[:, 0] - tr).max()), 1e-12 * (1 + float(np.abs(tr).max()))))
    return {"level": lp.q, "rows": rows, "pass": all(r["ok"] for r in rows)}


# --- microlocal lemma -------------------------------------------------------------

def _full_kvec(n: int):
    k = np.fft.fftfreq(n, 1.0 / n)
    return np.meshgrid(k, k, k, indexing="ij")


def microlocal_check(a_fn=None, xi_fn=None, lams=(6, 12, 24, 48), profile=None, n: int = 128) -> dict:
    """Error of T(a e^{i lam xi}) = a m(lam grad xi) e^{i lam xi} across frequencies.

    T has symbol m_lam(k) = profile(|k| / lam), a multiplier living at
    frequency lam. The error is fitted as C lam^{-order}.
    """
    g = Grid(n)
    X = g.mesh()
    if a_fn is None:
        a_fn = lambda X: 1.0 + 0.3 * np.cos(X[0] + X[1]) + 0.2 * np.sin(2 * X[2] - X[0])
    if xi_fn is None:
        def xi_fn(X):
            val = X[0] + 0.15 * np.sin(X[1]) + 0.1 * np.cos(X[0] + X[2])
            grad = np.stack([1 - 0.1 * np.sin(X[0] + X[2]), 0.15 * np.cos(X[1]),
                             -0.1 * np.sin(X[0] + X[2])])
            return val, grad
    if profile is None:
        profile = lambda s: lp_symbol(s / 0.8)
    a = a_fn(X)
    xi, gxi = xi_fn(X)
    K = _full_kvec(n)
    kabs = np.sqrt(K[0] ** 2 + K[1] ** 2 + K[2] ** 2)
    errs = []
    for lam in lams:
        u = a * np.exp(1j * lam * xi)
        Tu = np.fft.ifftn(np.fft.fftn(u) * profile(kabs / lam))
        lead = a * profile(np.sqrt((gxi ** 2).sum(0))) * np.exp(1j * lam * xi)
        errs.append(float(np.abs(Tu - lead).max()))
    ll = np.log(np.asarray(lams, float))
    le = np.log(np.maximum(errs, 1e-300))
    order = float(-np.polyfit(ll, le, 1)[0])
    return {"lams": list(lams), "errors": errs, "order": order, "pass": order >= 0.9}


def microlocal_linear_phase(n: int = 64, lam: int = 8) -> float:
    """Error for a linear phase, where the lemma has no correction at all."""
    g = Grid(n)
    X = g.mesh()
    a = 1.0 + 0.3 * np.cos(X[0] + X[1])
    K = _full_kvec(n)
    kabs = np.sqrt(K[0] ** 2 + K[1] ** 2 + K[2] ** 2)
    k0 = np.array([1.0, 1.0, 0.0])
    xi = (k0[:, None, None, None] * X).sum(0)
    prof = lambda s: lp_symbol(s / 0.8)
    u = a * np.exp(1j * lam * xi)
    Tu = np.fft.ifftn(np.fft.fftn(u) * prof(kabs / lam))
    lead = a * prof(np.linalg.norm(k0)) * np.exp(1j * lam * xi)
    return float(np.abs(Tu - lead).max())


# --- phase decay ----------------------------------------------------------------

def phase_decay_check(a_fn=None, eps: float = 0.1, ladder=(2, 4, 8, 16), n: int = 64,
                      direction=(1, 0, 0)) -> dict:
    """|int a e^{ik.xi}| against (|a|_N + |a|_0 |grad xi|_N) / |k|^N for N = 1, 2."""
    g = Grid(n)
    X = g.mesh()
    if a_fn is None:
        a_fn = lambda X: np.exp(np.cos(X[0]) + 0.5 * np.sin(X[1] + X[2]))
    a = a_fn(X)
    pert = eps * np.stack([np.sin(X[1]), np.sin(X[2] + X[0]), np.cos(X[0])])
    xi = X + pert
    vol = (2 * math.pi) ** 3
    dvec = np.asarray(direction, float)
    out = {"k": [], "integral": [], "ratio_N1": [], "ratio_N2": []}
    an = [c_norm_arr(a[None], N) for N in (0, 1, 2)]
    gx = [max(c_norm_arr(pert[i:i + 1], N + 1) for i in range(3)) + (1.0 if N == 0 else 0.0) for N in (1, 2)]
    for s in ladder:
        k = s * dvec
        I = abs((a * np.exp(1j * np.tensordot(k, xi, axes=(0, 0)))).mean()) * vol
        kn = float(np.linalg.norm(k))
        out["k"].append(kn)
        out["integral"].append(float(I))
        out["ratio_N1"].append(float(I * kn / (an[1] + an[0] * gx[0])))
        out["ratio_N2"].append(float(I * kn ** 2 / (an[2] + an[0] * gx[1])))
    first = max(out["ratio_N1"][0], out["ratio_N2"][0], 1e-300)
    out["pass"] = bool(max(out["ratio_N1"] + out["ratio_N2"]) <= 4 * max(first, 1.0))
    return out


# --- commutators and scaling ------------------------------------------------------------

def rough_field(n: int, s: float = 5.5, comps: int = 1, seed: int = 0, kmax: int = None) -> np.ndarray:
    """Random real field with |f_k| ~ |k|^{-s} (so C^2 but not band-limited)."""
    rng = np.random.default_rng(seed)
    km = kmag(n)
    amp = np.where(km > 0, np.maximum(km, 1.0) ** -s, 0.0)
    if kmax is not None:
        amp = np.where(km <= kmax, amp, 0.0)
    spec = amp * (rng.standard_normal((comps,) + km.shape) + 1j * rng.standard_normal((comps,) + km.shape))
    f = ifft(spec, n)
    return f / np.abs(f).max()


def _ladder_ok(r: list, factor: float = 4.0) -> bool:
    return bool(max(r) <= factor * r[0])


def commutator_ratios(n: int = 64, ells=(1 / 2, 1 / 4, 1 / 8, 1 / 16), seed: int = 0) -> dict:
    f = rough_field(n, seed=seed)
    g = rough_field(n, seed=seed + 1)
    v = rough_field(n, comps=3, seed=seed + 2)
    F = rough_field(n, seed=seed + 3)
    f1, g1 = c_norm_arr(f, 1), c_norm_arr(g, 1)
    gv = float(np.abs(grad_arr(v)).max())
    gF = float(np.abs(grad_arr(F)).max())
    v1 = c_norm_arr(v, 1)
    com, com1, qv = [], [], []
    for ell in ells:
        S = 1.0 / ell
        c = lp_leq_arr(f, S) * lp_leq_arr(g, S) - lp_leq_arr(product(f, g), S)
        com.append(float(np.abs(c).max()) / (ell ** 2 * f1 * g1))
        vl = lp_leq_arr(v, S)
        c1 = transport_term(lp_leq_arr(F, S), vl) - lp_leq_arr(transport_term(F, vl), S)
        com1.append(float(np.abs(c1).max()) / (ell * gv * gF))
        Q = div_sym(outer_sym(vl, vl) - lp_leq_arr(outer_sym(v, v), S))
        qv.append(float(np.abs(Q).max()) / (ell * v1 ** 2))
    return {"ells": list(ells),
            "commutator.product": {"ratios": com, "pass": _ladder_ok(com)},
            "commutator.transport": {"ratios": com1, "pass": _ladder_ok(com1)},
            "commutator.quadratic": {"ratios": qv, "pass": _ladder_ok(qv)}}


def regularization_ratio(n: int = 64, ells=(1 / 2, 1 / 4, 1 / 8), seed: int = 5) -> dict:
    """|v - v_l|_0 / (l^2 |v|_2) across l."""
    v = rough_field(n, comps=3, seed=seed)
    v2 = c_norm_arr(v, 2)
    r = [float(np.abs(v - lp_leq_arr(v, 1 / ell)).max()) / (ell ** 2 * v2) for ell in ells]
    return {"ells": list(ells), "ratios": r, "pass": _ladder_ok(r)}


def flow_ratio(n: int = 16, tau_grad: float = 0.1) -> dict:
    """max |Id - grad xi| over a slab for a drift with tau |grad v| = tau_grad."""
    from .fields import TimeSeries
    from .transport import backward_flow_slab
    X = Grid(n).mesh()
    base = np.stack([np.sin(X[1]) * np.cos(X[2]), np.sin(X[2]) * np.cos(X[0]), np.sin(X[0]) * np.cos(X[1])])
    gnorm = float(np.abs(grad_arr(base)).max())
    tau = tau_grad / gnorm
    dt = tau / 32
    nt = 3 * 32 + 1
    data = np.broadcast_to(base, (nt,) + base.shape).copy()
    v = TimeSeries(-tau, dt, data)
    fl = backward_flow_slab(v, 0, tau)
    b = fl.flow_bound()["max_id_minus_grad"]
    return {"max_id_minus_grad": b, "tau_grad_v": tau_grad, "pass": b <= 0.2}


def scaling_suite(n: int = 64) -> dict:
    rep = {"microlocal": microlocal_check(), "commutators": commutator_ratios(n),
           "regularization": regularization_ratio(n), "flow": flow_ratio(),
           "phase_decay": phase_decay_check()}
    c = rep["commutators"]
    rep["pass"] = bool(rep["microlocal"]["pass"] and c["commutator.product"]["pass"] and c["commutator.transport"]["pass"]
                       and c["commutator.quadratic"]["pass"] and rep["flow"]["pass"])
    return rep
