"""Seeds, one convex-integration step, and the bifurcated pair of steps.

A tuple lives on a uniform clock. A step at level q reads the tuple on
[-tau_q - 2dt, T + tau_q + 2dt] and returns the next tuple on
[-tau_q, T + tau_q]; the two extra samples per side feed the
fourth-order time differences of the assembly.
"""
from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import errors as ER
from .fields import (Grid, TimeSeries, grad_arr, lp_leq_arr, sym_trace)
from .geometry import default_table
from .params import ConfigError, LevelParams, SchedulerConfig, check_admissibility, level_params, shear_window_ok
from .partition import theta
from .perturbation import (build_profiles, build_w, cancellation_sweep, make_context, mean_field_l2,
                           probe_checks, tube_l2, tube_probes)
from .transport import WindowError, backward_flow_slab, moll_along_flow
from .verify import inductive_report, residual_suite

log = logging.getLogger(__name__)


class AdmissibilityError(RuntimeError):
    def __init__(self, report: dict):
        super().__init__("parameter admissibility failed")
        self.report = report


class CertificationError(RuntimeError):
    def __init__(self, report: dict, tup=None):
        super().__init__("residual certification failed")
        self.report = report
        self.tup = tup


class BifurcationUnavailable(ValueError):
    pass


@dataclass
class EulerReynoldsTuple:
    v: TimeSeries
    p: TimeSeries
    R: TimeSeries
    kappa: TimeSeries
    phi: TimeSeries
    E: np.ndarray
    dE: np.ndarray
    q: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def dt(self) -> float:
        return self.v.dt

    @property
    def times(self) -> np.ndarray:
        return self.v.times

    @property
    def n(self) -> int:
        return self.v.data.shape[-1]

    @property
    def window(self) -> tuple:
        t = self.times
        return float(t[0]), float(t[-1])

    def fields(self) -> dict:
        return {"v": self.v, "p": self.p, "R": self.R, "kappa": self.kappa, "phi": self.phi}

    def slice(self, lo: float, hi: float) -> "EulerReynoldsTuple":
        i, j = self.v.index_of(lo), self.v.index_of(hi) + 1
        cut = {k: TimeSeries(ts.times[i], ts.dt, ts.data[i:j], ts.rank) for k, ts in self.fields().items()}
        return EulerReynoldsTuple(E=self.E[i:j], dE=self.dE[i:j], q=self.q, meta=dict(self.meta), **cut)


# --- seeds ----------------------------------------------------------------------

def _seed_clock(cfg: SchedulerConfig, divisor: int, pad: int):
    lp = level_params(cfg, 0)
    dt = lp.tau_q / divisor
    k = cfg.T / dt
    if abs(k - round(k)) > 1e-6:
        raise ConfigError(f"T={cfg.T:.6g} is not a multiple of dt={dt:.6g}; set T to a multiple of tau_0")
    nt = int(round(k)) + 2 * pad * divisor + 1
    return lp, dt, -pad * lp.tau_q, nt


def _deficit(cfg: SchedulerConfig, t: np.ndarray):
    """E = -delta_1 (1 - exp(-delta_0^{1/2} t)) and its derivative."""
    lp = level_params(cfg, 0)
    s = math.sqrt(lp.delta_q)
    E = lp.delta_q1 * np.expm1(-s * t)
    dE = -lp.delta_q1 * s * np.exp(-s * t)
    return E, dE


def seed_zero(cfg: SchedulerConfig, n: int = 16, divisor: int = 64, pad: int = 3) -> EulerReynoldsTuple:
    """The trivial tuple; its energy profile vanishes identically."""
    lp, dt, t0, nt = _seed_clock(cfg, divisor, pad)
    E = np.zeros(nt)
    dE = np.zeros(nt)

    def z(c):
        return TimeSeries(t0, dt, np.zeros((nt, c, n, n, n)))
    return EulerReynoldsTuple(z(3), z(1), z(6), z(1), z(3), E, dE, 0, {"seed": "zero", "divisor": divisor})


def seed_shear(cfg: SchedulerConfig, lam_bar: int, n: int = 16, divisor: int = 64, pad: int = 3,
               C: float = 1.0) -> EulerReynoldsTuple:
    """Shear flow a(t)(cos lam x3, sin lam x3, 0) with its exact stress; p, kappa, phi vanish."""
    ok, msg = shear_window_ok(cfg, lam_bar, C)
    if not ok:
        raise ConfigError(f"shear seed unavailable: {msg}")
    if lam_bar > n // 3:
        raise ConfigError(f"shear frequency {lam_bar} not resolved on {n}^3")
    lp, dt, t0, nt = _seed_clock(cfg, divisor, pad)
    t = t0 + dt * np.arange(nt)
    E, dE = _deficit(cfg, t)
    s = math.sqrt(lp.delta_q)
    a = np.sqrt(1 - 2 * s + E)
    da = dE / (2 * a)
    x3 = Grid(n).mesh()[2]
    c, si = np.cos(lam_bar * x3), np.sin(lam_bar * x3)
    v = np.zeros((nt, 3, n, n, n))
    v[:, 0] = a[:, None, None, None] * c
    v[:, 1] = a[:, None, None, None] * si
    R = np.zeros((nt, 6, n, n, n))
    R[:, 4] = (da / lam_bar)[:, None, None, None] * si
    R[:, 5] = -(da / lam_bar)[:, None, None, None] * c

    def z(cn):
        return TimeSeries(t0, dt, np.zeros((nt, cn, n, n, n)))
    return EulerReynoldsTuple(TimeSeries(t0, dt, v), z(1), TimeSeries(t0, dt, R), z(1), z(3), E, dE, 0,
                              {"seed": "shear", "lambda_bar": lam_bar, "divisor": divisor})


# --- regularization -----------------------------------------------------------------

@dataclass
class Regularized:
    v_l: TimeSeries           # whole input clock
    p_l: TimeSeries
    R_l: TimeSeries           # working clock
    phi_l: TimeSeries
    kappa_l: TimeSeries
    reports: dict


def _lp_series(ts: TimeSeries, S: float) -> TimeSeries:
    if not np.any(ts.data):
        return TimeSeries(ts.t0, ts.dt, np.zeros_like(ts.data), ts.rank)
    return TimeSeries(ts.t0, ts.dt, np.stack([lp_leq_arr(x, S) for x in ts.data]), ts.rank)


def regularize(tup: EulerReynoldsTuple, lp: LevelParams, lo: float, hi: float, clamp: bool) -> Regularized:
    S = 1.0 / lp.ell
    v_l = _lp_series(tup.v, S)
    p_l = _lp_series(tup.p, S)
    R_l, rR = moll_along_flow(_lp_series(tup.R, S), v_l, lp.ell_t, lo, hi, clamp=clamp)
    phi_l, rP = moll_along_flow(_lp_series(tup.phi, S), v_l, lp.ell_t, lo, hi, clamp=clamp)
    kap = TimeSeries(R_l.t0, R_l.dt, 0.5 * sym_trace(R_l.data.swapaxes(0, 1))[:, None], "scalar")
    return Regularized(v_l, p_l, R_l, phi_l, kap,
                       {"R": dataclasses.asdict(rR), "phi": dataclasses.asdict(rP)})


# --- one step ---------------------------------------------------------------------

@dataclass
class StepOptions:
    demo_mode: bool = True
    N0_phi: float = 3.0
    certify: bool = True
    sweep: bool = True
    probes: bool = True
    C_round: float = 8.0


@dataclass
class Prepared:
    tup: EulerReynoldsTuple
    lp: LevelParams
    cfg: SchedulerConfig
    opts: StepOptions
    reg: Regularized
    ctx: object
    work: tuple
    out: tuple
    report: dict


_PROFILE_CACHE: dict = {}


def _profiles(table):
    key = id(table)
    if key not in _PROFILE_CACHE:
        _PROFILE_CACHE.clear()
        _PROFILE_CACHE[key] = (table, build_profiles(table))
    return _PROFILE_CACHE[key][1]


def _max_grad(v: TimeSeries) -> float:
    if not np.any(v.data):
        return 0.0
    stride = max(1, len(v) // 16)
    return max(float(np.abs(grad_arr(v.data[i])).max()) for i in range(0, len(v), stride))


def prepare(tup: EulerReynoldsTuple, cfg: SchedulerConfig, opts: StepOptions = None, table=None) -> Prepared:
    """Everything of a step that does not depend on the sign pattern of the weights."""
    opts = opts or StepOptions(demo_mode=cfg.demo_mode)
    lp = level_params(cfg, tup.q)
    dt = tup.dt
    ratio = lp.tau_q / dt
    if abs(ratio - round(ratio)) > 1e-6 * ratio or round(ratio) < 4:
        raise WindowError(f"tau_{tup.q}/dt = {ratio:.6g} is not an integer >= 4")
    out = (-lp.tau_q, cfg.T + lp.tau_q)
    work = (out[0] - 2 * dt, out[1] + 2 * dt)
    try:
        tup.v.index_of(work[0])
        tup.v.index_of(work[1])
    except KeyError as e:
        raise WindowError(f"tuple window {tup.window} does not cover [{work[0]:.6g}, {work[1]:.6g}]") from e
    t0 = time.perf_counter()
    adm = check_admissibility(lp, _max_grad(tup.v), opts.demo_mode)
    if adm.status == "fail":
        raise AdmissibilityError(adm.to_dict())
    reg = regularize(tup, lp, work[0], work[1], clamp=opts.demo_mode)
    tau = lp.tau_q
    ms = [m for m in range(math.floor(work[0] / tau) - 2, math.ceil(work[1] / tau) + 2)
          if (m - 0.125) * tau < work[1] and (m + 1.125) * tau > work[0]]
    flows, bounds = {}, {}
    for m in ms:
        fl = backward_flow_slab(reg.v_l, m, tau)
        b = fl.flow_bound()["max_id_minus_grad"]
        if b > 0.2:
            raise AdmissibilityError({"status": "fail", "flow": {m: b},
                                      "reason": "|Id - grad xi| above 1/5"})
        flows[m], bounds[m] = fl, b
    table = table or default_table()
    ctx = make_context(lp, table, flows, reg.R_l, reg.phi_l, demo_mode=opts.demo_mode,
                       N0_phi=opts.N0_phi, profiles=_profiles(table))
    report = {"level": lp.to_dict(), "admissibility": adm.to_dict(), "mollification": reg.reports,
              "flows": {str(m): b for m, b in bounds.items()}, "shifts": ctx.shifts.to_dict(),
              "prepare_seconds": time.perf_counter() - t0}
    return Prepared(tup, lp, cfg, opts, reg, ctx, work, out, report)


def _cut(ts: TimeSeries, lo: float, hi: float) -> np.ndarray:
    return ts.data[ts.index_of(lo):ts.index_of(hi) + 1]


def finish(prep: Prepared, flip=frozenset()):
    """Perturbation, new stress and current, and certification: (tuple, report)."""
    t0 = time.perf_counter()
    ctx = dataclasses.replace(prep.ctx, flip=frozenset(flip))
    tup, lp, reg = prep.tup, prep.lp, prep.reg
    lo, hi = prep.work
    grid = Grid(tup.n)
    times = reg.R_l.times
    bw = build_w(ctx, grid, times)
    inp = ER.Inputs(t0=lo, dt=tup.dt, w_o=bw["w_o"], w_c=bw["w_c"],
                    v=_cut(tup.v, lo, hi), v_l=_cut(reg.v_l, lo, hi),
                    p=_cut(tup.p, lo, hi), p_l=_cut(reg.p_l, lo, hi),
                    R=_cut(tup.R, lo, hi), R_l=reg.R_l.data, phi=_cut(tup.phi, lo, hi),
                    phi_l=reg.phi_l.data, delta=lp.delta_q1, ell=lp.ell)
    stress = ER.build_stress(inp)
    cur = ER.build_current(inp, stress)
    a, b = prep.out
    i, j = tup.v.index_of(a), tup.v.index_of(b) + 1
    w = (bw["w_o"] + bw["w_c"])[2:-2]
    v1 = TimeSeries(a, tup.dt, tup.v.data[i:j] + w)
    new = EulerReynoldsTuple(v1, TimeSeries(a, tup.dt, tup.p.data[i:j]), stress.R_q1, stress.kappa_q1,
                             cur.phi_q1, tup.E[i:j], tup.dE[i:j], tup.q + 1,
                             dict(tup.meta, flip=sorted(flip)))
    rep = {"pieces_per_time_max": int(max(bw["pieces_per_time"], default=0)),
           "inside_points": bw["inside_points"],
           "stress_norms": stress.norms(), "trace_bookkeeping": stress.trace_bookkeeping(),
           "current_norms": cur.norms(),
           "varrho": {"max": float(np.abs(stress.varrho).max()),
                      "components_max": [float(np.abs(x).max()) for x in cur.varrho]},
           "w_grid": {"C0": float(np.abs(w).max()),
                      "C1": max(float(np.abs(grad_arr(w[k])).max()) for k in range(0, len(w), max(1, len(w) // 8)))}}
    dl = math.sqrt(lp.delta_q1)
    rep["cauchy"] = {"grid": rep["w_grid"]["C0"] + rep["w_grid"]["C1"] / lp.lambda_q1,
                     "bound": lp.M * dl}
    if prep.opts.probes:
        rep["probes"] = _probe_report(ctx, lp, times)
        # on-tube sizes: the measured constant replaces the geometric one
        rep["cauchy"].update(on_tubes=rep["probes"]["w_C0"] + rep["probes"]["w_C1"] / lp.lambda_q1,
                             M0_measured=rep["probes"]["M0_measured"])
    if prep.opts.sweep:
        rep["cancellation"] = cancellation_sweep(ctx, grid, list(times[2:-2]))
    rep["inductive"] = inductive_report(new, level_params(prep.cfg, new.q))
    if prep.opts.certify:
        cert = residual_suite(new, prep.opts.C_round)
        rep["certification"] = cert
    rep["finish_seconds"] = time.perf_counter() - t0
    if prep.opts.certify and not rep["certification"]["pass"]:
        raise CertificationError(dict(prep.report, **rep), new)
    return new, rep


def _probe_report(ctx, lp, times) -> dict:
    """Divergence, potential, overlap and size of w on points sampled inside the tubes."""
    tau = lp.tau_q
    m = next(m for m in ctx.slabs if 0 <= m * tau and (m + 1) * tau <= times[-1])
    t = _nearest_sample(times, (m + 0.5) * tau)
    cells = [(0, 0, 0), (1, 2, 0), (lp.mu_inv - 1, 3 % lp.mu_inv, 5 % lp.mu_inv)]
    pts = tube_probes(ctx, t, m, cells)
    out = probe_checks(ctx, t, pts)
    out.update(t=float(t), slab=m, M0_measured=out["w_C0"] / math.sqrt(lp.delta_q1))
    return out


def _nearest_sample(times: np.ndarray, t: float) -> float:
    return float(times[int(np.argmin(np.abs(times - t)))])


def step(tup: EulerReynoldsTuple, cfg: SchedulerConfig, opts: StepOptions = None, table=None):
    prep = prepare(tup, cfg, opts, table)
    new, rep = finish(prep)
    return new, dict(prep.report, **rep)


# --- bifurcation --------------------------------------------------------------------

def pick_slab(interval: tuple, tau: float, T: float) -> int:
    """A slab whose time cutoff is supported inside the interval."""
    a, b = interval
    if not (0 < a < b < T):
        raise BifurcationUnavailable(f"interval ({a:.6g}, {b:.6g}) not inside (0, T={T:.6g})")
    if b - a < 3 * tau - 1e-12 * tau:
        raise BifurcationUnavailable(f"interval length {b - a:.6g} below 3 tau = {3 * tau:.6g}")
    for m in range(math.ceil(a / tau + 0.125), math.floor(b / tau - 1.125) + 1):
        if (m - 0.125) * tau >= a and (m + 1.125) * tau <= b:
            return m
    raise BifurcationUnavailable("no slab fits the interval")


def _differ_times(t1: EulerReynoldsTuple, t2: EulerReynoldsTuple) -> np.ndarray:
    d = np.zeros(len(t1.times), bool)
    for k, ts in t1.fields().items():
        other = t2.fields()[k].data
        d |= np.any((ts.data != other).reshape(len(d), -1), axis=1)
    return d


def bifurcated_step(tup: EulerReynoldsTuple, cfg: SchedulerConfig, interval: tuple,
                    opts: StepOptions = None, table=None, nodes: int = 24):
    """Two steps sharing every choice except the sign of the stress weights on one slab."""
    lp = level_params(cfg, tup.q)
    m0 = pick_slab(interval, lp.tau_q, cfg.T)
    prep = prepare(tup, cfg, opts, table)
    a_tup, rep_a = finish(prep)
    b_tup, rep_b = finish(prep, {m0})
    t = a_tup.times
    i0 = a_tup.v.index_of(0.0)
    same0 = all(np.array_equal(x.data[i0], b_tup.fields()[k].data[i0]) for k, x in a_tup.fields().items())
    diff = _differ_times(a_tup, b_tup)
    lo, hi = interval
    outside = diff & ((t < lo) | (t > hi))
    # separation at the plateau of the flipped slab, where only it is active
    tp = _nearest_sample(prep.reg.R_l.times, (m0 + 0.5) * lp.tau_q)
    ctx = prep.ctx
    tl = tube_l2(ctx, tp, m0, nodes=nodes)
    mf = mean_field_l2(ctx, tp, m0)
    dl = lp.delta_q1
    sep_tube = 2.0 * math.sqrt(tl["integral"])
    sep_mean = 2.0 * math.sqrt(mf)
    k = a_tup.v.index_of(tp)
    sep_grid = float(np.sqrt(((a_tup.v.data[k] - b_tup.v.data[k]) ** 2).sum() * (2 * math.pi / a_tup.n) ** 3))
    report = {
        "slab": m0, "interval": [lo, hi], "plateau_time": tp,
        "theta_at_plateau": float(theta(tp / lp.tau_q, m0)),
        "initial_data_identical": bool(same0),
        "differ_first": float(t[diff][0]) if diff.any() else None,
        "differ_last": float(t[diff][-1]) if diff.any() else None,
        "differences_outside_interval": int(outside.sum()),
        "separation_L2_tubes": sep_tube, "separation_L2_mean_field": sep_mean,
        "separation_L2_grid": sep_grid, "tube_quadrature": tl,
        "delta_sqrt": math.sqrt(dl),
        "separated": bool(sep_tube >= math.sqrt(dl)),
        "step_a": rep_a, "step_b": rep_b, "prepare": prep.report,
    }
    report["pass"] = bool(report["initial_data_identical"] and report["differences_outside_interval"] == 0
                          and report["separated"])
    return a_tup, b_tup, report


def run(cfg: SchedulerConfig, seed: EulerReynoldsTuple, q_max: int, opts: StepOptions = None,
        bifurcate_at: tuple = None):
    """q_max steps from the seed; optionally bifurcate at the last one."""
    tup = seed
    reports = []
    for q in range(q_max):
        last = q == q_max - 1
        if last and bifurcate_at is not None:
            a, b, rep = bifurcated_step(tup, cfg, bifurcate_at, opts)
            reports.append(rep)
            return (a, b), reports
        tup, rep = step(tup, cfg, opts)
        reports.append(rep)
        log.info("step %d done", q)
    return tup, reports
