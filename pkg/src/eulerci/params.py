"""Parameter schedule of the induction: frequencies, amplitudes, time scales."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from decimal import Decimal, getcontext

_INT_CAP = 2 ** 62


class LevelUnreachable(ArithmeticError):
    """lambda_q no longer fits the integer range we are willing to handle."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SchedulerConfig:
    alpha: float = 0.1
    b: float = 1.25
    lambda0: float = 8.0
    M: float = 2.0
    C0: float = 1.0
    T: float = 1.0
    eta: float = 1e-3
    demo_mode: bool = True

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0 / 7.0):
            raise ConfigError(f"alpha={self.alpha} outside (0, 1/7)")
        if not self.b > 1.0:
            raise ConfigError(f"b={self.b} must exceed 1")
        if not self.lambda0 > 1.0:
            raise ConfigError(f"lambda0={self.lambda0} must exceed 1")
        if not self.M >= 1.0:
            raise ConfigError("M must be >= 1")
        for name in ("C0", "T", "eta"):
            if not getattr(self, name) > 0.0:
                raise ConfigError(f"{name} must be positive")

    def replace(self, **kw) -> "SchedulerConfig":
        d = asdict(self)
        d.update(kw)
        return SchedulerConfig(**d)


def lambda_at(cfg: SchedulerConfig, q: int) -> int:
    """ceil(lambda0 ** (b ** q)) in exact decimal arithmetic."""
    if q < 0:
        raise ValueError("q must be >= 0")
    if q == 0:
        return int(math.ceil(cfg.lambda0))
    getcontext().prec = 80
    lam0 = Decimal(cfg.lambda0)
    expo = Decimal(cfg.b) ** q
    logv = expo * lam0.ln()
    if logv > Decimal(_INT_CAP).ln():
        raise LevelUnreachable(f"lambda_{q} exceeds 2^62 (log = {float(logv):.3g})")
    x = logv.exp()
    r = x.to_integral_value()
    if abs(x - r) < Decimal(10) ** -50:
        return int(r)
    return int(x.to_integral_value(rounding="ROUND_CEILING"))


def delta_at(cfg: SchedulerConfig, q: int) -> float:
    return float(lambda_at(cfg, q)) ** (-2.0 * cfg.alpha)


@dataclass(frozen=True)
class LevelParams:
    q: int
    lambda_q: int
    lambda_q1: int
    delta_q: float
    delta_q1: float
    delta_q2: float
    tau_qm1: float
    tau_q: float
    mu_inv: int
    ell: float
    ell_t: float
    gamma: float
    n0: int
    eta: float
    M: float
    alpha: float
    b: float

    @property
    def mu_q(self) -> float:
        return 1.0 / self.mu_inv

    @property
    def dt(self) -> float:
        return self.tau_q / 64.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mu_q"] = self.mu_q
        if math.isinf(d["tau_qm1"]):
            d["tau_qm1"] = "inf"
        return d


def _tau_inv(cfg: SchedulerConfig, lq: int, lq1: int, dq: float, dq1: float) -> float:
    return (cfg.C0 * 40.0 * math.pi * cfg.M / cfg.eta
            * math.sqrt(lq) * math.sqrt(lq1) * dq ** 0.25 * dq1 ** 0.25)


def level_params(cfg: SchedulerConfig, q: int) -> LevelParams:
    lq, lq1, lq2 = (lambda_at(cfg, q + i) for i in range(3))
    dq, dq1, dq2 = (float(x) ** (-2.0 * cfg.alpha) for x in (lq, lq1, lq2))
    gamma = (cfg.b - 1.0) ** 2
    tau_q = 1.0 / _tau_inv(cfg, lq, lq1, dq, dq1)
    if q == 0:
        tau_qm1 = math.inf
    else:
        lm = lambda_at(cfg, q - 1)
        tau_qm1 = 1.0 / _tau_inv(cfg, lm, lq, float(lm) ** (-2 * cfg.alpha), dq)
    mu_inv = 3 * math.ceil(math.sqrt(lq * lq1) * dq ** 0.25 * dq1 ** -0.25 / 3.0)
    ell = (lq ** 0.75 * lq1 ** 0.25) ** -1 * (dq1 / dq) ** 0.375
    ell_t = 1.0 / (lq ** (0.5 - 3 * gamma) * lq1 ** 0.5 * dq ** 0.25 * dq1 ** 0.25)
    n0 = math.ceil(2 * cfg.b * (2 + cfg.alpha) / ((cfg.b - 1) * (1 - cfg.alpha)))
    return LevelParams(q=q, lambda_q=lq, lambda_q1=lq1, delta_q=dq, delta_q1=dq1,
                       delta_q2=dq2, tau_qm1=tau_qm1, tau_q=tau_q, mu_inv=mu_inv,
                       ell=ell, ell_t=ell_t, gamma=gamma, n0=n0, eta=cfg.eta,
                       M=cfg.M, alpha=cfg.alpha, b=cfg.b)


@dataclass
class Condition:
    name: str
    lhs: float
    rhs: float
    ok: bool
    status: str

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs


@dataclass
class AdmissibilityReport:
    conditions: list = field(default_factory=list)
    demo_mode: bool = False

    @property
    def status(self) -> str:
        states = {c.status for c in self.conditions}
        if "fail" in states:
            return "fail"
        return "warn" if "warn" in states else "pass"

    def to_dict(self) -> dict:
        return {"status": self.status, "demo_mode": self.demo_mode,
                "conditions": [dict(asdict(c), margin=c.margin) for c in self.conditions]}


def check_admissibility(lp: LevelParams, grad_v_norm: float,
                        demo_mode: bool = False) -> AdmissibilityReport:
    """Parameter orderings needed by the step, with measured margins."""
    bad = "warn" if demo_mode else "fail"
    rows = [
        ("mu_inv<=lambda_q1", float(lp.mu_inv), float(lp.lambda_q1)),
        ("tau*|grad v|<=1/10", lp.tau_q * grad_v_norm, 0.1),
        ("mu*tau*|grad v|<=eta/(10 pi lambda_q1)",
         lp.mu_q * lp.tau_q * grad_v_norm, lp.eta / (10 * math.pi * lp.lambda_q1)),
        ("1/ell>=lambda_q", float(lp.lambda_q), 1.0 / lp.ell),
    ]
    rep = AdmissibilityReport(demo_mode=demo_mode)
    for name, lhs, rhs in rows:
        ok = lhs <= rhs
        rep.conditions.append(Condition(name, lhs, rhs, ok, "pass" if ok else bad))
    return rep


def shear_window_ok(cfg: SchedulerConfig, lam_bar: int, C: float = 1.0) -> tuple[bool, str]:
    """Bounds on the shear frequency and the amplitude floor of the shear seed."""
    gamma = (cfg.b - 1.0) ** 2
    l0 = lambda_at(cfg, 0)
    d0 = delta_at(cfg, 0)
    lo, hi = C * l0 ** (3 * gamma) * math.sqrt(d0), l0 * math.sqrt(d0)
    msgs = []
    if not (lo <= lam_bar <= hi):
        msgs.append(f"lambda_bar={lam_bar} outside [{lo:.4g}, {hi:.4g}]")
    if 3 * gamma >= 0.5:
        msgs.append(f"3(b-1)^2={3 * gamma:.3g} not below 1/2")
    d1 = delta_at(cfg, 1)
    # E(t) >= -delta_1, so the amplitude floor is 1 - 2 delta_0^{1/2} - delta_1
    if 1 - 2 * math.sqrt(d0) - d1 < 0.5:
        msgs.append("amplitude 1 - 2 delta_0^{1/2} + E(t) drops below 1/2")
    return (not msgs), "; ".join(msgs)
