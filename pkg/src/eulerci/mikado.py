"""Mikado profiles: tube-supported periodic scalars with prescribed moments.

Each profile is psi = Lap_perp Xi for a compactly supported stream function
Xi of the two coordinates transverse to f, built from the bump
B(s) = exp(-1/(1 - s)), s = |u|^2/r0^2:

    Reynolds kind:  Xi = c r0^2 (u1/r0) B     (odd, so <psi> = <psi^3> = 0)
    Current kind:   Xi = c r0^2 B             (radial)

psi has zero mean automatically (it is a Laplacian of a compactly
supported function), and V = |f| (-d2 Xi e1 + d1 Xi e2) satisfies
curl V = f psi, which gives the exact vector potential of a tube.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .fields import Grid, ResolutionError, tail_fraction
from .shifts import lattice_basis, primitive, reduce_transverse, transverse_frame

KINDS = ("Reynolds", "Current")


class ProfileError(RuntimeError):
    pass


class CoefficientTailError(RuntimeError):
    def __init__(self, msg, suggested_K):
        super().__init__(msg)
        self.suggested_K = suggested_K


def _bump_derivs(s: np.ndarray, order: int = 3):
    """B, B', B'', B''' at s in [0, 1) (zero elsewhere)."""
    s = np.asarray(s, float)
    out = [np.zeros_like(s) for _ in range(order + 1)]
    m = s < 1.0
    if not m.any():
        return out
    q = 1.0 / (1.0 - s[m])
    B = np.exp(-q)
    h1, h2, h3 = -q ** 2, -2 * q ** 3, -6 * q ** 4
    vals = [B, h1 * B, (h2 + h1 ** 2) * B, (h3 + 3 * h1 * h2 + h1 ** 3) * B]
    for i in range(order + 1):
        out[i][m] = vals[i]
    return out


def _unit_fields(kind: str, sig: np.ndarray, need_hess: bool = True):
    """psi, grad psi, grad Xi, Hess Xi of the unit-radius, unit-amplitude profile.

    sig: (..., 2) transverse coordinates in units of r0.
    """
    s = (sig ** 2).sum(-1)
    B, B1, B2, B3 = _bump_derivs(s)
    s1, s2 = sig[..., 0], sig[..., 1]
    if kind == "Current":
        psi = 4 * s * B2 + 4 * B1
        gfac = 16 * B2 + 8 * s * B3
        gpsi = np.stack([s1 * gfac, s2 * gfac], -1)
        gxi = np.stack([2 * s1 * B1, 2 * s2 * B1], -1)
        hxi = (4 * B2)[..., None, None] * sig[..., :, None] * sig[..., None, :] \
            + (2 * B1)[..., None, None] * np.eye(2)
    elif kind == "Reynolds":
        g = 8 * B1 + 4 * s * B2
        gp = 12 * B2 + 4 * s * B3
        psi = s1 * g
        gpsi = np.stack([g + 2 * s1 * s1 * gp, 2 * s1 * s2 * gp], -1)
        gB = np.stack([2 * s1 * B1, 2 * s2 * B1], -1)
        gxi = s1[..., None] * gB
        gxi[..., 0] += B
        hB = (4 * B2)[..., None, None] * sig[..., :, None] * sig[..., None, :] \
            + (2 * B1)[..., None, None] * np.eye(2)
        hxi = s1[..., None, None] * hB
        hxi[..., 0, :] += gB
        hxi[..., :, 0] += gB
    else:
        raise ValueError(f"unknown kind {kind!r}")
    return psi, gpsi, gxi, hxi


def _radial_integral(fn, lo=0.0, hi=1.0) -> float:
    # the integrands are flat at r = 1, so quad may flag roundoff near the
    # requested tolerance; its own error estimate is checked instead
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(fn, lo, hi, limit=400, epsabs=0.0, epsrel=1e-11)
    if err > max(1e-9 * abs(val), 1e-12):
        raise ProfileError(f"radial quadrature error {err:.2e} too large")
    return val


def unit_moment(kind: str, p: int) -> float:
    """Integral over R^2 of psi^p for the unit profile (polar form, exact in angle)."""
    if kind == "Reynolds":
        def g(r):
            B, B1, B2, _ = _bump_derivs(np.array(r * r))
            return float(r * (8 * B1 + 4 * r * r * B2))   # psi = cos(phi) * g(r)
        ang = {1: 0.0, 2: math.pi, 3: 0.0}[p]
        if ang == 0.0:
            return 0.0
        return ang * _radial_integral(lambda r: g(r) ** p * r)
    def h(r):
        B, B1, B2, _ = _bump_derivs(np.array(r * r))
        return float(4 * r * r * B2 + 4 * B1)
    return 2 * math.pi * _radial_integral(lambda r: h(r) ** p * r)


def unit_moment_cartesian(kind: str, p: int, m: int = 1601) -> float:
    """Independent check: trapezoid rule on [-1, 1]^2 (spectrally accurate for this bump)."""
    x = np.linspace(-1, 1, m)
    X, Y = np.meshgrid(x, x, indexing="ij")
    psi = _unit_fields(kind, np.stack([X, Y], -1), need_hess=False)[0]
    h = x[1] - x[0]
    return float((psi ** p).sum() * h * h)


@dataclass
class MikadoProfile:
    kind: str
    f: tuple                 # amplitude direction (integer)
    r0: float                # support radius in fast units
    c: float = 0.0
    fp: tuple = ()
    moments: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def fnorm_p(self) -> float:
        return math.sqrt(sum(x * x for x in self.fp))

    @property
    def fnorm(self) -> float:
        return math.sqrt(sum(x * x for x in self.f))

    @property
    def covolume(self) -> float:
        return 4 * math.pi ** 2 / self.fnorm_p

    def moment(self, p: int, oracle: bool = False) -> float:
        I = unit_moment_cartesian(self.kind, p) if oracle else unit_moment(self.kind, p)
        return self.c ** p * self.r0 ** 2 * I / self.covolume

    # -- evaluation ---------------------------------------------------------
    def _local(self, Y: np.ndarray):
        e1, e2, fh = transverse_frame(self.fp)
        u = np.stack([Y @ e1, Y @ e2], -1)
        return reduce_transverse(u, self.fp), e1, e2

    def support_mask(self, Y: np.ndarray) -> np.ndarray:
        u, _, _ = self._local(Y)
        return (u ** 2).sum(-1) < self.r0 ** 2

    def evaluate(self, Y: np.ndarray, want=("psi",)) -> dict:
        """Fields at fast-variable points Y (P, 3).

        psi; gpsi = grad_Y psi (P, 3); V (P, 3); gV[p, a, b] = dV_a/dY_b.
        Only points inside the tube are computed; the rest are exact zeros.
        """
        Y = np.asarray(Y, float).reshape(-1, 3)
        P = Y.shape[0]
        u, e1, e2 = self._local(Y)
        inside = (u ** 2).sum(-1) < self.r0 ** 2
        out = {}
        if "psi" in want:
            out["psi"] = np.zeros(P)
        if "gpsi" in want:
            out["gpsi"] = np.zeros((P, 3))
        if "V" in want:
            out["V"] = np.zeros((P, 3))
        if "gV" in want:
            out["gV"] = np.zeros((P, 3, 3))
        out["inside"] = inside
        if not inside.any():
            return out
        sig = u[inside] / self.r0
        psi, gpsi, gxi, hxi = _unit_fields(self.kind, sig)
        c, r0, fn = self.c, self.r0, self.fnorm
        E = np.stack([e1, e2])           # (2, 3)
        if "psi" in want:
            out["psi"][inside] = c * psi
        if "gpsi" in want:
            out["gpsi"][inside] = (c / r0) * gpsi @ E
        if "V" in want or "gV" in want:
            rot = np.array([[0.0, -1.0], [1.0, 0.0]])   # (d1, d2) -> (-d2, d1)
            if "V" in want:
                out["V"][inside] = fn * c * r0 * (gxi @ rot.T) @ E
            if "gV" in want:
                # dV_a/dY_b = |f| c (rot Hess) mapped to 3D through the frame
                hr = np.einsum("ij,pjk->pik", rot, hxi)
                out["gV"][inside] = fn * c * np.einsum("ia,pik,kb->pab", E, hr, E)
        return out

    def psi(self, Y):
        return self.evaluate(Y, ("psi",))["psi"]


def max_radius(f) -> float:
    """Largest support radius for which periodic copies of the tube stay disjoint."""
    B = lattice_basis(primitive(f))
    return 0.5 * min(np.linalg.norm(B[:, 0]), np.linalg.norm(B[:, 1]))


def build_profile(kind: str, f, support_radius: float, d0: float = None, eta: float = None) -> MikadoProfile:
    """Profile meeting the moment targets of its kind.

    When (d0, eta) are given, the radius must respect min(d0/4, eta/10).
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    f = tuple(int(x) for x in f)
    fp = primitive(f)
    r0 = float(support_radius)
    if d0 is not None and eta is not None and r0 > min(d0 / 4, eta / 10) * (1 + 1e-12):
        raise ProfileError(f"support radius {r0} exceeds min(d0/4, eta/10)")
    if r0 >= max_radius(fp):
        raise ProfileError(f"support radius {r0} overlaps periodic copies (limit {max_radius(fp)})")
    prof = MikadoProfile(kind=kind, f=f, r0=r0, fp=fp)
    covol = prof.covolume
    if kind == "Reynolds":
        I2 = unit_moment(kind, 2)
        prof.c = math.sqrt(covol / (r0 ** 2 * I2))
    else:
        I3 = unit_moment(kind, 3)
        if I3 == 0.0:
            raise ProfileError("third moment of the unit current profile vanishes")
        x = covol / (r0 ** 2 * I3)
        prof.c = math.copysign(abs(x) ** (1.0 / 3.0), x)
    prof.moments = tuple(prof.moment(p) for p in (1, 2, 3))
    target = {"Reynolds": (0.0, 1.0, 0.0), "Current": (0.0, None, 1.0)}[kind]
    res = [abs(m - t) for m, t in zip(prof.moments, target) if t is not None]
    if max(res) > 1e-10:
        raise ProfileError(f"moment residuals {res}")
    return prof


def synth_U(profile: MikadoProfile, lam: int, z, grid: Grid, tail_tol: float = 1e-6) -> np.ndarray:
    """U(x) = f psi(lam (x - z)) sampled on the grid, shape (3, n, n, n)."""
    pts = grid.points()
    Y = lam * (pts - np.asarray(z, float)[None, :])
    psi = profile.psi(Y).reshape((grid.n,) * 3)
    U = np.array(profile.f, float)[:, None, None, None] * psi[None]
    frac = tail_fraction(U)
    if frac > tail_tol:
        raise ResolutionError(f"grid {grid.n}^3 leaves {frac:.2e} of the energy in the top shell")
    return U


# --- Fourier coefficients in the fast variable ------------------------------

@dataclass
class MikadoCoeffs:
    K_max: int
    k: np.ndarray            # (Nk, 3) integer wavevectors with f.k = 0
    b: np.ndarray
    c: np.ndarray
    d: np.ndarray
    decay_sum: float
    c_l2: float
    tail: float

    def full(self, which: str, K: int = None) -> dict:
        """Dictionary k -> coefficient (zero entries for f.k != 0 are implicit)."""
        arr = getattr(self, which)
        return {tuple(int(x) for x in kk): complex(v) for kk, v in zip(self.k, arr)}

    def to_dict(self) -> dict:
        return {"K_max": self.K_max, "k": self.k.tolist(),
                "b": [[v.real, v.imag] for v in self.b],
                "c": [[v.real, v.imag] for v in self.c],
                "d": [[v.real, v.imag] for v in self.d],
                "decay_sum": self.decay_sum, "c_l2": self.c_l2, "tail": self.tail}


def _polar_nodes(nr: int = 160, nphi: int = 192):
    x, w = np.polynomial.legendre.leggauss(nr)
    r = 0.5 * (x + 1)
    wr = 0.5 * w * r
    phi = 2 * math.pi * np.arange(nphi) / nphi
    R, PH = np.meshgrid(r, phi, indexing="ij")
    W = (wr[:, None] * (2 * math.pi / nphi)) * np.ones_like(PH)
    return np.stack([R * np.cos(PH), R * np.sin(PH)], -1).reshape(-1, 2), W.ravel()


def hankel_b(profile: MikadoProfile, kperp: np.ndarray) -> np.ndarray:
    """psi coefficients from one-dimensional Hankel transforms (independent of the 2D rule)."""
    om = profile.r0 * np.asarray(kperp, float)
    w = np.linalg.norm(om, axis=-1)
    out = np.zeros(len(w), complex)
    Bf = lambda r: float(_bump_derivs(np.array(r * r), 0)[0])
    for i, wi in enumerate(w):
        if wi == 0:
            continue
        if profile.kind == "Current":
            Bh = 2 * math.pi * _radial_integral(lambda r: Bf(r) * special.j0(wi * r) * r)
            out[i] = -wi ** 2 * Bh
        else:
            dB = -2 * math.pi * _radial_integral(lambda r: Bf(r) * special.j1(wi * r) * r * r)
            out[i] = -wi ** 2 * 1j * (om[i, 0] / wi) * dB
    return profile.c * profile.r0 ** 2 * out / profile.covolume


def fourier_coeffs(profile: MikadoProfile, K_max: int = 16, n0: int = 0,
                   tail_tol: float = 1e-8) -> MikadoCoeffs:
    """Coefficients of psi, psi^2, psi^3 for |k|_inf <= K_max; only f.k = 0 can be nonzero."""
    fp = np.array(profile.fp)
    rng = np.arange(-K_max, K_max + 1)
    K = np.array(np.meshgrid(rng, rng, rng, indexing="ij")).reshape(3, -1).T
    K = K[(K @ fp) == 0]
    e1, e2, _ = transverse_frame(profile.fp)
    kperp = np.stack([K @ e1, K @ e2], -1)
    nodes, wts = _polar_nodes()
    psi = profile.c * _unit_fields(profile.kind, nodes, need_hess=False)[0]
    scale = profile.r0 ** 2 / profile.covolume
    W = np.stack([wts * psi, wts * psi ** 2, wts * psi ** 3], -1) * scale
    bcd = np.empty((len(K), 3), complex)
    for i in range(0, len(K), 256):
        ph = np.exp(-1j * profile.r0 * kperp[i:i + 256] @ nodes.T)
        bcd[i:i + 256] = ph @ W
    b, c, d = bcd.T
    kn = np.linalg.norm(K, axis=1)
    decay = float((kn ** (n0 + 2) * (np.abs(b) + np.abs(c) + np.abs(d))).sum())
    m2 = profile.moment(2)
    tail = float(max(m2 - (np.abs(b) ** 2).sum(), 0.0) / m2)
    if tail > tail_tol:
        sug = int(math.ceil(max(2 * K_max, 160.0 / profile.r0)))
        raise CoefficientTailError(f"Parseval tail {tail:.3e} above {tail_tol:.1e} at K_max={K_max}", sug)
    return MikadoCoeffs(K_max, K, b, c, d, decay, float((np.abs(c) ** 2).sum()), tail)
