"""Direction families and the two geometric lemma solvers."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .shifts import (ShiftSearchError, fuzz_shift_selection, lattice_basis, line_distance,
                     PeriodizedLine, primitive, transverse_frame)

SYM6 = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


class OutsideLemmaDomain(ValueError):
    pass


class FamilySearchError(RuntimeError):
    def __init__(self, msg, partial=None):
        super().__init__(msg)
        self.partial = partial


def sym6(A: np.ndarray) -> np.ndarray:
    """(.., 3, 3) -> (.., 6) in the order 11, 22, 33, 12, 13, 23."""
    return np.stack([A[..., i, j] for i, j in SYM6], axis=-1)


def from_sym6(s: np.ndarray) -> np.ndarray:
    i = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2]])
    return s[..., i]


@dataclass
class DirectionFamilyR:
    f: np.ndarray          # (6, 3) integers
    C: float
    dual: np.ndarray       # (6, 6): L(A) = dual @ sym6(A)

    @classmethod
    def build(cls, dirs) -> "DirectionFamilyR":
        f = np.array(dirs, dtype=np.int64)
        S = sum(np.outer(v, v) for v in f)
        C = S[0, 0]
        if not np.array_equal(S, C * np.eye(3, dtype=np.int64)):
            raise ValueError(f"sum of f (x) f is not a multiple of Id: {S.tolist()}")
        B = np.stack([sym6(np.outer(v, v).astype(float)) for v in f], axis=1)
        if np.linalg.matrix_rank(B) != 6:
            raise ValueError("f (x) f do not span the symmetric matrices")
        return cls(f=f, C=float(C), dual=np.linalg.inv(B))

    @property
    def N0(self) -> float:
        # sup-norm radius around Id that stays inside {L_i >= 1/(2C)}
        return 1.0 / (2 * self.C * np.abs(self.dual).sum(axis=1).max())

    def L(self, A: np.ndarray) -> np.ndarray:
        return sym6(np.asarray(A, float)) @ self.dual.T


@dataclass
class DirectionFamilyPhi:
    f: np.ndarray          # (4, 3) integers, f4 = -(f1 + f2 + f3)

    @classmethod
    def build(cls, f1, f2, f3) -> "DirectionFamilyPhi":
        a, b, c = (np.array(v, dtype=np.int64) for v in (f1, f2, f3))
        if a @ b or a @ c or b @ c:
            raise ValueError("f1, f2, f3 must be pairwise orthogonal")
        return cls(np.stack([a, b, c, -(a + b + c)]))


def gamma_R(fam: DirectionFamilyR, A: np.ndarray, check: bool = True) -> np.ndarray:
    """Gamma_i = sqrt(L_i(A)), so that sum Gamma_i^2 f_i (x) f_i = A."""
    L = fam.L(A)
    if check and np.any(L < 1.0 / (2 * fam.C)):
        raise OutsideLemmaDomain(f"min L_i(A) = {L.min():.4g} < 1/(2C) = {1 / (2 * fam.C):.4g}")
    return np.sqrt(L)


def reconstruct_R(fam: DirectionFamilyR, G: np.ndarray) -> np.ndarray:
    f = fam.f.astype(float)
    return np.einsum("...i,ia,ib->...ab", G ** 2, f, f)


def gamma_phi(fam: DirectionFamilyPhi, u: np.ndarray, N0: float, check: bool = True) -> np.ndarray:
    """Gamma_k = 2 N0 + u.f_k/|f_k|^2 (k <= 3), Gamma_4 = 2 N0."""
    u = np.asarray(u, float)
    if check and np.any(np.linalg.norm(u, axis=-1) > N0 * (1 + 1e-12)):
        raise OutsideLemmaDomain(f"|u| exceeds N0 = {N0}")
    f = fam.f[:3].astype(float)
    g = 2 * N0 + u @ (f / (f ** 2).sum(1)[:, None]).T
    return np.concatenate([g, np.full(g.shape[:-1] + (1,), 2.0 * N0)], axis=-1)


def reconstruct_phi(fam: DirectionFamilyPhi, G: np.ndarray) -> np.ndarray:
    return G @ fam.f.astype(float)


# --- the table --------------------------------------------------------------

EXAMPLE_R0 = [(1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1)]
EXAMPLE_PHI0 = [(1, 2, 0), (-2, 1, 0), (0, 0, 1)]


def _t_family(a: int, b: int):
    return [(a, b, 0), (a, -b, 0), (0, a, b), (0, a, -b), (b, 0, a), (-b, 0, a)]


def class_index(j) -> int:
    return 9 * (j[0] % 3) + 3 * (j[1] % 3) + (j[2] % 3)


def class_tuple(idx: int) -> tuple:
    return (idx // 9, (idx // 3) % 3, idx % 3)


def _line_key(v) -> tuple:
    p = primitive(v)
    for x in p:
        if x != 0:
            return p if x > 0 else tuple(-y for y in p)
    return p


def _phi_candidates(bound: int = 6):
    vecs = [v for v in itertools.product(range(-bound, bound + 1), repeat=3)
            if any(v) and math.gcd(*v) == 1 and _line_key(v) == v]
    vecs.sort(key=lambda v: (sum(x * x for x in v), v))
    for a in vecs:
        for b in vecs:
            if b <= a or np.dot(a, b) != 0:
                continue
            c = primitive(np.cross(a, b))
            yield a, b, _line_key(c)


@dataclass
class FamilyTable:
    R: list                     # 27 DirectionFamilyR
    phi: list                   # 27 DirectionFamilyPhi
    pbar: dict = field(default_factory=dict)   # (class, kind, k) -> 3-vector
    d0: float = 0.0
    eta: float = 0.0
    fuzz: dict = field(default_factory=dict)

    def directions(self):
        """(class, kind, k, f) over all 270 directions in table order."""
        for j in range(27):
            for k, f in enumerate(self.R[j].f):
                yield j, "R", k, tuple(int(x) for x in f)
            for k, f in enumerate(self.phi[j].f):
                yield j, "phi", k, tuple(int(x) for x in f)

    def lines(self, j: int):
        """Base lines (direction, pbar) of class j."""
        out = []
        for jj, kind, k, f in self.directions():
            if jj == j:
                out.append((f, self.pbar.get((j, kind, k), np.zeros(3))))
        return out

    def to_dict(self) -> dict:
        return {
            "R": [fam.f.tolist() for fam in self.R],
            "phi": [fam.f.tolist() for fam in self.phi],
            "pbar": [[j, kind, k, [float(x) for x in p]] for (j, kind, k), p in sorted(self.pbar.items())],
            "d0": self.d0, "eta": self.eta, "fuzz": self.fuzz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FamilyTable":
        R = [DirectionFamilyR.build(f) for f in d["R"]]
        phi = [DirectionFamilyPhi.build(*f[:3]) for f in d["phi"]]
        pbar = {(j, kind, k): np.array(p) for j, kind, k, p in d["pbar"]}
        return cls(R, phi, pbar, d["d0"], d["eta"], d.get("fuzz", {}))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_json(cls, path) -> "FamilyTable":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def build_family_table() -> FamilyTable:
    """27 classes: the worked example at j = 0, then T(a, b) and orthogonal frames."""
    used = set()

    def take(dirs):
        keys = [_line_key(v) for v in dirs]
        if len(set(keys)) != len(keys) or used.intersection(keys):
            return False
        used.update(keys)
        return True

    R = [DirectionFamilyR.build(EXAMPLE_R0)]
    phi = [DirectionFamilyPhi.build(*EXAMPLE_PHI0)]
    take(EXAMPLE_R0)
    take(phi[0].f.tolist())

    pairs = [(a, b) for s in range(3, 20) for a in range(1, s) for b in [s - a]
             if a != b and math.gcd(a, b) == 1 and max(a, b) <= 7]
    pairs.sort(key=lambda ab: (max(ab), ab))
    for a, b in pairs:
        if len(R) == 27:
            break
        dirs = _t_family(a, b)
        if take(dirs):
            R.append(DirectionFamilyR.build(dirs))
    if len(R) < 27:
        raise FamilySearchError("not enough Reynolds families", (R, phi))

    for a, b, c in _phi_candidates():
        if len(phi) == 27:
            break
        fam = DirectionFamilyPhi.build(a, b, c)
        if take(fam.f.tolist()):
            phi.append(fam)
    if len(phi) < 27:
        raise FamilySearchError("not enough current families", (R, phi))
    return FamilyTable(R, phi)


def check_noncolinear(table: FamilyTable) -> int:
    dirs = np.array([f for *_, f in table.directions()], dtype=np.int64)
    cr = np.cross(dirs[:, None, :], dirs[None, :, :])
    zero = ~cr.any(axis=-1)
    np.fill_diagonal(zero, False)
    return int(zero.sum() // 2)


def _halton(i: int, base: int) -> float:
    f, r = 1.0, 0.0
    while i > 0:
        f /= base
        r += f * (i % base)
        i //= base
    return r


def compute_base_shifts(table: FamilyTable, n_candidates: int = 256, sweeps: int = 2,
                        eta_frac: float = 0.5):
    """Greedy max-min placement of base points; returns (pbar, d0, eta)."""
    items = [(j, kind, k, f) for j, kind, k, f in table.directions()]
    N = len(items)
    halton = np.array([[_halton(i + 1, 2), _halton(i + 1, 3)] for i in range(n_candidates)])

    def cands(f):
        B = lattice_basis(primitive(f))
        e1, e2, _ = transverse_frame(primitive(f))
        uv = halton @ B.T
        return uv[:, :1] * e1[None, :] + uv[:, 1:] * e2[None, :]

    P = np.zeros((N, 3))
    from .shifts import ConstraintSet

    def best_for(i, others):
        if not others:
            return np.zeros(3), math.inf
        f = items[i][3]
        cs = ConstraintSet([(f, np.zeros(3))], [(items[o][3], P[o]) for o in others])
        c = cands(f)
        sep = cs.min_sep(c)
        k = int(np.argmax(sep))
        return c[k], float(sep[k])

    for i in range(N):
        P[i], _ = best_for(i, list(range(i)))
    for _ in range(sweeps):
        for i in range(N):
            P[i], _ = best_for(i, [o for o in range(N) if o != i])
    dmin = math.inf
    for i in range(N):
        for o in range(i + 1, N):
            d = line_distance(PeriodizedLine(items[i][3], tuple(P[i])),
                              PeriodizedLine(items[o][3], tuple(P[o])))
            dmin = min(dmin, d)
    d0 = dmin / 3.0
    pbar = {(j, kind, k): P[i] for i, (j, kind, k, _) in enumerate(items)}
    eta = min(eta_frac * d0, d0 / 2.0)
    return pbar, d0, eta


def certify_eta(table: FamilyTable, n_configs: int = 1000, seed: int = 0,
                max_halvings: int = 30) -> dict:
    """Halve eta until the shift-selection fuzz suite succeeds on every configuration."""
    classes = [table.lines(j) for j in range(27)]
    eta = table.eta
    for _ in range(max_halvings):
        rep = fuzz_shift_selection(classes, table.d0, eta, n_configs=n_configs, seed=seed)
        if rep["failures"] == 0:
            table.eta = eta
            table.fuzz = dict(rep, eta=eta)
            return table.fuzz
        eta /= 2.0
    raise ShiftSearchError("eta could not be certified", eta)


def default_table() -> FamilyTable:
    """The shipped table (families, base shifts, certified eta)."""
    with resources.files("eulerci").joinpath("data/family_table.json").open() as fh:
        return FamilyTable.from_dict(json.load(fh))


def make_table(n_configs: int = 1000) -> FamilyTable:
    t = build_family_table()
    t.pbar, t.d0, t.eta = compute_base_shifts(t)
    certify_eta(t, n_configs=n_configs)
    return t
