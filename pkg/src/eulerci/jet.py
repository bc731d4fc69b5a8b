"""Second-order forward-mode jets in three space variables.

A Jet carries a value array v of shape S, a gradient g of shape S + (3,)
and optionally a Hessian h of shape S + (3, 3). Leading axes of S are
value axes; derivative axes always trail. Functions in this module accept
plain arrays too, so the same code runs in value-only mode.
"""
from __future__ import annotations

import string

import numpy as np


class Jet:
    __slots__ = ("v", "g", "h")
    __array_priority__ = 100

    def __init__(self, v, g, h=None):
        self.v = np.asarray(v, float)
        self.g = np.asarray(g, float)
        self.h = None if h is None else np.asarray(h, float)

    @property
    def order(self) -> int:
        return 1 if self.h is None else 2

    @property
    def shape(self):
        return self.v.shape

    @classmethod
    def variable(cls, x: np.ndarray, order: int = 2) -> "Jet":
        """The coordinate map x -> x at points x (P, 3)."""
        x = np.asarray(x, float)
        g = np.broadcast_to(np.eye(3), x.shape + (3,)).copy()
        h = np.zeros(x.shape + (3, 3)) if order >= 2 else None
        return cls(x, g, h)

    @classmethod
    def const(cls, c, like: "Jet") -> "Jet":
        c = np.asarray(c, float)
        g = np.zeros(c.shape + (3,))
        h = None if like.h is None else np.zeros(c.shape + (3, 3))
        return cls(c, g, h)

    def lower(self) -> "Jet":
        return Jet(self.v, self.g)

    def grad(self) -> "Jet":
        """Gradient as a jet of one order less (vector axis appended)."""
        if self.h is None:
            raise ValueError("need a second-order jet")
        return Jet(self.g, self.h)

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        if any(i is Ellipsis for i in idx):
            raise IndexError("jets index leading value axes only")
        return Jet(self.v[idx], self.g[idx], None if self.h is None else self.h[idx])

    # -- arithmetic --------------------------------------------------------
    def __add__(self, o):
        o = o if isinstance(o, Jet) else _const_like(o, self)
        return Jet(self.v + o.v, self.g + o.g, _hsum(self.h, o.h, self.v.shape, o.v.shape))

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.v, -self.g, None if self.h is None else -self.h)

    def __sub__(self, o):
        return self + (-o)

    def __rsub__(self, o):
        return (-self) + o

    def __mul__(self, o):
        if not isinstance(o, Jet):
            c = np.asarray(o, float)
            return Jet(self.v * c, self.g * c[..., None],
                       None if self.h is None else self.h * c[..., None, None])
        v = self.v * o.v
        g = self.g * o.v[..., None] + self.v[..., None] * o.g
        h = None
        if self.h is not None and o.h is not None:
            cross = self.g[..., :, None] * o.g[..., None, :]
            h = (self.h * o.v[..., None, None] + self.v[..., None, None] * o.h
                 + cross + np.swapaxes(cross, -1, -2))
        return Jet(v, g, h)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if not isinstance(o, Jet):
            return self * (1.0 / np.asarray(o, float))
        return self * reciprocal(o)

    def __rtruediv__(self, o):
        return reciprocal(self) * o

    def __pow__(self, p: float):
        return power(self, p)


def _const_like(c, like: Jet) -> Jet:
    c = np.asarray(c, float)
    shp = np.broadcast_shapes(c.shape, like.v.shape)
    c = np.broadcast_to(c, shp)
    return Jet(c, np.zeros(shp + (3,)), None if like.h is None else np.zeros(shp + (3, 3)))


def _hsum(a, b, sa, sb):
    if a is None or b is None:
        return None
    return a + b


def chain(u, f0, f1, f2=None):
    """f(u) given f, f', f'' evaluated at u.v (elementwise)."""
    if not isinstance(u, Jet):
        return f0
    g = f1[..., None] * u.g
    h = None
    if u.h is not None and f2 is not None:
        h = f1[..., None, None] * u.h + f2[..., None, None] * u.g[..., :, None] * u.g[..., None, :]
    return Jet(f0, g, h)


def value(x):
    return x.v if isinstance(x, Jet) else np.asarray(x, float)


def reciprocal(u):
    x = value(u)
    r = 1.0 / x
    return chain(u, r, -r * r, 2 * r * r * r) if isinstance(u, Jet) else r


def power(u, p: float):
    x = value(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        f0 = np.where(x > 0, np.abs(x) ** p, 0.0) if p != int(p) else x ** p
        f1 = np.where(x != 0, p * f0 / np.where(x != 0, x, 1.0), 0.0)
        f2 = np.where(x != 0, (p - 1) * f1 / np.where(x != 0, x, 1.0), 0.0)
    return chain(u, f0, f1, f2) if isinstance(u, Jet) else f0


def sqrt(u):
    return power(u, 0.5)


def cbrt(u):
    """Real cube root (odd extension)."""
    x = value(u)
    f0 = np.cbrt(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        f1 = np.where(x != 0, f0 / (3 * np.where(x != 0, x, 1.0)), 0.0)
        f2 = np.where(x != 0, -2 * f1 / (3 * np.where(x != 0, x, 1.0)), 0.0)
    return chain(u, f0, f1, f2) if isinstance(u, Jet) else f0


def exp(u):
    e = np.exp(value(u))
    return chain(u, e, e, e) if isinstance(u, Jet) else e


def sin(u):
    x = value(u)
    s, c = np.sin(x), np.cos(x)
    return chain(u, s, c, -s) if isinstance(u, Jet) else s


def cos(u):
    x = value(u)
    s, c = np.sin(x), np.cos(x)
    return chain(u, c, -s, -c) if isinstance(u, Jet) else c


def where(mask, a, b):
    """Elementwise select on value axes."""
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return np.where(mask, a, b)
    like = a if isinstance(a, Jet) else b
    a = a if isinstance(a, Jet) else _const_like(a, like)
    b = b if isinstance(b, Jet) else _const_like(b, like)
    m = np.asarray(mask)
    h = None
    if a.h is not None and b.h is not None:
        h = np.where(m[..., None, None], a.h, b.h)
    return Jet(np.where(m, a.v, b.v), np.where(m[..., None], a.g, b.g), h)


def stack(items, axis: int):
    if not any(isinstance(x, Jet) for x in items):
        return np.stack([np.asarray(x, float) for x in items], axis=axis)
    like = next(x for x in items if isinstance(x, Jet))
    items = [x if isinstance(x, Jet) else _const_like(x, like) for x in items]
    if axis < 0:
        raise ValueError("use a nonnegative value axis")
    v = np.stack([x.v for x in items], axis)
    g = np.stack([x.g for x in items], axis)
    h = None if any(x.h is None for x in items) else np.stack([x.h for x in items], axis)
    return Jet(v, g, h)


def _T(x):
    return np.swapaxes(x, -1, -2)


# batched small contractions are much faster through matmul than einsum
_FAST = {
    "pij,pj->pi": lambda a, b: (a @ b[..., None])[..., 0],
    "pji,pj->pi": lambda a, b: (_T(a) @ b[..., None])[..., 0],
    "pi,pki->pk": lambda a, b: (b @ a[..., None])[..., 0],
    "pa,pba->pb": lambda a, b: (b @ a[..., None])[..., 0],
    "pij,pkj->pki": lambda a, b: b @ _T(a),
    "pki,pki->pk": lambda a, b: (a * b).sum(-1),
    "pk,pki->pki": lambda a, b: a[..., None] * b,
    "pk,pki->pi": lambda a, b: (a[:, None, :] @ b)[:, 0],
    "pki,pkj->pij": lambda a, b: _T(a) @ b,
    "pij,pjk->pik": lambda a, b: a @ b,
    "pik,plk->pil": lambda a, b: a @ _T(b),
}


def _plain(spec, a, b):
    f = _FAST.get(spec)
    return f(np.asarray(a, float), np.asarray(b, float)) if f else np.einsum(spec, a, b)


def einsum(spec: str, a, b):
    """Bilinear contraction with the product rule; spec acts on value axes."""
    if not isinstance(a, Jet) and not isinstance(b, Jet):
        return _plain(spec, a, b)
    ins, out = spec.split("->")
    sa, sb = ins.split(",")
    free = [c for c in string.ascii_letters if c not in spec]
    d1, d2 = free[0], free[1]
    av, bv = value(a), value(b)
    v = _plain(spec, av, bv)
    ga = isinstance(a, Jet)
    gb = isinstance(b, Jet)
    g = 0.0
    if ga:
        g = g + np.einsum(f"{sa}{d1},{sb}->{out}{d1}", a.g, bv)
    if gb:
        g = g + np.einsum(f"{sa},{sb}{d1}->{out}{d1}", av, b.g)
    ha = ga and a.h is not None
    hb = gb and b.h is not None
    need_h = (ha or not ga) and (hb or not gb)
    h = None
    if need_h:
        h = 0.0
        if ga:
            h = h + np.einsum(f"{sa}{d1}{d2},{sb}->{out}{d1}{d2}", a.h, bv)
        if gb:
            h = h + np.einsum(f"{sa},{sb}{d1}{d2}->{out}{d1}{d2}", av, b.h)
        if ga and gb:
            c = np.einsum(f"{sa}{d1},{sb}{d2}->{out}{d1}{d2}", a.g, b.g)
            h = h + c + np.swapaxes(c, -1, -2)
    return Jet(v, g, h)


def sum_axis(u, axis: int):
    if not isinstance(u, Jet):
        return np.sum(u, axis=axis)
    return Jet(u.v.sum(axis), u.g.sum(axis), None if u.h is None else u.h.sum(axis))


def inv3(M):
    """Inverse of a (.., 3, 3) matrix jet."""
    Mv = value(M)
    Ai = np.linalg.inv(Mv)
    if not isinstance(M, Jet):
        return Ai
    g = -np.einsum("...ij,...jkd,...kl->...ild", Ai, M.g, Ai)
    h = None
    if M.h is not None:
        t1 = np.einsum("...ij,...jkd,...kl,...lme,...mn->...inde", Ai, M.g, Ai, M.g, Ai)
        h = t1 + np.swapaxes(t1, -1, -2) - np.einsum("...ij,...jkde,...kl->...ilde", Ai, M.h, Ai)
    return Jet(Ai, g, h)


def det3(M):
    a = [[M[..., i, j] if not isinstance(M, Jet) else _idx2(M, i, j) for j in range(3)] for i in range(3)]
    return (a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]))


def _idx2(M: Jet, i: int, j: int) -> Jet:
    nd = M.v.ndim
    idx = (slice(None),) * (nd - 2) + (i, j)
    return M[idx]


def cross(a, b):
    """Cross product along the last value axis (length 3)."""
    def comp(x, i):
        if isinstance(x, Jet):
            return x[(slice(None),) * (x.v.ndim - 1) + (i,)]
        return x[..., i]
    a0, a1, a2 = (comp(a, i) for i in range(3))
    b0, b1, b2 = (comp(b, i) for i in range(3))
    items = [a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0]
    nd = value(a).ndim - 1
    return stack(items, nd)


def divergence(J: Jet) -> np.ndarray:
    """Trace of the gradient of a vector jet (.., 3)."""
    return np.einsum("...ii->...", J.g)


def curl(J: Jet) -> np.ndarray:
    g = J.g      # g[..., j, i] = d_i J_j
    return np.stack([g[..., 2, 1] - g[..., 1, 2], g[..., 0, 2] - g[..., 2, 0],
                     g[..., 1, 0] - g[..., 0, 1]], axis=-1)
