"""Closed-form configurations and pointwise differential operators.

A field is a chart-aware callable f(Y, chart) returning coordinate components
of shape (m, n, ..., n, *value) (p form axes, then the value axes).  Values
are so(r) matrices ("adj"), fiber vectors ("fund") or reals ("real").  All
derivatives are central differences on chart coordinates; covariant
derivatives add the connection term exactly.

Operators follow the usual conformally-flat coordinate formulas for
g = rho^2 delta:

    (d B)_ij      = D_i B_j - D_j B_i
    (delta w)_J   = -rho^{2(p-1)-n} sum_i D_i(rho^{n-2p} w_iJ)
    |w|^2         = rho^{-2p}/p! sum_I <w_I, w_I>
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from . import algebra as alg
from .geometry import (Chart, GeometryError, QuadratureRule, partials,
                       rough_laplacian as _rough_laplacian, split_charts, swap_chart_points,
                       swap_jacobian)

H1 = 1e-4
H2 = 1e-3
CHUNK = 512


class CatalogError(ValueError):
    pass


# ---------------------------------------------------------------- fields


@dataclass
class Field:
    fn: Callable
    degree: int
    kind: str  # adj | fund | real

    def __call__(self, Y, chart: Chart):
        return self.fn(np.asarray(Y, dtype=float), chart)

    def on(self, chart: Chart):
        return lambda Y: self.fn(Y, chart)

    def _combine(self, other, op):
        if not isinstance(other, Field):
            return NotImplemented
        if (other.degree, other.kind) != (self.degree, self.kind):
            raise ValueError("incompatible fields")
        f, g = self.fn, other.fn
        return Field(lambda Y, c: op(f(Y, c), g(Y, c)), self.degree, self.kind)

    def __add__(self, other):
        return self._combine(other, np.add)

    def __sub__(self, other):
        return self._combine(other, np.subtract)

    def __mul__(self, s):
        f = self.fn
        s = float(s)
        return Field(lambda Y, c: s * f(Y, c), self.degree, self.kind)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


def zero_field(n: int, r: int, degree: int, kind: str) -> Field:
    vshape = {"adj": (r, r), "fund": (r,), "real": ()}[kind]

    def fn(Y, c):
        return np.zeros((len(Y),) + (n,) * degree + vshape)

    return Field(fn, degree, kind)


def value_ndim(kind: str) -> int:
    return {"adj": 2, "fund": 1, "real": 0}[kind]


def _expand(a, ndim):
    return a.reshape(a.shape + (1,) * ndim)


def act(Aop, T, kind):
    """Action of algebra elements Aop (m, r, r) on values T (m, ..., value)."""
    if kind == "adj":
        k = T.ndim - 3
        Ab = Aop.reshape((Aop.shape[0],) + (1,) * k + Aop.shape[1:])
        return Ab @ T - T @ Ab
    if kind == "fund":
        k = T.ndim - 2
        Ab = Aop.reshape((Aop.shape[0],) + (1,) * k + Aop.shape[1:])
        return (Ab @ T[..., None])[..., 0]
    return np.zeros_like(T)


def act_all(A, T, kind):
    """Connection term with a derivative axis at 1: out[m, k, ...] = A_k . T."""
    m, n = A.shape[:2]
    if not A.any():
        return np.zeros((m, n) + T.shape[1:])
    Ak = A.reshape((m * n,) + A.shape[2:])
    Tk = np.repeat(T, n, axis=0)
    out = act(Ak, Tk, kind)
    return out.reshape((m, n) + T.shape[1:])


def inner_values(a, b, kind):
    if kind == "adj":
        return alg.inner(a, b)
    if kind == "fund":
        return alg.fiber_inner(a, b)
    return a * b


def form_inner(a, b, degree: int, kind: str, rho):
    """Pointwise inner product of p-forms from coordinate components."""
    v = inner_values(a, b, kind)
    v = v.reshape(v.shape[0], -1).sum(axis=1) if degree else v
    return v * rho ** (-2.0 * degree) / math.factorial(degree)


def form_norm(a, degree, kind, rho):
    return np.sqrt(np.maximum(form_inner(a, a, degree, kind, rho), 0.0))


# ---------------------------------------------------------------- pairs


@dataclass
class AnalyticPair:
    label: str
    base: str  # sphere | torus
    n: int
    r: int
    variant: str  # fiber | adjoint
    lam: float
    A_fn: Callable
    higgs_fn: Callable
    gauge_fn: Callable | None = None  # south-from-north transition g(z)
    L: float = 1.0
    params: dict = dc_field(default_factory=dict)
    F_fn: Callable | None = None  # closed-form curvature, when known
    link_fn: Callable | None = None  # (Y, mu) -> A_mu matrices; fast path for lattice sampling

    def __post_init__(self):
        if self.lam < 0:
            raise CatalogError("lambda must be >= 0")
        if self.variant not in ("fiber", "adjoint"):
            raise CatalogError(f"unknown variant {self.variant!r}")

    @property
    def higgs_kind(self) -> str:
        return "fund" if self.variant == "fiber" else "adj"

    @property
    def A(self) -> Field:
        return Field(self.A_fn, 1, "adj")

    @property
    def higgs(self) -> Field:
        return Field(self.higgs_fn, 0, self.higgs_kind)

    def charts(self):
        if self.base == "torus":
            return [Chart(self.n, "flat", self.L)]
        return [Chart(self.n, "north"), Chart(self.n, "south")]

    def transition(self, Z):
        if self.gauge_fn is None:
            return np.broadcast_to(np.eye(self.r), (len(Z), self.r, self.r))
        return self.gauge_fn(Z)

    def with_(self, **kw) -> "AnalyticPair":
        d = dict(self.__dict__)
        d.update(kw)
        return AnalyticPair(**d)


def transfer(pair: AnalyticPair, north_fn, degree: int, kind: str) -> Field:
    """Extend a field given in the north chart (or flat chart) to both charts."""

    def fn(Y, chart):
        if chart.kind != "south":
            return north_fn(Y)
        Z = np.asarray(Y, dtype=float)
        q = np.sum(Z * Z, axis=-1)
        safe = q > 1e-300
        Zs = np.where(safe[:, None], Z, 1.0)
        V = np.asarray(north_fn(swap_chart_points(Zs)))
        J = swap_jacobian(Zs)
        for s in range(degree):
            V = np.moveaxis(np.einsum("mja,mj...->ma...", J, np.moveaxis(V, 1 + s, 1)), 1, 1 + s)
        if kind != "real":
            g = pair.transition(Zs)
            gb = g.reshape((len(Z),) + (1,) * degree + g.shape[1:])
            if kind == "adj":
                V = gb @ V @ np.swapaxes(gb, -1, -2)
            else:
                V = (gb @ V[..., None])[..., 0]
        return np.where(_expand(safe, V.ndim - 1), V, 0.0)

    return Field(fn, degree, kind)


# ---------------------------------------------------------------- evaluation


def evaluate(fieldfn, rule: QuadratureRule, chunk: int = CHUNK):
    """Evaluate a chart-aware callable at every node of a rule."""
    out = None
    for chart, idx, Y in rule.groups():
        for s in range(0, len(idx), chunk):
            v = np.asarray(fieldfn(Y[s:s + chunk], chart))
            if out is None:
                out = np.zeros((len(rule),) + v.shape[1:])
            out[idx[s:s + chunk]] = v
    return out


def evaluate_at(fieldfn, n: int, X, base: str = "sphere", L: float = 1.0):
    """Evaluate at ambient sphere points (or torus points), choosing charts."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if base == "torus":
        return np.asarray(fieldfn(X, Chart(n, "flat", L)))
    out = None
    for chart, idx, Y in split_charts(n, X):
        v = np.asarray(fieldfn(Y, chart))
        if out is None:
            out = np.zeros((len(X),) + v.shape[1:])
        out[idx] = v
    return out


# ---------------------------------------------------------------- operators


def curvature(pair: AnalyticPair, h: float = H1) -> Field:
    """F_ij = d_i A_j - d_j A_i + [A_i, A_j] (closed form when the pair carries one)."""
    if pair.F_fn is not None:
        return Field(pair.F_fn, 2, "adj")

    def fn(Y, chart):
        Af = pair.A.on(chart)
        A = Af(Y)
        dA = partials(Af, Y, h)
        F = dA - np.swapaxes(dA, 1, 2)
        F = F + A[:, :, None] @ A[:, None, :] - A[:, None, :] @ A[:, :, None]
        return F

    return Field(fn, 2, "adj")


def _cov_partials(pair, f: Field, Y, chart, h):
    """D_i f at Y with a derivative axis at 1 (exterior covariant, no Christoffels)."""
    fo = f.on(chart)
    out = partials(fo, Y, h)
    if f.kind != "real":
        out = out + act_all(pair.A_fn(Y, chart), np.asarray(fo(Y)), f.kind)
    return out


def dnabla(pair: AnalyticPair, f: Field, h: float = H1) -> Field:
    p = f.degree
    if p > 2:
        raise ValueError("degree > 2 unsupported")

    def fn(Y, chart):
        D = _cov_partials(pair, f, Y, chart, h)
        if p == 0:
            return D
        if p == 1:
            return D - np.swapaxes(D, 1, 2)
        # cyclic sum D_ijk + D_jki + D_kij
        rest = list(range(4, D.ndim))
        return D + np.transpose(D, [0, 3, 1, 2] + rest) + np.transpose(D, [0, 2, 3, 1] + rest)

    return Field(fn, p + 1, f.kind)


def delta(pair: AnalyticPair, f: Field, h: float = H1) -> Field:
    p = f.degree
    if p < 1:
        raise ValueError("codifferential needs degree >= 1")
    n = pair.n

    def fn(Y, chart):
        rho = chart.rho

        def W(Z):
            w = np.asarray(f(Z, chart))
            return _expand(rho(Z) ** (n - 2 * p), w.ndim - 1) * w

        D = partials(W, Y, h)
        if f.kind != "real":
            D = D + act_all(pair.A_fn(Y, chart), W(Y), f.kind)
        div = np.einsum("mii...->mi...", D).sum(axis=1)
        return -_expand(rho(Y) ** (2 * (p - 1) - n), div.ndim - 1) * div

    return Field(fn, p - 1, f.kind)


def laplacian(pair: AnalyticPair, f: Field, h1: float = H2, h2: float = H2) -> Field:
    """Hodge Laplacian d delta + delta d (degree >= 1) or delta d (degree 0)."""
    dd = delta(pair, dnabla(pair, f, h1), h2)
    if f.degree == 0:
        return dd
    return dnabla(pair, delta(pair, f, h1), h2) + dd


def rfrak(pair: AnalyticPair, f: Field, h: float = H1, F: Field | None = None) -> Field:
    if f.kind != "adj":
        raise ValueError("rfrak acts on so(r)-valued forms")
    F = F or curvature(pair, h)

    def fn(Y, chart):
        Fv = F(Y, chart)
        w = f(Y, chart)
        r2 = _expand(chart.rho(Y) ** -2, 2 + f.degree)
        if f.degree == 1:
            # sum_j [F_jk, B_j]
            Fb = Fv
            Bb = w[:, :, None]
            return r2 * (Fb @ Bb - Bb @ Fb).sum(axis=1)
        if f.degree == 2:
            # sum_j [F_jk, w_jl] - [F_jl, w_jk]
            Fa = Fv[:, :, :, None]  # j k . l
            Wa = w[:, :, None, :]  # j . k l  -> w_jl at [j, k, l]
            t = (Fa @ Wa - Wa @ Fa).sum(axis=1)  # [k, l]
            return r2 * (t - np.swapaxes(t, 1, 2))
        raise ValueError("rfrak needs degree 1 or 2")

    return Field(fn, f.degree, "adj")


def twist_for(pair: AnalyticPair, chart: Chart, kind: str):
    if kind == "real":
        return None
    return lambda Y, TY: act_all(pair.A_fn(Y, chart), np.asarray(TY), kind)


def rough_laplacian(pair: AnalyticPair, f: Field, h1: float = H2, h2: float = H2) -> Field:
    def fn(Y, chart):
        tw = twist_for(pair, chart, f.kind)
        return _rough_laplacian(f.on(chart), f.degree, chart, h1, h2, tw)(Y)

    return Field(fn, f.degree, f.kind)


def bochner_constant(n: int, degree: int) -> float:
    if degree == 1:
        return float(n - 1)
    if degree == 2:
        return float(2 * (n - 2))
    raise ValueError("degree > 2 unsupported")


def bochner_defect(pair: AnalyticPair, psi: Field, h: float = H2) -> Field:
    """Delta psi - nabla* nabla psi - c psi - R(psi) as a field."""
    if pair.base != "sphere":
        raise ValueError("Bochner check is for the round sphere")
    c = bochner_constant(pair.n, psi.degree)
    lap = laplacian(pair, psi, h, h)
    rough = rough_laplacian(pair, psi, h, h)
    Rf = rfrak(pair, psi, h)

    def fn(Y, chart):
        return lap(Y, chart) - rough(Y, chart) - c * psi(Y, chart) - Rf(Y, chart)

    return Field(fn, psi.degree, psi.kind)


def bochner_residual(pair: AnalyticPair, psi: Field, X, h: float = H2):
    """Pointwise |Delta psi - nabla* nabla psi - c psi - R(psi)| at ambient points X."""
    d = bochner_defect(pair, psi, h)
    out = np.zeros(len(np.atleast_2d(X)))
    for chart, idx, Y in split_charts(pair.n, X):
        out[idx] = form_norm(d(Y, chart), psi.degree, psi.kind, chart.rho(Y))
    return out


def el_fields(pair: AnalyticPair, h1: float = H1, h2: float = H2):
    """Residual fields of the Euler-Lagrange system."""
    F = curvature(pair, h1)
    dF = delta(pair, F, h2)
    Du = dnabla(pair, pair.higgs, h1)
    dDu = delta(pair, Du, h2)
    lam = pair.lam

    def first(Y, chart):
        u = pair.higgs_fn(Y, chart)
        g = Du(Y, chart)
        if pair.variant == "fiber":
            src = -alg.mu(g, u[:, None])
        else:
            src = alg.bracket(g, u[:, None])
        return dF(Y, chart) - src

    def second(Y, chart):
        u = pair.higgs_fn(Y, chart)
        if pair.variant == "fiber":
            s = 1.0 - alg.fiber_norm2(u)
        else:
            s = 1.0 - alg.norm2(u)
        return dDu(Y, chart) - 0.5 * lam * _expand(s, u.ndim - 1) * u

    return Field(first, 1, "adj"), Field(second, 0, pair.higgs_kind)


def el_residual(pair: AnalyticPair, rule: QuadratureRule, h1: float = H1, h2: float = H2):
    """(sup |first residual|, sup |second residual|) over the nodes of rule."""
    e1, e2 = el_fields(pair, h1, h2)

    def both(Y, chart):
        rho = chart.rho(Y)
        return np.stack([form_norm(e1(Y, chart), 1, "adj", rho),
                         form_norm(e2(Y, chart), 0, pair.higgs_kind, rho)], axis=-1)

    v = evaluate(both, rule)
    return float(v[:, 0].max()), float(v[:, 1].max())


def density_fields(pair: AnalyticPair, h: float = H1):
    """Pointwise |F|^2, |d u|^2 and lambda/4 (1 - |u|^2)^2."""
    F = curvature(pair, h)
    Du = dnabla(pair, pair.higgs, h)
    kind = pair.higgs_kind

    def fn(Y, chart):
        rho = chart.rho(Y)
        u = pair.higgs_fn(Y, chart)
        s = alg.fiber_norm2(u) if kind == "fund" else alg.norm2(u)
        Fv, Dv = F(Y, chart), Du(Y, chart)
        return np.stack([form_inner(Fv, Fv, 2, "adj", rho),
                         form_inner(Dv, Dv, 1, kind, rho),
                         0.25 * pair.lam * (1.0 - s) ** 2], axis=-1)

    return fn


# ---------------------------------------------------------------- pointwise API


def _at(pair, f: Field, x, degree):
    """Frame components (e_i = rho^{-1} d_i) of a form at ambient points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    def fn(Y, c):
        v = f(Y, c)
        return v * _expand(c.rho(Y) ** -degree, v.ndim - 1)

    return evaluate_at(fn, pair.n, x, pair.base, pair.L)


def curvature_at(pair: AnalyticPair, x, h: float = H1):
    return _at(pair, curvature(pair, h), x, 2)


def dnabla_at(pair: AnalyticPair, f: Field, x, h: float = H1):
    return _at(pair, dnabla(pair, f, h), x, f.degree + 1)


def delta_at(pair: AnalyticPair, f: Field, x, h: float = H1):
    return _at(pair, delta(pair, f, h), x, f.degree - 1)


def rfrak_at(pair: AnalyticPair, f: Field, x, h: float = H1):
    return _at(pair, rfrak(pair, f, h), x, f.degree)


# ---------------------------------------------------------------- quaternions / BPST


def qmul(p, q):
    a1, b1, c1, d1 = np.moveaxis(p, -1, 0)
    a2, b2, c2, d2 = np.moveaxis(q, -1, 0)
    return np.stack([a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
                     a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
                     a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
                     a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2], axis=-1)


def qconj(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def _im_tensor(left_conj: bool) -> np.ndarray:
    """T[mu, a, k] with Im(conj(y) e_mu)_a = T y (left_conj) or Im(y conj(e_mu))_a."""
    E = np.eye(4)
    T = np.zeros((4, 3, 4))
    for mu in range(4):
        for k in range(4):
            if left_conj:
                T[mu, :, k] = qmul(qconj(E[k]), E[mu])[1:]
            else:
                T[mu, :, k] = qmul(E[k], qconj(E[mu]))[1:]
    return T


_T_REG = _im_tensor(True)
_T_SING = _im_tensor(False)
_TWO_L = 2.0 * alg.so3_generators()


def quat_rotation(g):
    """SO(3) matrix of x -> g x g^{-1} on imaginary quaternions (g unit)."""
    R = np.zeros(g.shape[:-1] + (3, 3))
    for a in range(3):
        e = np.zeros(4)
        e[a + 1] = 1.0
        R[..., :, a] = qmul(qmul(g, np.broadcast_to(e, g.shape)), qconj(g))[..., 1:]
    return R


def bpst_regular(Y, rho: float, center=None):
    """Im(conj(y - c) dy)/(|y - c|^2 + rho^2) embedded in so(3); shape (m, 4, 3, 3)."""
    y = Y if center is None else Y - center
    q = np.sum(y * y, axis=-1)
    c = np.einsum("uak,mk->mua", _T_REG, y) / (q + rho**2)[:, None, None]
    return np.einsum("mua,abc->mubc", c, _TWO_L)


def bpst_inverted(Y, rho: float, center=None):
    """Im(y conj(dy))/(|y|^2 + rho^{-2}): the same instanton seen from the far chart."""
    y = Y if center is None else Y - center
    q = np.sum(y * y, axis=-1)
    c = np.einsum("uak,mk->mua", _T_SING, y) / (q + rho**-2)[:, None, None]
    return np.einsum("mua,abc->mubc", c, _TWO_L)


def anti_bpst_regular(Y, rho: float, center=None):
    """Im((y - c) conj(dy))/(|y - c|^2 + rho^2): opposite orientation."""
    y = Y if center is None else Y - center
    q = np.sum(y * y, axis=-1)
    c = np.einsum("uak,mk->mua", _T_SING, y) / (q + rho**2)[:, None, None]
    return np.einsum("mua,abc->mubc", c, _TWO_L)


def _im_pair_tensor(left_conj: bool) -> np.ndarray:
    """T[mu, nu, a] = Im(conj(e_mu) e_nu - conj(e_nu) e_mu)_a, or with conj on the right."""
    E = np.eye(4)
    T = np.zeros((4, 4, 3))
    for mu in range(4):
        for nu in range(4):
            if left_conj:
                T[mu, nu] = (qmul(qconj(E[mu]), E[nu]) - qmul(qconj(E[nu]), E[mu]))[1:]
            else:
                T[mu, nu] = (qmul(E[mu], qconj(E[nu])) - qmul(E[nu], qconj(E[mu])))[1:]
    return np.einsum("mna,abc->mnbc", T, _TWO_L)


_F_SD = _im_pair_tensor(True)
_F_ASD = _im_pair_tensor(False)


def _bpst_curv(Y, s, center, T):
    y = Y if center is None else Y - center
    q = np.sum(y * y, axis=-1)
    return (s / (q + s) ** 2)[:, None, None, None, None] * T


def bpst_regular_curvature(Y, rho: float, center=None):
    """Curvature of bpst_regular: rho^2/(|y - c|^2 + rho^2)^2 Im(d conj(y) ^ dy)."""
    return _bpst_curv(Y, rho**2, center, _F_SD)


def bpst_inverted_curvature(Y, rho: float, center=None):
    return _bpst_curv(Y, rho**-2, center, _F_ASD)


def anti_bpst_regular_curvature(Y, rho: float, center=None):
    return _bpst_curv(Y, rho**2, center, _F_ASD)


def _bpst_transition(Z):
    q = np.sqrt(np.sum(Z * Z, axis=-1))
    return quat_rotation(Z / q[:, None])


def instanton_energy() -> float:
    """1/2 int |F|^2 of one instanton under the trace-1/2 convention: 8 pi^2."""
    return 8.0 * math.pi**2


# ---------------------------------------------------------------- catalog


def _const_higgs(n, r, variant, unit: bool):
    if variant == "fiber":
        v = np.zeros(r)
        if unit:
            v[0] = math.sqrt(2.0)  # |u|^2 = 1/2 u.u = 1
        return lambda Y, c: np.broadcast_to(v, (len(Y), r)).copy()
    m = np.zeros((r, r))
    if unit:
        m[0, 1], m[1, 0] = 1.0, -1.0
    return lambda Y, c: np.broadcast_to(m, (len(Y), r, r)).copy()


def _zero_A(n, r):
    return lambda Y, c: np.zeros((len(Y), n, r, r))


def flat_unit(n=4, r=3, variant="fiber", lam=1.0, base="sphere", L=1.0):
    return AnalyticPair("flat_unit", base, n, r, variant, lam, _zero_A(n, r),
                        _const_higgs(n, r, variant, True), None, L, {})


def flat_zero(n=4, r=3, variant="fiber", lam=1.0, base="sphere", L=1.0):
    return AnalyticPair("flat_zero", base, n, r, variant, lam, _zero_A(n, r),
                        _const_higgs(n, r, variant, False), None, L, {})


def bpst_scaled(rho=1.0, x0="north", variant="fiber", lam=1.0, base="sphere", L=1.0,
                anti_rho=None, anti_offset=None, higgs="zero"):
    """One instanton of scale rho centered at x0, with u = 0.

    On S^4, x0 is a pole.  On T^4 (base="torus"), x0 is a point of [0, L)^4 or
    "center"; see `torus_bubble` for how the configuration is closed up.
    """
    if not rho > 0:
        raise CatalogError("rho must be > 0")
    if base == "torus":
        c = np.full(4, L / 2) if x0 is None or isinstance(x0, str) else np.asarray(x0, dtype=float)
        return torus_bubble(rho, c, variant=variant, lam=lam, L=L, anti_rho=anti_rho,
                            anti_offset=anti_offset, higgs=higgs)
    if x0 not in ("north", "south"):
        raise CatalogError("x0 must be 'north' or 'south' on the sphere")
    n, r = 4, 3

    def A(Y, chart):
        near = (chart.kind == "north") == (x0 == "north")
        return bpst_regular(Y, rho) if near else bpst_inverted(Y, rho)

    def F(Y, chart):
        near = (chart.kind == "north") == (x0 == "north")
        return bpst_regular_curvature(Y, rho) if near else bpst_inverted_curvature(Y, rho)

    if x0 == "north":
        gauge = _bpst_transition
    else:
        def gauge(Z):
            return np.swapaxes(_bpst_transition(Z), -1, -2)
    label = "bpst_s4" if (rho == 1.0 and x0 == "north") else "bpst_scaled"
    return AnalyticPair(label, "sphere", n, r, variant, lam, A, _const_higgs(n, r, variant, False),
                        gauge, 1.0, {"rho": rho, "x0": x0}, F)


def bpst_s4(variant="fiber", lam=1.0):
    return bpst_scaled(1.0, "north", variant, lam)


def _smooth_step(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def _smooth_step_d(t):
    return np.where((t > 0) & (t < 1), 30.0 * t * t * (1.0 - t) ** 2, 0.0)


def _unit_and_d(y, dirs):
    """y/|y| as quaternions, its partials d[m, mu, k] for mu in dirs, and |y|."""
    r = np.sqrt(np.sum(y * y, -1))
    r = np.where(r > 0, r, 1.0)
    h = y / r[:, None]
    dh = (np.eye(4)[list(dirs)][None] - h[:, dirs, None] * h[:, None, :]) / r[:, None, None]
    return h, dh, r


def _log_frame(p, dp):
    """l = log p (imaginary part only, |l| < pi) and its partials, for unit p."""
    p0, pv = p[:, 0], p[:, 1:]
    nv = np.sqrt(np.sum(pv * pv, -1))
    th = np.arctan2(nv, p0)
    small = th < 1e-6
    sn = np.where(small, 1.0, np.sin(th))
    g = np.where(small, 1.0 + th**2 / 6.0, th / sn)
    gp = np.where(small, th / 3.0, (np.sin(th) - th * np.cos(th)) / sn**2)
    dnv = np.einsum("ma,mua->mu", pv, dp[:, :, 1:]) / np.where(nv > 0, nv, 1.0)[:, None]
    dth = p0[:, None] * dnv - nv[:, None] * dp[:, :, 0]
    dl = (gp[:, None] * dth)[:, :, None] * pv[:, None, :] + g[:, None, None] * dp[:, :, 1:]
    return g[:, None] * pv, dl


def _exp_frame(v, dv):
    """s = exp(v) and Im(conj(s) ds) for imaginary v (m, 3) with partials dv (m, 4, 3)."""
    al = np.sqrt(np.sum(v * v, -1))
    small = al < 1e-6
    als = np.where(small, 1.0, al)
    c = np.where(small, 1.0 - 2.0 * al**2 / 3.0, np.sin(2 * als) / (2 * als))
    k = np.where(small, 2.0 / 3.0 - 2.0 * al**2 / 15.0, (1.0 - c) / als**2)
    e = np.where(small, 1.0 - al**2 / 3.0, np.sin(als) ** 2 / als**2)
    vd = np.einsum("ma,mua->mu", v, dv)
    S = (c[:, None, None] * dv + k[:, None, None] * vd[:, :, None] * v[:, None, :]
         - e[:, None, None] * np.cross(v[:, None, :], dv))
    sinc = np.where(small, 1.0 - al**2 / 6.0, np.sin(als) / als)
    return np.concatenate([np.cos(al)[:, None], sinc[:, None] * v], -1), S


def _dipole(y1, y2, rho1, rho2, ball1, ball2, tube, dirs=(0, 1, 2, 3), core2=(math.inf, 1.0)):
    """Instanton at y1 = 0 plus anti-instanton at y2 = 0, unwound away from them.

    With h_k = y_k/|y_k|, p = h1 conj(h2) and f_k = q_k/(q_k + rho_k^2), the pair
    A = f1 f2 h2 (conj(h1) dh1) conj(h2) + f2 h2 conj(dh2) is smooth (regular
    gauge at both centers) and tends to the pure gauge conj(p) dp.  Outside balls about the centers
    and a tube about the segment joining them (where p = -1) the gauge
    s = p^(-phi) removes it, leaving (f - 1) dp conj(p), which decays.  Each
    region is given as (radius, transition width).  The anti-instanton profile
    is switched off beyond core2, so f2 = 1 near the instanton and A is there
    exactly the regular-gauge instanton transformed by h2.
    Returns imaginary-quaternion components for the directions `dirs`,
    shape (m, len(dirs), 3).
    """
    dirs = list(dirs)
    h1, dh1, r1 = _unit_and_d(y1, dirs)
    h2, dh2, r2 = _unit_and_d(y2, dirs)
    q1, q2 = r1**2, r2**2
    beta = 1.0 - _smooth_step((r2 - core2[0]) / core2[1])
    f2 = q2 / (q2 + rho2**2 * beta)
    f = f2 * q1 / (q1 + rho1**2)
    p = qmul(h1, qconj(h2))
    dp = qmul(dh1, qconj(h2)[:, None]) + qmul(h1[:, None], qconj(dh2))
    # conj(p) dp = h2 (conj(h1) dh1) conj(h2) + h2 conj(dh2); only the first term gets f1
    X1 = qmul(qmul(h2[:, None], qmul(qconj(h1)[:, None], dh1)), qconj(h2)[:, None])
    X = f[:, None, None] * X1 + f2[:, None, None] * qmul(h2[:, None], qconj(dh2))
    out = X[..., 1:].copy()
    e = (y1 - y2)[0]
    d = math.sqrt(float(e @ e))
    e = e / d
    t = np.clip(y1 @ e, 0.0, d)
    w = y1 - t[:, None] * e
    ds = np.sqrt(np.sum(w * w, -1))
    dds = w / np.where(ds > 0, ds, 1.0)[:, None]
    a1, a2, a3 = (r1 - ball1[0]) / ball1[1], (r2 - ball2[0]) / ball2[1], (ds - tube[0]) / tube[1]
    S1, S2, S3 = _smooth_step(a1), _smooth_step(a2), _smooth_step(a3)
    phi = S1 * S2 * S3
    act = phi > 0
    if not np.any(act):
        return out
    dphi = ((_smooth_step_d(a1) * S2 * S3 / ball1[1])[:, None] * h1[:, dirs]
            + (S1 * _smooth_step_d(a2) * S3 / ball2[1])[:, None] * h2[:, dirs]
            + (S1 * S2 * _smooth_step_d(a3) / tube[1])[:, None] * dds[:, dirs])[act]
    l, dl = _log_frame(p[act], dp[act])
    ph = phi[act]
    s, S = _exp_frame(-ph[:, None] * l, -(dphi[:, :, None] * l[:, None, :] + ph[:, None, None] * dl))
    rot = qmul(qmul(qconj(s)[:, None], X[act]), s[:, None])[..., 1:]
    out[act] = rot + S
    return out


def torus_bubble(rho, center, variant="fiber", lam=1.0, L=1.0, anti_rho=None,
                 anti_offset=None, higgs="zero", geometry=None):
    """Instanton of scale rho at `center` on T^4, made periodic.

    A smooth connection on the trivial bundle over T^4 has zero total charge,
    so the instanton comes with an anti-instanton of fixed scale anti_rho
    (default 0.15 L) at center + anti_offset (default 0.18 L (1, 1, 1, 1)).
    Both sit in regular gauge; the far pure-gauge tail is removed by a gauge
    change in a shell about `center` (see `_dipole`) and the result is cut
    off near the faces of the unit cell about `center`.  The ball of radius
    L/4 about `center` holds the unmodified regular-gauge pair.
    """
    c1 = np.asarray(center, dtype=float)
    anti_rho = 0.15 * L if anti_rho is None else float(anti_rho)
    off = np.full(4, 0.18 * L) if anti_offset is None else np.asarray(anti_offset, dtype=float)
    c2 = c1 + off
    g = {"ball1": (0.25, 0.15), "ball2": (0.1, 0.1), "tube": (0.1, 0.1), "core2": (0.15, 0.15),
         "cut": (0.42, 0.5)}
    g.update(geometry or {})
    ball1, ball2, tube, core2 = (tuple(L * x for x in g[k])
                                 for k in ("ball1", "ball2", "tube", "core2"))
    r0, r1 = (L * x for x in g["cut"])

    def comps(Y, dirs):
        D = Y - c1
        D = D - L * np.round(D / L)
        Yu = c1 + D
        c = _dipole(Yu - c1, Yu - c2, rho, anti_rho, ball1, ball2, tube, dirs, core2)
        chi = np.prod(_smooth_step((r1 - np.abs(D)) / (r1 - r0)), axis=-1)
        return chi[:, None, None] * c

    def A(Y, chart):
        return np.einsum("mua,abc->mubc", comps(Y, (0, 1, 2, 3)), _TWO_L)

    geo = [np.asarray(x, dtype=float) for x in (ball1, ball2, tube, core2, (r0, r1))]

    def link(Y, mu):
        from ._kernels import dipole_links
        c = dipole_links(np.ascontiguousarray(Y, dtype=float), int(mu), c1, off, float(L),
                         float(rho), anti_rho, *geo)
        return np.einsum("ma,abc->mbc", c, _TWO_L)

    hig = _const_higgs(4, 3, variant, higgs == "unit")
    return AnalyticPair("bpst_scaled", "torus", 4, 3, variant, lam, A, hig, None, L,
                        {"rho": rho, "x0": tuple(float(x) for x in c1), "anti_rho": anti_rho,
                         "anti_offset": tuple(float(x) for x in off)}, link_fn=link)


def _poly_features(Y, deg):
    """Monomials of chart coordinates up to total degree deg, shape (m, K)."""
    m, n = Y.shape
    feats = [np.ones(m)]
    prev = [((), np.ones(m))]
    for d in range(deg):
        nxt = []
        for idx, v in prev:
            start = idx[-1] if idx else 0
            for k in range(start, n):
                nxt.append((idx + (k,), v * Y[:, k]))
        feats += [v for _, v in nxt]
        prev = nxt
    return np.stack(feats, axis=-1)


def random_field(pair: AnalyticPair, rng: np.random.Generator, degree: int, kind: str,
                 scale: float = 1.0, poly: int = 2, decay: int = 5) -> Field:
    """Smooth random field on the base of `pair`.

    Sphere: rho^decay times a random polynomial in north-chart coordinates,
    extended to the south chart through the bundle transition, so it is a
    global smooth section.  Torus: a random low trigonometric polynomial.
    """
    n, r = pair.n, pair.r
    vshape = {"adj": (r, r), "fund": (r,), "real": ()}[kind]
    ncomp = n**degree
    if pair.base == "torus":
        K = rng.integers(-1, 2, size=(4, n))
        ph = rng.uniform(0, 2 * np.pi, size=4)
        C = rng.standard_normal((4, ncomp) + vshape)
        L = pair.L

        def tfn(Y, chart):
            arg = 2 * np.pi * (Y @ K.T) / L + ph
            v = np.einsum("mt,tc...->mc...", np.cos(arg), C)
            return _finish(v, degree, kind, n, len(Y)) * scale

        return Field(tfn, degree, kind)
    K = _poly_features(np.zeros((1, n)), poly).shape[1]
    C = rng.standard_normal((K, ncomp) + vshape)

    def nfn(Y):
        P = _poly_features(Y, poly)
        v = np.einsum("mk,kc...->mc...", P, C)
        rho = 2.0 / (1.0 + np.sum(Y * Y, axis=-1))
        v = v * _expand(rho**decay, v.ndim - 1)
        return _finish(v, degree, kind, n, len(Y)) * scale

    return transfer(pair, nfn, degree, kind)


def _finish(v, degree, kind, n, m):
    v = v.reshape((m,) + (n,) * degree + v.shape[2:])
    if kind == "adj":
        v = alg.antisym(v)
    if degree == 2:
        v = 0.5 * (v - np.swapaxes(v, 1, 2))
    return v


def perturbed(entry: AnalyticPair, seed: int = 0, amp: float = 0.1) -> AnalyticPair:
    rng = np.random.default_rng(seed)
    B = random_field(entry, rng, 1, "adj")
    w = random_field(entry, rng, 0, entry.higgs_kind)
    A0, h0 = entry.A_fn, entry.higgs_fn
    return entry.with_(label="perturbed", F_fn=None, link_fn=None,
                       A_fn=lambda Y, c: A0(Y, c) + amp * B(Y, c),
                       higgs_fn=lambda Y, c: h0(Y, c) + amp * w(Y, c),
                       params={"entry": entry.label, "seed": seed, "amp": amp, **entry.params})


def gauge_transform(pair: AnalyticPair, X0, s_coeff) -> AnalyticPair:
    """Gauge transform by g = exp(s(x) X0) with s(x) = s_coeff . x (ambient linear).

    A' = g A g^{-1} - (dg) g^{-1},  u' = g u.  Exact derivative; defined in the
    north and flat charts (which is where invariance is checked).
    """
    X0 = np.asarray(X0, dtype=float)
    sc = np.asarray(s_coeff, dtype=float)

    def parts(Y, chart):
        if chart.kind == "south":
            raise GeometryError("gauge_transform is defined on the north chart")
        X = chart.to_ambient(Y) if chart.kind != "flat" else Y
        s = X @ sc
        if chart.kind == "flat":
            ds = np.broadcast_to(sc, Y.shape)
        else:
            ds = np.einsum("mai,a->mi", chart.dx_dy(Y), sc)
        g = alg.expm_so(s[:, None, None] * X0)
        return g, ds

    A0, h0 = pair.A_fn, pair.higgs_fn

    def A(Y, chart):
        g, ds = parts(Y, chart)
        gb = g[:, None]
        return gb @ A0(Y, chart) @ np.swapaxes(gb, -1, -2) - ds[:, :, None, None] * X0

    def hg(Y, chart):
        g, _ = parts(Y, chart)
        u = h0(Y, chart)
        if pair.variant == "fiber":
            return (g @ u[..., None])[..., 0]
        return g @ u @ np.swapaxes(g, -1, -2)

    return pair.with_(A_fn=A, higgs_fn=hg, label=pair.label + "+gauge", F_fn=None, link_fn=None)


CATALOG = {
    "flat_unit": {"params": {"n": "int>=2", "variant": "fiber|adjoint", "lam": "float>=0"}},
    "flat_zero": {"params": {"n": "int>=2", "variant": "fiber|adjoint", "lam": "float>=0"}},
    "bpst_s4": {"params": {"variant": "fiber|adjoint", "lam": "float>=0"}},
    "bpst_scaled": {"params": {"rho": "float>0", "x0": "north|south", "variant": "fiber|adjoint",
                               "lam": "float>=0"}},
    "perturbed": {"params": {"entry": "catalog name", "seed": "int", "amp": "float>=0",
                             "variant": "fiber|adjoint", "lam": "float>=0"}},
}
CATALOG_VERSION = 1


def parse_entry(spec: str):
    """'name:key=val,key=val' -> (name, params dict of strings)."""
    name, _, rest = spec.partition(":")
    name = name.strip()
    params = {}
    if rest.strip():
        for item in rest.split(","):
            k, eq, v = item.partition("=")
            if not eq:
                raise CatalogError(f"malformed parameter {item!r}")
            params[k.strip()] = v.strip()
    return name, params


def make_entry(spec: str, **defaults) -> AnalyticPair:
    name, raw = parse_entry(spec)
    if name not in CATALOG:
        raise CatalogError(f"unknown catalog entry {name!r}")
    allowed = set(CATALOG[name]["params"])
    extra = set(raw) - allowed
    if extra:
        raise CatalogError(f"unknown parameter(s) for {name}: {sorted(extra)}")
    p = dict(defaults)

    def num(k, cast=float):
        try:
            return cast(raw[k])
        except ValueError as e:
            raise CatalogError(f"bad value for {k}: {raw[k]!r}") from e

    if "variant" in raw:
        if raw["variant"] not in ("fiber", "adjoint"):
            raise CatalogError("variant must be fiber or adjoint")
        p["variant"] = raw["variant"]
    if "lam" in raw:
        p["lam"] = num("lam")
        if p["lam"] < 0:
            raise CatalogError("lam must be >= 0")
    variant = p.get("variant", "fiber")
    lam = p.get("lam", 1.0)
    if name in ("flat_unit", "flat_zero"):
        n = num("n", int) if "n" in raw else p.get("n", 4)
        if n < 2:
            raise CatalogError("n must be >= 2")
        return (flat_unit if name == "flat_unit" else flat_zero)(n=n, variant=variant, lam=lam)
    if name == "bpst_s4":
        return bpst_s4(variant, lam)
    if name == "bpst_scaled":
        rho = num("rho") if "rho" in raw else 1.0
        if not rho > 0 or not math.isfinite(rho):
            raise CatalogError("rho must be a positive number")
        x0 = raw.get("x0", "north")
        if x0 not in ("north", "south"):
            raise CatalogError("x0 must be north or south")
        return bpst_scaled(rho, x0, variant, lam)
    inner_name = raw.get("entry", "flat_unit")
    if inner_name in ("perturbed",) or inner_name not in CATALOG:
        raise CatalogError(f"bad base entry {inner_name!r}")
    seed = num("seed", int) if "seed" in raw else 0
    amp = num("amp") if "amp" in raw else 0.1
    if amp < 0:
        raise CatalogError("amp must be >= 0")
    return perturbed(make_entry(inner_name, variant=variant, lam=lam), seed, amp)


def catalog_list():
    return {"version": CATALOG_VERSION,
            "entries": [{"name": k, "params": v["params"]} for k, v in sorted(CATALOG.items())]}
