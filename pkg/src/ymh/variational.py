"""The functional, the gauge slice, the second-variation operator and the
conformal-Killing identities.

Variations are pairs (B, w) of chart-aware fields: B an so(r)-valued 1-form,
w a fiber section (variant "fiber") or an so(r)-valued function (variant
"adjoint").  The operator S is evaluated in its slice-restricted form

  fiber:   S1 = Delta B + R(B) + mu(B u, u) + 2 mu(D u, w)
           S2 = delta d w + mu(w, u) u - 2 B _| D u + lam <u, w> u - lam/2 (1 - |u|^2) w
  adjoint: S1 = Delta B + R(B) - [[B, P], P] - 2 [D P, p]
           S2 = delta d p + [[P, p], P] + 2 D P _| B + lam <P, p> P - lam/2 (1 - |P|^2) p

with B _| D u = sum_i B(e_i) D_{e_i} u over an orthonormal frame.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from . import algebra as alg
from .geometry import (DEFAULT_QUAD_ORDER, KillingField, QuadratureRule, integrate, sphere_rule,
                       torus_rule)
from .smoothfields import (CHUNK, H1, AnalyticPair, Field, _expand, curvature,
                           delta, density_fields, dnabla, el_residual, evaluate, form_inner,
                           laplacian, rfrak, transfer)

EL_THRESHOLD = 5e-3
HV = 5e-4  # step for the nested second-order operators of this module
VAR_ORDER = 12  # quadrature exactness degree for S-based integrals
DEFAULT_TRIALS = 200
TORUS_NODES = 24


class VariationalError(ValueError):
    pass


# ---------------------------------------------------------------- rules and admission


@lru_cache(maxsize=16)
def _sphere_rule(n: int, order: int) -> QuadratureRule:
    return sphere_rule(n, order)


def default_rule(pair: AnalyticPair, order: int = VAR_ORDER) -> QuadratureRule:
    if pair.base == "torus":
        return torus_rule(pair.n, TORUS_NODES, pair.L)
    return _sphere_rule(pair.n, order)


_ADMISSION: dict = {}


def admission(pair: AnalyticPair, rule: QuadratureRule | None = None,
              threshold: float = EL_THRESHOLD):
    """(is_ymh, sup residual) with the Euler-Lagrange residual at default resolution."""
    rule = rule or default_rule(pair, DEFAULT_QUAD_ORDER)
    key = (id(pair), id(rule))
    hit = _ADMISSION.get(key)
    if hit is None or hit[0] is not pair:
        res = max(el_residual(pair, rule))
        if len(_ADMISSION) > 64:
            _ADMISSION.clear()
        hit = _ADMISSION[key] = (pair, rule, res)
    res = hit[2]
    return res < threshold, res


def _admit(pair, rule, check, threshold):
    if not check:
        return True, float("nan")
    ok, res = admission(pair, rule, threshold)
    if not ok:
        warnings.warn(f"{pair.label}: Euler-Lagrange residual {res:.3g} above {threshold:g}; "
                      "operator evaluated anyway", RuntimeWarning, stacklevel=3)
    return ok, res


# ---------------------------------------------------------------- energy


@dataclass
class EnergyReport:
    total: float
    curvature: float
    gradient: float
    potential: float
    order: int

    def as_dict(self):
        return dict(self.__dict__)


def energy(pair: AnalyticPair, rule: QuadratureRule | None = None, h: float = H1,
           deterministic: bool = False) -> EnergyReport:
    """1/2 int |F|^2 + |D u|^2 + lam/4 (1 - |u|^2)^2 and its three parts."""
    rule = rule or default_rule(pair, DEFAULT_QUAD_ORDER)
    dens = evaluate(density_fields(pair, h), rule)
    parts = [0.5 * integrate(dens[:, k], rule, deterministic) for k in range(3)]
    parts = [max(p, 0.0) for p in parts]
    return EnergyReport(sum(parts), parts[0], parts[1], parts[2], rule.order)


# ---------------------------------------------------------------- variations


@dataclass
class VariationPair:
    B: Field
    w: Field
    label: str = ""

    def _check(self, other):
        if not isinstance(other, VariationPair):
            return NotImplemented
        return other

    def __add__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return VariationPair(self.B + other.B, self.w + other.w, self.label)

    def __sub__(self, other):
        if self._check(other) is NotImplemented:
            return NotImplemented
        return VariationPair(self.B - other.B, self.w - other.w, self.label)

    def __mul__(self, s):
        return VariationPair(self.B * s, self.w * s, self.label)

    __rmul__ = __mul__


def zero_variation(pair: AnalyticPair) -> VariationPair:
    from .smoothfields import zero_field

    return VariationPair(zero_field(pair.n, pair.r, 1, "adj"),
                         zero_field(pair.n, pair.r, 0, pair.higgs_kind), "zero")


def _variant_check(pair, var):
    if var.B.degree != 1 or var.B.kind != "adj":
        raise VariationalError("B must be an so(r)-valued 1-form")
    if var.w.degree != 0 or var.w.kind != pair.higgs_kind:
        raise VariationalError(f"w must be a {pair.higgs_kind} section for the {pair.variant} variant")


def _fiber_norm(u, kind):
    return alg.fiber_norm2(u) if kind == "fund" else alg.norm2(u)


def _pair_inner(u, w, kind):
    return alg.fiber_inner(u, w) if kind == "fund" else alg.inner(u, w)


def _source(pair, w, u):
    """The Higgs source of the slice: mu(w, u) or [P, p]."""
    if pair.variant == "fiber":
        return alg.mu(w, u)
    return alg.bracket(u, w)


def gauge_direction(pair: AnalyticPair, sigma: Field, h: float = H1) -> VariationPair:
    """zeta(sigma) = (-D sigma, sigma u) or (-D sigma, [sigma, P])."""
    if sigma.degree != 0 or sigma.kind != "adj":
        raise VariationalError("sigma must be an so(r)-valued function")
    Ds = dnabla(pair, sigma, h)

    def w(Y, chart):
        s = sigma(Y, chart)
        u = pair.higgs_fn(Y, chart)
        if pair.variant == "fiber":
            return alg.apply(s, u)
        return alg.bracket(s, u)

    return VariationPair(Ds * -1.0, Field(w, 0, pair.higgs_kind), "gauge")


def slice_defect(pair: AnalyticPair, var: VariationPair, h: float = HV) -> Field:
    """delta B - mu(w, u) (fiber) or delta B - [P, p] (adjoint); zero on the slice."""
    _variant_check(pair, var)
    dB = delta(pair, var.B, h)

    def fn(Y, chart):
        return dB(Y, chart) - _source(pair, var.w(Y, chart), pair.higgs_fn(Y, chart))

    return Field(fn, 0, "adj")


def slice_residual(pair: AnalyticPair, var: VariationPair, rule: QuadratureRule | None = None,
                   h: float = HV, deterministic: bool = False) -> float:
    """L^2 norm of the slice defect."""
    rule = rule or default_rule(pair)
    d = slice_defect(pair, var, h)
    v = evaluate(lambda Y, c: alg.norm2(d(Y, c)), rule)
    return math.sqrt(max(integrate(v, rule, deterministic), 0.0))


def pairing(pair: AnalyticPair, a: VariationPair, b: VariationPair,
            rule: QuadratureRule | None = None, deterministic: bool = False) -> float:
    """L^2 inner product int <B_a, B_b> + <w_a, w_b>."""
    rule = rule or default_rule(pair)
    kind = pair.higgs_kind

    def fn(Y, c):
        rho = c.rho(Y)
        return (form_inner(a.B(Y, c), b.B(Y, c), 1, "adj", rho)
                + form_inner(a.w(Y, c), b.w(Y, c), 0, kind, rho))

    return integrate(evaluate(fn, rule), rule, deterministic)


# ---------------------------------------------------------------- the operator S


def _contract(B, D, rho):
    """sum_i B(e_i) D_{e_i}: coordinate sum weighted by rho^-2; B (m,n,r,r), D (m,n,...)."""
    r2 = rho**-2.0
    if D.ndim == 3:  # fiber
        return r2[:, None] * np.einsum("mkab,mkb->ma", B, D)
    return r2[:, None, None] * (B @ D - D @ B).sum(axis=1) * -1.0  # sum [D_i, B_i]


def operator_parts(pair: AnalyticPair, var: VariationPair, h1: float = HV, h2: float = HV):
    """Pointwise blocks of S(B, w): (S1 from B, S1 from w, S2 from B, S2 from w)."""
    _variant_check(pair, var)
    lapB = laplacian(pair, var.B, h1, h2)
    RB = rfrak(pair, var.B, H1)
    ddw = delta(pair, dnabla(pair, var.w, h1), h2)
    Du = dnabla(pair, pair.higgs, H1)
    lam = pair.lam
    kind = pair.higgs_kind

    def fn(Y, chart):
        rho = chart.rho(Y)
        u = pair.higgs_fn(Y, chart)
        B = var.B(Y, chart)
        w = var.w(Y, chart)
        D = Du(Y, chart)
        ub = u[:, None]
        s = _expand(1.0 - _fiber_norm(u, kind), u.ndim - 1)
        uw = _expand(_pair_inner(u, w, kind), u.ndim - 1)
        if pair.variant == "fiber":
            bb = lapB(Y, chart) + RB(Y, chart) + alg.mu(alg.apply(B, ub), ub)
            bw = 2.0 * alg.mu(D, w[:, None])
            wb = -2.0 * _contract(B, D, rho)
            ww = ddw(Y, chart) + alg.apply(alg.mu(w, u), u) + lam * uw * u - 0.5 * lam * s * w
        else:
            bb = lapB(Y, chart) + RB(Y, chart) - alg.bracket(alg.bracket(B, ub), ub)
            bw = -2.0 * alg.bracket(D, w[:, None])
            wb = 2.0 * _contract(B, D, rho)
            ww = (ddw(Y, chart) + alg.bracket(alg.bracket(u, w), u) + lam * uw * u
                  - 0.5 * lam * s * w)
        return bb, bw, wb, ww

    return fn


def second_variation_apply(pair: AnalyticPair, var: VariationPair, h1: float = HV,
                           h2: float = HV) -> VariationPair:
    parts = operator_parts(pair, var, h1, h2)

    def s1(Y, c):
        bb, bw, _, _ = parts(Y, c)
        return bb + bw

    def s2(Y, c):
        _, _, wb, ww = parts(Y, c)
        return wb + ww

    return VariationPair(Field(s1, 1, "adj"), Field(s2, 0, pair.higgs_kind), "S")


@dataclass
class QuadraticReport:
    value: float
    curvature: float  # B-B block
    mixed: float  # B-w cross terms
    higgs: float  # w-w block
    order: int
    fd_step: float
    admissible: bool = True
    el_residual: float = float("nan")

    def as_dict(self):
        return dict(self.__dict__)


def quadratic_form(pair: AnalyticPair, var: VariationPair, rule: QuadratureRule | None = None,
                   h: float = HV, check: bool = True, threshold: float = EL_THRESHOLD,
                   deterministic: bool = False) -> QuadraticReport:
    """L(B, w) = int <S(B, w), (B, w)> with its block decomposition."""
    rule = rule or default_rule(pair)
    ok, res = _admit(pair, rule, check, threshold)
    parts = operator_parts(pair, var, h, h)
    kind = pair.higgs_kind

    def fn(Y, c):
        rho = c.rho(Y)
        bb, bw, wb, ww = parts(Y, c)
        B, w = var.B(Y, c), var.w(Y, c)
        t_bb = form_inner(bb, B, 1, "adj", rho)
        t_mx = form_inner(bw, B, 1, "adj", rho) + form_inner(wb, w, 0, kind, rho)
        t_ww = form_inner(ww, w, 0, kind, rho)
        return np.stack([t_bb + t_mx + t_ww, t_bb, t_mx, t_ww], axis=-1)

    v = evaluate(fn, rule)
    I = [integrate(v[:, k], rule, deterministic) for k in range(4)]
    return QuadraticReport(I[0], I[1], I[2], I[3], rule.order, h, ok, res)


def self_adjointness_defect(pair: AnalyticPair, a: VariationPair, b: VariationPair,
                            rule: QuadratureRule | None = None, h: float = HV,
                            deterministic: bool = False) -> float:
    """|int <S a, b> - int <a, S b>|."""
    rule = rule or default_rule(pair)
    Sa = second_variation_apply(pair, a, h, h)
    Sb = second_variation_apply(pair, b, h, h)
    return abs(pairing(pair, Sa, b, rule, deterministic) - pairing(pair, a, Sb, rule, deterministic))


# ---------------------------------------------------------------- Killing variations


def _require_sphere(pair):
    if pair.base != "sphere":
        raise VariationalError("conformal Killing variations need base = sphere")


def killing_variation(pair: AnalyticPair, v, h: float = H1) -> VariationPair:
    """(i_V F, D_V u) for V = v - (v.x) x."""
    _require_sphere(pair)
    v = np.asarray(v, dtype=float)
    if v.shape != (pair.n + 1,):
        raise VariationalError(f"v must have {pair.n + 1} components")
    kf = KillingField.of(v)
    F = curvature(pair, h)
    Du = dnabla(pair, pair.higgs, h)

    def B(Y, chart):
        V = kf.chart_components(chart, Y)
        return np.einsum("mi,mik...->mk...", V, F(Y, chart))

    def w(Y, chart):
        V = kf.chart_components(chart, Y)
        return np.einsum("mi,mi...->m...", V, Du(Y, chart))

    return VariationPair(Field(B, 1, "adj"), Field(w, 0, pair.higgs_kind), f"killing{tuple(v)}")


def _identity_integrand(pair, var, v, h):
    """(4-n)|B|^2 + (2-n)|w|^2 - 2 f_v (<B, delta F> + <delta d u, w>)."""
    n = pair.n
    dF = delta(pair, curvature(pair, H1), h)
    ddu = delta(pair, dnabla(pair, pair.higgs, H1), h)
    vv = np.asarray(v, dtype=float)
    kind = pair.higgs_kind

    def fn(Y, chart):
        rho = chart.rho(Y)
        B, w = var.B(Y, chart), var.w(Y, chart)
        f = chart.to_ambient(Y) @ vv
        return ((4 - n) * form_inner(B, B, 1, "adj", rho) + (2 - n) * form_inner(w, w, 0, kind, rho)
                - 2.0 * f * (form_inner(B, dF(Y, chart), 1, "adj", rho)
                             + form_inner(ddu(Y, chart), w, 0, kind, rho)))

    return fn


@dataclass
class IdentityReport:
    lhs: float
    rhs: float
    defect: float
    order: int
    fd_step: float

    def as_dict(self):
        return dict(self.__dict__)


def conformal_identity_check(pair: AnalyticPair, v, rule: QuadratureRule | None = None,
                             h: float = HV, check: bool = True,
                             deterministic: bool = False) -> IdentityReport:
    rule = rule or default_rule(pair)
    var = killing_variation(pair, v)
    lhs = quadratic_form(pair, var, rule, h, check, deterministic=deterministic).value
    rhs = integrate(evaluate(_identity_integrand(pair, var, v, h), rule), rule, deterministic)
    return IdentityReport(lhs, rhs, abs(lhs - rhs) / (1.0 + abs(rhs)), rule.order, h)


def trace_identity_check(pair: AnalyticPair, rule: QuadratureRule | None = None, h: float = HV,
                         check: bool = True, deterministic: bool = False) -> IdentityReport:
    """sum_i L(i_{V_i} F, D_{V_i} u) against 2(4-n) int |F|^2 + (2-n) int |D u|^2."""
    _require_sphere(pair)
    rule = rule or default_rule(pair)
    n = pair.n
    lhs = 0.0
    for i in range(n + 1):
        e = np.zeros(n + 1)
        e[i] = 1.0
        lhs += quadratic_form(pair, killing_variation(pair, e), rule, h, check,
                              deterministic=deterministic).value
        check = False
    dens = evaluate(density_fields(pair, H1), rule)
    F2 = integrate(dens[:, 0], rule, deterministic)
    D2 = integrate(dens[:, 1], rule, deterministic)
    rhs = 2.0 * (4 - n) * F2 + (2 - n) * D2
    return IdentityReport(lhs, rhs, abs(lhs - rhs) / (1.0 + abs(rhs)), rule.order, h)


# ---------------------------------------------------------------- weak-form assembly


def _weak_parts(pair: AnalyticPair, var: VariationPair, h: float):
    """Fields needed by the weak form of L: (B, w, d B, delta B, d w)."""
    return (var.B, var.w, dnabla(pair, var.B, h), delta(pair, var.B, h), dnabla(pair, var.w, h))


def assemble(pair: AnalyticPair, basis: list, rule: QuadratureRule, h: float = HV,
             chunk: int = CHUNK):
    """Matrices (Q, M) of L and of the L^2 product on span(basis).

    L is taken in weak form, int |d B|^2 + |delta B|^2 + |d w|^2 plus the
    zeroth-order terms of S, which needs first derivatives only.
    """
    K = len(basis)
    jets = [_weak_parts(pair, b, h) for b in basis]
    Q = np.zeros((K, K))
    M = np.zeros((K, K))
    F = curvature(pair, H1)
    Du = dnabla(pair, pair.higgs, H1)
    lam = pair.lam
    kind = pair.higgs_kind
    hw = 0.5  # both pairings carry the factor 1/2 on flattened components
    for chart, idx, Yall in rule.groups():
        for s in range(0, len(idx), chunk):
            Y = Yall[s:s + chunk]
            wq = rule.weights[idx[s:s + chunk]]
            m = len(Y)
            rho = chart.rho(Y)
            u = pair.higgs_fn(Y, chart)
            D = Du(Y, chart)
            Fv = F(Y, chart)
            r2 = rho**-2.0
            ub = u[:, None]
            sfac = _expand(1.0 - _fiber_norm(u, kind), u.ndim - 1)
            cols = {k: [] for k in ("dB", "dl", "dw", "B", "w", "Z1", "Z2")}
            for (Bf, wf, dBf, dlf, dwf) in jets:
                B, w = Bf(Y, chart), wf(Y, chart)
                RB = r2[:, None, None, None] * (Fv @ B[:, :, None] - B[:, :, None] @ Fv).sum(axis=1)
                uw = _expand(_pair_inner(u, w, kind), u.ndim - 1)
                if pair.variant == "fiber":
                    Z1 = RB + alg.mu(alg.apply(B, ub), ub) + 2.0 * alg.mu(D, w[:, None])
                    Z2 = (alg.apply(alg.mu(w, u), u) - 2.0 * _contract(B, D, rho)
                          + lam * uw * u - 0.5 * lam * sfac * w)
                else:
                    Z1 = RB - alg.bracket(alg.bracket(B, ub), ub) - 2.0 * alg.bracket(D, w[:, None])
                    Z2 = (alg.bracket(alg.bracket(u, w), u) + 2.0 * _contract(B, D, rho)
                          + lam * uw * u - 0.5 * lam * sfac * w)
                cols["dB"].append(dBf(Y, chart).reshape(m, -1) * (r2**2 * 0.5)[:, None] ** 0.5)
                cols["dl"].append(dlf(Y, chart).reshape(m, -1))
                cols["dw"].append(dwf(Y, chart).reshape(m, -1) * r2[:, None] ** 0.5)
                cols["B"].append(B.reshape(m, -1) * r2[:, None] ** 0.5)
                cols["w"].append(w.reshape(m, -1))
                cols["Z1"].append(Z1.reshape(m, -1) * r2[:, None] ** 0.5)
                cols["Z2"].append(Z2.reshape(m, -1))
            sw = np.sqrt(wq * hw)[:, None]
            X = {k: np.stack([x * sw for x in v]).reshape(K, -1) for k, v in cols.items()}

            def G(a, b):
                return a @ b.T

            M += G(X["B"], X["B"]) + G(X["w"], X["w"])
            Q += (G(X["dB"], X["dB"]) + G(X["dl"], X["dl"]) + G(X["dw"], X["dw"])
                  + G(X["Z1"], X["B"]) + G(X["Z2"], X["w"]))
    return 0.5 * (Q + Q.T), 0.5 * (M + M.T)


# ---------------------------------------------------------------- trial families


def _twisted(pair: AnalyticPair) -> bool:
    return pair.base == "sphere" and pair.gauge_fn is not None


def _monomial_section(pair, alpha, direction, degree, kind, cov=None):
    """x^alpha (times (1 + x_{n+1})^2 on twisted bundles) times a constant direction.

    degree 1 sections use the differential of the linear function cov . x.
    """
    n = pair.n
    alpha = np.asarray(alpha)
    direction = np.asarray(direction, dtype=float)
    twist = _twisted(pair)
    cov = None if cov is None else np.asarray(cov, dtype=float)

    factors = [k for k, e in enumerate(alpha) for _ in range(int(e))]

    def scal(Y, chart):
        X = chart.to_ambient(Y) if chart.kind != "flat" else Y
        s = np.ones(len(X))
        for k in factors:
            s = s * X[:, k]
        if twist:
            s = s * (1.0 + X[:, -1]) ** 2
        return s

    def nfn(Y, chart):
        s = scal(Y, chart)
        if degree == 0:
            return s.reshape((-1,) + (1,) * direction.ndim) * direction
        if chart.kind == "flat":
            th = np.broadcast_to(cov[:n], (len(Y), n))
        else:
            th = np.einsum("mai,a->mi", chart.dx_dy(Y), cov)
        return (s[:, None] * th).reshape(th.shape + (1,) * direction.ndim) * direction

    if pair.base == "torus":
        return Field(nfn, degree, kind)
    from .geometry import Chart

    north = Chart(n, "north")
    return transfer(pair, lambda Y: nfn(Y, north), degree, kind)


def _exponents(nvar: int, maxdeg: int):
    out = [()]
    for d in range(maxdeg):
        out = out + [t + (k,) for t in out if len(t) == d for k in range(t[-1] if t else 0, nvar)]
    vecs = []
    for t in out:
        a = np.zeros(nvar, dtype=int)
        for k in t:
            a[k] += 1
        vecs.append(a)
    return vecs


def _directions(pair, kind):
    if kind == "adj":
        return list(alg.basis(pair.r))
    return [math.sqrt(2.0) * e for e in np.eye(pair.r)]  # unit for <u,w> = 1/2 u.w


def _nvar(pair):
    return pair.n + (0 if pair.base == "torus" else 1)


def gauge_basis(pair: AnalyticPair, maxdeg: int = 3) -> list:
    """zeta(sigma) for sigma = monomial (degree <= maxdeg) times an algebra basis element."""
    out = []
    for a in _exponents(_nvar(pair), maxdeg):
        for xi in alg.basis(pair.r):
            out.append(gauge_direction(pair, _monomial_section(pair, a, xi, 0, "adj")))
    return out


def trial_family(pair: AnalyticPair, count: int = DEFAULT_TRIALS, seed: int = 0,
                 maxdeg: int = 2) -> list:
    """Deterministic list of smooth trial variations.

    Order: constant Higgs directions (B = 0), the conformal Killing variations
    (sphere, non-flat pairs), then random products of a low-degree monomial
    with a constant direction, in B, in w, or both.
    """
    from .smoothfields import zero_field

    rng = np.random.default_rng(seed)
    n, kind = pair.n, pair.higgs_kind
    zB = zero_field(n, pair.r, 1, "adj")
    zw = zero_field(n, pair.r, 0, kind)
    nv = _nvar(pair)
    out = []
    for d in _directions(pair, kind):
        out.append(VariationPair(zB, _monomial_section(pair, np.zeros(nv, int), d, 0, kind), "const"))
    if pair.base == "sphere" and pair.label not in ("flat_unit", "flat_zero"):
        for i in range(n + 1):
            e = np.zeros(n + 1)
            e[i] = 1.0
            out.append(killing_variation(pair, e))
    exps = _exponents(nv, maxdeg)
    adirs = alg.basis(pair.r)
    hdirs = _directions(pair, kind)
    while len(out) < count:
        mode = rng.integers(0, 3)
        B, w = zB, zw
        if mode in (0, 2):
            a = exps[rng.integers(len(exps))]
            xi = adirs[rng.integers(len(adirs))]
            cov = rng.standard_normal(nv)
            B = _monomial_section(pair, a, xi, 1, "adj", cov)
        if mode in (1, 2):
            a = exps[rng.integers(len(exps))]
            d = hdirs[rng.integers(len(hdirs))]
            w = _monomial_section(pair, a, d, 0, kind)
        out.append(VariationPair(B, w, "trial"))
    return out[:count]


# ---------------------------------------------------------------- spectra


@dataclass
class SpectrumReport:
    rayleigh_min: float
    history: list  # running minimum after each trial
    argmin: int
    trials: int
    skipped: int
    span_min: float  # lowest generalized eigenvalue on the projected span
    order: int
    admissible: bool = True
    el_residual: float = float("nan")
    extra: dict = dc_field(default_factory=dict)

    def as_dict(self):
        return dict(self.__dict__)


def _project(M, t_idx, z_idx):
    """Coefficient vectors of trials minus their best L^2 gauge directions."""
    K = M.shape[0]
    Mzz = M[np.ix_(z_idx, z_idx)]
    Mzt = M[np.ix_(z_idx, t_idx)]
    C = np.linalg.lstsq(Mzz, Mzt, rcond=1e-10)[0] if len(z_idx) else np.zeros((0, len(t_idx)))
    V = np.zeros((K, len(t_idx)))
    V[t_idx, np.arange(len(t_idx))] = 1.0
    if len(z_idx):
        V[z_idx] = -C
    return V


def rayleigh_min(pair: AnalyticPair, trial_count: int = DEFAULT_TRIALS,
                 rule: QuadratureRule | None = None, seed: int = 0, h: float = HV,
                 project: bool = True, sigma_degree: int = 3, check: bool = True,
                 threshold: float = EL_THRESHOLD) -> SpectrumReport:
    """Minimum of L(var)/|var|^2 over the trial family projected onto the slice."""
    rule = rule or default_rule(pair)
    ok, res = _admit(pair, rule, check, threshold)
    trials = trial_family(pair, trial_count, seed)
    zetas = gauge_basis(pair, sigma_degree) if project else []
    Q, M = assemble(pair, trials + zetas, rule, h)
    T = len(trials)
    V = _project(M, np.arange(T), np.arange(T, T + len(zetas)))
    num = np.einsum("kt,kl,lt->t", V, Q, V)
    den = np.einsum("kt,kl,lt->t", V, M, V)
    good = den > 1e-12
    q = np.where(good, num / np.where(good, den, 1.0), np.inf)
    hist = np.minimum.accumulate(q).tolist()
    # lowest generalized eigenvalue on span of the projected trials
    Vg = V[:, good]
    span_min = float("nan")
    if Vg.shape[1]:
        Qs, Ms = Vg.T @ Q @ Vg, Vg.T @ M @ Vg
        ev, U = np.linalg.eigh(Ms)
        keep = ev > 1e-10 * ev.max()
        P = U[:, keep] / np.sqrt(ev[keep])
        span_min = float(np.linalg.eigvalsh(P.T @ Qs @ P).min())
    best = int(np.argmin(q))
    return SpectrumReport(float(q[best]), hist, best, T, int((~good).sum()), span_min, rule.order,
                          ok, res)


@dataclass
class WitnessReport:
    variation: VariationPair
    value: float
    rayleigh: float
    negative: bool
    method: str
    norm2: float

    def as_dict(self):
        return {k: v for k, v in self.__dict__.items() if k != "variation"}


def instability_witness(pair: AnalyticPair, rule: QuadratureRule | None = None,
                        h: float = HV, maxdeg: int = 2, flat_tol: float = 1e-8,
                        deterministic: bool = False) -> WitnessReport:
    """A variation (0, w) with negative L when the Higgs field is small and lam > 0.

    Flat connection: w is a unit covariantly constant section.  Otherwise the
    Rayleigh quotient int |D w|^2 / int |w|^2 (plus the zeroth-order terms of
    S) is minimized over monomials times constant directions.
    """
    from .smoothfields import zero_field

    rule = rule or default_rule(pair)
    kind = pair.higgs_kind
    zB = zero_field(pair.n, pair.r, 1, "adj")
    dens = evaluate(density_fields(pair, H1), rule)
    flat = float(np.max(np.abs(dens[:, 0]))) < flat_tol and not _twisted(pair)
    if flat:
        d = _directions(pair, kind)[0]
        var = VariationPair(zB, _monomial_section(pair, np.zeros(_nvar(pair), int), d, 0, kind),
                            "witness")
        Qr = quadratic_form(pair, var, rule, h, check=False, deterministic=deterministic)
        nrm = pairing(pair, var, var, rule, deterministic)
        return WitnessReport(var, Qr.value, Qr.value / nrm, Qr.value < 0, "parallel", nrm)
    basis = []
    for a in _exponents(_nvar(pair), maxdeg):
        for d in _directions(pair, kind):
            basis.append(VariationPair(zB, _monomial_section(pair, a, d, 0, kind), "w"))
    Q, M = assemble(pair, basis, rule, h)
    ev, U = np.linalg.eigh(M)
    keep = ev > 1e-10 * ev.max()
    P = U[:, keep] / np.sqrt(ev[keep])
    lam_, W = np.linalg.eigh(P.T @ Q @ P)
    c = P @ W[:, 0]
    c = c / math.sqrt(c @ M @ c)

    def wfn(Y, chart):
        return sum(ci * b.w(Y, chart) for ci, b in zip(c, basis) if ci != 0.0)

    var = VariationPair(zB, Field(wfn, 0, kind), "witness")
    val = float(c @ Q @ c)
    return WitnessReport(var, val, float(lam_[0]), val < 0, "rayleigh", 1.0)
