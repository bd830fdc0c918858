"""Charts, quadrature and conformal Killing fields on S^n, plus the flat torus.

Points on S^n are ambient vectors x in R^{n+1}.  Two stereographic charts are
used: the "north" chart y = x'/(1 + x_{n+1}) sends the north pole to y = 0 and
the "south" chart z = x'/(1 - x_{n+1}) sends the south pole to z = 0.  On the
overlap z = y/|y|^2.  Both carry g = rho^2 delta with rho = 2/(1 + |y|^2).

Tensor fields in a chart are callables f(Y) -> array of shape (m, ...) acting on
a stack of chart points Y of shape (m, n); derivatives are central differences
taken on the whole stack at once.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, roots_jacobi

# |y| <= 1.5 in the north chart  <=>  x_{n+1} >= -5/13
HANDOFF_RADIUS = 1.5
_HANDOFF_HEIGHT = (1.0 - HANDOFF_RADIUS**2) / (1.0 + HANDOFF_RADIUS**2)

DEFAULT_QUAD_ORDER = 24
DEFAULT_FD_STEP = 1e-4
DEFAULT_FD_STEP2 = 1e-3
# no numerical role beyond chart validity; kept as a recorded constant
INJECTIVITY_RADIUS_SPHERE = math.pi


class GeometryError(ValueError):
    pass


class QuadratureError(ValueError):
    def __init__(self, msg, index=None):
        super().__init__(msg)
        self.index = index


def sphere_volume(n: int) -> float:
    return float(2.0 * math.pi ** ((n + 1) / 2) / math.gamma((n + 1) / 2))


# ---------------------------------------------------------------- charts


@dataclass(frozen=True)
class Chart:
    """A conformally flat chart: stereographic ('north'/'south') or flat ('flat')."""

    n: int
    kind: str = "north"
    L: float = 1.0

    def __post_init__(self):
        if self.kind not in ("north", "south", "flat"):
            raise GeometryError(f"unknown chart kind {self.kind!r}")

    @property
    def sign(self) -> float:
        return 1.0 if self.kind == "north" else -1.0

    def other(self) -> "Chart":
        if self.kind == "flat":
            return self
        return Chart(self.n, "south" if self.kind == "north" else "north", self.L)

    def rho(self, Y):
        Y = np.asarray(Y, dtype=float)
        if self.kind == "flat":
            return np.ones(Y.shape[:-1])
        return 2.0 / (1.0 + np.sum(Y * Y, axis=-1))

    def dlogrho(self, Y):
        """Gradient of log rho in chart coordinates, shape (m, n)."""
        Y = np.asarray(Y, dtype=float)
        if self.kind == "flat":
            return np.zeros_like(Y)
        return -self.rho(Y)[..., None] * Y

    def christoffel(self, Y):
        """G[m, l, k, j] = Gamma^l_{kj} of g = exp(2 phi) delta, phi = log rho."""
        Y = np.asarray(Y, dtype=float)
        m, n = Y.shape
        d = self.dlogrho(Y)
        eye = np.eye(n)
        # Gamma^l_kj = delta_lk d_j + delta_lj d_k - delta_kj d_l
        G = (eye[None, :, :, None] * d[:, None, None, :]
             + eye[None, :, None, :] * d[:, None, :, None]
             - eye[None, None, :, :] * d[:, :, None, None])
        return G

    def to_ambient(self, Y):
        Y = np.asarray(Y, dtype=float)
        if self.kind == "flat":
            return np.mod(Y, self.L)
        q = np.sum(Y * Y, axis=-1)
        top = self.sign * (1.0 - q) / (1.0 + q)
        return np.concatenate([2.0 * Y / (1.0 + q)[..., None], top[..., None]], axis=-1)

    def from_ambient(self, X):
        X = np.asarray(X, dtype=float)
        if self.kind == "flat":
            return np.mod(X, self.L)
        den = 1.0 + self.sign * X[..., -1]
        if np.any(den <= 0):
            raise GeometryError(f"point outside the {self.kind} chart domain")
        return X[..., :-1] / den[..., None]

    def dx_dy(self, Y):
        """Jacobian of the inverse chart, shape (m, n+1, n)."""
        Y = np.asarray(Y, dtype=float)
        r = self.rho(Y)
        n = Y.shape[-1]
        top = -self.sign * (r**2)[..., None] * Y
        side = r[..., None, None] * np.eye(n) - (r**2)[..., None, None] * Y[..., :, None] * Y[..., None, :]
        return np.concatenate([side, top[..., None, :]], axis=-2)

    def dy_dx(self, X):
        """Chart differential acting on ambient tangent vectors, shape (m, n, n+1)."""
        X = np.asarray(X, dtype=float)
        n = X.shape[-1] - 1
        s = self.sign
        den = 1.0 + s * X[..., -1]
        side = np.eye(n) / den[..., None, None]
        last = -s * X[..., :-1] / (den**2)[..., None]
        return np.concatenate([side * np.ones(X.shape[:-1] + (1, 1)), last[..., :, None]], axis=-1)

    def vector_components(self, Y, V):
        """Chart components of ambient tangent vectors V at chart points Y."""
        J = self.dy_dx(self.to_ambient(Y))
        return np.einsum("mia,ma->mi", J, V)


def swap_chart_points(Y):
    """Overlap map between the two stereographic charts, z = y/|y|^2."""
    Y = np.asarray(Y, dtype=float)
    q = np.sum(Y * Y, axis=-1)
    if np.any(q == 0):
        raise GeometryError("the pole has no image in the other chart")
    return Y / q[..., None]


def swap_jacobian(Z):
    """dy/dz for y = z/|z|^2, shape (m, n, n)."""
    Z = np.asarray(Z, dtype=float)
    q = np.sum(Z * Z, axis=-1)
    n = Z.shape[-1]
    return (np.eye(n) / q[..., None, None]
            - 2.0 * Z[..., :, None] * Z[..., None, :] / (q**2)[..., None, None])


def chart_for(X) -> np.ndarray:
    """Boolean mask: True where the north chart is used (|y| <= 1.5)."""
    X = np.asarray(X, dtype=float)
    return X[..., -1] >= _HANDOFF_HEIGHT


def split_charts(n: int, X):
    """Split ambient points into (chart, index array, chart points) groups."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    north = chart_for(X)
    out = []
    for kind, mask in (("north", north), ("south", ~north)):
        idx = np.nonzero(mask)[0]
        if idx.size:
            ch = Chart(n, kind)
            out.append((ch, idx, ch.from_ambient(X[idx])))
    return out


# ---------------------------------------------------------------- finite differences


def partials(f, Y, h):
    """Central-difference partial derivatives of f at Y; result (m, n, ...)."""
    Y = np.asarray(Y, dtype=float)
    m, n = Y.shape
    shifts = np.eye(n) * h
    pts = np.concatenate([Y[None, :, :] + shifts[:, None, :], Y[None, :, :] - shifts[:, None, :]], axis=0)
    vals = np.asarray(f(pts.reshape(2 * n * m, n)))
    vals = vals.reshape((2, n, m) + vals.shape[1:])
    d = (vals[0] - vals[1]) / (2.0 * h)
    return np.moveaxis(d, 0, 1)


def gamma_correct(G, T, p):
    """Sum over slots of Gamma^l_{k i_s} T_{..l..}; T has form axes 1..p.

    Returns an array with a new derivative axis at position 1.
    """
    out = 0.0
    for s in range(p):
        Ts = np.moveaxis(T, 1 + s, 1)  # (m, l, others..., val)
        c = np.einsum("mlki,ml...->mki...", G, Ts)  # (m, k, i_s, others..., val)
        out = out + np.moveaxis(c, 2, 2 + s)
    return out


def covariant_derivative(T, p: int, chart: Chart, h: float, twist=None):
    """Levi-Civita (plus optional bundle) covariant derivative of a p-tensor field.

    T(Y) has shape (m, n, ..., n, *value) with p form axes.  `twist(Y, TY)`
    returns the bundle connection term with a derivative axis at position 1.
    The result R(Y)[m, k, i1, .., ip, ...] = (nabla_k T)_{i1..ip}.
    """

    def nabla(Y):
        TY = np.asarray(T(Y))
        out = partials(T, Y, h)
        if p:
            out = out - gamma_correct(chart.christoffel(Y), TY, p)
        if twist is not None:
            out = out + twist(Y, TY)
        return out

    return nabla


def rough_laplacian(T, p: int, chart: Chart, h1: float, h2: float, twist=None):
    """nabla^* nabla T = -g^{ik} (nabla^2 T)_{ik...}."""
    nT = covariant_derivative(T, p, chart, h1, twist)
    nnT = covariant_derivative(nT, p + 1, chart, h2, twist)

    def lap(Y):
        v = nnT(Y)
        tr = np.trace(v, axis1=1, axis2=2) if v.ndim == 3 else np.einsum("mii...->m...", v)
        r = chart.rho(Y)
        return -tr / r.reshape((-1,) + (1,) * (tr.ndim - 1)) ** 2

    return lap


# ---------------------------------------------------------------- quadrature


@dataclass
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int
    n: int
    base: str = "sphere"
    L: float = 1.0
    _groups: list = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(self.weights <= 0):
            raise QuadratureError("non-positive quadrature weight")

    def __len__(self):
        return len(self.weights)

    def groups(self):
        """Chart partition of the nodes: list of (chart, index, chart points)."""
        if self._groups is None:
            if self.base == "sphere":
                self._groups = split_charts(self.n, self.nodes)
            else:
                ch = Chart(self.n, "flat", self.L)
                self._groups = [(ch, np.arange(len(self)), self.nodes.copy())]
        return self._groups

    def to_json(self) -> str:
        def enc(a):
            return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii")

        return json.dumps({"n": self.n, "order": self.order, "base": self.base, "L": self.L,
                           "count": len(self), "nodes": enc(self.nodes), "weights": enc(self.weights)},
                          sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "QuadratureRule":
        d = json.loads(s)

        def dec(b):
            return np.frombuffer(base64.b64decode(b), dtype="<f8").astype(float)

        dim = d["n"] + 1 if d["base"] == "sphere" else d["n"]
        nodes = dec(d["nodes"]).reshape(d["count"], dim)
        return cls(nodes, dec(d["weights"]), d["order"], d["n"], d["base"], d["L"])


def _polar_rule(q: int, p: int):
    """Nodes/weights in t = cos(theta) for the weight sin^p(theta) d(theta)."""
    a = (p - 1) / 2.0
    t, w = roots_jacobi(q, a, a)
    return t, w


def sphere_rule(n: int, order: int = DEFAULT_QUAD_ORDER) -> QuadratureRule:
    """Tensor rule in hyperspherical angles, exact for polynomials of degree <= order.

    Polar angles theta_k (weight sin^{n-k}) use Gauss-Jacobi in cos(theta_k),
    which is Gauss-Legendre with the sine power absorbed into the weight; the
    azimuth uses the equispaced rule with order + 1 points.
    """
    if n < 1:
        raise GeometryError("n must be >= 1")
    q = order // 2 + 1
    naz = order + 1
    phi = (np.arange(naz) + 0.5) * (2.0 * np.pi / naz)
    pts = [np.cos(phi)[:, None] * [1.0, 0.0] + np.sin(phi)[:, None] * [0.0, 1.0]]
    wts = np.full(naz, 2.0 * np.pi / naz)
    X, W = pts[0], wts
    # build outward: x = (cos th, sin th * X_prev)
    for p in range(1, n):
        t, w = _polar_rule(q, p)
        s = np.sqrt(1.0 - t**2)
        X = np.concatenate([np.repeat(t, len(X))[:, None], (s[:, None, None] * X[None]).reshape(-1, X.shape[1])], axis=1)
        W = (w[:, None] * W[None]).reshape(-1)
    return QuadratureRule(X, W, order, n, "sphere")


def torus_rule(n: int, m: int, L: float = 1.0) -> QuadratureRule:
    """Equispaced midpoint rule on [0, L)^n (exact for trigonometric degree < m)."""
    g = (np.arange(m) + 0.5) * (L / m)
    grids = np.meshgrid(*([g] * n), indexing="ij")
    nodes = np.stack([a.ravel() for a in grids], axis=-1)
    return QuadratureRule(nodes, np.full(len(nodes), (L / m) ** n), m - 1, n, "torus", L)


def integrate(values, rule: QuadratureRule, deterministic: bool = False) -> float:
    v = np.asarray(values, dtype=float)
    if v.shape != rule.weights.shape:
        raise QuadratureError(f"expected {rule.weights.shape} node values, got {v.shape}")
    bad = np.nonzero(~np.isfinite(v))[0]
    if bad.size:
        raise QuadratureError(f"non-finite integrand at node {int(bad[0])}", int(bad[0]))
    if deterministic:
        return math.fsum((rule.weights * v).tolist())
    return float(np.dot(rule.weights, v))


def integrate_function(f, rule: QuadratureRule, deterministic: bool = False) -> float:
    """Integrate a function of ambient points."""
    return integrate(f(rule.nodes), rule, deterministic)


def monomial_moment(alpha) -> float:
    """Integral of prod x_i^alpha_i over S^n (n + 1 = len(alpha)).

    Uses the Gaussian-integral identity; zero when any exponent is odd.
    """
    alpha = list(alpha)
    if any(a % 2 for a in alpha):
        return 0.0
    b = [(a + 1) / 2.0 for a in alpha]
    return float(2.0 * math.exp(sum(gammaln(x) for x in b) - gammaln(sum(b))))


# ---------------------------------------------------------------- Killing fields


@dataclass(frozen=True)
class KillingField:
    v: tuple

    @classmethod
    def of(cls, v) -> "KillingField":
        return cls(tuple(float(c) for c in np.asarray(v, dtype=float).ravel()))

    @property
    def vec(self) -> np.ndarray:
        return np.array(self.v)

    def potential(self, X):
        return np.asarray(X, dtype=float) @ self.vec

    def at(self, X):
        X = np.asarray(X, dtype=float)
        return self.vec - self.potential(X)[..., None] * X

    def chart_components(self, chart: Chart, Y):
        X = chart.to_ambient(Y)
        return chart.vector_components(Y, self.at(X))


def _check_on_sphere(x, tol=1e-10):
    r = np.linalg.norm(x, axis=-1)
    if np.any(np.abs(r - 1.0) > tol):
        raise GeometryError("point is not on the unit sphere")


def killing_field(v, x):
    x = np.asarray(x, dtype=float)
    _check_on_sphere(x)
    return KillingField.of(v).at(x)


def killing_identities_residual(v, x, X, h: float = 1e-3, h2: float | None = None):
    """(|D_X V + f_v X|, |D*D V - V|) at x, by central differences in a chart.

    X is an ambient tangent vector at x.  Covariant derivatives are taken on the
    metric-dual 1-form V_i = rho^2 V^i; norms use the round metric.
    """
    x = np.asarray(x, dtype=float)
    _check_on_sphere(x)
    n = x.size - 1
    kf = KillingField.of(v)
    chart = Chart(n, "north" if chart_for(x) else "south")
    y = chart.from_ambient(x[None])
    Xc = chart.vector_components(y, np.asarray(X, dtype=float)[None])

    def flat(Y):
        return chart.rho(Y)[:, None] ** 2 * kf.chart_components(chart, Y)

    nab = covariant_derivative(flat, 1, chart, h)(y)[0]  # (k, i)
    r = chart.rho(y)[0]
    f = kf.potential(x[None])[0]
    lhs = Xc[0] @ nab + f * r**2 * Xc[0]
    res1 = float(np.sqrt(np.sum(lhs**2)) / r)
    lap = rough_laplacian(flat, 1, chart, h, h2 or h)(y)[0]
    res2 = float(np.sqrt(np.sum((lap - flat(y)[0]) ** 2)) / r)
    return res1, res2
