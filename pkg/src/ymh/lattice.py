"""Discrete Yang-Mills-Higgs theory on the periodic lattice (Z_N)^4 with spacing a.

Links are non-compact: A_mu(x) is an so(r) element, stored by its coefficients
in the orthonormal basis `algebra.basis(r)` (so |A|^2 = sum of squares).  The
fiber Higgs field is stored as raw vectors (|u|^2 = 1/2 u.u); the adjoint one
by its so(r) coefficients.

    F_mn(x) = (A_n(x+m) - A_n(x))/a - (A_m(x+n) - A_m(x))/a + [A_m(x), A_n(x)]
    D_m u(x) = (u(x+m) - u(x))/a + A_m(x) u(x)
    E = 1/2 sum_x a^4 (|F|^2 + |D u|^2 + lam/4 (1 - |u|^2)^2),  |F|^2 = sum_{m<n} |F_mn|^2
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import algebra as alg

DIM = 4
SNAPSHOT_VERSION = 1
EPS0 = 0.5
EPS1 = 1.0
ARMIJO_C = 1e-4
SHRINK = 0.5
SLAB_SITES = 1 << 18


class LatticeError(ValueError):
    pass


# ---------------------------------------------------------------- structure constants


@lru_cache(maxsize=8)
def structure(r: int):
    """(T, f): basis matrices and f_ijk = <[T_i, T_j], T_k>."""
    T = alg.basis(r)
    f = np.einsum("iab,jbc,kac->ijk", T, T, T) * 0.5
    f = f - np.swapaxes(f, 0, 1)
    return T, f


def to_matrix(c, r: int):
    T, _ = structure(r)
    return np.einsum("...k,kab->...ab", c, T)


def to_coeffs(m, r: int):
    T, _ = structure(r)
    return 0.5 * np.einsum("...ab,kab->...k", m, T)


def _br(x, y, f):
    d = f.shape[0]
    xy = x[..., :, None] * y[..., None, :]
    return xy.reshape(xy.shape[:-2] + (d * d,)) @ f.reshape(d * d, d)


def _act(x, u, T):
    """so(r) coefficients x acting on fiber vectors u."""
    d, r = T.shape[0], T.shape[1]
    xu = x[..., :, None] * u[..., None, :]
    return xu.reshape(xu.shape[:-2] + (d * r,)) @ np.swapaxes(T, 1, 2).reshape(d * r, r)


def _pair(v, u, T):
    """Coefficients sum_ab v_a T_k[a, b] u_b of fiber vectors v, u."""
    d, r = T.shape[0], T.shape[1]
    vu = v[..., :, None] * u[..., None, :]
    return vu.reshape(vu.shape[:-2] + (r * r,)) @ T.reshape(d, r * r).T


# ---------------------------------------------------------------- state


@dataclass
class LatticeState:
    N: int
    a: float
    links: np.ndarray  # (N, N, N, N, 4, d)
    higgs: np.ndarray  # (N, N, N, N, r) or (N, N, N, N, d)
    lam: float = 1.0
    r: int = 3
    variant: str = "fiber"
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        d = self.r * (self.r - 1) // 2
        hdim = self.r if self.variant == "fiber" else d
        if self.variant not in ("fiber", "adjoint"):
            raise LatticeError(f"unknown variant {self.variant!r}")
        if self.links.shape != (self.N,) * DIM + (DIM, d):
            raise LatticeError(f"links must have shape {(self.N,) * DIM + (DIM, d)}")
        if self.higgs.shape != (self.N,) * DIM + (hdim,):
            raise LatticeError(f"higgs must have shape {(self.N,) * DIM + (hdim,)}")
        if self.lam < 0 or not self.a > 0:
            raise LatticeError("need lam >= 0 and a > 0")

    @property
    def L(self) -> float:
        return self.N * self.a

    @property
    def sites(self) -> int:
        return self.N**DIM

    def copy(self) -> "LatticeState":
        return LatticeState(self.N, self.a, self.links.copy(), self.higgs.copy(), self.lam,
                            self.r, self.variant, dict(self.meta))

    def with_fields(self, links, higgs) -> "LatticeState":
        return LatticeState(self.N, self.a, links, higgs, self.lam, self.r, self.variant,
                            dict(self.meta))

    def check_finite(self):
        if not (np.all(np.isfinite(self.links)) and np.all(np.isfinite(self.higgs))):
            raise LatticeError("non-finite entries in lattice state")

    def norm2_higgs(self):
        if self.variant == "fiber":
            return 0.5 * np.sum(self.higgs**2, axis=-1)
        return np.sum(self.higgs**2, axis=-1)


def _hdim(r, variant):
    return r if variant == "fiber" else r * (r - 1) // 2


def unit_state(N: int, a: float, lam: float = 1.0, r: int = 3, variant: str = "fiber",
               unit: bool = True) -> LatticeState:
    """A = 0 and a constant unit (or zero) Higgs field."""
    d = r * (r - 1) // 2
    links = np.zeros((N,) * DIM + (DIM, d))
    higgs = np.zeros((N,) * DIM + (_hdim(r, variant),))
    if unit:
        higgs[..., 0] = math.sqrt(2.0) if variant == "fiber" else 1.0
    return LatticeState(N, a, links, higgs, lam, r, variant)


def _smooth_noise(rng, N, comps, kmax=2):
    """Random real trigonometric polynomial with modes |k_i| <= kmax, unit RMS."""
    x = np.arange(N) * 2 * np.pi / N
    out = np.zeros((N,) * DIM + (comps,))
    for _ in range(6):
        k = rng.integers(-kmax, kmax + 1, size=DIM)
        ph = rng.uniform(0, 2 * np.pi)
        arg = (k[0] * x[:, None, None, None] + k[1] * x[None, :, None, None]
               + k[2] * x[None, None, :, None] + k[3] * x[None, None, None, :] + ph)
        out += np.cos(arg)[..., None] * rng.standard_normal(comps)
    rms = math.sqrt(np.mean(out**2)) or 1.0
    return out / rms


def random_state(N: int, a: float, amp: float, seed: int = 0, lam: float = 1.0, r: int = 3,
                 variant: str = "fiber", kmax: int = 2) -> LatticeState:
    """Smooth random perturbation of the unit state with RMS amplitude amp."""
    rng = np.random.default_rng(seed)
    s = unit_state(N, a, lam, r, variant)
    d = r * (r - 1) // 2
    links = amp * _smooth_noise(rng, N, DIM * d, kmax).reshape(s.links.shape)
    higgs = s.higgs + amp * _smooth_noise(rng, N, s.higgs.shape[-1], kmax)
    return s.with_fields(links, higgs)


# ---------------------------------------------------------------- local terms


def _terms(Ab, hb, a, lam, r, variant, fwd, base):
    """|F|^2, |D u|^2 and potential densities from a block and its shift rules."""
    T, f = structure(r)
    A = base(Ab)
    F2 = 0.0
    for m in range(DIM):
        for n in range(m + 1, DIM):
            Fmn = ((fwd(Ab[..., n, :], m) - A[..., n, :]) - (fwd(Ab[..., m, :], n) - A[..., m, :])) / a
            Fmn = Fmn + _br(A[..., m, :], A[..., n, :], f)
            F2 = F2 + np.sum(Fmn**2, axis=-1)
    u = base(hb)
    D2 = 0.0
    for m in range(DIM):
        Du = (fwd(hb, m) - u) / a
        if variant == "fiber":
            Du = Du + _act(A[..., m, :], u, T)
            D2 = D2 + 0.5 * np.sum(Du**2, axis=-1)
        else:
            Du = Du + _br(A[..., m, :], u, f)
            D2 = D2 + np.sum(Du**2, axis=-1)
    s = 0.5 * np.sum(u**2, -1) if variant == "fiber" else np.sum(u**2, -1)
    return F2, D2, 0.25 * lam * (1.0 - s) ** 2


def _roll_fwd(X, ax):
    return np.roll(X, -1, axis=ax)


def densities(s: LatticeState, slab: int | None = None):
    """Per-site (|F|^2, |D u|^2, lam/4 (1 - |u|^2)^2), shape (3, N, N, N, N).

    Computed over slabs along the first axis to bound memory on large grids.
    """
    N = s.N
    slab = slab or max(1, SLAB_SITES // N**3)
    out = np.empty((3,) + (N,) * DIM)
    for i0 in range(0, N, slab):
        i1 = min(N, i0 + slab)
        rows = np.arange(i0, i1 + 1) % N
        Ab = s.links[rows]
        hb = s.higgs[rows]

        def fwd(X, ax):
            return X[1:] if ax == 0 else np.roll(X, -1, axis=ax)[:-1]

        F2, D2, P = _terms(Ab, hb, s.a, s.lam, s.r, s.variant, fwd, lambda X: X[:-1])
        out[0, i0:i1], out[1, i0:i1], out[2, i0:i1] = F2, D2, P
    return out


@dataclass
class EnergyBreakdown:
    total: float
    curvature: float
    gradient: float
    potential: float

    def as_dict(self):
        return dict(self.__dict__)


def discrete_energy(s: LatticeState, dens=None) -> EnergyBreakdown:
    dens = densities(s) if dens is None else dens
    w = 0.5 * s.a**DIM
    parts = [w * math.fsum(np.sum(dens[k], axis=(1, 2, 3))) for k in range(3)]
    return EnergyBreakdown(sum(parts), *parts)


def energy_difference(s1: LatticeState, s2: LatticeState) -> float:
    """E(s1) - E(s2) summed site by site, so untouched sites cancel exactly."""
    d = densities(s1) - densities(s2)
    return 0.5 * s1.a**DIM * math.fsum(d.ravel())


def gradient_probes(s: LatticeState, count: int = 100, seed: int = 0, support: int = 5,
                    eps: float = 1e-5):
    """Relative errors of <grad E, d> against central differences of E along d.

    Each probe d has `support` random nonzero coordinates; the difference
    quotient uses energy_difference, so only the touched sites contribute.
    """
    rng = np.random.default_rng(seed)
    g = discrete_gradient(s)
    flat = np.concatenate([x.ravel() for x in g])
    n1 = g[0].size
    errs = []
    for _ in range(count):
        d = np.zeros(flat.size)
        d[rng.choice(flat.size, support, replace=False)] = rng.standard_normal(support)
        dA, dh = d[:n1].reshape(g[0].shape), d[n1:].reshape(g[1].shape)
        dE = energy_difference(s.with_fields(s.links + eps * dA, s.higgs + eps * dh),
                               s.with_fields(s.links - eps * dA, s.higgs - eps * dh))
        an = float(flat @ d)
        errs.append(abs(dE / (2 * eps) - an) / max(abs(an), 1e-300))
    return errs


def _energy_value(s: LatticeState) -> float:
    return discrete_energy(s).total


def discrete_gradient(s: LatticeState):
    """Exact gradient of discrete_energy in the stored coordinates: (dE/dlinks, dE/dhiggs)."""
    T, f = structure(s.r)
    a, A, u = s.a, s.links, s.higgs
    w = a**DIM
    gA = np.zeros_like(A)
    gu = np.zeros_like(u)
    for m in range(DIM):
        for n in range(DIM):
            if m == n:
                continue
            Fmn = ((np.roll(A[..., n, :], -1, m) - A[..., n, :])
                   - (np.roll(A[..., m, :], -1, n) - A[..., m, :])) / a
            Fmn = Fmn + _br(A[..., m, :], A[..., n, :], f)
            # dE/dA_n(y) = a^4 sum_m (F_mn(y - m) - F_mn(y))/a - [A_m, F_mn]
            gA[..., n, :] += w * ((np.roll(Fmn, 1, m) - Fmn) / a - _br(A[..., m, :], Fmn, f))
    for m in range(DIM):
        Am = A[..., m, :]
        if s.variant == "fiber":
            Du = (np.roll(u, -1, m) - u) / a + _act(Am, u, T)
            gu += 0.5 * w * ((np.roll(Du, 1, m) - Du) / a - _act(Am, Du, T))
            gA[..., m, :] += 0.5 * w * _pair(Du, u, T)
        else:
            Du = (np.roll(u, -1, m) - u) / a + _br(Am, u, f)
            gu += w * ((np.roll(Du, 1, m) - Du) / a - _br(Am, Du, f))
            gA[..., m, :] += w * _br(u, Du, f)
    sq = s.norm2_higgs()[..., None]
    if s.variant == "fiber":
        gu += -0.25 * w * s.lam * (1.0 - sq) * u
    else:
        gu += -0.5 * w * s.lam * (1.0 - sq) * u
    return gA, gu


def gradient_norm(g) -> float:
    return math.sqrt(sum(float(np.sum(x * x)) for x in g))


# ---------------------------------------------------------------- gauge transformations


def gauge_transform(s: LatticeState, g) -> LatticeState:
    """A'_m(x) = g A_m g^T - log(g(x+m) g(x)^T)/a,  u' = g u (or g P g^T).

    Exact on pure gauges (composing with the inverse transform recovers A = 0);
    on general states the non-compact discretization breaks covariance at O(a).
    """
    from scipy.linalg import logm

    r = s.r
    g = np.asarray(g, dtype=float)
    Am = to_matrix(s.links, r)
    gb = g[..., None, :, :]
    Am = gb @ Am @ np.swapaxes(gb, -1, -2)
    for m in range(DIM):
        rel = np.roll(g, -1, m) @ np.swapaxes(g, -1, -2)
        Am[..., m, :, :] -= _log_so(rel, logm) / s.a
    links = to_coeffs(Am, r)
    if s.variant == "fiber":
        higgs = np.einsum("...ab,...b->...a", g, s.higgs)
    else:
        higgs = to_coeffs(g @ to_matrix(s.higgs, r) @ np.swapaxes(g, -1, -2), r)
    return s.with_fields(links, higgs)


def _log_so(R, logm):
    """Principal logarithm of rotations, antisymmetrized."""
    shp = R.shape
    flat = R.reshape(-1, shp[-2], shp[-1])
    if shp[-1] == 3:
        c = np.clip((np.trace(flat, axis1=1, axis2=2) - 1.0) / 2.0, -1.0, 1.0)
        th = np.arccos(c)
        s = np.sin(th)
        k = np.where(th < 1e-8, 0.5 + th**2 / 12.0, th / (2.0 * np.where(s == 0, 1.0, s)))
        out = k[:, None, None] * (flat - np.swapaxes(flat, 1, 2))
    else:
        out = np.array([np.real(logm(m)) for m in flat])
    return alg.antisym(out).reshape(shp)


def random_gauge(N: int, r: int, amp: float, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = amp * rng.standard_normal((N,) * DIM + (r * (r - 1) // 2,))
    return alg.expm_so(to_matrix(x, r))


def divergence(s: LatticeState):
    """Backward lattice divergence sum_m (A_m(x) - A_m(x - m))/a, coefficients."""
    A = s.links
    return sum((A[..., m, :] - np.roll(A[..., m, :], 1, m)) for m in range(DIM)) / s.a


def _inv_laplacian(x, N, a):
    k = 2 * np.pi * np.fft.fftfreq(N)
    lam = sum(np.meshgrid(*([(2 - 2 * np.cos(k)) / a**2] * DIM), indexing="ij"))
    lam[(0,) * DIM] = 1.0
    X = np.fft.fftn(x, axes=range(DIM))
    X = X / lam[..., None]
    X[(0,) * DIM] = 0.0
    return np.real(np.fft.ifftn(X, axes=range(DIM)))


@dataclass
class GaugeFixReport:
    functional_before: float
    functional_after: float
    max_divergence: float
    iterations: int
    converged: bool
    bound_ratio: float  # |A|_2 / |F|_2 after fixing
    energy_change: float
    curvature_change: float

    def as_dict(self):
        return dict(self.__dict__)


def _transports(s: LatticeState):
    """Group links U_m(x) = exp(-a A_m(x)); gauges act on them exactly."""
    return alg.expm_so(to_matrix(-s.a * s.links, s.r))


def _from_transports(s: LatticeState, U, g):
    from scipy.linalg import logm

    links = to_coeffs(-_log_so(U, logm) / s.a, s.r)
    if s.variant == "fiber":
        higgs = np.einsum("...ab,...b->...a", g, s.higgs)
    else:
        higgs = to_coeffs(g @ to_matrix(s.higgs, s.r) @ np.swapaxes(g, -1, -2), s.r)
    return s.with_fields(links, higgs)


def _act_transports(U, h):
    """U_m(x) -> h(x + m) U_m(x) h(x)^T."""
    out = np.empty_like(U)
    hT = np.swapaxes(h, -1, -2)
    for m in range(DIM):
        out[..., m, :, :] = np.roll(h, -1, m) @ U[..., m, :, :] @ hT
    return out


def gauge_fix_coulomb(s: LatticeState, tol: float = 1e-10, max_iter: int = 200):
    """Minimize sum_x a^4 |A|^2 over lattice gauges by FFT-accelerated relaxation.

    The relaxation acts on the transports U = exp(-a A), where composing gauges
    is exact, so a scrambled pure gauge can be undone completely.
    """
    def functional(st):
        return float(st.a**DIM * np.sum(st.links**2))

    r = s.r
    U = _transports(s)
    G = np.broadcast_to(np.eye(r), (s.N,) * DIM + (r, r)).copy()
    cur = s
    f0 = functional(s)
    it = 0
    div = divergence(cur)
    while np.max(np.abs(div)) > tol and it < max_iter:
        # A -> A - grad(sigma) to first order, so Laplacian(sigma) = div removes the divergence
        sigma = -_inv_laplacian(div, s.N, s.a)
        f_cur = functional(cur)
        t = 1.0
        while True:
            h = alg.expm_so(to_matrix(t * sigma, r))
            Un, Gn = _act_transports(U, h), h @ G
            nxt = _from_transports(s, Un, Gn)
            if functional(nxt) <= f_cur or t < 1e-3:
                break
            t *= 0.5
        cur, U, G = nxt, Un, Gn
        div = divergence(cur)
        it += 1
    d0, d1 = densities(s), densities(cur)
    nF = math.sqrt(max(float(np.sum(d1[0])) * s.a**DIM, 0.0))
    nA = math.sqrt(functional(cur))
    rep = GaugeFixReport(f0, functional(cur), float(np.max(np.abs(div))), it,
                         bool(np.max(np.abs(div)) <= tol), nA / nF if nF > 0 else 0.0,
                         abs(discrete_energy(cur, d1).total - discrete_energy(s, d0).total),
                         float(np.max(np.abs(np.sqrt(d1[0]) - np.sqrt(d0[0])))))
    return cur, rep


# ---------------------------------------------------------------- flow


@dataclass
class FlowOptions:
    step_rule: str = "backtracking"  # backtracking | fixed
    max_iter: int = 5000
    tol: float | None = None  # gradient 2-norm; default 1e-8 * sites
    step: float = 1.0  # initial (backtracking) or constant (fixed) step
    precondition: bool = True
    mass: float = 1.0  # preconditioner (-Laplacian + mass)^-1

    def validate(self):
        if self.step_rule not in ("backtracking", "fixed"):
            raise LatticeError(f"unknown step rule {self.step_rule!r}")
        if self.max_iter < 0 or not self.step > 0 or not self.mass > 0:
            raise LatticeError("bad flow options")


@dataclass
class FlowResult:
    state: LatticeState
    iterations: int
    grad_norm: float
    energies: list
    converged: bool
    aborted_at: int | None = None

    def summary(self):
        return {"iterations": self.iterations, "grad_norm": self.grad_norm,
                "energy": self.energies[-1] if self.energies else None,
                "converged": self.converged, "aborted_at": self.aborted_at}


def _precondition(g, s, mass):
    N, a = s.N, s.a
    k = 2 * np.pi * np.fft.fftfreq(N)
    lam = sum(np.meshgrid(*([(2 - 2 * np.cos(k)) / a**2] * DIM), indexing="ij")) + mass
    out = []
    for x in g:
        sh = x.shape
        X = np.fft.fftn(x.reshape((N,) * DIM + (-1,)), axes=range(DIM)) / lam[..., None]
        out.append(np.real(np.fft.ifftn(X, axes=range(DIM))).reshape(sh) / a**DIM)
    return out


def flow_minimize(s: LatticeState, opts: FlowOptions | None = None) -> FlowResult:
    """Gradient descent (H^1-preconditioned by default) with Armijo backtracking."""
    opts = opts or FlowOptions()
    opts.validate()
    tol = opts.tol if opts.tol is not None else 1e-8 * s.sites
    cur = s.copy()
    E = _energy_value(cur)
    energies = [E]
    step = opts.step
    for it in range(opts.max_iter + 1):
        g = discrete_gradient(cur)
        gn = gradient_norm(g)
        if gn < tol:
            return FlowResult(cur, it, gn, energies, True)
        if it == opts.max_iter:
            break
        d = _precondition(g, cur, opts.mass) if opts.precondition else list(g)
        slope = sum(float(np.sum(x * y)) for x, y in zip(g, d))
        if opts.step_rule == "fixed":
            nxt = cur.with_fields(cur.links - step * d[0], cur.higgs - step * d[1])
            En = _energy_value(nxt)
            if not math.isfinite(En):
                return FlowResult(cur, it, gn, energies, False, it)
        else:
            t = min(step * 2.0, 1e6)
            while True:
                nxt = cur.with_fields(cur.links - t * d[0], cur.higgs - t * d[1])
                En = _energy_value(nxt)
                if math.isfinite(En) and En <= E - ARMIJO_C * t * slope:
                    break
                t *= SHRINK
                if t < 1e-30:
                    return FlowResult(cur, it, gn, energies, False, it)
            step = t
        cur, E = nxt, En
        energies.append(E)
    return FlowResult(cur, opts.max_iter, gn, energies, False)


# ---------------------------------------------------------------- balls and estimates


def _min_image(N):
    i = np.arange(N)
    return np.minimum(i, N - i).astype(float)


def ball_kernel(N: int, a: float, radius: float):
    """Indicator of the periodic (min-image) Euclidean ball about the origin."""
    d = _min_image(N) * a
    grids = np.meshgrid(*([d**2] * DIM), indexing="ij")
    return (sum(grids) <= radius**2 * (1 + 1e-12)).astype(float)


def ball_sums(field, a: float, radius: float):
    """sum over B_radius(x) of field, for every site x (FFT convolution)."""
    N = field.shape[0]
    K = ball_kernel(N, a, radius)
    out = np.fft.irfftn(np.fft.rfftn(field) * np.fft.rfftn(K), s=field.shape,
                         axes=tuple(range(field.ndim)))
    return out


@dataclass
class DensityMap:
    N: int
    a: float
    dens: np.ndarray  # (3, N, N, N, N): |F|^2, |D u|^2, potential
    balls: dict = dc_field(default_factory=dict)
    flags: dict = dc_field(default_factory=dict)

    def curvature_energy(self):
        """Per-site curvature energy 1/2 a^4 |F|^2."""
        return 0.5 * self.a**DIM * self.dens[0]

    def ball(self, radius: float, which: str = "curvature"):
        key = (which, float(radius))
        if key not in self.balls:
            if which == "curvature":
                e = self.curvature_energy()
            elif which == "ym_higgs":
                e = 0.5 * self.a**DIM * (self.dens[0] + self.dens[1])
            elif which == "higgs_gradient":
                e = self.a**DIM * self.dens[1]
            else:
                raise LatticeError(f"unknown ball quantity {which!r}")
            self.balls[key] = np.maximum(ball_sums(e, self.a, radius), 0.0)
        return self.balls[key]


def _check_radii(radii, a, L):
    radii = [float(x) for x in radii]
    if not radii:
        raise LatticeError("empty radius list")
    for x in radii:
        if not (a < x <= L / 4 + 1e-12):
            raise LatticeError(f"radius {x} outside (a, L/4]")
    return sorted(radii)


def epsilon_map(s: LatticeState, radii, eps1: float = EPS1, dens=None) -> DensityMap:
    """Ball curvature energies 1/2 int_{B_r} |F|^2 for every site and radius.

    Sites whose smallest-radius ball energy exceeds eps1 are flagged.
    """
    radii = _check_radii(radii, s.a, s.L)
    dm = DensityMap(s.N, s.a, densities(s) if dens is None else dens)
    for x in radii:
        dm.ball(x)
    dm.flags = {"eps1": eps1, "radius": radii[0], "sites": np.argwhere(dm.ball(radii[0]) > eps1)}
    return dm


def flagged_clusters(dm: DensityMap, merge: float | None = None, sites=None):
    """Merge flagged sites closer than `merge` (default 2a); centroid weighted by density."""
    sites = dm.flags.get("sites", np.zeros((0, DIM), int)) if sites is None else sites
    return cluster_sites(sites, dm.curvature_energy(), dm.N, dm.a, merge)


def cluster_sites(sites, w, N: int, a: float, merge: float | None = None):
    """Connected components of `sites` under periodic distance <= merge."""
    sites = np.asarray(sites, dtype=int).reshape(-1, DIM)
    if len(sites) == 0:
        return []
    merge = 2 * a if merge is None else merge
    tree = cKDTree(sites.astype(float), boxsize=N)
    pairs = tree.query_pairs(merge / a * (1 + 1e-12), output_type="ndarray")
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(sites),) * 2)
    k, lab = connected_components(g, directed=False)
    return [_centroid(sites[lab == j], w, N, a) for j in range(k)]


def _pdist(x, y, N):
    d = np.abs(np.asarray(x) - np.asarray(y)) % N
    d = np.minimum(d, N - d)
    return float(np.sqrt(np.sum(d * d, axis=-1)))


def _centroid(group, w, N, a):
    ref = group[0]
    d = (group - ref + N // 2) % N - N // 2
    ww = np.array([w[tuple(x)] for x in group])
    ww = ww if ww.sum() > 0 else np.ones(len(group))
    c = ref + (ww[:, None] * d).sum(0) / ww.sum()
    return (c % N) * a


@dataclass
class RegularityReport:
    sup_density: float
    ball_energy: float
    ratio: float
    status: str  # ok | hypothesis-fail

    def as_dict(self):
        return dict(self.__dict__)


def regularity_check(s: LatticeState, x0, r1: float, eps0: float = EPS0, dens=None):
    """sup_{B_{r1/2}(x0)} (|F|^2 + |D u|^2) * r1^4 / (1/2 int_{B_r1(x0)} |F|^2 + |D u|^2)."""
    dens = densities(s) if dens is None else dens
    e = dens[0] + dens[1]
    x0 = np.asarray(x0, dtype=float)
    dist = _site_dist(s.N, s.a, x0)
    ball = 0.5 * s.a**DIM * float(np.sum(e[dist <= r1 * (1 + 1e-12)]))
    half = dist <= 0.5 * r1 * (1 + 1e-12)
    sup = float(np.max(e[half])) if np.any(half) else 0.0
    if sup < 1e-14 and ball < 1e-14:
        ratio = 0.0
    else:
        ratio = sup * r1**4 / ball if ball > 0 else math.inf
    status = "ok" if ball <= eps0 else "hypothesis-fail"
    return RegularityReport(sup, ball, ratio, status)


def _site_dist(N, a, x0):
    """Periodic distance from the point x0 (length units) to every site."""
    i = np.arange(N) * a
    L = N * a
    parts = []
    for k in range(DIM):
        d = np.abs(i - x0[k]) % L
        parts.append(np.minimum(d, L - d) ** 2)
    g = np.meshgrid(*parts, indexing="ij")
    return np.sqrt(sum(g))


@dataclass
class HiggsBoundsReport:
    radii: list
    quotients: list  # max_x int_{B_r(x)} |D u|^2 / (r + r^4)
    bounded_by: float
    max_abs_higgs: float
    critical: bool
    warnings: list

    def as_dict(self):
        return dict(self.__dict__)


def higgs_bounds_check(s: LatticeState, radii, grad_tol: float | None = None, dens=None):
    """Ladder of max-center Higgs-gradient ball energies over (r + r^4).

    Balls use the min-image distance, so radii up to the torus diameter are
    admissible without double counting.
    """
    radii = sorted(float(x) for x in radii)
    diam = math.sqrt(DIM) * s.L / 2
    if not radii or radii[0] <= 0 or radii[-1] > diam + 1e-12:
        raise LatticeError(f"radii must lie in (0, {diam}]")
    warns = []
    tol = grad_tol if grad_tol is not None else 1e-8 * s.sites
    gn = gradient_norm(discrete_gradient(s))
    critical = gn < tol
    if not critical:
        warns.append(f"state is not critical: gradient norm {gn:.3g} >= {tol:.3g}")
    dens = densities(s) if dens is None else dens
    e = s.a**DIM * dens[1]
    q = [float(np.max(ball_sums(e, s.a, x))) / (x + x**4) for x in radii]
    q = [max(v, 0.0) for v in q]
    return HiggsBoundsReport(radii, q, max(q), float(np.sqrt(np.max(s.norm2_higgs()))), critical,
                             warns)


# ---------------------------------------------------------------- sampling


def sample_pair(pair, N: int, chunk: int = 1 << 16) -> LatticeState:
    """Sample a torus AnalyticPair: links at link midpoints, Higgs at sites."""
    if pair.base != "torus":
        raise LatticeError("sampling needs a torus pair")
    a = pair.L / N
    r = pair.r
    d = r * (r - 1) // 2
    from .geometry import Chart

    chart = Chart(DIM, "flat", pair.L)
    idx = np.indices((N,) * DIM).reshape(DIM, -1).T.astype(float) * a
    links = np.empty((N**DIM, DIM, d))
    higgs = np.empty((N**DIM, _hdim(r, pair.variant)))
    for s0 in range(0, len(idx), chunk):
        X = idx[s0:s0 + chunk]
        for m in range(DIM):
            Xm = X.copy()
            Xm[:, m] += 0.5 * a
            Am = pair.link_fn(Xm, m) if pair.link_fn is not None else pair.A_fn(Xm, chart)[:, m]
            links[s0:s0 + chunk, m] = to_coeffs(Am, r)
        h = pair.higgs_fn(X, chart)
        higgs[s0:s0 + chunk] = h if pair.variant == "fiber" else to_coeffs(h, r)
    st = LatticeState(N, a, links.reshape((N,) * DIM + (DIM, d)),
                      higgs.reshape((N,) * DIM + (higgs.shape[-1],)), pair.lam, r, pair.variant,
                      {"source": pair.label, **{k: _jsonable(v) for k, v in pair.params.items()}})
    return st


def _jsonable(v):
    if isinstance(v, (tuple, list, np.ndarray)):
        return [float(x) for x in np.asarray(v).ravel()]
    return v


# ---------------------------------------------------------------- snapshots


def save_snapshot(s: LatticeState, path) -> None:
    """JSON header line, then little-endian f64 links (r x r matrices) and Higgs, site-major."""
    head = {"N": s.N, "a": s.a, "r": s.r, "variant": s.variant, "lambda": s.lam,
            "version": SNAPSHOT_VERSION, "meta": s.meta}
    links = to_matrix(s.links, s.r).astype("<f8")
    higgs = s.higgs if s.variant == "fiber" else to_matrix(s.higgs, s.r)
    with open(path, "wb") as fh:
        fh.write(json.dumps(head, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(links).tobytes())
        fh.write(np.ascontiguousarray(higgs.astype("<f8")).tobytes())


def load_snapshot(path) -> LatticeState:
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            head = json.loads(line)
        except json.JSONDecodeError as e:
            raise LatticeError(f"bad snapshot header in {path}") from e
        if head.get("version") != SNAPSHOT_VERSION:
            raise LatticeError(f"unsupported snapshot version {head.get('version')}")
        N, r, variant = int(head["N"]), int(head["r"]), head["variant"]
        nl = N**DIM * DIM * r * r
        nh = N**DIM * (r if variant == "fiber" else r * r)
        buf = np.frombuffer(fh.read(), dtype="<f8")
    if buf.size != nl + nh:
        raise LatticeError(f"snapshot payload has {buf.size} values, expected {nl + nh}")
    links = to_coeffs(buf[:nl].reshape((N,) * DIM + (DIM, r, r)), r)
    h = buf[nl:]
    higgs = h.reshape((N,) * DIM + (r,)) if variant == "fiber" else to_coeffs(
        h.reshape((N,) * DIM + (r, r)), r)
    return LatticeState(N, float(head["a"]), links, higgs.copy(), float(head["lambda"]), r,
                        variant, head.get("meta", {}))
