"""Blow-up analysis of sequences of lattice states on T^4.

Pipeline: detect concentration points (tail rule on ball energies), estimate
blow-up scales from the sup density, split each tail member into base, bubble
windows and necks, and follow the neck energies along the sequence.

Members are loaded lazily and only their densities are kept (small LRU cache),
so N = 64 sequences fit in a few GB.
"""
from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy import ndimage

from . import lattice as lat
from . import smoothfields as sf

DIM = lat.DIM
MAX_DEPTH = 4
INCL = 1e-12  # relative inclusion tolerance for ball membership


class BubblingError(ValueError):
    pass


# ---------------------------------------------------------------- member views


@dataclass
class MemberView:
    """Densities of one lattice state, enough for every ball/annulus quantity."""
    N: int
    a: float
    lam: float
    dens: np.ndarray  # (3, N, N, N, N) as in lattice.densities
    index: int = -1
    _dists: OrderedDict = dc_field(default_factory=OrderedDict, repr=False)

    @property
    def L(self) -> float:
        return self.N * self.a

    def site_energy(self, which: str = "ymh"):
        """Per-site energy weights a^4/2 (...)."""
        w = 0.5 * self.a**DIM
        if which == "ymh":
            return w * (self.dens[0] + self.dens[1] + self.dens[2])
        if which == "curvature":
            return w * self.dens[0]
        if which == "higgs":
            return w * (self.dens[1] + self.dens[2])
        if which == "higgs_gradient":
            return w * self.dens[1]
        raise BubblingError(f"unknown energy part {which!r}")

    def total(self, which: str = "ymh") -> float:
        return math.fsum(self.site_energy(which).ravel())

    def dist(self, x0):
        key = tuple(float(c) for c in np.asarray(x0, dtype=float).ravel())
        if key not in self._dists:
            self._dists[key] = lat._site_dist(self.N, self.a, np.asarray(key))
            while len(self._dists) > 2:
                self._dists.popitem(last=False)
        return self._dists[key]


def view_of(s, index: int = -1) -> MemberView:
    if isinstance(s, MemberView):
        return s
    if isinstance(s, lat.LatticeState):
        return MemberView(s.N, s.a, s.lam, lat.densities(s), index)
    raise BubblingError(f"expected a LatticeState or MemberView, got {type(s).__name__}")


def _inside(dist, radius):
    return dist <= radius * (1 + INCL)


def ball_energy(s, x0, radius: float, which: str = "ymh") -> float:
    """Energy in the closed periodic ball B_radius(x0)."""
    v = view_of(s)
    return math.fsum(v.site_energy(which)[_inside(v.dist(x0), radius)])


# ---------------------------------------------------------------- sequences


@dataclass
class SequenceSpec:
    """Ordered lattice states, given as states, snapshot paths or zero-arg callables.

    K bounds every member's energy; when None the largest member energy is used
    once all members have been seen.
    """
    members: list
    K: float | None = None
    scales: list | None = None
    label: str = ""
    meta: dict = dc_field(default_factory=dict)
    cache_size: int = 3
    _cache: OrderedDict = dc_field(default_factory=OrderedDict, repr=False)
    _energies: dict = dc_field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.members)

    def state(self, i: int) -> lat.LatticeState:
        m = self.members[i]
        if isinstance(m, lat.LatticeState):
            return m
        if isinstance(m, (str, os.PathLike)):
            try:
                return lat.load_snapshot(m)
            except OSError as e:
                raise BubblingError(f"cannot read member {i}: {e}") from e
        if callable(m):
            return m()
        raise BubblingError(f"member {i} is not a state, path or callable")

    def view(self, i: int) -> MemberView:
        if i < 0:
            i += len(self)
        if i in self._cache:
            self._cache.move_to_end(i)
            return self._cache[i]
        v = view_of(self.state(i), i)
        E = v.total()
        self._energies[i] = E
        if self.K is not None and E > self.K * (1 + 1e-12) + 1e-12:
            raise BubblingError(f"member {i} has energy {E:.6g} > K = {self.K:.6g}")
        self._cache[i] = v
        while len(self._cache) > max(1, self.cache_size):
            self._cache.popitem(last=False)
        return v

    def order(self, indices):
        """`indices` with cached members first, to save recomputation."""
        indices = list(indices)
        return [i for i in indices if i in self._cache] + [i for i in indices if i not in self._cache]

    def tail(self, frac: float = 0.5):
        n = len(self)
        k = max(1, math.ceil(frac * n))
        return list(range(n - k, n))

    def bound(self) -> float:
        if self.K is not None:
            return self.K
        missing = [i for i in range(len(self)) if i not in self._energies]
        for i in missing:
            self.view(i)
        return max(self._energies.values())

    @classmethod
    def from_manifest(cls, path) -> "SequenceSpec":
        """JSON manifest: {"members": [snapshot paths]} or {"generator": {...}}, optional "K"."""
        try:
            with open(path) as fh:
                man = json.load(fh)
        except OSError as e:
            raise BubblingError(f"cannot read manifest: {e}") from e
        except json.JSONDecodeError as e:
            raise BubblingError(f"manifest is not valid JSON: {e}") from e
        if not isinstance(man, dict):
            raise BubblingError("manifest must be a JSON object")
        unknown = set(man) - {"members", "generator", "K", "label"}
        if unknown:
            raise BubblingError(f"unknown manifest keys {sorted(unknown)}")
        K = man.get("K")
        if ("members" in man) == ("generator" in man):
            raise BubblingError("manifest needs exactly one of 'members' or 'generator'")
        if "members" in man:
            base = os.path.dirname(os.path.abspath(path))
            paths = [p if os.path.isabs(p) else os.path.join(base, p) for p in man["members"]]
            seq = cls(paths, K, label=man.get("label", "snapshots"))
        else:
            seq = generator(**man["generator"])
            if K is not None:
                seq.K = float(K)
        return seq


def _torus_member(N, **kw) -> Callable[[], lat.LatticeState]:
    return lambda: lat.sample_pair(sf.torus_bubble(**kw), N)


def single_bubble(N: int = 64, count: int = 5, rho0: float = 0.2, center=(0.5,) * 4,
                  lam: float = 1.0, variant: str = "fiber", K: float | None = None, **kw):
    """Instanton of scale rho0/2^i at a fixed center (with its fixed anti partner)."""
    rhos = [rho0 / 2**i for i in range(count)]
    mem = [_torus_member(N, rho=r, center=np.asarray(center, float), lam=lam, variant=variant, **kw)
           for r in rhos]
    return SequenceSpec(mem, K, rhos, "single", {"N": N, "rho": rhos, "center": list(center)})


def two_bubble(N: int = 64, count: int = 5, rho0: float = 0.1, center=(0.5,) * 4,
               offset=(0.18,) * 4, lam: float = 1.0, variant: str = "fiber",
               K: float | None = None):
    """Instanton and anti-instanton both shrinking, at fixed separated centers."""
    rhos = [rho0 / 2**i for i in range(count)]
    mem = [_torus_member(N, rho=r, center=np.asarray(center, float), anti_rho=r,
                         anti_offset=offset, lam=lam, variant=variant) for r in rhos]
    return SequenceSpec(mem, K, rhos, "two", {"N": N, "rho": rhos, "offset": list(offset)})


def nested(N: int = 64, count: int = 3, rho0: float = 0.05, outer: float = 0.04,
           offset=(0.1,) * 4, center=(0.5,) * 4, lam: float = 1.0, variant: str = "fiber",
           K: float | None = None):
    """Shrinking instanton with a fixed anti-instanton inside its neck region (two scales).

    The anti sits at distance |offset| < delta from the center, so the dyadic
    neck profile about the instanton has an interior peak at that scale.
    """
    rhos = [rho0 / 2**i for i in range(count)]
    mem = [_torus_member(N, rho=r, center=np.asarray(center, float), anti_rho=outer,
                         anti_offset=offset, lam=lam, variant=variant) for r in rhos]
    return SequenceSpec(mem, K, rhos, "nested", {"N": N, "rho": rhos, "outer": outer})


def background_field(amp: float = 0.5, seed: int = 0, L: float = 1.0):
    """Smooth periodic so(3) connection: one-mode trigonometric field, returns link_fn(Y, mu)."""
    rng = np.random.default_rng(seed)
    k = rng.integers(-1, 2, size=(DIM, DIM))
    k[np.all(k == 0, axis=1), 0] = 1
    ph = rng.uniform(0, 2 * np.pi, size=DIM)
    C = amp * rng.standard_normal((DIM, 3))
    T = sf._TWO_L

    def link(Y, mu):
        c = np.cos(2 * np.pi * (Y @ k[mu]) / L + ph[mu])[:, None] * C[mu]
        return np.einsum("ma,abc->mbc", c, T)

    return link


def with_background(pair: sf.AnalyticPair, bg) -> sf.AnalyticPair:
    base_link = pair.link_fn

    def link(Y, mu):
        return base_link(Y, mu) + bg(Y, mu)

    def A(Y, chart):
        return pair.A_fn(Y, chart) + np.stack([bg(Y, m) for m in range(DIM)], axis=1)

    return pair.with_(A_fn=A, link_fn=link, F_fn=None, label=pair.label + "+background")


def on_background(N: int = 64, count: int = 5, rho0: float = 0.2, amp: float = 0.5,
                  seed: int = 0, center=(0.5,) * 4, lam: float = 1.0, variant: str = "fiber",
                  K: float | None = None):
    """Single-bubble schedule on top of a smooth non-flat background connection."""
    rhos = [rho0 / 2**i for i in range(count)]
    bg = background_field(amp, seed)

    def member(r):
        return lambda: lat.sample_pair(
            with_background(sf.torus_bubble(r, np.asarray(center, float), variant, lam), bg), N)

    return SequenceSpec([member(r) for r in rhos], K, rhos, "background",
                        {"N": N, "rho": rhos, "amp": amp, "seed": seed})


def background_only(N: int = 64, amp: float = 0.5, seed: int = 0, lam: float = 1.0,
                    variant: str = "fiber") -> lat.LatticeState:
    """The background of `on_background` alone (zero Higgs), for reference energies."""
    bg = background_field(amp, seed)
    zero = sf.flat_zero(4, 3, variant, lam, base="torus")
    return lat.sample_pair(zero.with_(link_fn=bg), N)


def flat(N: int = 16, count: int = 4, lam: float = 1.0, variant: str = "fiber"):
    mem = [lat.unit_state(N, 1.0 / N, lam, 3, variant) for _ in range(count)]
    return SequenceSpec(mem, 0.0, None, "flat", {"N": N})


GENERATORS = {"single": single_bubble, "two": two_bubble, "nested": nested,
              "background": on_background, "flat": flat}


def generator(kind: str, **kw) -> SequenceSpec:
    if kind not in GENERATORS:
        raise BubblingError(f"unknown generator {kind!r}; choose from {sorted(GENERATORS)}")
    try:
        return GENERATORS[kind](**kw)
    except TypeError as e:
        raise BubblingError(f"bad generator parameters: {e}") from e


# ---------------------------------------------------------------- concentration


@dataclass
class ConcentrationPoint:
    x: list
    ball_energy: float  # tail minimum of the smallest-ladder ball energy
    ladder_energies: list  # tail minimum at each ladder radius
    scales: list  # blow-up scale per tail member

    def as_dict(self):
        return dict(self.__dict__)


@dataclass
class ConcentrationReport:
    points: list
    eps1: float
    ladder: list
    tail: list
    K: float
    bound_ok: bool

    @property
    def sigma(self):
        return [p.x for p in self.points]

    def as_dict(self):
        return {"sigma": [p.as_dict() for p in self.points], "eps1": self.eps1,
                "ladder": self.ladder, "tail": self.tail, "K": self.K, "bound_ok": self.bound_ok}


def detect_concentration(seq: SequenceSpec, R_ladder, eps1: float = lat.EPS1,
                         merge: float | None = None, R0: float | None = None,
                         tail_frac: float = 0.5) -> ConcentrationReport:
    """Points whose smallest-ladder ball energy exceeds eps1 in every tail member.

    Flag masks of the tail members are intersected, then clusters within
    `merge` (default 2a) are merged into density-weighted centroids.
    """
    if len(seq) < 3:
        raise BubblingError("need at least 3 sequence members")
    if not R_ladder:
        raise BubblingError("empty radius ladder")
    tail = seq.tail(tail_frac)
    flags = None
    ladder = None
    last = None
    for i in seq.order(tail):
        v = seq.view(i)
        ladder = lat._check_radii(R_ladder, v.a, v.L)
        B = lat.ball_sums(v.site_energy("curvature"), v.a, ladder[0])
        f = B > eps1
        flags = f if flags is None else flags & f
        if last is None or i > last.index:
            last = v
    sites = np.argwhere(flags)
    centers = lat.cluster_sites(sites, last.site_energy("curvature"), last.N, last.a, merge)
    R0 = ladder[0] if R0 is None else R0
    points = []
    for x in centers:
        lad = []
        scales = []
        for i in tail:
            v = seq.view(i)
            lad.append([ball_energy(v, x, r, "curvature") for r in ladder])
            scales.append(blow_up_scale(v, x, R0))
        lad = np.min(np.array(lad), axis=0)
        points.append(ConcentrationPoint([float(c) for c in x], float(lad[0]),
                                         [float(e) for e in lad], scales))
    K = seq.bound()
    ok = len(points) <= K / eps1 + 1
    if not ok:
        raise BubblingError(f"|Sigma| = {len(points)} exceeds K/eps1 + 1 = {K / eps1 + 1:.3g}")
    return ConcentrationReport(points, eps1, ladder, tail, K, ok)


def blow_up_scale(s, x0, R0: float) -> float:
    """(sup_{B_R0(x0)} |F|^2 + |D u|^2)^(-1/4); math.inf when the density vanishes."""
    v = view_of(s)
    m = _inside(v.dist(x0), R0)
    sup = float(np.max((v.dens[0] + v.dens[1])[m])) if np.any(m) else 0.0
    if not sup > 0:
        return math.inf
    return sup ** -0.25


# ---------------------------------------------------------------- rescaling


def rescale(s: lat.LatticeState, x0, r: float, R: float = 4.0) -> lat.LatticeState:
    """The pair r A(x0 + r x), u(x0 + r x) on a periodic grid covering B_R(0).

    The output spacing is a/r (no super-resolution: r >= a is required) and
    the grid has N' = 2 ceil(R r / a) sites per side, with x = 0 on a site.
    Values are multilinear interpolations of the staggered link and site data.
    """
    if not r >= s.a * (1 - 1e-12):
        raise BubblingError(f"rescale factor {r} below the lattice spacing {s.a}")
    x0 = np.asarray(x0, dtype=float)
    half = max(1, math.ceil(R * r / s.a - 1e-9))
    Np = 2 * half
    ap = s.a / r
    x = (np.arange(Np) - half) * ap
    grid = np.stack(np.meshgrid(*([x] * DIM), indexing="ij"), 0)  # (4, Np, Np, Np, Np)

    def sample(field, shift):
        # lattice index coordinates of x0 + r (grid + shift e_mu)
        pts = x0.reshape(DIM, *([1] * DIM)) + r * grid
        if shift is not None:
            pts = pts.copy()
            pts[shift] += r * 0.5 * ap
            pts[shift] -= 0.5 * s.a
        idx = pts / s.a
        out = np.empty((Np,) * DIM + (field.shape[-1],))
        for c in range(field.shape[-1]):
            out[..., c] = ndimage.map_coordinates(field[..., c], idx, order=1, mode="grid-wrap")
        return out

    links = np.stack([r * sample(s.links[..., m, :], m) for m in range(DIM)], axis=DIM)
    higgs = sample(s.higgs, None)
    meta = dict(s.meta)
    meta.update({"rescaled_from": [float(c) for c in x0], "rescale": r})
    return lat.LatticeState(Np, ap, links, higgs, s.lam, s.r, s.variant, meta)


def window_center(t: lat.LatticeState):
    """Position of the rescaled origin x = 0 on the output grid of `rescale`."""
    return np.full(DIM, (t.N // 2) * t.a)


# ---------------------------------------------------------------- annuli and necks


def dyadic_range(a: float, L: float):
    """Levels l with a <= 2^(-l-1) and 2^(-l) <= L/4."""
    lo = math.ceil(-math.log2(L / 4) - 1e-12)
    hi = math.floor(-math.log2(a) - 1 + 1e-12)
    return list(range(lo, hi + 1))


def annulus_profile(s, x0, levels=None, which: str = "ymh"):
    """[(l, energy on 2^(-l-1) < |x - x0| <= 2^(-l))] over the admissible dyadic range."""
    v = view_of(s)
    levels = dyadic_range(v.a, v.L) if levels is None else list(levels)
    if not levels:
        raise BubblingError("empty dyadic range")
    ok = set(dyadic_range(v.a, v.L))
    bad = [l for l in levels if l not in ok]
    if bad:
        raise BubblingError(f"levels {bad} outside the admissible range")
    dist = v.dist(x0)
    e = v.site_energy(which)
    out = []
    for l in levels:
        m = _inside(dist, 2.0**-l) & ~_inside(dist, 2.0 ** (-l - 1))
        out.append((l, math.fsum(e[m])))
    return out


def shell_energy(s, x0, r_in: float, r_out: float, which: str = "ymh") -> float:
    """Energy on r_in < |x - x0| <= r_out."""
    v = view_of(s)
    dist = v.dist(x0)
    return math.fsum(v.site_energy(which)[_inside(dist, r_out) & ~_inside(dist, r_in)])


def neck_annuli(s, x0, inner: float, delta: float, which: str = "ymh"):
    """Dyadic shells (r, min(2r, delta)] with r = inner 2^k < delta, and their energies."""
    out = []
    r = inner
    while r < delta:
        hi = min(2 * r, delta)
        out.append((r, hi, shell_energy(s, x0, r, hi, which)))
        r *= 2
    return out


def _peak_runs(shells, eps: float, depth: int):
    """Runs of shells around strict interior maxima of the profile above eps (nested scales)."""
    runs = []
    k = 1
    n = len(shells)
    e = [x[2] for x in shells]
    while k < n - 1 and len(runs) < depth:
        if e[k] > e[k - 1] and e[k] > e[k + 1] and e[k] >= eps:
            j0 = k
            while j0 > 1 and e[j0 - 1] >= eps and e[j0 - 1] > e[j0 - 2]:
                j0 -= 1
            j1 = k
            while j1 + 1 < n and e[j1 + 1] >= eps:
                j1 += 1
            runs.append((j0, j1))
            k = j1 + 2
        else:
            k += 1
    return runs


@dataclass
class NeckReport:
    x0: list
    R: float
    delta: float
    eps: float
    members: list  # dicts: index, scale, inner, neck, sup, violated, note
    trend: list  # successive differences of neck energies over feasible members
    decreasing: bool
    nested: list  # member indices whose neck shows an interior peak above eps

    def as_dict(self):
        return dict(self.__dict__)


def neck_energy(seq: SequenceSpec, x0, R: float, delta: float, R0: float,
                eps: float = lat.EPS1, members=None) -> NeckReport:
    """Neck energy E(B_delta(x0) minus B_{R r_i}(x0)) per member, with the annulus hypothesis.

    The hypothesis sup runs over dyadic shells (r, 2r] from r = R r_i, clipped
    to B_delta.  Members with R r_i >= delta are skipped with a note.
    """
    idx = list(range(len(seq))) if members is None else list(members)
    rows = {}
    for i in seq.order(idx):
        v = seq.view(i)
        sc = blow_up_scale(v, x0, R0)
        inner = R * sc
        row = {"index": i, "scale": sc, "inner": inner}
        if not inner < delta:
            row.update(neck=None, sup=None, violated=None, nested=False,
                       note=f"skipped: R r = {inner:.4g} >= delta")
        else:
            shells = neck_annuli(v, x0, inner, delta)
            sup = max(x[2] for x in shells)
            row.update(neck=shell_energy(v, x0, inner, delta), sup=sup, violated=sup >= eps,
                       nested=bool(_peak_runs(shells, eps, 1)), note="")
        rows[i] = row
    rows = [rows[i] for i in idx]
    vals = [r["neck"] for r in rows if r["neck"] is not None]
    trend = [b - a for a, b in zip(vals, vals[1:])]
    dec = len(vals) >= 2 and all(t < 0 for t in trend)
    return NeckReport([float(c) for c in x0], R, delta, eps, rows, trend, dec,
                      [r["index"] for r in rows if r["nested"]])


# ---------------------------------------------------------------- ledger


@dataclass
class EnergyLedger:
    total: float
    base: float
    bubbles: list  # per Sigma point: list of bubble energies by level (level 0 = finest)
    necks: list  # per Sigma point: neck energy (everything in B_delta not in a bubble)
    defect: float
    members: list  # per tail member breakdown
    R: float
    delta: float
    notes: list

    @property
    def bubble_total(self) -> float:
        return math.fsum(e for b in self.bubbles for e in b)

    @property
    def neck_total(self) -> float:
        return math.fsum(self.necks)

    def as_dict(self):
        d = dict(self.__dict__)
        d.update(bubble_total=self.bubble_total, neck_total=self.neck_total)
        return d


def _member_ledger(v: MemberView, points, R, delta, R0, eps, depth):
    """Partition the sites of one member into base, bubble levels and necks."""
    e = v.site_energy()
    n = len(points)
    label = np.full(e.shape, -1, dtype=np.int64)  # -1 base, j inside B_delta of point j
    notes = []
    if n:
        dists = np.stack([v.dist(p) for p in points], 0)
        near = np.argmin(dists, axis=0)
        dmin = np.take_along_axis(dists, near[None], 0)[0]
        del dists
    parts = []
    for j, p in enumerate(points):
        sc = blow_up_scale(v, p, R0)
        inner = min(R * sc, delta)
        if not R * sc < delta:
            notes.append(f"member {v.index} point {j}: window R r = {R * sc:.4g} capped at delta")
        own = near == j
        radii = [(0.0, inner)]
        if inner < delta:
            shells = neck_annuli(v, p, inner, delta)
            for j0, j1 in _peak_runs(shells, eps, depth - 1):
                radii.append((shells[j0][0], shells[j1][1]))
        bub = []
        used = np.zeros(e.shape, dtype=bool)
        for lo, hi in radii:
            m = own & _inside(dmin, hi) & ~(_inside(dmin, lo) if lo > 0 else np.zeros_like(own))
            m &= ~used
            used |= m
            bub.append(math.fsum(e[m]))
        neck_m = own & _inside(dmin, delta) & ~used
        label[own & _inside(dmin, delta)] = j
        parts.append({"scale": sc, "inner": inner, "bubbles": bub, "neck": math.fsum(e[neck_m])})
    base = math.fsum(e[label < 0])
    return {"index": v.index, "total": math.fsum(e.ravel()), "base": base, "points": parts}, notes


def energy_ledger(seq: SequenceSpec, report: ConcentrationReport, R: float = 8.0,
                  delta: float = 0.25, R0: float | None = None, eps: float | None = None,
                  depth: int = MAX_DEPTH) -> EnergyLedger:
    """Tail-averaged split total = base + bubbles + necks over disjoint site sets.

    Sites are assigned to their nearest Sigma point; within B_delta of it the
    window B_{R r} is the finest bubble, and interior peaks of the dyadic neck
    profile above eps become coarser bubbles (up to `depth` levels).
    """
    depth = max(1, min(int(depth), MAX_DEPTH))
    R0 = report.ladder[0] if R0 is None else R0
    eps = report.eps1 if eps is None else eps
    pts = [np.asarray(p, float) for p in report.sigma]
    rows, notes = [], []
    for i in seq.order(report.tail):
        row, nt = _member_ledger(seq.view(i), pts, R, delta, R0, eps, depth)
        rows.append(row)
        notes += nt
    rows.sort(key=lambda r: r["index"])
    k = len(rows)
    total = math.fsum(r["total"] for r in rows) / k
    base = math.fsum(r["base"] for r in rows) / k
    nb = [max(len(r["points"][j]["bubbles"]) for r in rows) for j in range(len(pts))]
    bubbles = [[math.fsum(r["points"][j]["bubbles"][l] if l < len(r["points"][j]["bubbles"]) else 0.0
                          for r in rows) / k for l in range(nb[j])] for j in range(len(pts))]
    necks = [math.fsum(r["points"][j]["neck"] for r in rows) / k for j in range(len(pts))]
    parts = [base] + [e for b in bubbles for e in b] + necks
    defect = total - math.fsum(parts)
    return EnergyLedger(total, base, bubbles, necks, defect, rows, R, delta, notes)


# ---------------------------------------------------------------- Higgs ladder


def higgs_ladder(s, x0, radii):
    """int_{B_r(x0)} |D u|^2 + lam/4 (1 - |u|^2)^2 over (r + r^4), per radius."""
    v = view_of(s)
    return [ball_energy(v, x0, r, "higgs") / (r + r**4) for r in radii]


# ---------------------------------------------------------------- full run


@dataclass
class BubbleRun:
    concentration: ConcentrationReport
    necks: list
    ledger: EnergyLedger

    def as_dict(self):
        return {"concentration": self.concentration.as_dict(),
                "necks": [n.as_dict() for n in self.necks], "ledger": self.ledger.as_dict()}


def analyze(seq: SequenceSpec, ladder, eps1: float = lat.EPS1, R: float = 8.0,
            delta: float = 0.25) -> BubbleRun:
    """detect_concentration, then neck_energy at every Sigma point, then the ledger."""
    rep = detect_concentration(seq, ladder, eps1)
    ledger = energy_ledger(seq, rep, R, delta)
    necks = [neck_energy(seq, p, R, delta, rep.ladder[0], eps1) for p in rep.sigma]
    return BubbleRun(rep, necks, ledger)
