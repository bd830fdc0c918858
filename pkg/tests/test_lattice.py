from __future__ import annotations

import math

import numpy as np
import pytest

from ymh import algebra as alg
from ymh import geometry as ge
from ymh import lattice as lat
from ymh import smoothfields as sf
from ymh import variational as va


def _noisy(N=8, seed=0, variant="fiber", amp=0.1):
    s = lat.random_state(N, 1.0 / N, 0.3, seed, variant=variant)
    rng = np.random.default_rng(seed + 100)
    return s.with_fields(s.links + amp * rng.standard_normal(s.links.shape),
                         s.higgs + amp * rng.standard_normal(s.higgs.shape))


def test_trivial_energies():
    assert lat.discrete_energy(lat.unit_state(6, 1 / 6)).total < 1e-30  # |sqrt2|^2 roundoff
    z = lat.unit_state(6, 1 / 6, lam=1.0, unit=False)
    assert lat.discrete_energy(z).total == pytest.approx(0.125, rel=1e-14)
    za = lat.unit_state(6, 1 / 6, lam=1.0, variant="adjoint", unit=False)
    assert lat.discrete_energy(za).potential == pytest.approx(0.125, rel=1e-14)


def test_density_sums_match_energy():
    s = _noisy()
    d = lat.densities(s)
    assert np.all(d >= 0)
    E = lat.discrete_energy(s)
    assert 0.5 * s.a**4 * d[0].sum() == pytest.approx(E.curvature, rel=1e-10)
    assert E.total == pytest.approx(E.curvature + E.gradient + E.potential, rel=1e-14)
    assert np.allclose(lat.densities(s, slab=3), d, rtol=0, atol=1e-12)


def test_state_validation():
    with pytest.raises(lat.LatticeError):
        lat.LatticeState(4, 0.25, np.zeros((4, 4, 4, 4, 4, 2)), np.zeros((4, 4, 4, 4, 3)))
    with pytest.raises(lat.LatticeError):
        lat.unit_state(4, 0.25, variant="spinor")
    s = lat.unit_state(4, 0.25)
    bad = s.with_fields(s.links, s.higgs.copy())
    bad.higgs[0, 0, 0, 0, 0] = np.nan
    with pytest.raises(lat.LatticeError):
        bad.check_finite()


@pytest.mark.parametrize("variant", ["fiber", "adjoint"])
def test_gradient_matches_central_differences(variant):
    errs = lat.gradient_probes(_noisy(variant=variant), 100, seed=1)
    assert max(errs) < 1e-6


def test_gradient_vanishes_at_vacuum():
    g = lat.discrete_gradient(lat.unit_state(6, 1 / 6))
    assert lat.gradient_norm(g) < 1e-15


def test_gradient_orthogonal_to_gauge_directions():
    # small amplitude, where the non-compact covariance defect is negligible
    s = lat.random_state(8, 1 / 8, 1e-3, 2)
    sig = 0.1 * lat._smooth_noise(np.random.default_rng(3), 8, 3)
    t = 1e-4
    p = lat.gauge_transform(s, alg.expm_so(lat.to_matrix(t * sig, 3)))
    m = lat.gauge_transform(s, alg.expm_so(lat.to_matrix(-t * sig, 3)))
    gA, gu = lat.discrete_gradient(s)
    d = (np.sum(gA * (p.links - m.links)) + np.sum(gu * (p.higgs - m.higgs))) / (2 * t)
    assert abs(d) < 1e-8


def test_constant_gauge_invariance():
    s = _noisy()
    g = alg.expm_so(alg.random_element(np.random.default_rng(4), 3))
    G = np.broadcast_to(g, (8,) * 4 + (3, 3))
    t = lat.gauge_transform(s, G)
    assert abs(lat.discrete_energy(t).total - lat.discrete_energy(s).total) < 1e-9
    assert np.max(np.abs(lat.densities(t) - lat.densities(s))) < 1e-9


def test_local_gauge_covariance_is_first_order():
    # energy change under a smooth local gauge shrinks with the spacing
    changes = []
    for N in (8, 16):
        p = sf.perturbed(sf.flat_unit(base="torus"), 0, 0.3)
        p = p.with_(link_fn=None)
        s = _sample_smooth(p, N)
        x = np.indices((N,) * 4).reshape(4, -1).T / N
        sig = 0.5 * np.sin(2 * np.pi * x[:, 0]) + 0.3 * np.cos(2 * np.pi * x[:, 2])
        g = alg.expm_so(sig.reshape((N,) * 4)[..., None, None] * alg.basis(3)[0])
        changes.append(abs(lat.discrete_energy(lat.gauge_transform(s, g)).total
                           - lat.discrete_energy(s).total))
    assert changes[1] < 0.7 * changes[0]


def _sample_smooth(pair, N):
    a = pair.L / N
    ch = ge.Chart(4, "flat", pair.L)
    idx = np.indices((N,) * 4).reshape(4, -1).T * a
    links = np.empty((N**4, 4, 3))
    for m in range(4):
        X = idx.copy()
        X[:, m] += 0.5 * a
        links[:, m] = lat.to_coeffs(pair.A_fn(X, ch)[:, m], 3)
    h = pair.higgs_fn(idx, ch)
    return lat.LatticeState(N, a, links.reshape((N,) * 4 + (4, 3)), h.reshape((N,) * 4 + (3,)))


def test_flow_from_vacuum_exits_immediately():
    r = lat.flow_minimize(lat.unit_state(6, 1 / 6))
    assert r.converged and r.iterations == 0


def test_flow_monotone_and_converges():
    # the default stop (1e-8 per site) leaves |u| a few 1e-3 off; tighten it here
    s = lat.random_state(16, 1 / 16, 0.05, 0)
    r = lat.flow_minimize(s, lat.FlowOptions(tol=1e-9 * s.sites))
    assert r.converged and r.grad_norm < 1e-9 * s.sites
    assert all(b <= a for a, b in zip(r.energies, r.energies[1:]))
    mod = np.sqrt(r.state.norm2_higgs())
    assert mod.max() <= 1 + 1e-6
    assert np.max(np.abs(mod - 1)) < 1e-3 and r.energies[-1] < 1e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_flow_fixed_step_aborts_on_overflow():
    s = lat.random_state(6, 1 / 6, 0.3, 1)
    r = lat.flow_minimize(s, lat.FlowOptions("fixed", 50, step=1e200, precondition=False))
    assert not r.converged and r.aborted_at == 0
    with pytest.raises(lat.LatticeError):
        lat.flow_minimize(s, lat.FlowOptions("newton"))


def test_coulomb_recovers_scrambled_vacuum():
    s = lat.unit_state(8, 1 / 8)
    g = lat.random_gauge(8, 3, 0.5, 5)
    fixed, rep = lat.gauge_fix_coulomb(lat.gauge_transform(s, g))
    assert rep.converged
    assert math.sqrt(np.sum(fixed.links**2)) < 1e-6


def test_coulomb_identity_on_coulomb_state():
    s = lat.unit_state(6, 1 / 6)
    fixed, rep = lat.gauge_fix_coulomb(s)
    assert rep.iterations == 0 and rep.functional_after == rep.functional_before
    assert fixed is s


def test_coulomb_on_generic_state():
    s = _noisy(seed=3, amp=0.02)
    fixed, rep = lat.gauge_fix_coulomb(s)
    assert rep.converged and np.max(np.abs(lat.divergence(fixed))) < 1e-10
    assert rep.functional_after <= rep.functional_before
    assert rep.bound_ratio > 0


def test_epsilon_map_flat_and_monotone():
    s = lat.unit_state(8, 1 / 8)
    dm = lat.epsilon_map(s, [0.15, 0.25], eps1=1e-12)
    assert len(dm.flags["sites"]) == 0
    n = _noisy()
    dm = lat.epsilon_map(n, [0.13, 0.2, 0.25])
    assert np.all(dm.ball(0.2) >= dm.ball(0.13) - 1e-12)
    assert np.all(dm.ball(0.25) >= dm.ball(0.2) - 1e-12)
    total = dm.curvature_energy().sum()
    assert dm.ball(0.13).sum() == pytest.approx(total * lat.ball_kernel(8, 1 / 8, 0.13).sum(), rel=1e-10)


def test_epsilon_map_radius_range():
    s = lat.unit_state(8, 1 / 8)
    for bad in ([1 / 8], [0.3], []):
        with pytest.raises(lat.LatticeError):
            lat.epsilon_map(s, bad)


def test_cluster_sites_periodic_merge():
    sites = np.array([[0, 0, 0, 0], [15, 0, 0, 0], [8, 8, 8, 8], [9, 8, 8, 8]])
    w = np.ones((16,) * 4)
    c = lat.cluster_sites(sites, w, 16, 1 / 16)
    assert len(c) == 2
    got = sorted(tuple(np.round(x, 6)) for x in c)
    assert got[0] == (0.53125, 0.5, 0.5, 0.5)
    assert got[1] == (0.96875, 0.0, 0.0, 0.0)
    assert lat.cluster_sites(np.zeros((0, 4)), w, 16, 1 / 16) == []


def test_regularity_conventions():
    s = lat.unit_state(8, 1 / 8)
    r = lat.regularity_check(s, np.full(4, 0.5), 0.25)
    assert r.ratio == 0.0 and r.status == "ok"


def test_higgs_bounds_flat_and_warning():
    s = lat.unit_state(8, 1 / 8)
    hb = lat.higgs_bounds_check(s, [0.25, 0.5])
    assert hb.quotients == [0.0, 0.0] and hb.critical and not hb.warnings
    spiked = s.with_fields(s.links, s.higgs.copy())
    spiked.higgs[4, 4, 4, 4] = [5.0, 0.0, 0.0]
    hb = lat.higgs_bounds_check(spiked, [0.25, 0.5])
    assert not hb.critical and hb.warnings and hb.bounded_by > 0
    with pytest.raises(lat.LatticeError):
        lat.higgs_bounds_check(s, [2.0])


def test_snapshot_roundtrip(tmp_path):
    for variant in ("fiber", "adjoint"):
        s = _noisy(N=4, variant=variant)
        s.meta["note"] = "x"
        p = tmp_path / f"{variant}.snap"
        lat.save_snapshot(s, p)
        t = lat.load_snapshot(p)
        assert np.array_equal(t.links, s.links) and np.array_equal(t.higgs, s.higgs)
        assert (t.N, t.a, t.lam, t.variant, t.meta) == (s.N, s.a, s.lam, s.variant, s.meta)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(lat.LatticeError):
        lat.load_snapshot(p)
    (tmp_path / "bad.snap").write_bytes(b"not json\n")
    with pytest.raises(lat.LatticeError):
        lat.load_snapshot(tmp_path / "bad.snap")


def test_sampled_instanton_cluster_at_center():
    # rho = 4a on N = 32, the compensating anti-instanton moved away from the core:
    # two clusters, one of them within 2a of the center
    N = 32
    a = 1 / N
    c = np.full(4, 0.5)
    s = lat.sample_pair(sf.bpst_scaled(4 * a, c, base="torus", anti_offset=(0.3,) * 4), N)
    dm = lat.epsilon_map(s, [2 * a, 4 * a], eps1=1.0)
    cl = lat.flagged_clusters(dm)
    assert len(cl) == 2
    assert min(lat._pdist(x / a, c / a, N) for x in cl) <= 2.0
    r = lat.regularity_check(s, c, 2 * a, dens=dm.dens)
    assert r.status == "hypothesis-fail"


def test_sample_requires_torus():
    with pytest.raises(lat.LatticeError):
        lat.sample_pair(sf.bpst_s4(), 8)


def test_sampled_energy_converges_to_continuum():
    # observed order >= 1 under doubling N, against the torus quadrature value
    pair = sf.bpst_scaled(0.2, np.full(4, 0.5), base="torus", anti_offset=(0.3,) * 4)
    ref = va.energy(pair, ge.torus_rule(4, 24)).curvature
    err = [abs(lat.discrete_energy(lat.sample_pair(pair, N)).curvature - ref) for N in (16, 32)]
    assert err[1] <= 0.5 * err[0]
