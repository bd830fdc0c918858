from __future__ import annotations

import json
import math

import numpy as np
import pytest

from ymh import algebra as alg
from ymh import bubbling as bb
from ymh import lattice as lat
from ymh import smoothfields as sf

C = np.full(4, 0.5)


def _noisy(N=8, seed=0):
    s = lat.random_state(N, 1.0 / N, 0.3, seed)
    rng = np.random.default_rng(seed + 1)
    return s.with_fields(s.links + 0.1 * rng.standard_normal(s.links.shape), s.higgs)


def test_flat_sequence_has_empty_sigma_and_zero_ledger():
    seq = bb.flat(N=16)
    a = 1 / 16
    run = bb.analyze(seq, [2 * a, 4 * a], 1.0)
    assert run.concentration.sigma == [] and run.necks == []
    L = run.ledger
    assert L.base < 1e-25 and L.bubbles == [] and L.necks == [] and abs(L.defect) < 1e-25
    v = seq.view(0)
    assert all(e < 1e-25 for _, e in bb.annulus_profile(v, C))
    assert bb.blow_up_scale(v, C, 2 * a) == math.inf


def test_detect_concentration_input_errors():
    seq = bb.flat(N=8, count=2)
    with pytest.raises(bb.BubblingError):
        bb.detect_concentration(seq, [0.25])
    with pytest.raises(bb.BubblingError):
        bb.detect_concentration(bb.flat(N=8), [])


def test_energy_bound_enforced():
    seq = bb.SequenceSpec([_noisy()] * 3, K=1.0)
    with pytest.raises(bb.BubblingError):
        seq.view(0)


def test_blow_up_scale_fourth_root_rule():
    v = bb.view_of(_noisy())
    w = bb.MemberView(v.N, v.a, v.lam, 16 * v.dens)
    assert bb.blow_up_scale(w, C, 0.25) == pytest.approx(0.5 * bb.blow_up_scale(v, C, 0.25), rel=1e-14)


@pytest.mark.slow
def test_blow_up_scale_proportional_to_rho():
    N = 64
    q = [bb.blow_up_scale(lat.sample_pair(sf.bpst_scaled(r, C, base="torus"), N), C, 2 / N) / r
         for r in (0.2, 0.1, 0.05)]
    assert max(q) / min(q) < 1.15


def test_rescale_identity():
    s = _noisy()
    t = bb.rescale(s, np.zeros(4), 1.0, R=0.5)
    assert t.N == s.N and t.a == s.a
    h = s.N // 2
    assert np.max(np.abs(t.links - np.roll(s.links, h, axis=(0, 1, 2, 3)))) < 1e-10
    assert np.max(np.abs(t.higgs - np.roll(s.higgs, h, axis=(0, 1, 2, 3)))) < 1e-10
    with pytest.raises(bb.BubblingError):
        bb.rescale(s, C, 0.5 * s.a)


def test_rescale_energy_weights():
    # a site-centred window covering the whole torus: curvature is scale invariant,
    # the Higgs gradient picks up r^-2 and the potential r^-4
    s = _noisy()
    r = 2.0
    t = bb.rescale(s, C, r, R=s.N * s.a / (2 * r))
    assert t.N == s.N
    E, Et = lat.discrete_energy(s), lat.discrete_energy(t)
    assert Et.curvature == pytest.approx(E.curvature, rel=1e-10)
    assert r**2 * Et.gradient == pytest.approx(E.gradient, rel=1e-10)
    assert r**4 * Et.potential == pytest.approx(E.potential, rel=1e-10)


def test_rescaled_instanton_matches_unit_scale_member():
    # the torus family is covariant under x -> L x, so the window of rho = 1/4 on
    # L = 1 blown up by rho is the rho = 1 member on L = 4
    N, rho = 32, 0.25
    s = lat.sample_pair(sf.bpst_scaled(rho, C, base="torus"), N)
    w = bb.rescale(s, C, rho, R=2.0)
    ref = lat.sample_pair(sf.bpst_scaled(1.0, np.full(4, 2.0), base="torus", L=4.0), N)
    dw, dr = lat.densities(w)[0], lat.densities(ref)[0]
    x = (np.indices(dw.shape) - N // 2) * w.a
    inner = np.sqrt(np.sum(x**2, axis=0)) <= 1.0
    assert np.max(np.abs(dw - dr)[inner]) < 0.05 * np.max(dr[inner])
    assert lat.discrete_energy(w).curvature == pytest.approx(lat.discrete_energy(s).curvature, rel=0.05)


def test_annulus_profile_additive():
    s = _noisy(N=32, seed=2)
    v = bb.view_of(s)
    prof = bb.annulus_profile(v, C, which="curvature")
    assert [l for l, _ in prof] == [2, 3, 4]
    tot = math.fsum(e for _, e in prof)
    ring = bb.ball_energy(v, C, 0.25, "curvature") - bb.ball_energy(v, C, 1 / 32, "curvature")
    assert abs(tot - ring) < 1e-10 * max(1.0, ring)
    dm = lat.epsilon_map(s, [1 / 16, 1 / 4])
    i = (16,) * 4
    assert math.fsum(e for _, e in prof[:2]) == pytest.approx(dm.ball(0.25)[i] - dm.ball(1 / 16)[i], rel=1e-10)
    with pytest.raises(bb.BubblingError):
        bb.annulus_profile(v, C, levels=[1])


def test_two_bubbles_found_and_ledger_closes():
    N = 32
    a = 1 / N
    seq = bb.two_bubble(N=N, count=3, rho0=0.1)
    run = bb.analyze(seq, [2 * a, 4 * a], 1.0)
    sig = run.concentration.sigma
    assert len(sig) == 2
    want = [C, C + 0.18]
    for w in want:
        assert min(lat._pdist(np.asarray(x) / a, w / a, N) for x in sig) <= 2.0
    assert run.concentration.bound_ok
    L = run.ledger
    assert abs(L.defect) < 1e-10 * L.total
    assert L.total == pytest.approx(L.base + L.bubble_total + L.neck_total, rel=1e-12)


def test_concentration_invariant_under_constant_gauge():
    N = 32
    a = 1 / N
    g = alg.expm_so(alg.random_element(np.random.default_rng(0), 3))
    G = np.broadcast_to(g, (N,) * 4 + (3, 3))
    base = bb.two_bubble(N=N, count=3, rho0=0.1)
    moved = bb.SequenceSpec([lat.gauge_transform(base.state(i), G) for i in range(3)])
    s0 = bb.detect_concentration(base, [2 * a, 4 * a], 1.0).sigma
    s1 = bb.detect_concentration(moved, [2 * a, 4 * a], 1.0).sigma
    assert np.allclose(s0, s1, atol=1e-9)


@pytest.mark.slow
def test_nested_generator_flags_intermediate_scale():
    N = 64
    a = 1 / N
    run = bb.analyze(bb.nested(N=N, count=3), [2 * a, 4 * a], 1.0)
    near = [n for n in run.necks if lat._pdist(np.asarray(n.x0) / a, C / a, N) <= 2.0]
    assert len(near) == 1 and near[0].nested
    assert len(run.ledger.bubbles[run.concentration.sigma.index(near[0].x0)]) == 2
    assert abs(run.ledger.defect) < 1e-10 * run.ledger.total


def test_neck_geometry_infeasible_member_skipped():
    seq = bb.SequenceSpec([_noisy(seed=k) for k in range(3)])
    rep = bb.neck_energy(seq, C, R=1e6, delta=0.25, R0=0.25)
    assert all(m["neck"] is None and m["note"].startswith("skipped") for m in rep.members)
    assert not rep.decreasing


def test_higgs_ladder_flat_zero():
    s = lat.unit_state(16, 1 / 16)
    assert max(bb.higgs_ladder(s, C, [0.25, 0.5])) < 1e-25


def test_manifest_parsing(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"generator": {"kind": "flat", "N": 8}, "K": 1.0}))
    seq = bb.SequenceSpec.from_manifest(p)
    assert len(seq) == 4 and seq.K == 1.0
    s = lat.unit_state(4, 0.25)
    lat.save_snapshot(s, tmp_path / "a.snap")
    p.write_text(json.dumps({"members": ["a.snap", "a.snap", "a.snap"]}))
    assert bb.SequenceSpec.from_manifest(p).state(2).N == 4
    bad = [{"generator": {"kind": "spiral"}}, {"members": [], "generator": {}}, {"x": 1},
           {"generator": {"kind": "flat", "size": 3}}, [1, 2]]
    for b in bad:
        p.write_text(json.dumps(b))
        with pytest.raises(bb.BubblingError):
            bb.SequenceSpec.from_manifest(p)
    p.write_text("{")
    with pytest.raises(bb.BubblingError):
        bb.SequenceSpec.from_manifest(p)
    with pytest.raises(bb.BubblingError, match="cannot read"):
        bb.SequenceSpec.from_manifest(tmp_path / "missing.json")
    p.write_text(json.dumps({"members": ["gone.snap"] * 3}))
    with pytest.raises(bb.BubblingError):
        bb.SequenceSpec.from_manifest(p).state(0)
