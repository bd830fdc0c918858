from __future__ import annotations

import math

import numpy as np
import pytest

from ymh import geometry as ge
from ymh import smoothfields as sf
from ymh import variational as va


def _sphere_points(n, m, seed):
    X = np.random.default_rng(seed).standard_normal((m, n + 1))
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def test_catalog_listing_stable():
    a, b = sf.catalog_list(), sf.catalog_list()
    assert a == b
    names = {e["name"] for e in a["entries"]}
    assert {"flat_unit", "flat_zero", "bpst_s4", "bpst_scaled", "perturbed"} <= names


def test_catalog_schema_validation():
    p = sf.make_entry("bpst_scaled:rho=0.5")
    assert p.params["rho"] == 0.5
    for bad in ("bpst_scaled:rho=-1", "bpst_scaled:rho=abc", "bpst_scaled:size=2", "nope",
                "flat_unit:n=1", "perturbed:entry=perturbed", "bpst_s4:variant=spin"):
        with pytest.raises(sf.CatalogError):
            sf.make_entry(bad)
    assert sf.make_entry("flat_zero:n=5").n == 5
    assert sf.make_entry("perturbed:entry=bpst_s4,amp=0.2").params["amp"] == 0.2


def test_el_residual_flat_unit_exact():
    rule = ge.sphere_rule(4, 8)
    for variant in ("fiber", "adjoint"):
        assert max(sf.el_residual(sf.flat_unit(variant=variant), rule)) < 1e-8


def test_el_residual_instanton_and_detection():
    rule = ge.sphere_rule(4, 8)
    assert max(sf.el_residual(sf.bpst_s4(), rule)) < 1e-3
    assert min(sf.el_residual(sf.perturbed(sf.flat_unit(), 0, 0.1), rule)) > 0.01


def test_instanton_action_converges_to_closed_form():
    vals = [va.energy(sf.bpst_s4(), ge.sphere_rule(4, o)).curvature for o in (8, 12, 16)]
    assert abs(vals[-1] - vals[-2]) < 1e-3 * vals[-1]
    assert vals[-1] == pytest.approx(8 * math.pi**2, rel=1e-3)
    assert sf.instanton_energy() == pytest.approx(8 * math.pi**2)


def test_instanton_energy_conformally_invariant():
    rule = ge.sphere_rule(4, 16)
    e = [va.energy(sf.bpst_scaled(r), rule).curvature for r in (1.0, 0.5, 0.25)]
    assert max(e) - min(e) < 0.01 * e[0]


def test_closed_form_curvature_matches_differences():
    p = sf.bpst_scaled(0.7)
    X = _sphere_points(4, 40, 0)
    exact = sf.curvature_at(p, X)
    fd = sf.curvature_at(p.with_(F_fn=None), X)
    assert np.max(np.abs(exact - fd)) < 1e-6
    dens = sf.evaluate(sf.density_fields(p), ge.sphere_rule(4, 6))
    assert np.all(dens[:, 0] > 0)


def test_second_covariant_derivative_is_curvature():
    # d(d u) = F u at O(h^2)
    p = sf.perturbed(sf.bpst_s4(), 3, 0.3)
    u = sf.random_field(p, np.random.default_rng(1), 0, "fund")
    F = sf.curvature(p)
    X = _sphere_points(4, 30, 2)
    Fu = sf.evaluate_at(lambda Y, c: np.einsum("mijab,mb->mija", F(Y, c), u(Y, c)), 4, X)
    res = []
    for h in (2e-3, 1e-3):
        ddu = sf.dnabla(p, sf.dnabla(p, u, h), h)
        res.append(np.max(np.abs(sf.evaluate_at(ddu, 4, X) - Fu)))
    assert res[1] < 1e-5 * np.max(np.abs(Fu))
    assert 3.2 <= res[0] / res[1] <= 4.8


def test_codifferential_is_adjoint():
    p = sf.bpst_s4()
    rng = np.random.default_rng(4)
    a = sf.random_field(p, rng, 0, "adj")
    b = sf.random_field(p, rng, 1, "adj")
    da, db = sf.dnabla(p, a), sf.delta(p, b)
    rule = ge.sphere_rule(4, 14)

    def integrand(Y, c):
        rho = c.rho(Y)
        return sf.form_inner(da(Y, c), b(Y, c), 1, "adj", rho) - sf.form_inner(a(Y, c), db(Y, c), 0, "adj", rho)

    norm = ge.integrate(sf.evaluate(lambda Y, c: sf.form_inner(b(Y, c), b(Y, c), 1, "adj", c.rho(Y)), rule), rule)
    assert abs(ge.integrate(sf.evaluate(integrand, rule), rule)) < 1e-5 * max(1.0, norm)


def test_instanton_is_yang_mills_pointwise():
    p = sf.bpst_s4()
    v = sf.delta_at(p, sf.curvature(p), _sphere_points(4, 50, 5))
    assert np.max(np.abs(v)) < 1e-4


def test_bochner_residual_second_order():
    p = sf.bpst_s4()
    X = _sphere_points(4, 50, 6)
    psi = sf.random_field(p, np.random.default_rng(7), 1, "adj")
    r1 = np.max(sf.bochner_residual(p, psi, X, 2e-3))
    r2 = np.max(sf.bochner_residual(p, psi, X, 1e-3))
    assert r2 < 1e-2
    assert 3.2 <= r1 / r2 <= 4.8


def test_densities_gauge_invariant():
    p = sf.perturbed(sf.flat_unit(), 1, 0.2)
    g = sf.gauge_transform(p, sf.alg.basis(3)[1], [0.3, -0.2, 0.5, 0.1, 0.0])
    Y = np.random.default_rng(8).uniform(-0.8, 0.8, (30, 4))
    ch = ge.Chart(4, "north")
    d0 = sf.density_fields(p)(Y, ch)
    d1 = sf.density_fields(g)(Y, ch)
    assert np.max(np.abs(d0 - d1)) < 1e-6


def test_torus_link_kernel_matches_field():
    p = sf.bpst_scaled(0.1, "center", base="torus")
    Y = np.random.default_rng(9).uniform(0, 1, (4000, 4))
    A = p.A_fn(Y, ge.Chart(4, "flat"))
    for mu in range(4):
        assert np.max(np.abs(p.link_fn(Y, mu) - A[:, mu])) < 1e-11


def test_torus_bubble_is_instanton_in_core():
    # near the instanton the pair is a gauge transform of the regular instanton
    c = np.full(4, 0.5)
    p = sf.bpst_scaled(0.05, c, base="torus")
    Y = c + np.random.default_rng(10).uniform(-0.06, 0.06, (200, 4))
    d = sf.density_fields(p)(Y, ge.Chart(4, "flat"))[:, 0]
    F = sf.bpst_regular_curvature(Y, 0.05, c)
    ref = sf.form_inner(F, F, 2, "adj", np.ones(len(Y)))
    assert np.max(np.abs(d - ref)) < 2e-3 * ref.max()
