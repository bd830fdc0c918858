from __future__ import annotations

import numpy as np
import pytest

from ymh import geometry as ge
from ymh import smoothfields as sf
from ymh import variational as va


def _random_var(pair, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return va.VariationPair(sf.random_field(pair, rng, 1, "adj", scale),
                            sf.random_field(pair, rng, 0, pair.higgs_kind, scale))


@pytest.mark.parametrize("variant", ["fiber", "adjoint"])
def test_killing_variation_in_slice(variant):
    p = sf.bpst_s4(variant)
    kv = va.killing_variation(p, [0.0, 1.0, 0.0, 0.0, 0.5])
    assert va.slice_residual(p, kv, h=1e-4) < 1e-4


def test_gauge_directions_orthogonal_to_slice():
    # a slice element (Killing variation) pairs to zero with every gauge direction
    p = sf.bpst_s4()
    kv = va.killing_variation(p, [0.0, 1.0, 0.0, 0.0, 0.5])
    sigma = sf.random_field(p, np.random.default_rng(3), 0, "adj")
    z = va.gauge_direction(p, sigma)
    ip = va.pairing(p, z, kv)
    scale = np.sqrt(va.pairing(p, z, z) * va.pairing(p, kv, kv))
    assert abs(ip) < 1e-5 * scale
    assert va.slice_residual(p, z) > 1e-2 * np.sqrt(va.pairing(p, z, z))


@pytest.mark.parametrize("entry", ["bpst_s4", "flat_unit"])
def test_gauge_directions_null_for_unfixed_hessian(entry):
    # L carries the gauge-fixing term |delta B - source|^2; without it the
    # second variation vanishes along gauge orbits at a critical point
    p = sf.make_entry(entry)
    sigma = sf.random_field(p, np.random.default_rng(3), 0, "adj")
    z = va.gauge_direction(p, sigma)
    q = va.quadratic_form(p, z, check=False).value
    assert abs(q - va.slice_residual(p, z) ** 2) < 1e-5 * q


def test_killing_variation_rejects_bad_input():
    with pytest.raises(va.VariationalError):
        va.killing_variation(sf.bpst_s4(), [1.0, 0.0])
    with pytest.raises(va.VariationalError):
        va.killing_variation(sf.bpst_scaled(0.1, "center", base="torus"), np.ones(5))


@pytest.mark.parametrize("variant", ["fiber", "adjoint"])
def test_operator_self_adjoint(variant):
    p = sf.bpst_s4(variant)
    a, b = _random_var(p, 1), _random_var(p, 2)
    assert va.self_adjointness_defect(p, a, b) < 1e-4


def test_operator_preserves_slice():
    p = sf.bpst_s4()
    kv = va.killing_variation(p, [0.0, 1.0, 0.0, 0.0, 0.5])
    assert va.slice_residual(p, kv, h=1e-4) < 1e-6
    assert va.slice_residual(p, va.second_variation_apply(p, kv)) < 1e-3


def test_quadratic_form_blocks_add_up():
    p = sf.perturbed(sf.flat_unit(), 4, 0.1)
    q = va.quadratic_form(p, _random_var(p, 5), check=False)
    assert q.value == pytest.approx(q.curvature + q.mixed + q.higgs, rel=1e-12)


def test_flat_unit_nonnegative_on_orthogonal_higgs():
    # constant-norm sections orthogonal to u: L >= 0 at the global minimum
    p = sf.flat_unit()
    zB = sf.zero_field(4, 3, 1, "adj")
    rng = np.random.default_rng(6)
    for _ in range(5):
        c = rng.standard_normal(2)
        w = sf.Field(lambda Y, ch, c=c: np.broadcast_to([0.0, c[0], c[1]], (len(Y), 3)).copy(), 0, "fund")
        assert va.quadratic_form(p, va.VariationPair(zB, w)).value >= -1e-10


@pytest.mark.parametrize("variant", ["fiber", "adjoint"])
def test_conformal_identity_on_instanton(variant):
    p = sf.bpst_s4(variant)
    r = va.conformal_identity_check(p, [0.3, 0.0, 1.0, 0.0, 0.2])
    assert abs(r.rhs) < 1e-4  # zero up to the residual of the field equations
    assert abs(r.lhs) < 1e-3 and r.defect < 1e-2


def test_trace_identity_instanton_and_flat():
    r = va.trace_identity_check(sf.bpst_s4())
    assert r.rhs == 0.0 and abs(r.lhs) < 1e-3
    z = va.trace_identity_check(sf.flat_zero(n=5), ge.sphere_rule(5, 6))
    assert abs(z.lhs) < 1e-6 and abs(z.rhs) < 1e-6


@pytest.mark.parametrize("variant", ["fiber", "adjoint"])
def test_witness_value_flat_zero(variant):
    lam = 1.0
    w = va.instability_witness(sf.flat_zero(variant=variant, lam=lam))
    want = -lam / 2 * ge.sphere_volume(4)
    assert w.negative and w.method == "parallel"
    assert w.value == pytest.approx(want * w.norm2 / ge.sphere_volume(4), rel=1e-4)
    assert w.rayleigh == pytest.approx(-lam / 2, rel=1e-4)


def test_rayleigh_flat_unit_nonnegative():
    r = va.rayleigh_min(sf.flat_unit(), 40, seed=0)
    assert r.rayleigh_min >= -1e-4
    assert r.history == sorted(r.history, reverse=True)


def test_rayleigh_flat_zero_finds_instability():
    r = va.rayleigh_min(sf.flat_zero(), 40, seed=0)
    assert r.rayleigh_min <= -0.5 + 1e-3


def test_energy_flat_zero_potential_only():
    e = va.energy(sf.flat_zero(lam=1.0))
    assert e.curvature == 0.0 and e.gradient == 0.0
    assert e.potential == pytest.approx(ge.sphere_volume(4) / 8, rel=1e-12)
