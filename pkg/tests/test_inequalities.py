import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erds import inequalities as I
from erds.diagnostics import estimate_functional_constants, poincare_constant
from erds.errors import DomainError, PreconditionError
from erds.grid import Grid


def test_el_in_examples():
    c = I.check_el_in(np.array([1.0, 4.0]))
    assert c.all_hold
    assert c.lhs[0] == 0 and c.rhs[0] == 0
    assert c.rhs[1] == pytest.approx(3 * np.log(4)) and c.rhs[1] == pytest.approx(4.158883, abs=1e-6)
    assert c.lhs[1] == pytest.approx(4.0)


def test_el_in2_examples():
    c = I.check_el_in2(np.array([1.0, 4.0]))
    assert c.all_hold
    assert c.lhs[0] == 0 and c.rhs[0] == 0
    assert c.lhs[1] == pytest.approx(2.545177, abs=1e-6)
    assert c.rhs[1] == pytest.approx(4.772589, abs=1e-6)


def test_deterministic_log_grid():
    y = np.logspace(-6, 6, 10_000)
    assert I.check_el_in(y).all_hold
    assert I.check_el_in2(y).all_hold
    assert I.pinsker_pointwise(np.concatenate([[0.0], y])).all_hold


@settings(max_examples=300)
@given(st.floats(min_value=1e-6, max_value=1e6))
def test_scalar_inequalities_hypothesis(y):
    assert I.check_el_in(y).all_hold
    assert I.check_el_in2(y).all_hold
    assert I.pinsker_pointwise(y).all_hold


def test_scalar_domain_errors():
    with pytest.raises(DomainError):
        I.check_el_in(0.0)
    with pytest.raises(DomainError):
        I.pinsker_pointwise(-1.0)


def test_ckp_examples():
    f = np.array([1.0, 2.0, 3.0])
    c = I.ckp_lower_bound(f, f, 1 / 3)
    assert c.lhs == 0 and c.rhs == 0 and c.all_hold
    # f = 2 on the left half, g = 1 everywhere
    f = np.array([2.0, 2.0, 0.0, 0.0])
    g = np.ones(4)
    c = I.ckp_lower_bound(f, g, 0.25)
    assert c.lhs == pytest.approx(0.5)
    assert c.rhs == pytest.approx(np.log(2))
    assert c.all_hold


def test_ckp_infinite_when_support_mismatch():
    c = I.ckp_lower_bound(np.array([1.0, 1.0]), np.array([2.0, 0.0]), 0.5)
    assert np.isinf(c.rhs) and c.all_hold


def test_aux1_examples():
    c = I.aux1_bound(1.0, 1.0, 1.0, 1.0)
    assert c.lhs == 0 and c.rhs == 0 and c.all_hold
    from erds.diagnostics import c0_product
    assert c0_product(1, 1, 1, 1) == 8.0
    assert c0_product(2.0, 0.5, 2.0, 0.5) == pytest.approx(2 * (0.5 + 0.25 / 2 + 4))
    with pytest.raises(PreconditionError):
        I.aux1_bound(2.0, 1.0, 1.0, 1.0)


def test_aux1_branch_coverage(rng):
    # ratios above and below 1/4 for each species
    ns, ps = 1.0, 1.0
    for d in (-0.9, -0.5, 0.0, 3.0, 100.0):
        assert I.aux1_bound(ns + d, ps + d, ns, ps).all_hold
    ns, ps = 10.0, 0.5
    for d in (-0.49, -0.4, 1.0, 50.0):
        assert I.aux1_bound(ns + d, ps + d, ns, ps).all_hold
    ns = np.exp(rng.uniform(-5, 5, 10_000))
    ps = np.exp(rng.uniform(-5, 5, 10_000))
    lo = -np.minimum(ns, ps)
    d = lo * rng.uniform(0, 1, 10_000) ** 0.2 + rng.exponential(5, 10_000) * (rng.uniform(size=10_000) < 0.5)
    nb, pb = ns + d, ps + d
    keep = (nb > 0) & (pb > 0)
    r_n, r_p = (nb / ns)[keep], (pb / ps)[keep]
    assert np.any((r_n >= .25) & (r_p >= .25)) and np.any((r_n < .25) & (r_p >= .25))
    assert np.any((r_n >= .25) & (r_p < .25))
    assert I.aux1_bound(nb[keep], pb[keep], ns[keep], ps[keep]).all_hold


def test_aux2_zero_deviation():
    chk, inter = I.aux2_bound(np.zeros(8), np.zeros(8), 1.0, 2.0, 0.0, 0.0, 0.1, 1 / 8)
    assert chk.lhs == 0 and chk.rhs == 0 and chk.all_hold
    assert all(v.all_hold for v in inter.values())


def test_aux2_single_mode():
    g = Grid("torus", (256,))
    x = g.centers[0]
    sqrt_n = 1.0 + 0.1 * np.cos(2 * np.pi * x)
    n = sqrt_n**2
    p = np.full(256, 0.5)
    cp, _ = poincare_constant(g)
    chk, inter = I.aux2_from_fields(g, n, p, cp)
    assert chk.all_hold and all(v.all_hold for v in inter.values())
    delta = sqrt_n - g.mean(sqrt_n)
    # Poincare sub-step
    assert g.integrate(delta**2) <= cp * g.dirichlet(sqrt_n) * (1 + 1e-12)
    assert g.integrate(delta**2) == pytest.approx(0.005, rel=1e-10)


def test_aux2_precondition():
    with pytest.raises(PreconditionError):
        I.aux2_bound(np.full(4, 2.0), np.zeros(4), 1.0, 1.0, 0.0, 0.0, 0.1, 0.25)


def test_aux2_random_weighted(rng):
    g = Grid("torus", (32,))
    cp, _ = poincare_constant(g)
    n = I._random_fields(rng, 500, 32, g)
    p = I._random_fields(rng, 500, 32, g)
    e = np.exp(0.2 * rng.normal(size=32))
    chk, inter = I.aux2_from_fields(g, n, p, cp, e=e, e_star=float(g.mean(e)))
    assert chk.all_hold


def test_sobolev_constant_field_equality():
    g = Grid("torus", (64,))
    c = I.check_sobolev(g, np.ones(64), 5.0)
    assert c.lhs == pytest.approx(1.0) and c.rhs == pytest.approx(1.0) and c.all_hold
    assert I.sobolev_constant_needed(g, np.ones(64)) == 0.0


def test_sobolev_single_mode_quadrature():
    g = Grid("torus", (512,))
    a = 0.5
    f = 1 + a * np.cos(2 * np.pi * g.centers[0])
    exact = (np.sqrt(1 + 3 * a**2 + 3 * a**4 / 8) - (1 + a**2 / 2)) / (2 * np.pi**2 * a**2)
    assert I.sobolev_constant_needed(g, f) == pytest.approx(exact, rel=1e-4)


def test_sobolev_and_lsi_with_trial_constants(rng):
    g = Grid("torus", (64,))
    fc = estimate_functional_constants(g, seed=1, n_trials=4)
    x = g.centers[0]
    for _ in range(20):
        f = np.exp(0.5 * sum(rng.normal() * np.cos(2 * np.pi * k * x + rng.uniform(0, 6.3)) / k**2 for k in range(1, 5)))
        assert I.check_sobolev(g, f, fc.C_S).all_hold
        assert I.check_log_sobolev(g, f, fc.C_LS).all_hold


def test_log_sobolev_examples():
    g = Grid("torus", (256,))
    c = I.check_log_sobolev(g, np.full(256, 3.0), 1.0)
    assert abs(float(c.lhs)) < 1e-14 and c.rhs == 0 and c.all_hold
    f = 1 + 0.5 * np.cos(2 * np.pi * g.centers[0])
    fc = estimate_functional_constants(g, n_trials=2)
    assert I.check_log_sobolev(g, f, fc.C_LS).all_hold
    w = np.exp(0.3 * np.sin(2 * np.pi * g.centers[0]))
    w /= g.integrate(w)
    fcw = estimate_functional_constants(g, w, n_trials=2)
    assert I.check_log_sobolev(g, f, fcw.C_LS, w).all_hold


def test_oracle_suite_small():
    res = I.run_oracle_suite(samples=5_000, seed=7)
    assert {r.name for r in res} == {"log-sqrt", "lambda-sqrt", "pinsker", "ckp", "aux1", "aux2"}
    assert all(r.passed for r in res)
    assert all(r.worst_ratio <= 1 + 1e-12 for r in res)
