import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from erds.entropy import (EntropyModel, _power_bregman, boltzmann_lambda, entropy_density,
                          entropy_gradient, entropy_hessian, inverse_quadratic_form, mobility_scalar,
                          mobility_tensor, relative_entropy_bregman, relative_entropy_confined,
                          relative_entropy_general, relative_entropy_torus)
from erds.equilibrium import EquilibriumState, confined_equilibrium, solve_torus_equilibrium
from erds.errors import DegenerateMobilityError, DomainError
from erds.grid import Grid, StateField

from conftest import confined_setup

SQRT_MODEL = EntropyModel(b=(0.5, 0.5), coef=(1.0, 1.0), c=1.0, sigma=0.5)


def random_models(rng, count):
    out = []
    for _ in range(count):
        k = int(rng.integers(1, 4))
        out.append(EntropyModel(b=tuple(rng.uniform(0, 1, k)), coef=tuple(np.exp(rng.normal(size=k))),
                                c=float(rng.uniform(0.1, 3)), sigma=float(rng.uniform(0.05, 0.95))))
    return out


# --- boltzmann lambda -------------------------------------------------------

def test_boltzmann_lambda_examples():
    assert boltzmann_lambda(1.0) == 0.0
    assert boltzmann_lambda(0.0) == 1.0
    assert boltzmann_lambda(np.e) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(DomainError):
        boltzmann_lambda(-1e-3)


def test_boltzmann_lambda_branches_agree():
    for nu in (0.5 + 1e-12, 0.99, 1.01, 1.49, 1e-12 * 1.01, 0.9999):
        ref = nu * np.log1p(nu - 1) - (nu - 1) if abs(nu - 1) < 0.5 else nu * np.log(nu) - nu + 1
        assert boltzmann_lambda(nu) == pytest.approx(ref, rel=1e-9, abs=1e-300)


@given(st.floats(min_value=0, max_value=1e12))
def test_boltzmann_lambda_nonnegative(nu):
    assert boltzmann_lambda(nu) >= 0.0


def test_boltzmann_lambda_convex(rng):
    a, b = np.exp(rng.uniform(-10, 10, size=(2, 10_000)))
    t = rng.uniform(0, 1, 10_000)
    mid = boltzmann_lambda(t * a + (1 - t) * b)
    chord = t * boltzmann_lambda(a) + (1 - t) * boltzmann_lambda(b)
    assert np.all(mid <= chord * (1 + 1e-12) + 1e-15)


# --- pointwise density and derivatives --------------------------------------

def test_density_examples():
    assert entropy_density(SQRT_MODEL, np.array([1.0, 1.0]), 1.0) == pytest.approx(1.0)
    ex1 = EntropyModel(b=(1.0,), coef=(1.0,), kind="example1")
    assert entropy_density(ex1, np.array([1.0]), 1.0) == 0.0
    e = 2.3
    du, _ = entropy_gradient(SQRT_MODEL, SQRT_MODEL.w(e), e)
    assert np.allclose(du, 0.0, atol=1e-15)


def test_gradient_example():
    model = EntropyModel(b=(0.5, 0.5), coef=(1.0, 1.0), c=2.0, sigma=0.5)
    _, de = entropy_gradient(model, np.array([1.0, 1.0]), 1.0)
    assert de == pytest.approx(2.0, rel=1e-15)


def test_gradient_and_hessian_match_finite_differences(rng):
    h = 1e-6
    for model in random_models(rng, 20):
        k = model.n_species
        u = np.exp(rng.uniform(-1, 1, k))
        e = float(np.exp(rng.uniform(-1, 1)))
        du, de = entropy_gradient(model, u, e)
        grad = np.append(du, de)
        z = np.append(u, e)

        def f(zz):
            return entropy_density(model, zz[:k], zz[k])

        def g(zz):
            a, b = entropy_gradient(model, zz[:k], zz[k])
            return np.append(a, b)

        fd = np.array([(f(z + h * np.eye(k + 1)[j]) - f(z - h * np.eye(k + 1)[j])) / (2 * h)
                       for j in range(k + 1)])
        assert np.allclose(fd, grad, rtol=1e-6, atol=1e-7)
        fdh = np.array([(g(z + h * np.eye(k + 1)[j]) - g(z - h * np.eye(k + 1)[j])) / (2 * h)
                        for j in range(k + 1)])
        assert np.allclose(fdh, entropy_hessian(model, u, e), rtol=1e-6, atol=1e-6)


def test_hessian_negative_semidefinite(rng):
    u = np.exp(rng.uniform(-5, 5, size=(2, 10_000)))
    e = np.exp(rng.uniform(-5, 5, size=10_000))
    H = entropy_hessian(SQRT_MODEL, u, e)
    vals = np.linalg.eigvalsh(H)
    assert np.all(vals[:, -1] <= 1e-10 * np.abs(vals).max(axis=1))


def test_hessian_quadratic_form_identity(rng):
    for model in random_models(rng, 10):
        k = model.n_species
        u = np.exp(rng.uniform(-2, 2, k))
        e = float(np.exp(rng.uniform(-2, 2)))
        mu, eps = rng.normal(size=k), float(rng.normal())
        v = np.append(mu, eps)
        lhs = -v @ entropy_hessian(model, u, e) @ v
        b = np.array(model.b)
        # w' / w = b / e and w'' / w = b (b - 1) / e^2
        rhs = np.sum(u * (mu / u - eps * b / e) ** 2) + eps**2 * (
            -model.shat(e, order=2) - np.sum(u * b * (b - 1)) / e**2)
        assert lhs == pytest.approx(rhs, rel=1e-10)


# --- mobility ---------------------------------------------------------------

def test_mobility_scalar_examples():
    model = EntropyModel(b=(0.5, 0.5), coef=(1.0, 1.0), c=2.0, sigma=0.5)
    assert mobility_scalar(model, np.array([1.0, 1.0]), 1.0) == pytest.approx(1.0, rel=1e-15)
    m0 = mobility_scalar(model, np.array([0.0, 0.0]), 2.0)
    assert m0 == pytest.approx(-4.0 * model.shat(2.0, order=2))
    linear = EntropyModel(b=(0.0, 1.0), coef=(1.0, 1.0), c=0.0)
    with pytest.raises(DegenerateMobilityError):
        mobility_scalar(linear, np.array([1.0, 1.0]), 1.0)


def test_mobility_tensor_inverts_hessian(rng):
    for model in random_models(rng, 10):
        k = model.n_species
        u = np.exp(rng.uniform(-3, 3, (k, 50)))
        e = np.exp(rng.uniform(-3, 3, 50))
        kappa = float(rng.uniform(0.1, 2))
        Mt = mobility_tensor(model, u, e, kappa)
        ref = -kappa * np.linalg.inv(entropy_hessian(model, u, e))
        assert np.allclose(Mt, ref, rtol=1e-8, atol=0)
        assert np.array_equal(Mt, np.swapaxes(Mt, -1, -2))
        z = rng.normal(size=(k + 1, 50))
        q = inverse_quadratic_form(model, u, e, z[:k], z[k])
        assert np.allclose(q, np.einsum("i...,...ij,j...->...", z, Mt, z) / kappa, rtol=1e-9)


def test_mobility_tensor_decouples_without_cross_terms():
    model = EntropyModel(b=(0.0,), coef=(1.0,), c=1.0, sigma=0.5)
    u, e, kappa = np.array([0.7]), 1.9, 0.3
    Mt = mobility_tensor(model, u, e, kappa)
    expect = np.diag([kappa * 0.7, kappa * e**2 / (-(e**2) * model.shat(e, order=2))])
    assert np.allclose(Mt, expect, rtol=1e-14)


# --- relative entropies -----------------------------------------------------

def torus_eq_and_state(rng, n_cells=64, c=1.0):
    g = Grid("torus", (n_cells,))
    u = np.exp(0.4 * rng.normal(size=(2, n_cells))) * np.array([[2.0], [0.5]])
    e = np.exp(0.3 * rng.normal(size=n_cells))
    st_ = StateField(g, u, e)
    eq = solve_torus_equilibrium(float(g.integrate(u[0] - u[1])), float(g.integrate(e)), c)
    return g, st_, eq


def test_relative_entropy_torus_examples():
    g = Grid("torus", (16,))
    eq = solve_torus_equilibrium(0.0, 1.0, 1.0)
    at_eq = StateField(g, np.ones((2, 16)), np.ones(16))
    assert relative_entropy_torus(at_eq, eq, 1.0) == 0.0
    s = StateField(g, np.array([np.full(16, 2.0), np.full(16, 0.5)]), np.ones(16))
    expect = (2 * np.log(2) - 1) + (0.5 * np.log(0.5) + 0.5)
    assert relative_entropy_torus(s, eq, 3.0) == pytest.approx(expect, rel=1e-14)
    assert expect == pytest.approx(0.5397208, abs=1e-7)


@pytest.mark.parametrize("seed", range(5))
def test_relative_entropy_forms_agree_on_torus(seed):
    rng = np.random.default_rng(seed)
    c = float(rng.uniform(0.2, 3))
    g, s, eq = torus_eq_and_state(rng, c=c)
    model = EntropyModel(b=(0.5, 0.5), coef=(1.0, 1.0), c=c, sigma=0.5)
    H = relative_entropy_torus(s, eq, c)
    assert H > 0
    assert relative_entropy_general(s, eq, model) == pytest.approx(H, rel=1e-10)
    assert relative_entropy_bregman(s, eq, model) == pytest.approx(H, rel=1e-10)


def test_relative_entropy_confined_examples():
    g, V, _ = confined_setup(128)
    es = np.exp(-2 * V)
    eq = confined_equilibrium(g, V, 0.7, 1.0)
    at_eq = StateField(g, eq.u_star, eq.e_star)
    assert relative_entropy_confined(at_eq, eq, 1.0, V) == pytest.approx(0.0, abs=1e-14)
    e = 4 * es
    w = np.exp(-V) * np.sqrt(e)
    s = StateField(g, np.array([eq.C_n * w, eq.C_p * w]), e)
    H = relative_entropy_confined(s, eq, 1.0, V)
    assert H == pytest.approx((1.0 + eq.C_n + eq.C_p) / 2, rel=1e-12)


def test_relative_entropy_confined_matches_bregman():
    g, V, s0 = confined_setup(128)
    c = 0.8
    eq = confined_equilibrium(g, V, float(g.integrate(s0.u[0] - s0.u[1])), c)
    x = g.centers
    Vf = lambda X: np.interp(X[0], x[0], V)  # noqa: E731
    gam = lambda X: np.exp(-2 * Vf(X))  # noqa: E731
    model = EntropyModel(b=(0.5, 0.5), coef=(1.0, 1.0), c=c, sigma=0.5, potentials=(Vf, Vf), gamma=gam)
    H = relative_entropy_confined(s0, eq, c, V)
    assert relative_entropy_bregman(s0, eq, model, x) == pytest.approx(H, rel=1e-10)
    assert relative_entropy_general(s0, eq, model, x) == pytest.approx(H, rel=1e-10)


def test_relative_entropy_zero_at_equilibrium(rng):
    g, s, eq = torus_eq_and_state(rng)
    at_eq = StateField(g, np.broadcast_to(eq.u_star[:, None], (2, 64)).copy(), np.full(64, eq.e_star))
    assert abs(relative_entropy_torus(at_eq, eq, 1.0)) <= 1e-12


@given(st.floats(min_value=1e-6, max_value=1e6), st.floats(min_value=1e-6, max_value=1e6),
       st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=500)
def test_power_bregman_terms_nonnegative(e, es, q):
    val = float(_power_bregman(np.array(e), es, q))
    assert val >= -1e-12 * max(e, es)


def test_general_relative_entropy_nonnegative(rng):
    g = Grid("torus", (32,))
    for model in random_models(rng, 20):
        k = model.n_species
        es = float(np.exp(rng.normal()))
        ct = np.exp(rng.normal(size=k))
        us = ct * model.w(es)
        eq = EquilibriumState(u_star=us, e_star=es, C_tilde=ct, Sigma_u=np.zeros(k), Sigma_e=0.0)
        s = StateField(g, np.exp(rng.normal(size=(k, 32))), np.exp(rng.normal(size=32)))
        H = relative_entropy_general(s, eq, model)
        assert H >= 0
        assert relative_entropy_bregman(s, eq, model) == pytest.approx(H, rel=1e-9)
