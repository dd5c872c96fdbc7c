import numpy as np
import pytest

from erds.equilibrium import confined_equilibrium, normalize_potential, solve_torus_equilibrium
from erds.grid import Grid, StateField
from erds.simulator import RateLaw, Scenario


def torus_state(n_cells=128):
    g = Grid("torus", (n_cells,))
    x = g.centers[0]
    n = 2 + 0.5 * np.cos(2 * np.pi * x)
    p = 0.5 + 0.3 * np.cos(2 * np.pi * x)
    e = 1 + 0.5 * np.cos(2 * np.pi * x)
    return StateField(g, np.array([n, p]), e)


def torus_scenario(state, c=1.0, kappa=0.1, rate=None, **kw):
    g = state.grid
    eq = solve_torus_equilibrium(float(g.integrate(state.u[0] - state.u[1])), float(g.integrate(state.e)), c)
    return Scenario("torus", g, state, eq, c=c, kappa=kappa, rate=rate or RateLaw(1.0, 0.1, 0.1), **kw)


def confined_setup(n_cells=128, half_width=6.0):
    g = Grid("box", (n_cells,), half_width)
    x = g.centers[0]
    V = normalize_potential(g, x**2 / 2 + np.log(np.pi) / 4)
    es = np.exp(-2 * V)
    n = 1.5 * es * (1 + 0.5 * np.cos(x))
    p = 0.6 * es * (1 + 0.4 * np.sin(x))
    e = es * (1 + 0.5 * np.cos(1.3 * x))
    e = e / g.integrate(e)
    return g, V, StateField(g, np.array([n, p]), e)


def confined_scenario(g, V, state, c=1.0, kappa=1.0, rate=None, **kw):
    eq = confined_equilibrium(g, V, float(g.integrate(state.u[0] - state.u[1])), c)
    return Scenario("confined", g, state, eq, c=c, kappa=kappa, rate=rate or RateLaw(1.0, 0.1, 0.1),
                    V=V, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for k in sorted(results):
            terminalreporter.write_line(results[k])
