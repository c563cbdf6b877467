import numpy as np
import pytest

from stochdc import (CommGraph, ControllerParams, ElectricalParams, Plant, StochasticParams, Topology,
                     ZipLoadConstants, load_scenario)


def make_plant(n=1, edges=(), G=0.045, I=0.07, P=25.0, steps=(), Lg=1.8e-3, Cg=2.2e-3, R=70e-3, L=2e-6,
               mu=(2.5, 2.0, 1.3), sigma=(1.0, 0.7, 0.2), K=0.4, tau_xi=1.0, tau_eta=0.005, Q=1.0,
               V_star=380.0, comm_edges=None, raw_loads=False, initial=(0.0, 0.0, 0.0)):
    """Small plants for unit tests; ``raw_loads`` skips positivity checks on the load constants."""
    topo = Topology(n, tuple(edges))
    el = ElectricalParams.build(topo, Lg, Cg, R, L)
    if raw_loads:
        b = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
        loads = ZipLoadConstants(b(G), b(I), b(P))
    else:
        loads = ZipLoadConstants.build(n, G, I, P, steps)
    sp = StochasticParams.build(n, mu[0], sigma[0], mu[1], sigma[1], mu[2], sigma[2], *initial)
    cp = ControllerParams.build(n, tau_xi, tau_eta, K, Q, V_star)
    comm = CommGraph.from_edges(n, list(edges) if comm_edges is None else comm_edges)
    return Plant(topo, el, loads, sp, cp, comm)


@pytest.fixture(scope="session")
def base():
    return load_scenario("paper-sec5")


@pytest.fixture(scope="session")
def base_eq(base):
    from stochdc import solve_equilibrium
    return solve_equilibrium(base.plant)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
