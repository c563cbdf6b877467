import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochdc import CommGraph, ControllerParams, ControllerState, ModelError, comm_laplacian, controller_update


def test_laplacian_two_nodes():
    assert comm_laplacian(CommGraph.from_edges(2, [(0, 1)])).tolist() == [[1, -1], [-1, 1]]


def test_laplacian_ring():
    Lc = comm_laplacian(CommGraph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)]))
    np.testing.assert_array_equal(np.diag(Lc), 2.0)
    for i in range(4):
        assert Lc[i, (i + 1) % 4] == -1 and Lc[i, (i - 1) % 4] == -1 and Lc[i, (i + 2) % 4] == 0


@st.composite
def weighted_graphs(draw):
    n = draw(st.integers(2, 7))
    edges = [(i, draw(st.integers(0, i - 1))) for i in range(1, n)]
    weights = [draw(st.floats(0.1, 10.0)) for _ in edges]
    return CommGraph.from_edges(n, edges, weights)


@given(weighted_graphs())
def test_laplacian_properties(graph):
    Lc = comm_laplacian(graph)
    np.testing.assert_allclose(Lc @ np.ones(graph.node_count), 0.0, atol=1e-12)
    np.testing.assert_array_equal(Lc, Lc.T)
    eig = np.linalg.eigvalsh(Lc)
    assert eig[0] > -1e-10 and eig[1] > 1e-10      # connected: single zero eigenvalue


@pytest.mark.parametrize("n,weights,msg", [
    (3, {(0, 1): 1.0, (1, 0): 1.0}, "not connected"),
    (2, {(0, 1): 1.0, (1, 0): 2.0}, "symmetric"),
    (2, {(0, 1): -1.0, (1, 0): -1.0}, "positive"),
    (2, {(0, 0): 1.0}, "invalid"),
])
def test_comm_graph_rejects(n, weights, msg):
    with pytest.raises(ModelError, match=msg):
        CommGraph(n, weights)


def test_consensus_freezes_integrator():
    p = ControllerParams.build(3, Q=[1.0, 2.0, 4.0])
    graph = CommGraph.from_edges(3, [(0, 1), (1, 2)])
    I_g = 8.0 / p.Q                               # Q I_g = 8 at every node
    dxi, _, _ = controller_update(ControllerState(np.ones(3), np.zeros(3)), I_g, p, graph)
    np.testing.assert_allclose(dxi, 0.0, atol=1e-12)


def test_filter_term_vanishes_when_eta_tracks():
    p = ControllerParams.build(2)
    graph = CommGraph.from_edges(2, [(0, 1)])
    xi = np.array([0.3, -0.1])
    I_g = np.array([5.0, 7.0])
    _, deta, u = controller_update(ControllerState(xi, I_g.copy()), I_g, p, graph)
    np.testing.assert_allclose(deta, 0.0)
    np.testing.assert_allclose(u, p.Q * (comm_laplacian(graph) @ xi) + p.V_star)


def test_single_node_control_input():
    p = ControllerParams.build(1, K=0.4, V_star=380.0)
    _, deta, u = controller_update(ControllerState(np.zeros(1), np.ones(1)), [2.0], p, np.zeros((1, 1)))
    assert u[0] == pytest.approx(379.6)
    assert deta[0] == pytest.approx((2.0 - 1.0) / 0.005)


def test_dimension_mismatch():
    p = ControllerParams.build(2)
    with pytest.raises(ModelError, match="I_g"):
        controller_update(ControllerState(np.zeros(2), np.zeros(2)), [1.0, 2.0, 3.0], p, np.zeros((2, 2)))
    with pytest.raises(ModelError, match="Laplacian"):
        controller_update(ControllerState(np.zeros(2), np.zeros(2)), [1.0, 2.0], p, np.zeros((3, 3)))


def test_params_positive():
    with pytest.raises(ModelError, match="tau_eta"):
        ControllerParams.build(2, tau_eta=0.0)
