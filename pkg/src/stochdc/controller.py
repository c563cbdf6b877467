"""Distributed consensus controller for current sharing and average voltage regulation.

    tau_xi  dxi/dt  = -Lc Q I_g
    tau_eta deta/dt = -eta + I_g
    u = -K (I_g - eta) + Q Lc xi + V*
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import ModelError, _connected, _vec


@dataclass(frozen=True)
class CommGraph:
    node_count: int
    weights: dict[tuple[int, int], float]

    @classmethod
    def from_edges(cls, node_count, edges, weights=1.0):
        """Undirected graph; ``weights`` is a scalar or one value per edge."""
        edges = [(int(a), int(b)) for a, b in edges]
        w = np.broadcast_to(np.asarray(weights, dtype=float), (len(edges),))
        table = {}
        for (a, b), rho in zip(edges, w):
            table[(a, b)] = float(rho)
            table[(b, a)] = float(rho)
        return cls(node_count, table)

    def __post_init__(self):
        n = self.node_count
        for (i, j), rho in self.weights.items():
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ModelError(f"comm graph: invalid edge ({i}, {j})")
            if not rho > 0:
                raise ModelError(f"comm graph: weight on ({i}, {j}) must be positive")
            if self.weights.get((j, i)) != rho:
                raise ModelError(f"comm graph: weights must be symmetric, ({i}, {j}) != ({j}, {i})")
        if not _connected(n, list(self.weights)):
            raise ModelError("comm graph: not connected")

    def neighbors(self, i) -> set[int]:
        return {b for a, b in self.weights if a == i}

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((a, b) for a, b in self.weights if a < b)


@dataclass(frozen=True)
class ControllerParams:
    tau_xi: np.ndarray
    tau_eta: np.ndarray
    K: np.ndarray
    Q: np.ndarray
    V_star: np.ndarray

    @classmethod
    def build(cls, n, tau_xi=1.0, tau_eta=0.005, K=0.4, Q=1.0, V_star=380.0):
        return cls(_vec(tau_xi, n, "tau_xi"), _vec(tau_eta, n, "tau_eta"), _vec(K, n, "K"),
                   _vec(Q, n, "Q"), _vec(V_star, n, "V_star"))


@dataclass(frozen=True)
class ControllerState:
    xi: np.ndarray
    eta: np.ndarray


def comm_laplacian(graph: CommGraph) -> np.ndarray:
    n = graph.node_count
    Lc = np.zeros((n, n))
    for (i, j), rho in graph.weights.items():
        if graph.weights.get((j, i)) != rho:
            raise ModelError("comm graph: asymmetric weights")
        Lc[i, j] = -rho
    Lc[np.diag_indices(n)] = -Lc.sum(axis=1)
    return Lc


def controller_update(cs: ControllerState, I_g, params: ControllerParams, graph: CommGraph | np.ndarray):
    """Return ``(dxi/dt, deta/dt, u)``. ``graph`` may be a precomputed Laplacian."""
    Lc = graph if isinstance(graph, np.ndarray) else comm_laplacian(graph)
    I_g = np.asarray(I_g, dtype=float)
    n = params.K.size
    for name, arr in (("I_g", I_g), ("xi", cs.xi), ("eta", cs.eta)):
        if np.shape(arr) != (n,):
            raise ModelError(f"controller_update: {name} has shape {np.shape(arr)}, expected ({n},)")
    if Lc.shape != (n, n):
        raise ModelError("controller_update: Laplacian dimension mismatch")
    dxi = -(Lc @ (params.Q * I_g)) / params.tau_xi
    deta = (I_g - cs.eta) / params.tau_eta
    u = -params.K * (I_g - cs.eta) + params.Q * (Lc @ cs.xi) + params.V_star
    return dxi, deta, u
