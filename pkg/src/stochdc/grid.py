"""Electrical network model: DGUs, RL lines and stochastic ZIP loads.

Node and edge indices are 0-based throughout.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .loads import StochasticParams


class ModelError(ValueError):
    """Raised when a model object violates one of its invariants."""


class VoltageGuardError(ArithmeticError):
    """A node voltage dropped below the guard threshold (the P-load term is singular at 0 V)."""

    def __init__(self, nodes, voltages, v_min):
        self.nodes = list(nodes)
        self.voltages = list(voltages)
        self.v_min = v_min
        super().__init__(
            f"voltage guard violated at nodes {self.nodes}: "
            f"V={self.voltages} <= v_min={v_min}"
        )


DEFAULT_V_MIN = 1.0


def _vec(values, size, name, positive=True):
    arr = np.array(np.broadcast_to(np.asarray(values, dtype=float), (size,)))
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"{name}: entries must be finite")
    if positive and np.any(arr <= 0):
        raise ModelError(f"{name}: entries must be strictly positive")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Topology:
    node_count: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        n = int(self.node_count)
        if n < 1:
            raise ModelError("topology: node_count must be positive")
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        for k, (a, b) in enumerate(edges):
            if not (0 <= a < n and 0 <= b < n):
                raise ModelError(f"topology: edge {k} references a node outside 0..{n - 1}")
            if a == b:
                raise ModelError(f"topology: edge {k} is a self-loop")
        object.__setattr__(self, "node_count", n)
        object.__setattr__(self, "edges", edges)
        if not _connected(n, edges):
            raise ModelError("topology: graph is not connected")

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def incident_lines(self) -> list[set[int]]:
        sets = [set() for _ in range(self.node_count)]
        for k, (a, b) in enumerate(self.edges):
            sets[a].add(k)
            sets[b].add(k)
        return sets


def _connected(n, edges):
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in edges:
        parent[find(a)] = find(b)
    return len({find(i) for i in range(n)}) == 1


@dataclass(frozen=True)
class ElectricalParams:
    Lg: np.ndarray
    Cg: np.ndarray
    R: np.ndarray
    L: np.ndarray

    @classmethod
    def build(cls, topology: Topology, Lg=1.8e-3, Cg=2.2e-3, R=70e-3, L=2.0e-6):
        n, m = topology.node_count, topology.edge_count
        return cls(_vec(Lg, n, "Lg"), _vec(Cg, n, "Cg"), _vec(R, m, "R"), _vec(L, m, "L"))


@dataclass(frozen=True)
class LoadStep:
    time: float
    dG_star: np.ndarray
    dI_star: np.ndarray
    dP_star: np.ndarray


@dataclass(frozen=True)
class ZipLoadConstants:
    G_star: np.ndarray
    I_star: np.ndarray
    P_star: np.ndarray
    step_schedule: tuple[LoadStep, ...] = field(default=())

    @classmethod
    def build(cls, n, G_star, I_star, P_star, steps=()):
        G = _vec(G_star, n, "G_star")
        I = _vec(I_star, n, "I_star")
        P = _vec(P_star, n, "P_star")
        schedule = []
        for s in steps:
            schedule.append(LoadStep(
                float(s.get("time")),
                _vec(s.get("dG_star", 0.0), n, "dG_star", positive=False),
                _vec(s.get("dI_star", 0.0), n, "dI_star", positive=False),
                _vec(s.get("dP_star", 0.0), n, "dP_star", positive=False),
            ))
        out = cls(G, I, P, tuple(sorted(schedule, key=lambda s: s.time)))
        out.segments()  # validates post-step positivity
        return out

    def segments(self) -> list[tuple[float, "ZipLoadConstants"]]:
        """Piecewise-constant load constants as (start time, constants) pairs."""
        G, I, P = self.G_star, self.I_star, self.P_star
        out = [(0.0, ZipLoadConstants(G, I, P))]
        for s in self.step_schedule:
            if s.time < 0:
                raise ModelError("load step: time must be non-negative")
            G, I, P = G + s.dG_star, I + s.dI_star, P + s.dP_star
            for name, arr in (("G_star", G), ("I_star", I), ("P_star", P)):
                if np.any(arr <= 0):
                    raise ModelError(f"load step at t={s.time}: {name} must stay strictly positive")
            out.append((s.time, ZipLoadConstants(G, I, P)))
        return out

    def at(self, t: float) -> "ZipLoadConstants":
        current = None
        for start, consts in self.segments():
            if start <= t:
                current = consts
        return current


@dataclass(frozen=True)
class NetworkState:
    I_g: np.ndarray
    V: np.ndarray
    I: np.ndarray
    I_hat: np.ndarray
    P_hat: np.ndarray
    G_hat: np.ndarray

    @classmethod
    def zeros_like(cls, topology: Topology, **overrides):
        n, m = topology.node_count, topology.edge_count
        base = dict(I_g=np.zeros(n), V=np.zeros(n), I=np.zeros(m),
                    I_hat=np.zeros(n), P_hat=np.zeros(n), G_hat=np.zeros(n))
        base.update({k: np.asarray(v, dtype=float) for k, v in overrides.items()})
        return cls(**base)

    def replace(self, **changes) -> "NetworkState":
        fields = dict(self.__dict__)
        fields.update({k: np.asarray(v, dtype=float) for k, v in changes.items()})
        return NetworkState(**fields)


def build_incidence(topology: Topology) -> np.ndarray:
    n, m = topology.node_count, topology.edge_count
    A = np.zeros((n, m))
    for k, (pos, neg) in enumerate(topology.edges):
        A[pos, k] = 1.0
        A[neg, k] = -1.0
    return A


def check_voltage(V, v_min=DEFAULT_V_MIN):
    V = np.asarray(V, dtype=float)
    bad = np.flatnonzero(~(V > v_min))
    if bad.size:
        raise VoltageGuardError(bad.tolist(), V[bad].tolist(), v_min)


def load_current(V_i, constants, deviations=(0.0, 0.0, 0.0), v_min=DEFAULT_V_MIN):
    """Current drawn by ZIP load(s) at voltage ``V_i``.

    ``constants`` is a ``ZipLoadConstants`` or a ``(G*, I*, P*)`` triple and
    ``deviations`` is ``(I_hat, P_hat, G_hat)``. Works elementwise on arrays.
    """
    if isinstance(constants, ZipLoadConstants):
        G, I, P = constants.G_star, constants.I_star, constants.P_star
    else:
        G, I, P = constants
    I_hat, P_hat, G_hat = deviations
    check_voltage(np.atleast_1d(V_i), v_min)
    out = (np.asarray(G) + G_hat) * V_i + I + I_hat + (np.asarray(P) + P_hat) / V_i
    return float(out) if np.ndim(out) == 0 else out


def drift(state: NetworkState, u, electrical: ElectricalParams, loads: ZipLoadConstants,
          stochastic: StochasticParams, topology: Topology, v_min=DEFAULT_V_MIN) -> NetworkState:
    """Deterministic part of the open-loop dynamics, divided through by the inertias.

    State arrays may carry leading batch axes.
    """
    A = build_incidence(topology)
    V = np.asarray(state.V, dtype=float)
    I_l = load_current(V, loads, (state.I_hat, state.P_hat, state.G_hat), v_min)
    return NetworkState(
        I_g=(np.asarray(u, dtype=float) - V) / electrical.Lg,
        V=(state.I_g + state.I @ A.T - I_l) / electrical.Cg,
        I=(-(V @ A) - electrical.R * state.I) / electrical.L,
        I_hat=-stochastic.mu_I * state.I_hat,
        P_hat=-stochastic.mu_P * state.P_hat,
        G_hat=-stochastic.mu_G * state.G_hat,
    )


def diffusion(state: NetworkState, stochastic: StochasticParams) -> np.ndarray:
    """Per-channel noise coefficients ordered (I_hat nodes, P_hat nodes, G_hat nodes).

    The electrical states carry no noise, so only the 3n load channels are returned.
    """
    return np.concatenate([
        stochastic.sigma_I * state.I_hat,
        stochastic.sigma_P * state.P_hat,
        stochastic.sigma_G * state.G_hat,
    ])
