"""Bundle of everything that defines the controlled network, minus integration settings."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .controller import CommGraph, ControllerParams, comm_laplacian
from .grid import ElectricalParams, ModelError, Topology, ZipLoadConstants, build_incidence
from .loads import StochasticParams


@dataclass(frozen=True)
class Plant:
    topology: Topology
    electrical: ElectricalParams
    loads: ZipLoadConstants
    stochastic: StochasticParams
    controller: ControllerParams
    comm: CommGraph

    def __post_init__(self):
        n = self.topology.node_count
        if self.comm.node_count != n:
            raise ModelError("plant: communication graph and network disagree on node count")
        if self.stochastic.node_count != n or self.controller.K.size != n:
            raise ModelError("plant: per-node parameter lengths disagree with node count")

    @property
    def n(self) -> int:
        return self.topology.node_count

    @property
    def m(self) -> int:
        return self.topology.edge_count

    @property
    def incidence(self) -> np.ndarray:
        return build_incidence(self.topology)

    @property
    def laplacian(self) -> np.ndarray:
        return comm_laplacian(self.comm)

    def with_loads(self, loads: ZipLoadConstants) -> "Plant":
        return replace(self, loads=loads)
