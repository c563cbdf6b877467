"""Scenario documents (YAML): parsing, validation, defaults and normalised dumps.

Schema (all indices 0-based; per-node/per-line values accept a scalar, which
is broadcast, or a list)::

    name: str
    description: str
    network:      {nodes: int, edges: [[pos, neg], ...]}             required
    electrical:   {Lg, Cg, R, L}
    loads:        {G_star, I_star, P_star, steps: [{time, dG_star, dI_star, dP_star}]}
    stochastic:   {mu_I, sigma_I, mu_P, sigma_P, mu_G, sigma_G,
                   initial_I_hat, initial_P_hat, initial_G_hat, shared_noise}
    controller:   {K, tau_xi, tau_eta, Q, V_star, comm_edges, comm_weights}
    lyapunov:     {Pi, Sigma, Lambda}
    integration:  {dt, t_end, record_stride, seed, v_min}
    initial:      {mode: equilibrium | flat}
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .analysis import LyapunovWeights
from .controller import CommGraph, ControllerParams
from .engine import IntegrationSettings
from .grid import ElectricalParams, ModelError, Topology, ZipLoadConstants
from .loads import StochasticParams
from .system import Plant


class ScenarioError(ValueError):
    pass


_REQUIRED = object()

SCHEMA = {
    "name": "unnamed",
    "description": "",
    "network": {"nodes": _REQUIRED, "edges": _REQUIRED},
    "electrical": {"Lg": 1.8e-3, "Cg": 2.2e-3, "R": 70e-3, "L": 2.0e-6},
    "loads": {"G_star": 0.045, "I_star": _REQUIRED, "P_star": _REQUIRED, "steps": []},
    "stochastic": {
        "mu_I": 2.5, "sigma_I": 1.0, "mu_P": 2.0, "sigma_P": 0.7, "mu_G": 1.3, "sigma_G": 0.2,
        "initial_I_hat": None, "initial_P_hat": None, "initial_G_hat": None,
        "shared_noise": False,
    },
    "controller": {"K": 0.4, "tau_xi": 1.0, "tau_eta": 0.005, "Q": 1.0, "V_star": 380.0,
                   "comm_edges": None, "comm_weights": 1.0},
    "lyapunov": {"Pi": 1e3, "Sigma": 1e-7, "Lambda": 1e-7},
    "integration": {"dt": 1e-5, "t_end": 3.0, "record_stride": 100, "seed": 0, "v_min": 1.0},
    "initial": {"mode": "equilibrium"},
}
_STEP_KEYS = {"time", "dG_star", "dI_star", "dP_star"}
INITIAL_DEVIATION_FRACTION = 0.1


@dataclass(frozen=True)
class Scenario:
    name: str
    description: str
    plant: Plant
    weights: LyapunovWeights
    settings: IntegrationSettings
    initial_mode: str
    document: dict            # normalised form, every default explicit

    def dump(self) -> str:
        return dump_document(self.document)

    def with_settings(self, **changes) -> "Scenario":
        doc = _deepcopy(self.document)
        doc["integration"].update(changes)
        return build_scenario(doc)

    def with_document(self, **sections) -> "Scenario":
        doc = _deepcopy(self.document)
        for section, values in sections.items():
            if isinstance(doc.get(section), dict):
                doc[section].update(values)
            else:
                doc[section] = values
        return build_scenario(doc)


def _deepcopy(doc):
    return yaml.safe_load(yaml.safe_dump(doc))


# ------------------------------------------------------------------ parsing

def _to_python(node, path, lines):
    lines[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            key = key_node.value
            if key in out:
                raise ScenarioError(f"duplicate key '{_join(path, key)}' at line {key_node.start_mark.line + 1}")
            out[key] = _to_python(value_node, _join(path, key), lines)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, f"{path}[{i}]", lines) for i, v in enumerate(node.value)]
    return yaml.safe_load(yaml.serialize(node))


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def parse_scenario(text: str) -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from exc
    if node is None or not isinstance(node, yaml.MappingNode):
        raise ScenarioError("scenario document must be a mapping at line 1")
    lines: dict[str, int] = {}
    raw = _to_python(node, "", lines)
    doc = _apply_schema(raw, lines)
    return build_scenario(doc, lines)


def _apply_schema(raw, lines):
    doc = {}
    for key in raw:
        if key not in SCHEMA:
            raise ScenarioError(f"unknown key '{key}' at line {lines.get(key, '?')}")
    for key, spec in SCHEMA.items():
        value = raw.get(key, {} if isinstance(spec, dict) else spec)
        if isinstance(spec, dict):
            if not isinstance(value, dict):
                raise ScenarioError(f"'{key}' must be a mapping (line {lines.get(key, '?')})")
            section = {}
            for sub in value:
                if sub not in spec:
                    raise ScenarioError(f"unknown key '{key}.{sub}' at line {lines.get(_join(key, sub), '?')}")
            for sub, default in spec.items():
                if sub in value:
                    section[sub] = value[sub]
                elif default is _REQUIRED:
                    raise ScenarioError(f"missing required key '{key}.{sub}' (section at line {lines.get(key, '?')})")
                else:
                    section[sub] = default
            doc[key] = section
        else:
            doc[key] = value
    for i, step in enumerate(doc["loads"]["steps"] or []):
        path = f"loads.steps[{i}]"
        if not isinstance(step, dict) or "time" not in step:
            raise ScenarioError(f"'{path}' must be a mapping with a 'time' (line {lines.get(path, '?')})")
        for sub in step:
            if sub not in _STEP_KEYS:
                raise ScenarioError(f"unknown key '{path}.{sub}' at line {lines.get(_join(path, sub), '?')}")
    return doc


def _per(value, size):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (size,))
    return [float(v) for v in arr]


def build_scenario(doc: dict, lines: dict | None = None) -> Scenario:
    """Validate a schema-complete document and return the ``Scenario`` with a normalised copy."""
    lines = lines or {}

    def fail(section, exc):
        where = f" (line {lines[section]})" if section in lines else ""
        return ScenarioError(f"invariant violated in '{section}'{where}: {exc}")

    try:
        net = doc["network"]
        topo = Topology(int(net["nodes"]), tuple(tuple(e) for e in net["edges"]))
    except (ModelError, TypeError, ValueError) as exc:
        raise fail("network", exc) from exc
    n, m = topo.node_count, topo.edge_count
    norm = {"name": str(doc["name"]), "description": str(doc["description"] or ""),
            "network": {"nodes": n, "edges": [list(e) for e in topo.edges]}}

    section = "electrical"
    try:
        e = doc[section]
        el = ElectricalParams.build(topo, e["Lg"], e["Cg"], e["R"], e["L"])
        norm[section] = {"Lg": _per(el.Lg, n), "Cg": _per(el.Cg, n), "R": _per(el.R, m), "L": _per(el.L, m)}

        section = "loads"
        ld = doc[section]
        steps = [dict(s) for s in (ld["steps"] or [])]
        loads = ZipLoadConstants.build(n, ld["G_star"], ld["I_star"], ld["P_star"], steps)
        norm[section] = {
            "G_star": _per(loads.G_star, n), "I_star": _per(loads.I_star, n), "P_star": _per(loads.P_star, n),
            "steps": [{"time": float(s.time), "dG_star": _per(s.dG_star, n), "dI_star": _per(s.dI_star, n),
                       "dP_star": _per(s.dP_star, n)} for s in loads.step_schedule],
        }

        section = "stochastic"
        st = doc[section]
        frac = INITIAL_DEVIATION_FRACTION
        init = {
            "initial_I_hat": st["initial_I_hat"] if st["initial_I_hat"] is not None else frac * loads.I_star,
            "initial_P_hat": st["initial_P_hat"] if st["initial_P_hat"] is not None else frac * loads.P_star,
            "initial_G_hat": st["initial_G_hat"] if st["initial_G_hat"] is not None else frac * loads.G_star,
        }
        if not isinstance(st["shared_noise"], bool):
            raise ModelError("shared_noise must be true or false")
        sp = StochasticParams.build(n, st["mu_I"], st["sigma_I"], st["mu_P"], st["sigma_P"], st["mu_G"],
                                    st["sigma_G"], shared_noise=st["shared_noise"], **init)
        norm[section] = {k: _per(getattr(sp, k), n) for k in
                         ("mu_I", "sigma_I", "mu_P", "sigma_P", "mu_G", "sigma_G",
                          "initial_I_hat", "initial_P_hat", "initial_G_hat")}
        norm[section]["shared_noise"] = sp.shared_noise

        section = "controller"
        c = doc[section]
        cp = ControllerParams.build(n, c["tau_xi"], c["tau_eta"], c["K"], c["Q"], c["V_star"])
        comm_edges = c["comm_edges"] if c["comm_edges"] is not None else [list(e) for e in topo.edges]
        comm_edges = [tuple(int(v) for v in e) for e in comm_edges]
        weights = _per(c["comm_weights"], len(comm_edges))
        graph = CommGraph.from_edges(n, comm_edges, weights)
        norm[section] = {"K": _per(cp.K, n), "tau_xi": _per(cp.tau_xi, n), "tau_eta": _per(cp.tau_eta, n),
                         "Q": _per(cp.Q, n), "V_star": _per(cp.V_star, n),
                         "comm_edges": [list(e) for e in comm_edges], "comm_weights": weights}

        section = "lyapunov"
        ly = doc[section]
        w = LyapunovWeights.build(n, ly["Pi"], ly["Sigma"], ly["Lambda"])
        norm[section] = {"Pi": _per(w.Pi, n), "Sigma": _per(w.Sigma, n), "Lambda": _per(w.Lambda, n)}

        section = "integration"
        ig = doc[section]
        settings = IntegrationSettings(float(ig["dt"]), float(ig["t_end"]), int(ig["record_stride"]),
                                       int(ig["seed"]), float(ig["v_min"]))
        norm[section] = {"dt": settings.dt, "t_end": settings.t_end, "record_stride": settings.record_stride,
                         "seed": settings.seed, "v_min": settings.v_min}

        section = "initial"
        mode = doc[section]["mode"]
        if mode not in ("equilibrium", "flat"):
            raise ModelError(f"mode must be 'equilibrium' or 'flat', got {mode!r}")
        norm[section] = {"mode": mode}

        plant = Plant(topo, el, loads, sp, cp, graph)
    except (ModelError, TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise fail(section, exc) from exc
    return Scenario(norm["name"], norm["description"], plant, w, settings, mode, norm)


def dump_document(doc: dict) -> str:
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)


def bundled_scenarios() -> list[str]:
    root = resources.files("stochdc") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(name_or_path: str | Path) -> Scenario:
    """Load a bundled scenario by name (e.g. ``paper-sec5``) or a YAML file by path."""
    path = Path(name_or_path)
    if path.suffix in (".yaml", ".yml") or path.exists():
        return parse_scenario(path.read_text(encoding="utf-8"))
    res = resources.files("stochdc") / "scenarios" / f"{name_or_path}.yaml"
    if not res.is_file():
        raise ScenarioError(f"no bundled scenario named {name_or_path!r}; available: {bundled_scenarios()}")
    return parse_scenario(res.read_text(encoding="utf-8"))
