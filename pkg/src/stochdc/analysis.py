"""Steady state, storage functions, Ito derivatives and the Omega-set test.

Every function that takes a ``NetworkState`` also accepts states whose arrays
carry leading batch axes, so sampled property checks run vectorised.

Load variants
-------------
``"Z*IP*"``   only the current deviation is stochastic,
``"Z*IP"``    current and power deviations,
``"ZIP"``     all three deviations,
``"closed-loop"``  ZIP plus the consensus controller states.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .controller import ControllerState, controller_update
from .grid import DEFAULT_V_MIN, NetworkState, ZipLoadConstants, check_voltage, drift
from .system import Plant

VARIANTS = ("Z*IP*", "Z*IP", "ZIP", "closed-loop")
_ACTIVE = {"Z*IP*": (True, False, False), "Z*IP": (True, True, False),
           "ZIP": (True, True, True), "closed-loop": (True, True, True)}
EPS = 1e-12


class EquilibriumError(RuntimeError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message if residual is None else f"{message} (residual {residual:.3e})")


@dataclass(frozen=True)
class Equilibrium:
    I_g_bar: np.ndarray
    V_bar: np.ndarray
    I_bar: np.ndarray
    u_bar: np.ndarray
    xi_bar: np.ndarray
    eta_bar: np.ndarray
    i_g_star: float
    iterations: int = 0
    residual: float = 0.0

    def network_state(self) -> NetworkState:
        z = np.zeros_like(self.V_bar)
        return NetworkState(self.I_g_bar, self.V_bar, self.I_bar, z, z, z)

    def controller_state(self) -> ControllerState:
        return ControllerState(self.xi_bar, self.eta_bar)


@dataclass(frozen=True)
class LyapunovWeights:
    Pi: np.ndarray
    Sigma: np.ndarray
    Lambda: np.ndarray

    @classmethod
    def build(cls, n, Pi=1e3, Sigma=1e-7, Lambda=1e-7):
        out = []
        for name, v in (("Pi", Pi), ("Sigma", Sigma), ("Lambda", Lambda)):
            arr = np.array(np.broadcast_to(np.asarray(v, dtype=float), (n,)))
            if not np.all(arr > 0):
                raise ValueError(f"{name}: weights must be strictly positive")
            arr.setflags(write=False)
            out.append(arr)
        return cls(*out)


# ---------------------------------------------------------------- equilibrium

def _node_balance(plant: Plant, loads: ZipLoadConstants, V, i_g_star):
    A, R = plant.incidence, plant.electrical.R
    Q = plant.controller.Q
    line = A @ ((A.T @ V) / R)
    return i_g_star / Q - line - loads.G_star * V - loads.I_star - loads.P_star / V


def steady_state_residuals(plant: Plant, eq: Equilibrium, loads: ZipLoadConstants | None = None) -> dict:
    """Residuals of the steady-state equations and of both control goals."""
    loads = loads or plant.loads
    A, R = plant.incidence, plant.electrical.R
    Q, V_star = plant.controller.Q, plant.controller.V_star
    Lc = plant.laplacian
    return {
        "input": eq.V_bar - eq.u_bar,
        "node": loads.I_star + loads.G_star * eq.V_bar + loads.P_star / eq.V_bar - eq.I_g_bar - A @ eq.I_bar,
        "line": eq.I_bar + (A.T @ eq.V_bar) / R,
        "sharing": Lc @ (Q * eq.I_g_bar),
        "average_voltage": np.atleast_1d(np.sum((eq.V_bar - V_star) / Q)),
        "filter": eq.eta_bar - eq.I_g_bar,
        "control_law": Q * (Lc @ eq.xi_bar) + V_star - eq.u_bar,
    }


def max_residual(res: dict) -> float:
    return max(float(np.max(np.abs(v))) for v in res.values())


def _complete(plant: Plant, loads, V, i_g_star, iterations=0, residual=0.0) -> Equilibrium:
    A, R = plant.incidence, plant.electrical.R
    Q, V_star = plant.controller.Q, plant.controller.V_star
    I_bar = -(A.T @ V) / R
    I_g = i_g_star / Q
    # Q Lc xi = V - V*, defined up to the consensus direction: take min-norm
    xi, *_ = np.linalg.lstsq(plant.laplacian, (V - V_star) / Q, rcond=None)
    return Equilibrium(I_g, V, I_bar, V.copy(), xi, I_g.copy(), float(i_g_star), iterations, residual)


def solve_equilibrium(plant: Plant, loads: ZipLoadConstants | None = None, tol=1e-11,
                      max_iter=50) -> Equilibrium:
    """Newton iteration on (V, i_g*) for the node balances plus the average-voltage constraint."""
    loads = loads or plant.loads
    n = plant.n
    A, R = plant.incidence, plant.electrical.R
    Q, V_star = plant.controller.Q, plant.controller.V_star
    lap_R = A @ np.diag(1.0 / R) @ A.T
    V = V_star.astype(float).copy()
    i_g = np.sum(loads.G_star * V + loads.I_star + loads.P_star / V) / np.sum(1.0 / Q)

    def residual(V, i_g):
        return np.concatenate([_node_balance(plant, loads, V, i_g), [np.sum((V - V_star) / Q)]])

    F = residual(V, i_g)
    for it in range(1, max_iter + 1):
        J = np.zeros((n + 1, n + 1))
        J[:n, :n] = -(lap_R + np.diag(loads.G_star - loads.P_star / V ** 2))
        J[:n, n] = 1.0 / Q
        J[n, :n] = 1.0 / Q
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise EquilibriumError(f"singular Jacobian at iteration {it}") from exc
        V, i_g = V + step[:n], i_g + step[n]
        if np.any(V <= 0):
            raise EquilibriumError("Newton iterate left the positive-voltage region")
        F = residual(V, i_g)
        scale = 1.0 + np.max(np.abs(V))
        if np.max(np.abs(F)) < tol and np.max(np.abs(step)) < tol * scale:
            break
    else:
        raise EquilibriumError(f"Newton did not converge in {max_iter} iterations",
                               float(np.max(np.abs(F))))
    return _complete(plant, loads, V, i_g, it, float(np.max(np.abs(F))))


def fixed_point_equilibrium(plant: Plant, loads: ZipLoadConstants | None = None, damping=0.5,
                            tol=1e-14, max_iter=10_000) -> Equilibrium:
    """Independent route: damped fixed point on V for a given i_g*, bracketed root on i_g*.

    Kept deliberately separate from the Newton solver so the two can cross-check.
    """
    loads = loads or plant.loads
    A, R = plant.incidence, plant.electrical.R
    Q, V_star = plant.controller.Q, plant.controller.V_star
    M = A @ np.diag(1.0 / R) @ A.T + np.diag(loads.G_star)

    def voltages(i_g):
        V = V_star.astype(float).copy()
        for _ in range(max_iter):
            target = np.linalg.solve(M, i_g / Q - loads.I_star - loads.P_star / V)
            V_next = (1.0 - damping) * V + damping * target
            if np.max(np.abs(V_next - V)) < tol * (1.0 + np.max(np.abs(V))):
                return V_next
            V = V_next
        raise EquilibriumError("fixed-point iteration did not converge")

    def gap(i_g):
        return np.sum((voltages(i_g) - V_star) / Q)

    total = np.sum(loads.G_star * V_star + loads.I_star + loads.P_star / V_star) / np.sum(1.0 / Q)
    lo, hi = 0.5 * total, 2.0 * total
    i_g = optimize.brentq(gap, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return _complete(plant, loads, voltages(i_g), i_g)


# -------------------------------------------------------------------- storage

def _project(state: NetworkState, variant: str) -> NetworkState:
    act_I, act_P, act_G = _ACTIVE[variant]
    return NetworkState(
        state.I_g, state.V, state.I,
        state.I_hat if act_I else np.zeros_like(state.I_hat),
        state.P_hat if act_P else np.zeros_like(state.P_hat),
        state.G_hat if act_G else np.zeros_like(state.G_hat),
    )


def storage(state: NetworkState, cs: ControllerState | None, eq: Equilibrium, w: LyapunovWeights,
            plant: Plant, variant: str = "closed-loop", eta_gain: bool = False) -> np.ndarray:
    """Shifted quadratic energy; the controller terms are included only for ``closed-loop``.

    ``eta_gain=True`` weights the filter term by ``tau_eta * K`` instead of ``tau_eta``.
    """
    el = plant.electrical
    act_I, act_P, act_G = _ACTIVE[variant]
    dIg, dV, dI = state.I_g - eq.I_g_bar, state.V - eq.V_bar, state.I - eq.I_bar
    S = 0.5 * (np.sum(el.Lg * dIg ** 2, axis=-1) + np.sum(el.Cg * dV ** 2, axis=-1)
               + np.sum(el.L * dI ** 2, axis=-1))
    if act_I:
        S = S + 0.5 * np.sum(w.Pi * state.I_hat ** 2, axis=-1)
    if act_P:
        S = S + 0.5 * np.sum(w.Sigma * state.P_hat ** 2, axis=-1)
    if act_G:
        S = S + 0.5 * np.sum(w.Lambda * state.G_hat ** 2, axis=-1)
    if variant == "closed-loop":
        c = plant.controller
        eta_w = c.tau_eta * c.K if eta_gain else c.tau_eta
        S = S + 0.5 * (np.sum(c.tau_xi * (cs.xi - eq.xi_bar) ** 2, axis=-1)
                       + np.sum(eta_w * (cs.eta - eq.eta_bar) ** 2, axis=-1))
    return S


# -------------------------------------------------------- Ito derivative, direct

def _flatten(state: NetworkState, cs: ControllerState | None):
    parts = [state.I_g, state.V, state.I, state.I_hat, state.P_hat, state.G_hat]
    if cs is not None:
        parts += [cs.xi, cs.eta]
    return np.concatenate([np.asarray(p, dtype=float) for p in parts], axis=-1)


def storage_hessian(plant: Plant, w: LyapunovWeights, variant: str, eta_gain: bool = False) -> np.ndarray:
    """Diagonal of the (constant) Hessian of the storage in flattened-state order."""
    el, c, n = plant.electrical, plant.controller, plant.n
    act_I, act_P, act_G = _ACTIVE[variant]
    z = np.zeros(n)
    parts = [el.Lg, el.Cg, el.L, w.Pi if act_I else z, w.Sigma if act_P else z, w.Lambda if act_G else z]
    if variant == "closed-loop":
        parts += [c.tau_xi, c.tau_eta * c.K if eta_gain else c.tau_eta]
    return np.concatenate(parts)


def diffusion_matrix(state: NetworkState, plant: Plant, variant: str, closed_loop: bool) -> np.ndarray:
    """g(x) of dx = f dt + g dW in flattened-state order, shape (..., N, M)."""
    n, m = plant.n, plant.m
    sp = plant.stochastic
    act = _ACTIVE[variant]
    batch = np.shape(state.V)[:-1]
    N = 5 * n + m + (2 * n if closed_loop else 0)
    M = n if sp.shared_noise else 3 * n
    g = np.zeros(batch + (N, M))
    values = (sp.sigma_I * state.I_hat, sp.sigma_P * state.P_hat, sp.sigma_G * state.G_hat)
    idx = np.arange(n)
    for c, (active, val) in enumerate(zip(act, values)):
        if not active:
            continue
        rows = 2 * n + m + c * n + idx
        cols = idx if sp.shared_noise else c * n + idx
        g[..., rows, cols] = val
    return g


def closed_loop_drift(state: NetworkState, cs: ControllerState, plant: Plant,
                      loads: ZipLoadConstants | None = None, v_min=DEFAULT_V_MIN):
    """Closed-loop drift and the control input, as (flattened f, u)."""
    loads = loads or plant.loads
    dxi, deta, u = _controller_batch(cs, state.I_g, plant)
    f = drift(state, u, plant.electrical, loads, plant.stochastic, plant.topology, v_min)
    return np.concatenate([f.I_g, f.V, f.I, f.I_hat, f.P_hat, f.G_hat, dxi, deta], axis=-1), u


def _controller_batch(cs, I_g, plant):
    if np.ndim(I_g) == 1:
        return controller_update(cs, I_g, plant.controller, plant.laplacian)
    c, Lc = plant.controller, plant.laplacian
    dxi = -((c.Q * I_g) @ Lc.T) / c.tau_xi
    deta = (I_g - cs.eta) / c.tau_eta
    u = -c.K * (I_g - cs.eta) + c.Q * (cs.xi @ Lc.T) + c.V_star
    return dxi, deta, u


def ito_derivative_direct(state: NetworkState, cs: ControllerState | None, eq: Equilibrium,
                          w: LyapunovWeights, plant: Plant, u=None, variant: str = "ZIP",
                          loads: ZipLoadConstants | None = None, v_min=DEFAULT_V_MIN,
                          eta_gain: bool = False):
    """grad S . f + 1/2 tr(g^T Hess(S) g), evaluated from the model right-hand sides.

    Open-loop variants need ``u``; for ``closed-loop`` the input comes from the controller.
    """
    loads = loads or plant.loads
    state = _project(state, variant)
    closed = variant == "closed-loop"
    if closed:
        f, _ = closed_loop_drift(state, cs, plant, loads, v_min)
        x = _flatten(state, cs)
        xbar = _flatten(eq.network_state(), eq.controller_state())
    else:
        if u is None:
            raise ValueError("open-loop Ito derivative needs an input u")
        fs = drift(state, u, plant.electrical, loads, plant.stochastic, plant.topology, v_min)
        f = _flatten(fs, None)
        x = _flatten(state, None)
        xbar = _flatten(eq.network_state(), None)
    H = storage_hessian(plant, w, variant, eta_gain)
    grad = H * (x - xbar)
    g = diffusion_matrix(state, plant, variant, closed)
    trace = np.einsum("...nm,n,...nm->...", g, H, g)
    return np.sum(grad * f, axis=-1) + 0.5 * trace


# ------------------------------------------------------ Ito derivative, expanded

def omega_diagonal(V, V_bar, G_star, P_star, Pi, Sigma, Lambda, mu_P, mu_G, variant="ZIP",
                   form="published"):
    """Elementwise L_ii(V, P*) of the voltage-quadratic term; all arguments broadcast.

    ``form="published"`` is the published expression; ``form="exact"`` is the one
    that makes the completed-square expansion an identity.
    """
    act_I, act_P, act_G = _ACTIVE[variant]
    V = np.asarray(V, dtype=float)
    if form == "published":
        L = 0.5 * (G_star - 1.0 / Pi) - P_star / (V * V_bar)
        if act_P:
            L = L - 0.5 * Sigma * mu_P / V ** 2
        if act_G:
            L = L - (V - V_bar) ** 2 * Lambda * mu_G
    elif form == "exact":
        L = G_star - 0.5 / Pi - P_star / (V * V_bar)
        if act_P:
            L = L - 0.5 / (Sigma * mu_P * V ** 2)
        if act_G:
            L = L - 0.5 * V ** 2 / (Lambda * mu_G)
    else:
        raise ValueError(f"unknown form {form!r}")
    return L


def omega_matrix(V, eq: Equilibrium, w: LyapunovWeights, plant: Plant, variant: str = "ZIP",
                 form: str = "published", loads: ZipLoadConstants | None = None, eps=EPS):
    """Per-node diagonal L_ii at voltages ``V`` and Omega-set membership (all L_ii > eps)."""
    loads = loads or plant.loads
    V = np.asarray(V, dtype=float)
    if np.any(V <= 0):
        raise ValueError("omega_matrix: voltages must be positive")
    if variant == "closed-loop":
        variant = "ZIP"
    sp = plant.stochastic
    L = omega_diagonal(V, eq.V_bar, loads.G_star, loads.P_star, w.Pi, w.Sigma, w.Lambda,
                       sp.mu_P, sp.mu_G, variant, form)
    return L, np.all(L > eps, axis=-1)


def ito_derivative_expanded(state: NetworkState, cs: ControllerState | None, eq: Equilibrium,
                            w: LyapunovWeights, plant: Plant, u=None, variant: str = "ZIP",
                            form: str = "published", gain_sign: float = -1.0,
                            loads: ZipLoadConstants | None = None, breakdown: bool = False,
                            eta_gain: bool = False):
    """Completed-square expansion of the Ito derivative, term by term.

    ``form="published"`` transcribes the published right-hand sides literally
    (the closed-loop gain term with sign ``gain_sign``); ``form="exact"``
    completes the squares so that the result equals the direct route.
    With ``breakdown=True`` a dict of the individual terms is returned too.
    """
    loads = loads or plant.loads
    state = _project(state, variant)
    el, sp = plant.electrical, plant.stochastic
    act_I, act_P, act_G = _ACTIVE[variant]
    dIg, dV, dI = state.I_g - eq.I_g_bar, state.V - eq.V_bar, state.I - eq.I_bar
    V = state.V
    check_voltage(V, 0.0)
    Ih, Ph, Gh = state.I_hat, state.P_hat, state.G_hat
    Pi, Sg, Lm = w.Pi, w.Sigma, w.Lambda
    terms = {}

    if variant == "closed-loop":
        c = plant.controller
        e = state.I_g - cs.eta
        if form == "published":
            terms["gain"] = gain_sign * np.sum(c.K * e ** 2, axis=-1)
        else:
            terms["gain"] = -np.sum(c.K * e ** 2, axis=-1)
            if not eta_gain:
                # vanishes only for K = identity
                terms["filter_mismatch"] = np.sum((1.0 - c.K) * (cs.eta - eq.eta_bar) * e, axis=-1)
    else:
        if u is None:
            raise ValueError("open-loop expansion needs an input u")
        terms["supply"] = np.sum(dIg * (np.asarray(u) - eq.u_bar), axis=-1)

    terms["line"] = -np.sum(el.R * dI ** 2, axis=-1)
    if act_I:
        terms["I_decay"] = -np.sum((sp.mu_I - 0.5 * sp.sigma_I ** 2 - 0.5) * Pi * Ih ** 2, axis=-1)
        terms["I_square"] = -0.5 * np.sum((dV / np.sqrt(Pi) + np.sqrt(Pi) * Ih) ** 2, axis=-1)
    if act_P:
        terms["P_decay"] = -0.5 * np.sum((sp.mu_P - sp.sigma_P ** 2) * Sg * Ph ** 2, axis=-1)
        r = -1.0 + eq.V_bar / V
        sq = np.sqrt(Sg * sp.mu_P) * Ph - r / np.sqrt(Sg * sp.mu_P)
        terms["P_square"] = -0.5 * np.sum(sq ** 2, axis=-1)
    if act_G:
        terms["G_decay"] = -0.5 * np.sum((sp.mu_G - sp.sigma_G ** 2) * Lm * Gh ** 2, axis=-1)
        if form == "published":
            # (V - Vbar)(V - Vbar)^T 1, read literally as an outer product
            coupling = dV * np.sum(dV, axis=-1, keepdims=True)
        else:
            coupling = dV * V
        sq = np.sqrt(Lm * sp.mu_G) * Gh + coupling / np.sqrt(Lm * sp.mu_G)
        terms["G_square"] = -0.5 * np.sum(sq ** 2, axis=-1)
    Lmat, _ = omega_matrix(V, eq, w, plant, variant, form, loads, eps=0.0)
    terms["voltage_quadratic"] = -np.sum(dV * Lmat * dV, axis=-1)

    total = sum(terms.values())
    return (total, terms) if breakdown else total


# --------------------------------------------------------------- goal metrics

def goal_metrics(times, I_g, V, Q, V_star, window):
    """Tail-window current-sharing dispersion and relative weighted-average voltage error.

    ``I_g`` and ``V`` have shape (T, n); ``window`` is ``(t_start, t_end)``,
    inclusive at both ends.
    """
    times = np.asarray(times, dtype=float)
    t0, t1 = window
    sel = (times >= t0) & (times <= t1)
    if not np.any(sel):
        raise ValueError(f"goal_metrics: no samples in window {window}")
    Ig = np.asarray(I_g, dtype=float)[sel]
    Vs = np.asarray(V, dtype=float)[sel]
    weighted = Q * Ig
    dispersion = np.mean(weighted.max(axis=1) - weighted.min(axis=1))
    ref = np.sum(V_star / Q)
    voltage_error = np.mean(np.abs(np.sum((Vs - V_star) / Q, axis=1))) / abs(ref)
    return {
        "sharing_dispersion": float(dispersion),
        "mean_generated_current": float(np.mean(Ig)),
        "voltage_error": float(voltage_error),
        "weighted_average_voltage": float(np.mean(np.sum(Vs / Q, axis=1) / np.sum(1.0 / Q))),
    }
