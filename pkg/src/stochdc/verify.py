"""Sampling-based checks of the Ito-derivative algebra, passivity and stability claims.

Each suite returns a plain dict report with a boolean ``passed`` so the CLI
and the acceptance tests can share them.
"""
from __future__ import annotations

import numpy as np

from .analysis import (VARIANTS, Equilibrium, LyapunovWeights, _ACTIVE, ito_derivative_direct,
                       ito_derivative_expanded, omega_diagonal, omega_matrix, solve_equilibrium,
                       storage)
from .controller import ControllerState
from .engine import stream
from .grid import NetworkState
from .system import Plant

# half-widths of the sampling box, relative to the equilibrium / constant part
V_BOX, CURRENT_BOX, DEVIATION_BOX = 0.3, 0.5, 0.2
IDENTITY_TOL = 1e-8
SIGN_TOL = 1e-9


def _uniform(rng, center, half, size):
    center = np.asarray(center, dtype=float)
    return center + half * rng.uniform(-1.0, 1.0, (size,) + center.shape)


def sample_states(plant: Plant, eq: Equilibrium, w: LyapunovWeights, variant: str, size: int, rng,
                  form: str = "published", max_rounds: int = 100):
    """Uniform samples from the box around ``eq`` that fall inside the Omega set.

    Rejected draws are replaced until ``size`` members are collected.
    Returns ``(NetworkState, ControllerState)`` with a leading batch axis.
    """
    loads = plant.loads
    act_I, act_P, act_G = _ACTIVE[variant]
    floor = np.mean(np.abs(eq.I_g_bar))
    kept, total = [], 0
    for _ in range(max_rounds):
        V = eq.V_bar * (1.0 + V_BOX * rng.uniform(-1.0, 1.0, (size, plant.n)))
        Ig = _uniform(rng, eq.I_g_bar, CURRENT_BOX * np.maximum(np.abs(eq.I_g_bar), floor), size)
        I = _uniform(rng, eq.I_bar, CURRENT_BOX * np.maximum(np.abs(eq.I_bar), 1.0), size)
        zero = np.zeros((size, plant.n))
        Ih = _uniform(rng, zero[0], DEVIATION_BOX * loads.I_star, size) if act_I else zero
        Ph = _uniform(rng, zero[0], DEVIATION_BOX * loads.P_star, size) if act_P else zero
        Gh = _uniform(rng, zero[0], DEVIATION_BOX * loads.G_star, size) if act_G else zero
        xi = _uniform(rng, eq.xi_bar, CURRENT_BOX * np.maximum(np.abs(eq.xi_bar), 1.0), size)
        eta = _uniform(rng, eq.eta_bar, CURRENT_BOX * np.maximum(np.abs(eq.eta_bar), floor), size)
        _, inside = omega_matrix(V, eq, w, plant, variant, form)
        block = np.concatenate([Ig, V, I, Ih, Ph, Gh, xi, eta], axis=1)[inside]
        kept.append(block)
        total += block.shape[0]
        if total >= size:
            break
    else:
        raise RuntimeError(f"Omega set ({form}) too small: {total} of {size} samples accepted")
    X = np.concatenate(kept)[:size]
    n, m = plant.n, plant.m
    cuts = np.cumsum([n, n, m, n, n, n, n])
    parts = np.split(X, cuts, axis=1)
    return NetworkState(*parts[:6]), ControllerState(parts[6], parts[7])


def _sample_inputs(rng, eq, size, per_sample):
    return eq.u_bar * (1.0 + V_BOX * rng.uniform(-1.0, 1.0, (per_sample, size, eq.u_bar.size)))


def ito_identity_suite(plant: Plant, w: LyapunovWeights, samples=10_000, seed=0, form="published",
                       variants=VARIANTS, eta_gain=False):
    """Max relative gap |direct - expanded| / (1 + |direct|) over Omega samples, per variant."""
    eq = solve_equilibrium(plant)
    rng = stream(seed)
    report = {"form": form, "samples": samples, "tolerance": IDENTITY_TOL, "variants": {}}
    for variant in variants:
        st, cs = sample_states(plant, eq, w, variant, samples, rng, form)
        u = _sample_inputs(rng, eq, samples, 1)[0]
        direct = ito_derivative_direct(st, cs, eq, w, plant, u, variant, eta_gain=eta_gain)
        expanded = ito_derivative_expanded(st, cs, eq, w, plant, u, variant, form=form, eta_gain=eta_gain)
        gap = np.abs(direct - expanded) / (1.0 + np.abs(direct))
        report["variants"][variant] = {"max_relative_gap": float(gap.max()),
                                       "fraction_failing": float(np.mean(gap > IDENTITY_TOL)),
                                       "passed": bool(gap.max() <= IDENTITY_TOL)}
    report["passed"] = all(v["passed"] for v in report["variants"].values())
    return report


def passivity_suite(plant: Plant, w: LyapunovWeights, samples=10_000, inputs_per_sample=100, seed=1,
                    form="published", variants=("Z*IP*", "Z*IP", "ZIP")):
    """Check direct Ito derivative <= (u - u_bar)^T (I_g - I_g_bar) + tol for random inputs."""
    eq = solve_equilibrium(plant)
    rng = stream(seed)
    report = {"form": form, "samples": samples, "inputs_per_sample": inputs_per_sample,
              "tolerance": SIGN_TOL, "variants": {}}
    for variant in variants:
        st, _ = sample_states(plant, eq, w, variant, samples, rng, form)
        worst = np.full(samples, -np.inf)
        for u in _sample_inputs(rng, eq, samples, inputs_per_sample):
            supply = np.sum((u - eq.u_bar) * (st.I_g - eq.I_g_bar), axis=-1)
            excess = ito_derivative_direct(st, None, eq, w, plant, u, variant) - supply
            worst = np.maximum(worst, excess)
        report["variants"][variant] = {"max_excess": float(worst.max()),
                                       "fraction_violating": float(np.mean(worst > SIGN_TOL)),
                                       "passed": bool(worst.max() <= SIGN_TOL)}
    report["passed"] = all(v["passed"] for v in report["variants"].values())
    return report


def closed_loop_sign_suite(plant: Plant, w: LyapunovWeights, samples=10_000, seed=2, form="published",
                           eta_gain=False):
    """Sign of the closed-loop expansion (the published claim) and of the direct derivative."""
    eq = solve_equilibrium(plant)
    st, cs = sample_states(plant, eq, w, "closed-loop", samples, stream(seed), form)
    expanded = ito_derivative_expanded(st, cs, eq, w, plant, variant="closed-loop", form=form,
                                       eta_gain=eta_gain)
    direct = ito_derivative_direct(st, cs, eq, w, plant, variant="closed-loop", eta_gain=eta_gain)
    return {
        "form": form, "samples": samples, "tolerance": SIGN_TOL,
        "expanded_max": float(expanded.max()),
        "expanded_passed": bool(expanded.max() <= SIGN_TOL),
        "direct_max": float(direct.max()),
        "direct_fraction_positive": float(np.mean(direct > SIGN_TOL)),
        "direct_passed": bool(direct.max() <= SIGN_TOL),
        "passed": bool(expanded.max() <= SIGN_TOL),
    }


# ---------------------------------------------------------- trajectory checks

def _segment_equilibria(plant: Plant, times):
    segs = plant.loads.segments()
    eqs = [solve_equilibrium(plant, consts) for _, consts in segs]
    starts = np.array([s for s, _ in segs])
    index = np.searchsorted(starts, np.asarray(times) + 1e-12, side="right") - 1
    return segs, eqs, index


def _unpack(X, n, m):
    cuts = np.cumsum([n, n, m, n, n, n, n, n])
    p = np.split(X, cuts, axis=-1)
    return NetworkState(*p[:6]), ControllerState(p[6], p[7])


def omega_along(members, times, plant: Plant, w: LyapunovWeights, form="published"):
    """Omega membership at every recorded time of every member (NaN records count as outside)."""
    segs, eqs, index = _segment_equilibria(plant, times)
    n = plant.n
    inside = np.zeros(members.shape[:2], dtype=bool)
    for s_idx, (_, consts) in enumerate(segs):
        cols = index == s_idx
        V = members[:, cols, n:2 * n]
        ok = np.all(np.isfinite(V), axis=-1) & np.all(V > 0, axis=-1)
        L = omega_diagonal(np.where(V > 0, V, 1.0), eqs[s_idx].V_bar, consts.G_star, consts.P_star,
                           w.Pi, w.Sigma, w.Lambda, plant.stochastic.mu_P, plant.stochastic.mu_G,
                           "ZIP", form)
        inside[:, cols] = ok & np.all(L > 1e-12, axis=-1)
    return inside


def storage_along(members, times, plant: Plant, w: LyapunovWeights, eta_gain=False):
    """Closed-loop storage of every member at every record, relative to the segment's equilibrium."""
    segs, eqs, index = _segment_equilibria(plant, times)
    S = np.empty(members.shape[:2])
    for s_idx in range(len(segs)):
        cols = index == s_idx
        st, cs = _unpack(members[:, cols, :7 * plant.n + plant.m], plant.n, plant.m)
        S[:, cols] = storage(st, cs, eqs[s_idx], w, plant, "closed-loop", eta_gain)
    return S, index


def supermartingale_check(members, times, plant: Plant, w: LyapunovWeights, eta_gain=False,
                          form="published"):
    """Ensemble-mean storage must not rise by more than 3 standard errors between records.

    Pairs straddling a load step are skipped (the reference equilibrium
    changes there) and only members still inside Omega are used.
    """
    S, seg = storage_along(members, times, plant, w, eta_gain)
    inside = omega_along(members, times, plant, w, form)
    in_all = np.all(inside, axis=1)
    S = S[in_all]
    count = S.shape[0]
    report = {"members_used": int(count), "members_total": int(members.shape[0]), "eta_gain": eta_gain}
    if count < 2:
        report.update(passed=False, reason="fewer than two members stayed inside Omega")
        return report
    mean = S.mean(axis=0)
    se = S.std(axis=0, ddof=1) / np.sqrt(count)
    rise = np.diff(mean)
    tol = 3.0 * np.hypot(se[1:], se[:-1])
    same_segment = seg[1:] == seg[:-1]
    bad = same_segment & (rise > tol)
    report.update(
        passed=not bool(bad.any()),
        violations=int(bad.sum()),
        first_violation_time=float(times[1:][bad][0]) if bad.any() else None,
        max_rise_over_tol=float(np.max(np.where(same_segment, rise - tol, -np.inf))),
        initial_mean=float(mean[0]), final_mean=float(mean[-1]),
    )
    return report


def omega_scan(V_range=(60.0, 800.0), P_range=(5.0, 200.0), points=100, G_star=0.045, Pi=1e3,
              Sigma=1e-7, Lambda=1e-7, mu_P=2.0, mu_G=1.3, V_bar=380.0, form="published"):
    """L_ii on a (P*, V) grid; returns (V axis, P* axis, grid of shape (len(P), len(V)))."""
    V = np.linspace(*V_range, points)
    P = np.linspace(*P_range, points)
    VV, PP = np.meshgrid(V, P)
    L = omega_diagonal(VV, V_bar, G_star, PP, Pi, Sigma, Lambda, mu_P, mu_G, "ZIP", form)
    return V, P, L
