"""Fixed-step Euler-Maruyama integration of the closed-loop network SDE.

The inner loop lives in a compiled extension (``_em_ext``) with a numpy
twin (``_em_py``); ``BACKEND`` names the one picked at import.  Set
``STOCHDC_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from . import _em_py
from .analysis import Equilibrium, solve_equilibrium
from .grid import DEFAULT_V_MIN
from .system import Plant

log = logging.getLogger(__name__)

try:
    if os.environ.get("STOCHDC_BACKEND", "").lower() == "python":
        raise ImportError("fallback forced by STOCHDC_BACKEND")
    from . import _em_ext
    BACKEND = "compiled"
except ImportError:
    _em_ext = None
    BACKEND = "python"

WORKERS_ENV = "STOCHDC_MAX_WORKERS"
STATUS_OK, STATUS_GUARD, STATUS_NONFINITE = 0, 1, 2
_CHUNK_STEPS = 2048
_CHUNK_VALUES = 1 << 24        # increments held in memory at once by simulate_deviations


class SimulationError(RuntimeError):
    def __init__(self, message, trajectory=None):
        self.trajectory = trajectory
        super().__init__(message)


@dataclass(frozen=True)
class IntegrationSettings:
    dt: float = 1e-5
    t_end: float = 3.0
    record_stride: int = 100
    seed: int = 0
    v_min: float = DEFAULT_V_MIN

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("integration: dt must be positive")
        if not self.t_end > 0:
            raise ValueError("integration: t_end must be positive")
        if self.dt > self.t_end:
            raise ValueError("integration: dt must not exceed t_end")
        if int(self.record_stride) < 1:
            raise ValueError("integration: record_stride must be a positive integer")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ValueError("integration: seed must be a 64-bit unsigned integer")

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))


def state_columns(n, m):
    cols = [f"I_g{i}" for i in range(n)] + [f"V{i}" for i in range(n)] + [f"I{k}" for k in range(m)]
    for ch in ("I_hat", "P_hat", "G_hat"):
        cols += [f"{ch}{i}" for i in range(n)]
    cols += [f"xi{i}" for i in range(n)] + [f"eta{i}" for i in range(n)] + [f"u{i}" for i in range(n)]
    return cols


@dataclass
class Trajectory:
    times: np.ndarray
    data: np.ndarray          # (T, columns); NaN after a failure
    columns: list[str]
    n: int
    m: int
    events: list[dict] = field(default_factory=list)
    status: int = STATUS_OK
    fail_time: float | None = None

    def _block(self, offset, size):
        return self.data[:, offset:offset + size]

    @property
    def I_g(self):
        return self._block(0, self.n)

    @property
    def V(self):
        return self._block(self.n, self.n)

    @property
    def I(self):
        return self._block(2 * self.n, self.m)

    @property
    def deviations(self):
        return self._block(2 * self.n + self.m, 3 * self.n)

    @property
    def xi(self):
        return self._block(5 * self.n + self.m, self.n)

    @property
    def eta(self):
        return self._block(6 * self.n + self.m, self.n)

    @property
    def u(self):
        return self._block(7 * self.n + self.m, self.n)

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK


# ------------------------------------------------------------------ streams

def stream(seed: int, run: int = 0) -> np.random.Generator:
    """Random stream for run ``run`` of base seed ``seed``.

    Derived as ``SeedSequence(seed, spawn_key=(run,))`` so member streams are
    independent and each can be regenerated on its own.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(run),))))


def wiener_increments(rng: np.random.Generator, dt: float, channel_count: int, steps: int | None = None):
    """Independent N(0, dt) increments; shape (channel_count,) or (steps, channel_count)."""
    if not dt > 0:
        raise ValueError("wiener_increments: dt must be positive")
    shape = channel_count if steps is None else (steps, channel_count)
    return rng.standard_normal(shape) * np.sqrt(dt)


def euler_maruyama_step(x, dt, dW, drift_fn, diffusion_fn):
    """One step x + f(x) dt + g(x) dW.

    ``diffusion_fn`` may return a vector (diagonal noise, one channel per
    component) or an (N, M) matrix.
    """
    x = np.asarray(x, dtype=float)
    g = np.asarray(diffusion_fn(x), dtype=float)
    noise = g @ dW if g.ndim == 2 else g * dW
    return x + drift_fn(x) * dt + noise


# ------------------------------------------------------------------ kernels

def kernel_params(plant: Plant, loads, v_min):
    el, c, sp = plant.electrical, plant.controller, plant.stochastic
    edges = np.asarray(plant.topology.edges, dtype=np.int64).reshape(-1, 2)
    arr = lambda a: np.ascontiguousarray(a, dtype=float)
    return SimpleNamespace(
        n=plant.n, m=plant.m,
        Lg_inv=arr(1.0 / el.Lg), Cg_inv=arr(1.0 / el.Cg), R=arr(el.R), L_inv=arr(1.0 / el.L),
        pos=np.ascontiguousarray(edges[:, 0]), neg=np.ascontiguousarray(edges[:, 1]),
        G=arr(loads.G_star), Ist=arr(loads.I_star), P=arr(loads.P_star),
        mu=arr(sp.mu), sig=arr(sp.sigma), Lc=arr(plant.laplacian),
        Q=arr(c.Q), K=arr(c.K), txi_inv=arr(1.0 / c.tau_xi), teta_inv=arr(1.0 / c.tau_eta),
        Vstar=arr(c.V_star), v_min=float(v_min),
    )


def _kernel(backend):
    backend = backend or BACKEND
    if backend == "compiled":
        if _em_ext is None:
            raise RuntimeError("compiled backend unavailable; build the extension or use backend='python'")
        return _em_ext.integrate
    if backend == "python":
        return _em_py.integrate
    raise ValueError(f"unknown backend {backend!r}")


def initial_state(plant: Plant, mode: str = "equilibrium", eq: Equilibrium | None = None) -> np.ndarray:
    """Flattened closed-loop initial state; deviations start at their configured values."""
    n, m = plant.n, plant.m
    sp = plant.stochastic
    if mode == "equilibrium":
        eq = eq or solve_equilibrium(plant, plant.loads.segments()[0][1])
        parts = [eq.I_g_bar, eq.V_bar, eq.I_bar, sp.initial, eq.xi_bar, eq.eta_bar]
    elif mode == "flat":
        V0 = plant.controller.V_star
        parts = [np.zeros(n), V0, np.zeros(m), sp.initial, np.zeros(n), np.zeros(n)]
    else:
        raise ValueError(f"unknown initial mode {mode!r}")
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _segments(plant: Plant, settings: IntegrationSettings):
    """(first step, last step, constants) per load segment, clipped to the horizon."""
    total = settings.steps
    bounds = []
    for start, consts in plant.loads.segments():
        k = int(round(start / settings.dt))
        if k < total:
            bounds.append((k, consts))
    out = []
    for idx, (k, consts) in enumerate(bounds):
        end = bounds[idx + 1][0] if idx + 1 < len(bounds) else total
        if end > k:
            out.append((k, end, consts))
    return out


def integrate_batch(plant: Plant, settings: IntegrationSettings, x0, seeds_runs, backend=None,
                    noise=True):
    """Integrate a batch of members; returns (times, records, status, fail_step, events).

    ``seeds_runs`` is a list of (seed, run) pairs, one per member.
    """
    kernel = _kernel(backend)
    n = plant.n
    R = len(seeds_runs)
    X = np.ascontiguousarray(np.tile(np.asarray(x0, dtype=float), (R, 1)))
    D = X.shape[1]
    stride = int(settings.record_stride)
    total = settings.steps
    n_rec = total // stride + 1
    rec = np.full((R, n_rec, D + n), np.nan)
    status = np.zeros(R, dtype=np.int32)
    fail_step = np.full(R, -1, dtype=np.int64)
    rngs = [stream(s, r) for s, r in seeds_runs]
    shared = plant.stochastic.shared_noise
    channels = n if shared else 3 * n
    events = []
    segs = _segments(plant, settings)
    for seg_idx, (k0, k1, consts) in enumerate(segs):
        if seg_idx > 0:
            events.append({"time": k0 * settings.dt, "kind": "load_step"})
        p = kernel_params(plant, consts, settings.v_min)
        if not noise:
            p.sig = np.zeros_like(p.sig)
        k = k0
        while k < k1:
            steps = min(_CHUNK_STEPS, k1 - k)
            dW = np.empty((R, steps, 3 * n))
            for r, rng in enumerate(rngs):
                z = wiener_increments(rng, settings.dt, channels, steps)
                dW[r] = np.tile(z, (1, 3)) if shared else z
            # records cover steps k..k+steps inclusive; shared boundaries are rewritten identically
            kernel(X, dW, k, steps, settings.dt, stride, rec, 0, status, fail_step, p)
            k += steps
    times = np.arange(n_rec) * stride * settings.dt
    for r in range(R):
        if status[r]:
            kind = "guard_violation" if status[r] == STATUS_GUARD else "non_finite_state"
            events.append({"time": fail_step[r] * settings.dt, "kind": kind, "run": r})
    return times, rec, status, fail_step, events


def simulate(scenario, backend=None, raise_on_error=False) -> Trajectory:
    """Single trajectory from the scenario's initial state with its seed."""
    plant, settings = scenario.plant, scenario.settings
    x0 = initial_state(plant, scenario.initial_mode)
    times, rec, status, fail_step, events = integrate_batch(
        plant, settings, x0, [(settings.seed, 0)], backend)
    traj = Trajectory(times, rec[0], state_columns(plant.n, plant.m), plant.n, plant.m, events,
                      int(status[0]), None if status[0] == 0 else float(fail_step[0] * settings.dt))
    if traj.status != STATUS_OK:
        msg = f"simulation aborted at t={traj.fail_time:.6g} s ({events[-1]['kind']})"
        log.warning(msg)
        if raise_on_error:
            raise SimulationError(msg, traj)
    return traj


@dataclass
class EnsembleResult:
    times: np.ndarray
    columns: list[str]
    mean: np.ndarray
    var: np.ndarray           # population variance across live members
    min: np.ndarray
    max: np.ndarray
    count: np.ndarray         # live members per record time
    status: np.ndarray
    events: list[dict]
    n: int
    m: int
    members: np.ndarray | None = None

    def standard_error(self):
        c = np.maximum(self.count, 2)[:, None]
        return np.sqrt(self.var * c / (c - 1) / c)

    def column(self, name, stat="mean"):
        return getattr(self, stat)[:, self.columns.index(name)]


def max_workers() -> int:
    env = os.environ.get(WORKERS_ENV)
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def ensemble_members(scenario, runs: int, base_seed: int | None = None, backend=None, workers=None):
    """Integrate ``runs`` members; member r draws from ``stream(base_seed, r)``."""
    if runs < 1:
        raise ValueError("run_ensemble: runs must be >= 1")
    plant, settings = scenario.plant, scenario.settings
    base_seed = settings.seed if base_seed is None else base_seed
    x0 = initial_state(plant, scenario.initial_mode)
    workers = min(workers or max_workers(), runs)
    groups = [list(range(runs))[g::workers] for g in range(workers)]
    groups = [g for g in groups if g]

    def job(members):
        return integrate_batch(plant, settings, x0, [(base_seed, r) for r in members], backend)

    if len(groups) == 1:
        results = [job(groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(groups)) as pool:
            results = list(pool.map(job, groups))
    times = results[0][0]
    rec = np.empty((runs,) + results[0][1].shape[1:])
    status = np.zeros(runs, dtype=np.int32)
    events = []
    for members, (_, r_rec, r_status, r_fail, r_events) in zip(groups, results):
        rec[members] = r_rec
        status[members] = r_status
        for ev in r_events:
            if "run" in ev:
                ev = dict(ev, run=members[ev["run"]])
            if ev not in events:
                events.append(ev)
    events.sort(key=lambda e: (e["time"], e.get("run", -1)))
    return times, rec, status, events


def run_ensemble(scenario, runs: int, base_seed: int | None = None, backend=None, workers=None,
                 keep_members=False) -> EnsembleResult:
    """Per-record-time mean, variance, min and max across independent members.

    Failed members contribute only up to their failure; aggregation order is
    by member index, so results do not depend on worker scheduling.
    """
    plant = scenario.plant
    times, rec, status, events = ensemble_members(scenario, runs, base_seed, backend, workers)
    with np.errstate(invalid="ignore"), _quiet():
        mean = np.nanmean(rec, axis=0)
        var = np.nanvar(rec, axis=0)
        lo = np.nanmin(rec, axis=0)
        hi = np.nanmax(rec, axis=0)
    count = np.sum(np.all(np.isfinite(rec), axis=2), axis=0)
    return EnsembleResult(times, state_columns(plant.n, plant.m), mean, var, lo, hi, count,
                          status, events, plant.n, plant.m, rec if keep_members else None)


class _quiet:
    def __enter__(self):
        import warnings
        self._ctx = warnings.catch_warnings()
        self._ctx.__enter__()
        warnings.simplefilter("ignore", RuntimeWarning)

    def __exit__(self, *exc):
        return self._ctx.__exit__(*exc)


# ------------------------------------------------- load channels on their own

def simulate_deviations(stochastic, dt, t_end, runs, seed, record_times, x0=None):
    """Euler-Maruyama on the 3n load-deviation channels alone, for ``runs`` members.

    The channels do not depend on the electrical states, so they can be
    integrated at steps far coarser than the network needs.  Returns an array
    of shape (len(record_times), runs, 3n).
    """
    n = stochastic.node_count
    mu, sig = stochastic.mu, stochastic.sigma
    Y = np.tile(stochastic.initial if x0 is None else np.asarray(x0, float), (runs, 1))
    steps = int(round(t_end / dt))
    rec_steps = [int(round(t / dt)) for t in record_times]
    out = np.empty((len(rec_steps), runs, 3 * n))
    rngs = [stream(seed, r) for r in range(runs)]
    channels = n if stochastic.shared_noise else 3 * n
    k = 0
    todo = dict()
    for idx, s in enumerate(rec_steps):
        todo.setdefault(s, []).append(idx)
    for idx in todo.get(0, []):
        out[idx] = Y
    # draws are sequential per stream, so the chunk length does not change the numbers
    per_chunk = max(1, min(_CHUNK_STEPS, _CHUNK_VALUES // (runs * channels)))
    while k < steps:
        chunk = min(per_chunk, steps - k)
        dW = np.stack([wiener_increments(rng, dt, channels, chunk) for rng in rngs], axis=1)
        if stochastic.shared_noise:
            dW = np.tile(dW, (1, 1, 3))
        for s in range(chunk):
            Y = (Y + (-mu * Y) * dt) + (sig * Y) * dW[s]
            k += 1
            for idx in todo.get(k, []):
                out[idx] = Y
    return out
