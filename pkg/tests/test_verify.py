import numpy as np
import pytest

from stochdc import omega_diagonal, omega_matrix
from stochdc import verify


@pytest.mark.parametrize("variant", ["Z*IP*", "Z*IP", "ZIP"])
def test_sample_states_inside_omega(base, base_eq, variant):
    rng = np.random.default_rng(0)
    st, cs = verify.sample_states(base.plant, base_eq, base.weights, variant, 200, rng)
    assert st.V.shape == (200, base.plant.n) and cs.xi.shape == (200, base.plant.n)
    _, inside = omega_matrix(st.V, base_eq, base.weights, base.plant, variant, "published")
    assert inside.all()
    assert np.all(np.abs(st.V / base_eq.V_bar - 1) <= verify.V_BOX)


def test_sample_states_reports_empty_set(base, base_eq):
    from stochdc import LyapunovWeights
    w = LyapunovWeights.build(base.plant.n, Pi=1e-6)   # 1/Pi swamps G*
    with pytest.raises(RuntimeError, match="too small"):
        verify.sample_states(base.plant, base_eq, w, "ZIP", 10, np.random.default_rng(0), max_rounds=3)


def test_omega_scan_layout():
    V, P, L = verify.omega_scan(points=7, V_range=(100, 700), P_range=(10, 70))
    assert L.shape == (7, 7)
    assert L[2, 5] == pytest.approx(omega_diagonal(V[5], 380.0, 0.045, P[2], 1e3, 1e-7, 1e-7, 2.0, 1.3))


def test_omega_along_nan_is_outside(base, base_eq):
    plant = base.plant
    n, m = plant.n, plant.m
    row = np.concatenate([base_eq.I_g_bar, base_eq.V_bar, base_eq.I_bar, np.zeros(3 * n),
                          base_eq.xi_bar, base_eq.eta_bar])
    members = np.tile(row, (2, 3, 1))
    members[1, 2, n] = np.nan
    inside = verify.omega_along(members, np.array([0.0, 0.1, 0.2]), plant, base.weights)
    assert inside.tolist() == [[True] * 3, [True, True, False]]


def test_supermartingale_flags_rising_storage(base, base_eq):
    plant = base.plant
    n = plant.n
    row = np.concatenate([base_eq.I_g_bar, base_eq.V_bar, base_eq.I_bar, np.zeros(3 * n),
                          base_eq.xi_bar, base_eq.eta_bar])
    rng = np.random.default_rng(1)
    times = np.linspace(0, 0.5, 6)
    members = np.tile(row, (16, times.size, 1))
    # line currents drift away from equilibrium: storage grows in time
    members[:, :, 2 * n:2 * n + plant.m] += times[None, :, None] * (1 + 0.01 * rng.standard_normal((16, 6, 1)))
    rep = verify.supermartingale_check(members, times, plant, base.weights)
    assert not rep["passed"] and rep["violations"] >= 1 and rep["members_used"] == 16
    steady = verify.supermartingale_check(np.tile(row, (16, 6, 1)), times, plant, base.weights)
    assert steady["passed"]
