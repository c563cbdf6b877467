"""Stochastic load deviations dX = -mu X dt + sigma X dW and their moments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CHANNELS = ("I", "P", "G")


def _rates(values, n, name):
    arr = np.array(np.broadcast_to(np.asarray(values, dtype=float), (n,)))
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError(f"{name}: rates must be finite and non-negative")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class StochasticParams:
    mu_I: np.ndarray
    sigma_I: np.ndarray
    mu_P: np.ndarray
    sigma_P: np.ndarray
    mu_G: np.ndarray
    sigma_G: np.ndarray
    initial_I_hat: np.ndarray
    initial_P_hat: np.ndarray
    initial_G_hat: np.ndarray
    shared_noise: bool = False

    @classmethod
    def build(cls, n, mu_I, sigma_I, mu_P, sigma_P, mu_G, sigma_G,
              initial_I_hat=0.0, initial_P_hat=0.0, initial_G_hat=0.0, shared_noise=False):
        # sigma = 0 is accepted so that noise can be switched off in experiments
        mus = {k: _rates(v, n, k) for k, v in (("mu_I", mu_I), ("mu_P", mu_P), ("mu_G", mu_G))}
        for k, v in mus.items():
            if np.any(v <= 0):
                raise ValueError(f"{k}: must be strictly positive")
        return cls(
            mu_I=mus["mu_I"], sigma_I=_rates(sigma_I, n, "sigma_I"),
            mu_P=mus["mu_P"], sigma_P=_rates(sigma_P, n, "sigma_P"),
            mu_G=mus["mu_G"], sigma_G=_rates(sigma_G, n, "sigma_G"),
            initial_I_hat=_init(initial_I_hat, n), initial_P_hat=_init(initial_P_hat, n),
            initial_G_hat=_init(initial_G_hat, n), shared_noise=bool(shared_noise),
        )

    @property
    def node_count(self) -> int:
        return self.mu_I.size

    @property
    def mu(self) -> np.ndarray:
        """Decay rates stacked in channel order (I, P, G)."""
        return np.concatenate([self.mu_I, self.mu_P, self.mu_G])

    @property
    def sigma(self) -> np.ndarray:
        return np.concatenate([self.sigma_I, self.sigma_P, self.sigma_G])

    @property
    def initial(self) -> np.ndarray:
        return np.concatenate([self.initial_I_hat, self.initial_P_hat, self.initial_G_hat])

    def without_noise(self) -> "StochasticParams":
        z = np.zeros(self.node_count)
        return StochasticParams.build(
            self.node_count, self.mu_I, z, self.mu_P, z, self.mu_G, z,
            self.initial_I_hat, self.initial_P_hat, self.initial_G_hat, self.shared_noise)


def _init(values, n):
    arr = np.array(np.broadcast_to(np.asarray(values, dtype=float), (n,)))
    arr.setflags(write=False)
    return arr


def analytic_moments(mu, sigma, x0, t):
    """Mean and second moment of dX = -mu X dt + sigma X dW started at ``x0``.

    >>> analytic_moments(2.5, 1.0, 1.0, 0.0)
    (1.0, 1.0)
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("analytic_moments: t must be non-negative")
    mean = x0 * np.exp(-mu * t_arr)
    second = np.square(x0) * np.exp((-2.0 * mu + np.square(sigma)) * t_arr)
    if np.ndim(mean) == 0:
        return float(mean), float(second)
    return mean, second


def exact_samples(mu, sigma, x0, t, size, rng):
    """Samples of X(t) from the closed-form solution x0 exp((-mu - sigma^2/2) t + sigma W(t))."""
    w = rng.standard_normal(size) * np.sqrt(t)
    return x0 * np.exp((-mu - 0.5 * sigma ** 2) * t + sigma * w)


def check_assumptions(params: StochasticParams) -> dict[str, np.ndarray]:
    """Per-node truth of the parameter conditions (all strict).

    ``current``: mu_I > sigma_I^2/2 - 1/2; ``power``: mu_P > sigma_P^2;
    ``conductance``: mu_G > sigma_G^2.
    """
    return {
        "current": params.mu_I > 0.5 * params.sigma_I ** 2 - 0.5,
        "power": params.mu_P > params.sigma_P ** 2,
        "conductance": params.mu_G > params.sigma_G ** 2,
    }
