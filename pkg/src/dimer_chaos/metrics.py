"""Overlaps, Bhattacharyya distance and the perturbed-interaction experiment."""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .model import SystemParams, bloch_coherent_state
from .quantum import NumberDistribution, propagate
from .wigner import (
    binned_number_distribution,
    evolve_ensemble_series,
    sample_initial_ensemble,
)

METHODS = ("exact", "binned-TW")


def _as_probabilities(P) -> np.ndarray:
    return np.asarray(P.P if isinstance(P, NumberDistribution) else P, dtype=float)


def state_overlap(psi, phi) -> float:
    """``|<psi|phi>|``."""
    psi, phi = np.asarray(psi), np.asarray(phi)
    if psi.shape != phi.shape:
        raise ValueError(f"dimension mismatch: {psi.shape} vs {phi.shape}")
    return float(abs(np.vdot(psi, phi)))


def bhattacharyya_coefficient(P, Q) -> float:
    """``sum_n sqrt(P_n Q_n)``, clamped to ``[0, 1]``."""
    P, Q = _as_probabilities(P), _as_probabilities(Q)
    if P.shape != Q.shape:
        raise ValueError(f"length mismatch: {P.shape} vs {Q.shape}")
    if np.any(P < 0) or np.any(Q < 0):
        raise ValueError("probabilities must be non-negative")
    return float(min(1.0, max(0.0, np.sum(np.sqrt(P * Q)))))


def bhattacharyya_distance(P, Q) -> float:
    """``-ln B``; disjoint supports give ``inf`` (see :func:`is_disjoint`)."""
    B = bhattacharyya_coefficient(P, Q)
    return math.inf if B == 0.0 else -math.log(B)


def is_disjoint(P, Q) -> bool:
    return bhattacharyya_coefficient(P, Q) == 0.0


def sampling_noise_floor(N: int, sigma: float) -> float:
    """``D_B = -ln(1 - (N+1)^2 sigma^2 / 8)`` for a uniform distribution with Gaussian bin noise."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    arg = (N + 1) ** 2 * sigma ** 2 / 8.0
    if arg >= 1.0:
        raise ValueError(f"(N+1)^2 sigma^2 / 8 = {arg} is outside the formula's domain")
    return -math.log1p(-arg)


def binning_sigma(n_traj: int, n_bins: int) -> float:
    """Poissonian bin-probability fluctuation ``sqrt(N_t / N_b) / N_t``."""
    if n_traj < 1 or n_bins < 1:
        raise ValueError("n_traj and n_bins must be positive")
    return 1.0 / math.sqrt(n_traj * n_bins)


@dataclass(frozen=True)
class DivergenceSeries:
    t: np.ndarray
    distance: np.ndarray
    method: str
    p: float
    n_traj: int | None = None
    seed: int | None = None
    initial: tuple = ()
    overlap: np.ndarray | None = None
    coefficient: np.ndarray | None = None

    def plateau(self, fraction: float = 0.25) -> float:
        """Median distance over the final ``fraction`` of the samples."""
        k = max(1, int(round(len(self.t) * fraction)))
        return float(np.median(self.distance[-k:]))


def _initial_ensemble(params, initial, n_traj, seed, sampling):
    if n_traj is None or seed is None:
        raise ValueError("binned-TW needs n_traj and seed")
    return sample_initial_ensemble(params, initial[0], initial[1], n_traj, seed, sampling)


def _distributions(params, initial, t_grid, method, n_traj, seed, sampling, **kw):
    if method == "exact":
        psi0 = bloch_coherent_state(params, *initial)
        return propagate(params, psi0, t_grid, **kw)
    ens = _initial_ensemble(params, initial, n_traj, seed, sampling)
    binner = lambda e: binned_number_distribution(e, 1, params.N)
    return evolve_ensemble_series(params, ens, t_grid, binner, **kw)[0]


def unperturbed_run(params: SystemParams, initial, t_grid, method: str = "exact",
                    n_traj: int | None = None, seed: int | None = None,
                    sampling: str = "fixed_n", **kw):
    """The reference run of :func:`perturbation_experiment`, reusable across ``p``."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    return _distributions(params, initial, np.asarray(t_grid, dtype=float), method,
                          n_traj, seed, sampling, **kw)


def _distance(coef):
    return np.where(coef > 0, -np.log(np.where(coef > 0, coef, 1.0)), np.inf)


def perturbation_experiment(params: SystemParams, initial, p: float, t_grid,
                            method: str = "exact", n_traj: int | None = None,
                            seed: int | None = None, sampling: str = "fixed_n",
                            baseline=None, **kw) -> DivergenceSeries:
    """Distance between site-1 number distributions evolved under ``U`` and ``(1 + p) U``.

    ``initial`` is a phase point ``(z0, phi0)`` whose coherent state (or
    Wigner ensemble, sharing one seed) starts both runs. ``baseline`` may
    carry the output of :func:`unperturbed_run` for the same inputs.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    t_grid = np.asarray(t_grid, dtype=float)
    initial = (float(initial[0]), float(initial[1]))
    if baseline is None:
        baseline = _distributions(params, initial, t_grid, method, n_traj, seed, sampling, **kw)
    perturbed = params.replace(U=params.U * (1.0 + p))
    if p == 0:
        other = baseline
    else:
        other = _distributions(perturbed, initial, t_grid, method, n_traj, seed, sampling, **kw)
    if method == "exact":
        coef = np.array([bhattacharyya_coefficient(np.abs(a) ** 2, np.abs(b) ** 2)
                         for a, b in zip(baseline, other)])
        overlap = np.abs(np.sum(np.conj(baseline) * other, axis=1))
        return DivergenceSeries(t_grid, _distance(coef), method, p, None, None, initial,
                                overlap, coef)
    coef = np.array([bhattacharyya_coefficient(a, b) for a, b in zip(baseline, other)])
    return DivergenceSeries(t_grid, _distance(coef), method, p, n_traj, seed, initial, None, coef)
