"""Exact state-vector dynamics, Q-functions and condensate fraction.

Propagation uses fourth-order Magnus steps whose exponentials are evaluated
by Chebyshev expansion. Every Hamiltonian here is ``D + J(t) K`` with ``D``
diagonal and ``K`` tridiagonal, so the Magnus commutator ``[D, K]`` is
tridiagonal as well and each step costs a few banded matrix-vector products.
An explicit Runge-Kutta route (``method="rk"``) is kept for cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy.integrate import solve_ivp
from scipy.special import jv

from .model import (
    BlochMoments,
    FockMatrix,
    SystemParams,
    bloch_coherent_state,
    bloch_moments,
    check_normalized,
    coherent_log_amplitudes,
    effective_hamiltonian_matrix,
    hamiltonian_matrix,
    interaction_diagonal,
    reduced_density_matrix,
    tunnelling_operator,
    tunnelling_rate,
)
from .semiclassical import GridSpec, parallel_chunks

SOURCES = ("time_dependent", "effective")
DEFAULT_MAX_STEP = 0.025
NORM_ABORT = 1e-6
_GAUSS = math.sqrt(3.0) / 6.0


class NormDriftError(RuntimeError):
    pass


def chebyshev_expm(H: FockMatrix, psi: np.ndarray, tau: float, tol: float = 1e-15,
                   bounds: tuple[float, float] | None = None) -> np.ndarray:
    """``exp(-i H tau) psi`` for Hermitian banded ``H``."""
    lo, hi = H.spectral_bounds() if bounds is None else bounds
    center = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo) * 1.001 + 1e-12
    x = half * tau
    kmax = int(x + 12.0 * max(x, 1.0) ** (1.0 / 3.0) + 30)
    coef = jv(np.arange(kmax + 1), x)
    # terms beyond the last significant Bessel value are dropped
    significant = np.flatnonzero(np.abs(coef) > tol)
    kmax = int(significant[-1]) if significant.size else 0

    def apply(v):
        return (H.matvec(v) - center * v) / half

    prev = psi
    out = coef[0] * psi
    if kmax >= 1:
        cur = apply(psi)
        out = out + 2.0 * (-1j) * coef[1] * cur
        phase = -1j
        for k in range(2, kmax + 1):
            prev, cur = cur, 2.0 * apply(cur) - prev
            phase *= -1j
            out += (2.0 * phase * coef[k]) * cur
    return np.exp(-1j * center * tau) * out


class Propagator:
    """Steps states of one Hamiltonian source between arbitrary times."""

    def __init__(self, params: SystemParams, source: str = "time_dependent",
                 max_step: float = DEFAULT_MAX_STEP):
        if source not in SOURCES:
            raise ValueError(f"unknown Hamiltonian source {source!r}")
        self.params = params
        self.source = source
        self.max_step = max_step
        if source == "effective":
            self._static = effective_hamiltonian_matrix(params)
        elif params.mu == 0:
            self._static = hamiltonian_matrix(params)
        else:
            self._static = None
            self._d = interaction_diagonal(params)
            self._k = tunnelling_operator(params.N).upper[0]
            # [D, K] upper band: k_n (d_n - d_{n+1})
            self._dk = self._k * (self._d[:-1] - self._d[1:])

    def _magnus_matrix(self, t: float, h: float) -> FockMatrix:
        p = self.params
        J1 = float(tunnelling_rate(p, t + (0.5 - _GAUSS) * h))
        J2 = float(tunnelling_rate(p, t + (0.5 + _GAUSS) * h))
        c = math.sqrt(3.0) * h / 12.0
        upper = 0.5 * (J1 + J2) * self._k + 1j * c * (J2 - J1) * self._dk
        return FockMatrix(self._d, (upper,))

    def step(self, psi: np.ndarray, t0: float, t1: float) -> np.ndarray:
        """Propagate from ``t0`` to ``t1`` (equal sub-steps no longer than ``max_step``)."""
        if t1 == t0:
            return psi
        if self._static is not None:
            # static generator: step length only bounds the Chebyshev order
            n = max(1, math.ceil((t1 - t0) / (20.0 * self.max_step)))
            h = (t1 - t0) / n
            bounds = self._static.spectral_bounds()
            for _ in range(n):
                psi = chebyshev_expm(self._static, psi, h, bounds=bounds)
            return psi
        n = max(1, math.ceil((t1 - t0) / self.max_step))
        h = (t1 - t0) / n
        for i in range(n):
            psi = chebyshev_expm(self._magnus_matrix(t0 + i * h, h), psi, h)
        return psi


def _rk_states(params, psi0, times, source, rtol):
    if source == "effective":
        H = effective_hamiltonian_matrix(params)
        apply = lambda t, v: H.matvec(v)
    else:
        d = interaction_diagonal(params)
        k = tunnelling_operator(params.N).upper[0]
        shift = 0.5 * (d.max() + d.min())
        d = d - shift

        def apply(t, v):
            J = tunnelling_rate(params, t)
            y = d * v
            y[:-1] += J * k * v[1:]
            y[1:] += J * k * v[:-1]
            return y

    def rhs(t, v):
        return -1j * apply(t, v)

    sol = solve_ivp(rhs, (times[0], times[-1]), psi0.astype(complex), method="DOP853",
                    t_eval=times, rtol=rtol, atol=rtol * 1e-3)
    if not sol.success:
        raise RuntimeError(sol.message)
    states = sol.y.T
    if source != "effective":
        states = states * np.exp(-1j * shift * np.asarray(times))[:, None]
    return states


def propagate(params: SystemParams, psi0: np.ndarray, times, source: str = "time_dependent",
              method: str = "magnus", max_step: float = DEFAULT_MAX_STEP,
              rtol: float = 1e-12) -> np.ndarray:
    """States at each of ``times`` (which start at the initial time).

    ``psi0`` may be a single state or a ``(N + 1, M)`` batch; the result has
    shape ``(len(times),) + psi0.shape``.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0):
        raise ValueError("times must be non-decreasing")
    psi0 = np.asarray(psi0, dtype=complex)
    norms0 = np.sum(np.abs(psi0) ** 2, axis=0)
    if np.any(np.abs(norms0 - 1.0) > 1e-6):
        raise ValueError("initial state is not normalized")
    if method == "rk":
        if psi0.ndim != 1:
            raise ValueError("the Runge-Kutta route handles single states only")
        return _rk_states(params, psi0, times, source, rtol)
    if method != "magnus":
        raise ValueError(f"unknown method {method!r}")
    prop = Propagator(params, source, max_step)
    out = np.empty((len(times),) + psi0.shape, dtype=complex)
    out[0] = psi = psi0
    for i in range(1, len(times)):
        psi = prop.step(psi, times[i - 1], times[i])
        drift = np.max(np.abs(np.sum(np.abs(psi) ** 2, axis=0) - norms0))
        if drift > NORM_ABORT:
            raise NormDriftError(f"norm drift {drift:.3e} at t = {times[i]}; reduce max_step "
                                 f"(currently {max_step})")
        out[i] = psi
    return out


@dataclass(frozen=True)
class ObservableSeries:
    t: np.ndarray
    moments: tuple

    @property
    def z(self) -> np.ndarray:
        return np.array([m.z for m in self.moments])

    @property
    def std_z(self) -> np.ndarray:
        return np.sqrt(np.maximum([m.var_z for m in self.moments], 0.0))

    @property
    def condensate_fraction(self) -> np.ndarray:
        return np.array([m.condensate_fraction for m in self.moments])

    def as_columns(self) -> dict:
        ms = self.moments
        return {
            "t": self.t,
            "x": np.array([m.x for m in ms]),
            "y": np.array([m.y for m in ms]),
            "z": self.z,
            "var_x": np.array([m.var_x for m in ms]),
            "var_y": np.array([m.var_y for m in ms]),
            "var_z": np.array([m.var_z for m in ms]),
            "spin_length": np.array([m.spin_length for m in ms]),
            "condensate_fraction": self.condensate_fraction,
        }


def evolve_state(params: SystemParams, psi0: np.ndarray, t_end: float,
                 source: str = "time_dependent", sample_times=None, **kw):
    """Evolve to ``t_end``; with ``sample_times`` also return an :class:`ObservableSeries`."""
    if sample_times is None:
        return propagate(params, psi0, [0.0, t_end], source, **kw)[-1]
    times = np.asarray(sample_times, dtype=float)
    if times[0] != 0.0 or times[-1] != t_end:
        raise ValueError("sample_times must run from 0 to t_end")
    states = propagate(params, psi0, times, source, **kw)
    series = ObservableSeries(times, tuple(bloch_moments(s) for s in states))
    return states[-1], series


# --- phase-space and number distributions ---------------------------------------

@dataclass(frozen=True)
class QGrid:
    z: np.ndarray       # cell centres, particle-number units
    phi: np.ndarray
    Q: np.ndarray       # (n_z, n_phi)
    N: int
    normalization: str = "(N+1)/(4 pi) * integral Q dOmega = 1"

    def integral(self) -> float:
        """``(N+1)/(4 pi) * integral Q dOmega`` by the midpoint rule (``dOmega = 2 dz dphi / N``)."""
        dz = (self.z[1] - self.z[0]) if len(self.z) > 1 else self.N
        dphi = 2.0 * np.pi / len(self.phi)
        return float((self.N + 1) / (4 * np.pi) * np.sum(self.Q) * 2.0 * dz / self.N * dphi)

    def argmax(self) -> tuple[float, float]:
        i, j = np.unravel_index(np.argmax(self.Q), self.Q.shape)
        return float(self.z[i]), float(self.phi[j])


def q_grid_axes(N: int, n_z: int = 200, n_phi: int = 200):
    z = (-0.5 + (np.arange(n_z) + 0.5) / n_z) * N
    phi = -np.pi + 2.0 * np.pi * np.arange(1, n_phi + 1) / n_phi
    return z, phi


def coherent_overlaps(psi: np.ndarray, z, phi) -> np.ndarray:
    """``<coherent(z_i, phi_j)|psi>`` on the outer grid of ``z`` and ``phi``."""
    N = psi.shape[0] - 1
    amps = np.exp(coherent_log_amplitudes(N, np.asarray(z, dtype=float)))
    n = np.arange(N + 1)
    phases = np.exp(1j * np.outer(n, phi))
    return amps @ (psi[:, None] * phases)


def q_function(psi: np.ndarray, n_z: int = 200, n_phi: int = 200, z=None, phi=None) -> QGrid:
    """Husimi function ``|<coherent(z, phi)|psi>|^2`` on a cell-centred grid."""
    psi = np.asarray(psi, dtype=complex)
    check_normalized(psi)
    N = psi.shape[0] - 1
    if z is None or phi is None:
        z, phi = q_grid_axes(N, n_z, n_phi)
    Q = np.abs(coherent_overlaps(psi, z, phi)) ** 2
    Q[Q < 1e-300] = 0.0
    return QGrid(np.asarray(z, float), np.asarray(phi, float), Q, N)


@dataclass(frozen=True)
class NumberDistribution:
    P: np.ndarray
    source: str = "exact"
    n_samples: int | None = None
    out_of_range: int = 0

    @property
    def N(self) -> int:
        return self.P.shape[0] - 1


def number_distribution(psi: np.ndarray) -> NumberDistribution:
    psi = np.asarray(psi, dtype=complex)
    check_normalized(psi)
    return NumberDistribution(np.abs(psi) ** 2, "exact")


def condensate_fraction(state) -> float:
    """Largest reduced-density-matrix eigenvalue over ``N``."""
    m = state if isinstance(state, BlochMoments) else bloch_moments(state)
    return m.condensate_fraction


def condensate_fraction_direct(psi: np.ndarray) -> float:
    """Same quantity from diagonalizing the 2x2 reduced density matrix."""
    rho = reduced_density_matrix(psi)
    return float(np.linalg.eigvalsh(rho)[-1] / (psi.shape[0] - 1))


@dataclass(frozen=True)
class CondensateMap:
    grid: GridSpec
    z: np.ndarray
    phi: np.ndarray
    fraction: np.ndarray
    t_end: float


def condensate_fraction_map(params: SystemParams, grid: GridSpec, t_end: float,
                            source: str = "time_dependent", threads: int = 1,
                            chunk: int = 32, **kw) -> CondensateMap:
    """Condensate fraction after evolving a coherent state from every grid node."""
    z, phi = grid.nodes(params.N)
    out = np.empty(len(z))

    def work(sl):
        batch = np.stack([bloch_coherent_state(params, zz, pp) for zz, pp in zip(z[sl], phi[sl])],
                         axis=1)
        if t_end > 0:
            batch = propagate(params, batch, [0.0, t_end], source, **kw)[-1]
        return np.array([condensate_fraction(batch[:, m]) for m in range(batch.shape[1])])

    out = np.concatenate(parallel_chunks(work, len(z), threads, chunk))
    shape = (grid.n_z, grid.n_phi)
    return CondensateMap(grid, z.reshape(shape), phi.reshape(shape), out.reshape(shape), t_end)
