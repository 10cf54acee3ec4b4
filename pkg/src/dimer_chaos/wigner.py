"""Truncated Wigner ensembles for the dimer.

Noise enters only through the initial sample; each trajectory then follows
the deterministic truncated-Wigner equations

    d beta_1/dt = i J(t) beta_2 - 2 i U (|beta_1|^2 - 1) beta_1
    d beta_2/dt = i J(t) beta_1 - 2 i U (|beta_2|^2 - 1) beta_2

Random numbers come from Philox streams keyed by ``(seed, block)`` where a
block holds a fixed number of consecutive trajectories, so the first ``n``
trajectories of an ensemble do not depend on its total size or on how the
work is split.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
import math

import numpy as np
from scipy.integrate import solve_ivp

from .model import BlochMoments, SystemParams, tunnelling_rate
from .quantum import NumberDistribution
from .semiclassical import GridSpec, wrap_phase

BLOCK = 4096
SAMPLINGS = ("fixed_n", "glauber")
DEFAULT_RTOL = 1e-11  # keeps the per-trajectory norm drift below 1e-9 over 20 periods
# relative change of |beta_1|^2 + |beta_2|^2 that quarantines a trajectory
NORM_QUARANTINE = 1e-6


@dataclass(frozen=True)
class WignerEnsemble:
    beta1: np.ndarray
    beta2: np.ndarray
    seed: int
    t: float = 0.0
    sampling: str = "fixed_n"
    quarantined: np.ndarray | None = None

    @property
    def n_traj(self) -> int:
        return self.beta1.shape[0]

    @property
    def active(self) -> np.ndarray:
        if self.quarantined is None:
            return np.ones(self.n_traj, dtype=bool)
        return ~self.quarantined

    @property
    def n_quarantined(self) -> int:
        return 0 if self.quarantined is None else int(np.sum(self.quarantined))

    def phase_points(self):
        """Per-trajectory ``(z, phi)`` using the Bloch sign conventions."""
        b1, b2 = self.beta1[self.active], self.beta2[self.active]
        z = 0.5 * (np.abs(b2) ** 2 - np.abs(b1) ** 2)
        return z, -np.angle(np.conj(b2) * b1)


def mean_field_amplitudes(N: int, z0: float, phi0: float) -> tuple[complex, complex]:
    """Amplitudes with ``|a1|^2 + |a2|^2 = N``, imbalance ``z0`` and phase ``phi0``, split symmetrically."""
    if abs(z0) > N / 2.0:
        raise ValueError(f"|z0| = {abs(z0)} exceeds N/2 = {N / 2}")
    a1 = math.sqrt(N / 2.0 - z0) * np.exp(-0.5j * phi0)
    a2 = math.sqrt(N / 2.0 + z0) * np.exp(0.5j * phi0)
    return complex(a1), complex(a2)


def _normals(seed: int, n_traj: int, width: int) -> np.ndarray:
    """Standard normals, row ``i`` belonging to trajectory ``i``."""
    out = np.empty((n_traj, width))
    for b, start in enumerate(range(0, n_traj, BLOCK)):
        stop = min(start + BLOCK, n_traj)
        ss = np.random.SeedSequence(seed, spawn_key=(b,))
        rng = np.random.Generator(np.random.Philox(ss))
        out[start:stop] = rng.standard_normal((BLOCK, width))[: stop - start]
    return out


def sample_initial_ensemble(params: SystemParams, z0: float, phi0: float, n_traj: int,
                            seed: int, sampling: str = "fixed_n") -> WignerEnsemble:
    """Sample a Wigner ensemble for the coherent state centred at ``(z0, phi0)``.

    ``glauber``: ``beta_j = alpha_j + eta_j`` with independent complex
    Gaussians of ``<|eta|^2> = 1/2``; the total number is then Poissonian.

    ``fixed_n``: all ``N`` particles sit in the condensate mode along
    ``(alpha_1, alpha_2)``. That mode gets ``|beta|^2 = N + 1/2`` plus
    Gaussian noise of variance 1/4 (the Wigner moments of a Fock state), the
    orthogonal mode gets vacuum noise. Site populations are then binomial.
    """
    if n_traj < 1:
        raise ValueError("n_traj must be at least 1")
    if sampling not in SAMPLINGS:
        raise ValueError(f"unknown sampling {sampling!r}")
    N = params.N
    a1, a2 = mean_field_amplitudes(N, z0, phi0)
    g = _normals(seed, n_traj, 5)
    eta1 = 0.5 * (g[:, 0] + 1j * g[:, 1])
    eta2 = 0.5 * (g[:, 2] + 1j * g[:, 3])
    if sampling == "glauber":
        b1, b2 = a1 + eta1, a2 + eta2
    else:
        u, v = a1 / math.sqrt(N), a2 / math.sqrt(N)
        # |c|^2 = N + 1/2 + zeta, Var(zeta) = 1/4
        occ = np.maximum(N + 0.5 + 0.5 * g[:, 4], 0.0)
        c = np.sqrt(occ)
        b1 = u * c - np.conj(v) * eta1
        b2 = v * c + np.conj(u) * eta1
    return WignerEnsemble(np.ascontiguousarray(b1), np.ascontiguousarray(b2), seed, 0.0, sampling)


def _tw_rhs(params: SystemParams, M: int):
    U = params.U

    def rhs(t, y):
        b = y.view(complex).reshape(2, M)
        b1, b2 = b[0], b[1]
        J = tunnelling_rate(params, t)
        d1 = 1j * J * b2 - 2j * U * (b1.real ** 2 + b1.imag ** 2 - 1.0) * b1
        d2 = 1j * J * b1 - 2j * U * (b2.real ** 2 + b2.imag ** 2 - 1.0) * b2
        return np.concatenate([d1, d2]).view(float)

    return rhs


def _advance(params, b1, b2, t0, t1, rtol):
    M = b1.shape[0]
    y0 = np.concatenate([b1, b2]).view(float)
    sol = solve_ivp(_tw_rhs(params, M), (t0, t1), y0, method="DOP853", rtol=rtol,
                    atol=rtol * 1e-2)
    if not sol.success:
        raise RuntimeError(f"truncated Wigner integration failed: {sol.message}")
    b = np.ascontiguousarray(sol.y[:, -1]).view(complex).reshape(2, M)
    return b[0].copy(), b[1].copy()


def evolve_ensemble(params: SystemParams, ensemble: WignerEnsemble, t_end: float,
                    rtol: float = DEFAULT_RTOL, chunk: int = 20000) -> WignerEnsemble:
    """Advance every trajectory to ``t_end``.

    Trajectories whose ``|beta_1|^2 + |beta_2|^2`` drifts by more than
    ``NORM_QUARANTINE`` (relative) or turns non-finite are quarantined.
    Chunks have a fixed size, so the result does not depend on scheduling.
    """
    if t_end < ensemble.t:
        raise ValueError("t_end precedes the ensemble time")
    if t_end == ensemble.t:
        return ensemble
    b1, b2 = ensemble.beta1.copy(), ensemble.beta2.copy()
    n0 = np.abs(b1) ** 2 + np.abs(b2) ** 2
    for start in range(0, ensemble.n_traj, chunk):
        sl = slice(start, start + chunk)
        b1[sl], b2[sl] = _advance(params, b1[sl], b2[sl], ensemble.t, t_end, rtol)
    n1 = np.abs(b1) ** 2 + np.abs(b2) ** 2
    with np.errstate(invalid="ignore"):
        bad = ~np.isfinite(n1) | (np.abs(n1 - n0) > NORM_QUARANTINE * np.maximum(n0, 1.0))
    if ensemble.quarantined is not None:
        bad |= ensemble.quarantined
    return replace(ensemble, beta1=b1, beta2=b2, t=float(t_end),
                   quarantined=bad if bad.any() else None)


def evolve_ensemble_series(params: SystemParams, ensemble: WignerEnsemble, times,
                           reducer, rtol: float = DEFAULT_RTOL):
    """Apply ``reducer(ensemble)`` at each of ``times``; returns ``(list, final ensemble)``."""
    out = []
    ens = ensemble
    for t in np.asarray(times, dtype=float):
        ens = evolve_ensemble(params, ens, t, rtol)
        out.append(reducer(ens))
    return out, ens


@dataclass(frozen=True)
class WignerMoments:
    """Ordering-corrected Bloch moments with standard errors of the means."""

    moments: BlochMoments
    se_x: float
    se_y: float
    se_z: float
    se_condensate_fraction: float
    n1: float
    n2: float
    n_traj: int


def moment_estimate(ensemble: WignerEnsemble, N: int | None = None) -> WignerMoments:
    """Operator moments from symmetric-ordered stochastic averages.

    ``<b_i^dag b_j> = <beta_i^* beta_j> - delta_ij / 2`` and
    ``<J_k^2> = <S_k^2> - 1/8`` for the Weyl symbols ``S_k`` of the spin
    components. The spin length is the norm of the mean spin; for a state of
    fixed ``N`` this equals the Casimir-minus-variances expression.
    """
    act = ensemble.active
    b1, b2 = ensemble.beta1[act], ensemble.beta2[act]
    n = b1.shape[0]
    if n < 2:
        raise ValueError("need at least two active trajectories")
    if N is None:
        N = int(round(np.mean(np.abs(b1) ** 2 + np.abs(b2) ** 2) - 1.0))
    w = np.conj(b2) * b1
    sx, sy = w.real, w.imag
    sz = 0.5 * (np.abs(b2) ** 2 - np.abs(b1) ** 2)
    x, y, z = sx.mean(), sy.mean(), sz.mean()
    var_x = np.mean(sx ** 2) - 0.125 - x * x
    var_y = np.mean(sy ** 2) - 0.125 - y * y
    var_z = np.mean(sz ** 2) - 0.125 - z * z
    length = math.sqrt(x * x + y * y + z * z)
    root_n = math.sqrt(n)
    se = [float(np.std(s, ddof=1) / root_n) for s in (sx, sy, sz)]
    if length > 0:
        proj = (x * sx + y * sy + z * sz) / length
        se_cf = float(np.std(proj, ddof=1) / root_n / N)
    else:
        se_cf = float("nan")
    m = BlochMoments(float(x), float(y), float(z), float(var_x), float(var_y), float(var_z),
                     length, N)
    n1 = float(np.mean(np.abs(b1) ** 2) - 0.5)
    n2 = float(np.mean(np.abs(b2) ** 2) - 0.5)
    return WignerMoments(m, se[0], se[1], se[2], se_cf, n1, n2, n)


def binned_number_distribution(ensemble: WignerEnsemble, site: int = 1,
                               N: int | None = None) -> NumberDistribution:
    """Fraction of trajectories with ``n <= |beta_site|^2 < n + 1`` for ``n = 0..N``.

    Trajectories beyond ``N + 1`` are counted in ``out_of_range`` and left
    out of the normalization.
    """
    if site not in (1, 2):
        raise ValueError("site must be 1 or 2")
    beta = (ensemble.beta1 if site == 1 else ensemble.beta2)[ensemble.active]
    if N is None:
        N = int(round(np.mean(np.abs(ensemble.beta1[ensemble.active]) ** 2
                              + np.abs(ensemble.beta2[ensemble.active]) ** 2) - 1.0))
    occ = np.abs(beta) ** 2
    idx = np.floor(occ).astype(np.int64)
    inside = idx <= N
    counts = np.bincount(idx[inside], minlength=N + 1)
    n_in = int(np.sum(inside))
    P = counts / n_in if n_in else counts.astype(float)
    return NumberDistribution(P, "binned", int(beta.shape[0]), int(beta.shape[0] - n_in))


@dataclass(frozen=True)
class BinnedDensity:
    z_edges: np.ndarray
    phi_edges: np.ndarray
    counts: np.ndarray
    weights: np.ndarray
    n_traj: int
    out_of_range: int

    def centres(self):
        return 0.5 * (self.z_edges[1:] + self.z_edges[:-1]), 0.5 * (self.phi_edges[1:] + self.phi_edges[:-1])


def binned_phase_density(ensemble: WignerEnsemble, N: int, n_z: int = 100, n_phi: int = 100,
                         z_range=(-0.5, 0.5)) -> BinnedDensity:
    """2-D histogram of trajectories over ``(z, phi)``, phase bins spanning ``(-pi, pi]``."""
    z, phi = ensemble.phase_points()
    z_edges = np.linspace(z_range[0] * N, z_range[1] * N, n_z + 1)
    phi_edges = np.linspace(-np.pi, np.pi, n_phi + 1)
    phi = wrap_phase(phi)
    counts, _, _ = np.histogram2d(z, phi, bins=[z_edges, phi_edges])
    inside = int(counts.sum())
    weights = counts / inside if inside else counts
    return BinnedDensity(z_edges, phi_edges, counts.astype(np.int64), weights, int(z.shape[0]),
                         int(z.shape[0] - inside))
