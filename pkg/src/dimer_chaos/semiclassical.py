"""Mean-field dynamics: trajectories, stroboscopic sections, finite-time Lyapunov exponents.

The flow is integrated on the Bloch sphere in Cartesian form,
``d s / dt = grad E(s, t) x s`` with ``s = (x, y, z)``; this is the same flow
as the ``(z, phi)`` equations of motion but has no coordinate singularity,
so many trajectories can be stacked into one vectorized ODE.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.integrate import solve_ivp

from .model import SystemParams, bessel_factor, tunnelling_rate

POLE_MARGIN = 1e-9
DEFAULT_RTOL = 1e-10
DEFAULT_DELTA0 = 1e-4
DEFAULT_PERIODS = 20
SATURATION_FRACTION = 0.1
# (z/N, phi) metric: z/N spans 1, wrapped phase differences reach pi
PHASE_SPACE_DIAMETER = math.hypot(1.0, math.pi)
CHUNK = 512


class PoleContactError(RuntimeError):
    """A trajectory reached the pole margin ``|z| > (N/2)(1 - 1e-9)``."""


def wrap_phase(phi):
    """Wrap to ``(-pi, pi]``."""
    out = np.pi - np.mod(np.pi - np.asarray(phi, dtype=float), 2.0 * np.pi)
    return out if np.ndim(out) else float(out)


def pole_limit(N: int) -> float:
    return 0.5 * N * (1.0 - POLE_MARGIN)


def mean_field_rhs(params: SystemParams, point, t: float = 0.0):
    """``(dz/dt, dphi/dt)`` at ``point = (z, phi)``."""
    z, phi = point
    if abs(z) >= pole_limit(params.N):
        raise PoleContactError(f"z = {z} is within the pole margin")
    J = tunnelling_rate(params, t)
    r = math.sqrt(params.N ** 2 / 4.0 - z * z)
    dz = 2.0 * J * r * math.sin(phi)
    dphi = -2.0 * z * (J * math.cos(phi) / r + 2.0 * params.U)
    return dz, dphi


def energy(params: SystemParams, z, phi, effective: bool = False):
    """Undriven (or period-averaged) mean-field energy ``E(z, phi)``."""
    z = np.asarray(z, dtype=float)
    r = np.sqrt(np.maximum(params.N ** 2 / 4.0 - z * z, 0.0))
    x = r * np.cos(phi)
    if not effective:
        return 2.0 * params.U * z * z - 2.0 * params.J0 * x
    bj = bessel_factor(params)
    y = -r * np.sin(phi)
    return params.U * (1 + bj) * z * z + params.U * (1 - bj) * y * y - 2.0 * params.J0 * x


def to_cartesian(N: int, z, phi) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    r = np.sqrt(np.maximum(N ** 2 / 4.0 - z * z, 0.0))
    return np.stack([r * np.cos(phi), -r * np.sin(phi), z])


def from_cartesian(s: np.ndarray):
    x, y, z = s[0], s[1], s[2]
    return z, -np.arctan2(y, x)


def _bloch_rhs(params: SystemParams, effective: bool):
    U = params.U
    if effective:
        bj = bessel_factor(params)
        gy, gz = 2.0 * U * (1.0 - bj), 2.0 * U * (1.0 + bj)

        def rhs(t, flat):
            x, y, z = flat.reshape(3, -1)
            ex, ey, ez = -2.0 * params.J0, gy * y, gz * z
            return np.concatenate([ey * z - ez * y, ez * x - ex * z, ex * y - ey * x])
    else:
        def rhs(t, flat):
            x, y, z = flat.reshape(3, -1)
            J = tunnelling_rate(params, t)
            ez = 4.0 * U * z
            return np.concatenate([-ez * y, ez * x + 2.0 * J * z, -2.0 * J * y])
    return rhs


def _integrate_cartesian(params, s0, times, effective=False, rtol=DEFAULT_RTOL):
    """Evolve stacked Bloch vectors ``s0`` (shape ``(3, M)``) through ``times``.

    Each interval between consecutive times is its own integration, so every
    requested time is hit exactly. Returns shape ``(len(times), 3, M)``.
    """
    rhs = _bloch_rhs(params, effective)
    atol = rtol * params.N * 1e-2
    out = np.empty((len(times),) + s0.shape)
    out[0] = s0
    y = s0.ravel().copy()
    for k in range(1, len(times)):
        if times[k] == times[k - 1]:
            out[k] = out[k - 1]
            continue
        sol = solve_ivp(rhs, (times[k - 1], times[k]), y, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"integration failed on [{times[k - 1]}, {times[k]}]: {sol.message}")
        y = sol.y[:, -1]
        out[k] = y.reshape(s0.shape)
    return out


def evolve_points(params, z0, phi0, times, effective=False, rtol=DEFAULT_RTOL):
    """Evolve arrays of phase points; returns ``(z, phi, ok)`` with shape ``(len(times), M)``.

    ``ok[m]`` is False when trajectory ``m`` crossed the pole margin at a sample time.
    """
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    phi0 = np.atleast_1d(np.asarray(phi0, dtype=float))
    s = _integrate_cartesian(params, to_cartesian(params.N, z0, phi0), np.asarray(times, float),
                             effective, rtol)
    z, phi = from_cartesian(np.moveaxis(s, 1, 0))
    ok = np.all(np.abs(z) <= pole_limit(params.N), axis=0)
    return z, phi, ok


@dataclass(frozen=True)
class ClassicalTrajectory:
    t: np.ndarray
    z: np.ndarray
    phi: np.ndarray
    rtol: float
    effective: bool = False
    error: str | None = None


def integrate_trajectory(params: SystemParams, point0, t_end: float, sample_times=None,
                         rtol: float = DEFAULT_RTOL, effective: bool = False) -> ClassicalTrajectory:
    """Integrate one mean-field trajectory from ``point0 = (z0, phi0)``.

    Samples default to 200 evenly spaced times. On pole contact the trajectory
    is truncated at the last valid sample and ``error`` says why.
    """
    z0, phi0 = point0
    if abs(z0) >= pole_limit(params.N):
        raise PoleContactError(f"initial z = {z0} is within the pole margin")
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    times = np.linspace(0.0, t_end, 201) if sample_times is None else np.asarray(sample_times, float)
    if times[0] != 0.0:
        times = np.concatenate([[0.0], times])
    if np.any(np.diff(times) <= 0):
        raise ValueError("sample times must be strictly increasing")
    z, phi, _ = evolve_points(params, [z0], [phi0], times, effective, rtol)
    z, phi = z[:, 0], phi[:, 0]
    bad = np.flatnonzero(np.abs(z) > pole_limit(params.N))
    error = None
    if bad.size:
        cut = bad[0]
        error = f"pole contact between t = {times[cut - 1]} and t = {times[cut]}"
        times, z, phi = times[:cut], z[:cut], phi[:cut]
    return ClassicalTrajectory(times, z, wrap_phase(phi), rtol, effective, error)


@dataclass(frozen=True)
class PoincareSection:
    seeds: np.ndarray          # (S, 2) columns z, phi
    z: np.ndarray              # (K + 1, S)
    phi: np.ndarray            # (K + 1, S)
    period: float
    errors: tuple = ()         # per-seed message or None

    def points(self, seed: int) -> np.ndarray:
        return np.column_stack([self.z[:, seed], self.phi[:, seed]])


def poincare_section(params: SystemParams, seeds, K: int, period: float | None = None,
                     effective: bool = False, rtol: float = DEFAULT_RTOL) -> PoincareSection:
    """Stroboscopic points at ``t = 0, T, ..., K T`` for each seed."""
    T = period if period is not None else params.period
    if T is None:
        raise ValueError("undriven system: pass an explicit strobe period")
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    times = T * np.arange(K + 1)
    z, phi, ok = evolve_points(params, seeds[:, 0], seeds[:, 1], times, effective, rtol)
    errors = tuple(None if good else "pole contact" for good in ok)
    return PoincareSection(seeds, z, wrap_phase(phi), T, errors)


# --- finite-time Lyapunov exponents ---------------------------------------------

def phase_distance(N: int, z1, phi1, z2, phi2):
    """Flat distance on ``(z/N, phi)`` with wrapped phase."""
    return np.hypot((np.asarray(z1) - z2) / N, wrap_phase(np.asarray(phi1) - phi2))


def _fit_divergence(times, dist):
    """Slope of ``log(d/d0)`` vs ``t`` over the unsaturated window.

    Operates on ``(K + 1, M)`` arrays; returns ``(slope, residual, saturated, n_fit)``.
    """
    logs = np.log(dist / dist[0])
    limit = SATURATION_FRACTION * PHASE_SPACE_DIAMETER
    over = dist > limit
    saturated = np.any(over, axis=0)
    first = np.where(saturated, np.argmax(over, axis=0), dist.shape[0])
    n_fit = np.maximum(first, 2)
    M = dist.shape[1]
    slope = np.empty(M)
    resid = np.empty(M)
    for m in range(M):
        k = n_fit[m]
        coef, res, *_ = np.polyfit(times[:k], logs[:k, m], 1, full=True)
        slope[m] = coef[0]
        resid[m] = math.sqrt(res[0] / k) if res.size else 0.0
    return slope, resid, saturated, n_fit


@dataclass(frozen=True)
class LyapunovResult:
    exponent: float
    residual: float
    saturated: bool
    n_fit: int
    times: np.ndarray
    log_divergence: np.ndarray


def _pair_batch(params, za, pa, zb, pb, n_periods, period, effective, rtol):
    times = period * np.arange(n_periods + 1)
    M = len(za)
    z, phi, ok = evolve_points(params, np.concatenate([za, zb]), np.concatenate([pa, pb]),
                               times, effective, rtol)
    dist = phase_distance(params.N, z[:, :M], phi[:, :M], z[:, M:], phi[:, M:])
    slope, resid, sat, n_fit = _fit_divergence(times, dist)
    return times, dist, slope, resid, sat, n_fit, ok[:M], ok[M:]


def lyapunov_pair(params: SystemParams, a, b, n_periods: int = DEFAULT_PERIODS,
                  period: float | None = None, effective: bool = False,
                  rtol: float = DEFAULT_RTOL) -> LyapunovResult:
    """Finite-time exponent from the divergence of two given initial points."""
    T = period if period is not None else params.strobe_period
    times, dist, slope, resid, sat, n_fit, ok_a, ok_b = _pair_batch(
        params, [a[0]], [a[1]], [b[0]], [b[1]], n_periods, T, effective, rtol)
    if not ok_a[0]:
        raise PoleContactError("reference trajectory hit the pole margin")
    if not ok_b[0]:
        raise PoleContactError("perturbed trajectory hit the pole margin")
    return LyapunovResult(float(slope[0]), float(resid[0]), bool(sat[0]), int(n_fit[0]),
                          times, np.log(dist[:, 0] / dist[0, 0]))


def finite_time_lyapunov(params: SystemParams, point, delta0: float = DEFAULT_DELTA0,
                         n_periods: int = DEFAULT_PERIODS, period: float | None = None,
                         effective: bool = False, rtol: float = DEFAULT_RTOL) -> LyapunovResult:
    """Two-trajectory exponent with the partner displaced by ``delta0`` in ``z``."""
    if not delta0 > 0:
        raise ValueError("delta0 must be positive")
    z, phi = point
    return lyapunov_pair(params, (z, phi), (z + delta0, phi), n_periods, period, effective, rtol)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular node grid over ``z/N`` in ``[z_min, z_max]`` and phase in ``(-pi, pi]``."""

    n_z: int = 40
    n_phi: int = 40
    z_min: float = -0.45
    z_max: float = 0.45
    phi_center: float = 0.0

    def __post_init__(self):
        if self.n_z < 1 or self.n_phi < 1:
            raise ValueError("grid needs at least one node per axis")
        if not (-0.5 < self.z_min <= self.z_max < 0.5):
            raise ValueError("grid must lie strictly inside |z| < N/2")

    def z_fractions(self) -> np.ndarray:
        if self.n_z == 1:
            return np.array([0.5 * (self.z_min + self.z_max)])
        return np.linspace(self.z_min, self.z_max, self.n_z)

    def phis(self) -> np.ndarray:
        """Phases in circular order around ``phi_center`` (wrapped, not sorted)."""
        j = np.arange(self.n_phi) - self.n_phi // 2
        return wrap_phase(self.phi_center + 2.0 * np.pi * j / self.n_phi)

    def nodes(self, N: int):
        """Flattened ``(z, phi)`` node arrays, z-major."""
        zz, pp = np.meshgrid(self.z_fractions() * N, self.phis(), indexing="ij")
        return zz.ravel(), pp.ravel()


@dataclass(frozen=True)
class LyapunovMap:
    grid: GridSpec
    z: np.ndarray              # (n_z, n_phi) node coordinates
    phi: np.ndarray
    exponent: np.ndarray       # NaN at failed nodes
    residual: np.ndarray
    saturated: np.ndarray
    failed: np.ndarray
    params: SystemParams
    n_periods: int
    delta0: float
    period: float

    @property
    def max_exponent(self) -> float:
        return float(np.nanmax(self.exponent))


def parallel_chunks(fn, n_items: int, threads: int = 1, chunk: int = CHUNK):
    """Apply ``fn(slice)`` over fixed-size chunks; results in chunk order."""
    slices = [slice(i, min(i + chunk, n_items)) for i in range(0, n_items, chunk)]
    if threads <= 1 or len(slices) == 1:
        return [fn(s) for s in slices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, slices))


def lyapunov_map_at(params: SystemParams, z, phi, delta0: float = DEFAULT_DELTA0,
                    n_periods: int = DEFAULT_PERIODS, period: float | None = None,
                    effective: bool = False, rtol: float = DEFAULT_RTOL, threads: int = 1):
    """Exponents at arbitrary node arrays; returns ``(exponent, residual, saturated, failed)``."""
    T = period if period is not None else params.strobe_period
    z = np.asarray(z, float)
    phi = np.asarray(phi, float)
    # the displaced partner must stay inside the pole margin too
    zp = z + delta0

    def work(sl):
        _, _, slope, resid, sat, _, ok_a, ok_b = _pair_batch(
            params, z[sl], phi[sl], zp[sl], phi[sl], n_periods, T, effective, rtol)
        return slope, resid, sat, ~(ok_a & ok_b)

    parts = parallel_chunks(work, len(z), threads)
    slope, resid, sat, failed = (np.concatenate(p) for p in zip(*parts))
    slope = np.where(failed, np.nan, slope)
    return slope, resid, sat, failed


def lyapunov_map(params: SystemParams, grid: GridSpec = GridSpec(), delta0: float = DEFAULT_DELTA0,
                 n_periods: int = DEFAULT_PERIODS, period: float | None = None,
                 effective: bool = False, rtol: float = DEFAULT_RTOL, threads: int = 1) -> LyapunovMap:
    T = period if period is not None else params.strobe_period
    z, phi = grid.nodes(params.N)
    slope, resid, sat, failed = lyapunov_map_at(params, z, phi, delta0, n_periods, T,
                                                effective, rtol, threads)
    shape = (grid.n_z, grid.n_phi)
    return LyapunovMap(grid, z.reshape(shape), phi.reshape(shape), slope.reshape(shape),
                       resid.reshape(shape), sat.reshape(shape), failed.reshape(shape),
                       params, n_periods, delta0, T)


@dataclass(frozen=True)
class ChaosClassification:
    fraction: float
    threshold: float
    n_chaotic: int
    n_valid: int
    n_failed: int
    driven: LyapunovMap
    reference: LyapunovMap


def regular_threshold(params: SystemParams, grid: GridSpec = GridSpec(), threads: int = 1,
                      **kw) -> LyapunovMap:
    """Lyapunov map of the unmodulated system, strobed at the driven period."""
    return lyapunov_map(params.replace(mu=0.0), grid, period=params.strobe_period,
                        threads=threads, **kw)


def _square_grid(n_samples: int) -> GridSpec:
    side = math.isqrt(n_samples)
    if n_samples < 1 or side * side != n_samples:
        raise ValueError(f"n_samples must be a positive perfect square, got {n_samples}")
    return GridSpec(side, side)


def classify_chaos(params: SystemParams, n_samples: int = 1600, threads: int = 1,
                   reference: LyapunovMap | None = None, **kw) -> ChaosClassification:
    """Label grid nodes chaotic when their exponent beats every unmodulated exponent."""
    grid = _square_grid(n_samples)
    if reference is None:
        reference = regular_threshold(params, grid, threads, **kw)
    threshold = reference.max_exponent
    if params.mu == 0:
        driven = reference
    else:
        driven = lyapunov_map(params, grid, threads=threads, **kw)
    valid = ~driven.failed
    n_chaotic = int(np.sum(driven.exponent[valid] > threshold))
    n_valid = int(np.sum(valid))
    fraction = n_chaotic / n_valid if n_valid else float("nan")
    return ChaosClassification(fraction, threshold, n_chaotic, n_valid,
                               int(np.sum(driven.failed)), driven, reference)


def chaotic_fraction(params: SystemParams, n_samples: int = 1600, threads: int = 1, **kw) -> float:
    return classify_chaos(params, n_samples, threads, **kw).fraction
