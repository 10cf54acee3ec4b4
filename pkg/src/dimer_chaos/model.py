"""Two-site Bose-Hubbard model in the fixed-N Fock basis.

Basis index ``n`` is the site-1 occupation, site 2 holds ``N - n``.
Units: hbar = 1, energies and rates in units of the base tunnelling ``J0``.
Bloch observables follow ``z = (n2 - n1) / 2`` and ``phi = -arg(x + i y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.special import gammaln, j0, xlogy


@dataclass(frozen=True)
class SystemParams:
    """Physical and driving parameters of the modulated dimer.

    ``J(t) = J0 + mu cos(omega t)``.
    """

    U: float
    J0: float
    mu: float
    omega: float
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"particle number N must be a positive integer, got {self.N!r}")
        if not self.J0 > 0:
            raise ValueError(f"tunnelling J0 must be positive, got {self.J0!r}")
        if self.mu != 0 and not self.omega > 0:
            raise ValueError(f"drive frequency omega must be positive when mu != 0, got {self.omega!r}")
        for name in ("U", "J0", "mu", "omega"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        object.__setattr__(self, "N", int(self.N))

    @property
    def C(self) -> float:
        """Nonlinearity ``U N / J0``."""
        return self.U * self.N / self.J0

    @property
    def period(self) -> float | None:
        """Driving period ``2 pi / omega``; ``None`` for an undriven system."""
        if self.mu == 0:
            return None
        return 2.0 * math.pi / self.omega

    @property
    def strobe_period(self) -> float:
        """Period used for stroboscopic sampling, defined even when ``mu == 0``."""
        if not self.omega > 0:
            raise ValueError("a positive omega is needed to define a strobe period")
        return 2.0 * math.pi / self.omega

    def replace(self, **changes) -> "SystemParams":
        values = {k: getattr(self, k) for k in ("U", "J0", "mu", "omega", "N")}
        values.update(changes)
        return SystemParams(**values)

    def as_dict(self) -> dict:
        return {"U": self.U, "J0": self.J0, "mu": self.mu, "omega": self.omega,
                "N": self.N, "C": self.C, "T": self.period}


def build_params(U, J0, mu, omega, N) -> SystemParams:
    return SystemParams(float(U), float(J0), float(mu), float(omega), N)


def params_from_nonlinearity(C, N, mu=0.0, omega=1.0, J0=1.0) -> SystemParams:
    """Parameters with ``U`` chosen so that ``U N / J0 == C``."""
    return build_params(C * J0 / N, J0, mu, omega, N)


def tunnelling_rate(params: SystemParams, t):
    return params.J0 + params.mu * np.cos(params.omega * t)


@dataclass(frozen=True)
class FockMatrix:
    """Hermitian banded matrix in the Fock basis.

    ``upper[k - 1]`` holds the entries ``M[n, n + k]``; the lower bands are
    their complex conjugates.
    """

    diagonal: np.ndarray
    upper: tuple = field(default_factory=tuple)

    @property
    def dim(self) -> int:
        return self.diagonal.shape[0]

    @property
    def bandwidth(self) -> int:
        return len(self.upper)

    def toarray(self) -> np.ndarray:
        dtype = np.result_type(self.diagonal, *self.upper) if self.upper else self.diagonal.dtype
        out = np.diag(self.diagonal).astype(dtype)
        for k, band in enumerate(self.upper, start=1):
            out += np.diag(band, k) + np.diag(np.conj(band), -k)
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Apply to a vector or to the columns of a 2-D array."""
        d = self.diagonal if x.ndim == 1 else self.diagonal[:, None]
        y = d * x
        for k, band in enumerate(self.upper, start=1):
            b = band if x.ndim == 1 else band[:, None]
            y[:-k] += b * x[k:]
            y[k:] += np.conj(b) * x[:-k]
        return y

    def spectral_bounds(self) -> tuple[float, float]:
        """Gershgorin enclosure of the (real) spectrum."""
        radius = np.zeros(self.dim)
        for k, band in enumerate(self.upper, start=1):
            a = np.abs(band)
            radius[:-k] += a
            radius[k:] += a
        d = self.diagonal.real
        return float(np.min(d - radius)), float(np.max(d + radius))

    def expectation(self, psi: np.ndarray) -> float:
        return float(np.real(np.vdot(psi, self.matvec(psi))))


def _hop_amplitudes(N: int) -> np.ndarray:
    """``<n+1| b1^dag b2 |n> = sqrt((n+1)(N-n))`` for n = 0..N-1."""
    n = np.arange(N, dtype=float)
    return np.sqrt((n + 1.0) * (N - n))


def _onsite_pairs(N: int) -> np.ndarray:
    n = np.arange(N + 1, dtype=float)
    return n * (n - 1.0) + (N - n) * (N - n - 1.0)


def interaction_diagonal(params: SystemParams) -> np.ndarray:
    return params.U * _onsite_pairs(params.N)


def tunnelling_operator(N: int) -> FockMatrix:
    """``-(b1^dag b2 + b2^dag b1)``; the full Hamiltonian is ``D + J(t) K``."""
    return FockMatrix(np.zeros(N + 1), (-_hop_amplitudes(N),))


def hamiltonian_matrix(params: SystemParams, t: float = 0.0) -> FockMatrix:
    J = tunnelling_rate(params, t)
    return FockMatrix(interaction_diagonal(params), (-J * _hop_amplitudes(params.N),))


def bessel_factor(params: SystemParams) -> float:
    if params.mu == 0:
        return 1.0
    if not params.omega > 0:
        raise ValueError("effective Hamiltonian needs omega > 0")
    return float(j0(4.0 * params.mu / params.omega))


def effective_hamiltonian_matrix(params: SystemParams) -> FockMatrix:
    """Period-averaged Hamiltonian for fast modulation (pentadiagonal)."""
    if not params.omega > 0:
        raise ValueError("effective Hamiltonian needs omega > 0")
    N, U = params.N, params.U
    bj = bessel_factor(params)
    n = np.arange(N + 1, dtype=float)
    onsite = 0.25 * U * (3.0 + bj)
    exchange = 0.25 * U * (1.0 - bj)
    diag = onsite * _onsite_pairs(N) + 4.0 * exchange * n * (N - n)
    m = np.arange(N - 1, dtype=float)
    pair = np.sqrt((m + 1.0) * (m + 2.0) * (N - m) * (N - m - 1.0))
    first = -params.J0 * _hop_amplitudes(N)
    if N < 2:
        return FockMatrix(diag, (first,))
    return FockMatrix(diag, (first, -exchange * pair))


# --- pseudospin operators ---------------------------------------------------

def jz_diagonal(N: int) -> np.ndarray:
    return (N - 2.0 * np.arange(N + 1)) / 2.0


def spin_operators(N: int) -> tuple[FockMatrix, FockMatrix, FockMatrix]:
    """``(Jx, Jy, Jz)`` as banded matrices."""
    s = _hop_amplitudes(N)
    jx = FockMatrix(np.zeros(N + 1), (s / 2.0,))
    # <n|Jy|n+1> = <n| b2^dag b1 |n+1> / 2i
    jy = FockMatrix(np.zeros(N + 1, dtype=complex), (s / 2j,))
    jz = FockMatrix(jz_diagonal(N))
    return jx, jy, jz


@dataclass(frozen=True)
class BlochMoments:
    x: float
    y: float
    z: float
    var_x: float
    var_y: float
    var_z: float
    spin_length: float
    N: int

    @property
    def phi(self) -> float:
        return float(-np.angle(self.x + 1j * self.y))

    @property
    def lambda_max(self) -> float:
        return self.N / 2.0 + self.spin_length

    @property
    def condensate_fraction(self) -> float:
        return self.lambda_max / self.N


def spin_length_from_variances(N, var_x, var_y, var_z, atol=1e-9):
    """Length of the mean spin from the Casimir ``N(N+2)/4`` minus the variances."""
    casimir = N * (N + 2.0) / 4.0
    radicand = casimir - var_x - var_y - var_z
    # roundoff in the subtraction scales with the Casimir
    tol = atol + 1e-12 * casimir
    if np.any(radicand < -tol):
        raise ValueError(f"inconsistent moments: negative spin-length radicand {np.min(radicand)!r}")
    return np.sqrt(np.maximum(radicand, 0.0))


def check_normalized(psi: np.ndarray, tol: float = 1e-6) -> float:
    norm2 = float(np.sum(np.abs(psi) ** 2))
    if abs(norm2 - 1.0) > tol:
        raise ValueError(f"state is not normalized: sum |c_n|^2 = {norm2!r}")
    return norm2


def bloch_moments(psi: np.ndarray) -> BlochMoments:
    psi = np.asarray(psi, dtype=complex)
    check_normalized(psi)
    N = psi.shape[0] - 1
    jx, jy, jz = spin_operators(N)
    s = _hop_amplitudes(N)
    # x + i y = <b2^dag b1> = sum_n s_n conj(c_n) c_{n+1}
    w = np.sum(s * np.conj(psi[:-1]) * psi[1:]) if N > 0 else 0.0
    x, y = float(np.real(w)), float(np.imag(w))
    jzd = jz.diagonal
    z = float(np.sum(jzd * np.abs(psi) ** 2))
    var_x = float(np.sum(np.abs(jx.matvec(psi)) ** 2)) - x * x
    var_y = float(np.sum(np.abs(jy.matvec(psi)) ** 2)) - y * y
    var_z = float(np.sum(jzd ** 2 * np.abs(psi) ** 2)) - z * z
    # validates the variances; for a fixed-N state the radicand equals
    # x^2 + y^2 + z^2 exactly, and that form keeps full precision near zero
    # length where the subtraction loses sqrt(eps) * N
    spin_length_from_variances(N, var_x, var_y, var_z)
    length = math.sqrt(x * x + y * y + z * z)
    return BlochMoments(x, y, z, var_x, var_y, var_z, length, N)


def reduced_density_matrix(psi: np.ndarray) -> np.ndarray:
    """One-particle reduced density matrix ``<b_i^dag b_j>``."""
    psi = np.asarray(psi, dtype=complex)
    N = psi.shape[0] - 1
    p = np.abs(psi) ** 2
    n = np.arange(N + 1)
    n1 = float(np.sum(n * p))
    w = np.sum(_hop_amplitudes(N) * np.conj(psi[:-1]) * psi[1:]) if N > 0 else 0.0
    # w = <b2^dag b1>, rho[0, 1] = <b1^dag b2> = conj(w)
    return np.array([[n1, np.conj(w)], [w, N - n1]], dtype=complex)


# --- coherent states ----------------------------------------------------------

def _polar_from_z(N: int, z):
    z = np.asarray(z, dtype=float)
    if np.any(np.abs(z) > N / 2.0 * (1 + 1e-12)):
        raise ValueError(f"|z| must not exceed N/2 = {N / 2}")
    # site-1 occupation probability of each particle
    return np.clip(0.5 - z / N, 0.0, 1.0)


def coherent_log_amplitudes(N: int, z) -> np.ndarray:
    """``log |c_n|`` of coherent states centred at population difference(s) ``z``.

    Returns shape ``z.shape + (N + 1,)``; entries are ``-inf`` where the
    amplitude vanishes.
    """
    p1 = _polar_from_z(N, z)[..., None]
    n = np.arange(N + 1, dtype=float)
    log_binom = gammaln(N + 1.0) - gammaln(n + 1.0) - gammaln(N - n + 1.0)
    with np.errstate(divide="ignore"):
        return 0.5 * (log_binom + xlogy(n, p1) + xlogy(N - n, 1.0 - p1))


def bloch_coherent_state(params_or_N, z0: float, phi0: float) -> np.ndarray:
    """SU(2) coherent state centred at ``(z0, phi0)``.

    ``c_n = sqrt(binom(N, n)) p^(n/2) (1-p)^((N-n)/2) exp(-i n phi0)`` with
    ``p = 1/2 - z0/N``, so ``c_0`` is real and non-negative.
    """
    N = params_or_N.N if isinstance(params_or_N, SystemParams) else int(params_or_N)
    if abs(z0) > N / 2.0:
        raise ValueError(f"|z0| = {abs(z0)} exceeds N/2 = {N / 2}")
    logs = coherent_log_amplitudes(N, z0)
    n = np.arange(N + 1)
    psi = np.exp(logs) * np.exp(-1j * n * phi0)
    return psi / np.linalg.norm(psi)


def fock_state(N: int, k: int) -> np.ndarray:
    psi = np.zeros(N + 1, dtype=complex)
    psi[k] = 1.0
    return psi


def twin_fock_state(N: int) -> np.ndarray:
    if N % 2:
        raise ValueError("twin-Fock state needs even N")
    return fock_state(N, N // 2)
