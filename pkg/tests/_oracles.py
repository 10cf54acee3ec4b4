"""Independent reference constructions used by the tests."""
import numpy as np


def ladder(d):
    return np.diag(np.sqrt(np.arange(1, d)), 1)


def two_mode_ops(N):
    """``b1, b2`` on the full ``(N+1)^2`` two-mode space and the fixed-N projector."""
    d = N + 1
    a, eye = ladder(d), np.eye(d)
    b1, b2 = np.kron(a, eye), np.kron(eye, a)
    # fixed-N basis ordered by site-1 occupation n1 = 0..N
    keep = [n1 * d + (N - n1) for n1 in range(N + 1)]
    P = np.zeros((d * d, N + 1))
    P[keep, np.arange(N + 1)] = 1.0
    return b1, b2, P


def dagger(m):
    return m.conj().T


def dimer_hamiltonian(N, U, J):
    b1, b2, P = two_mode_ops(N)
    onsite = sum(dagger(b) @ dagger(b) @ b @ b for b in (b1, b2))
    H = U * onsite - J * (dagger(b1) @ b2 + dagger(b2) @ b1)
    return P.T @ H @ P


def effective_hamiltonian(N, U, J0, bessel):
    b1, b2, P = two_mode_ops(N)
    onsite = sum(dagger(b) @ dagger(b) @ b @ b for b in (b1, b2))
    n1, n2 = dagger(b1) @ b1, dagger(b2) @ b2
    pair = dagger(b1) @ dagger(b1) @ b2 @ b2
    exchange = pair + dagger(pair) - 4 * n1 @ n2
    H = (U / 4) * (3 + bessel) * onsite - (U / 4) * (1 - bessel) * exchange \
        - J0 * (dagger(b1) @ b2 + dagger(b2) @ b1)
    return P.T @ H @ P


def spin_matrices(N):
    b1, b2, P = two_mode_ops(N)
    hop = dagger(b2) @ b1
    jx = (hop + dagger(hop)) / 2
    jy = (hop - dagger(hop)) / 2j
    jz = (dagger(b2) @ b2 - dagger(b1) @ b1) / 2
    return tuple(P.T @ m @ P for m in (jx, jy, jz))
