import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.special import gammaln

from dimer_chaos.model import (
    bloch_coherent_state,
    bloch_moments,
    build_params,
    fock_state,
    hamiltonian_matrix,
    params_from_nonlinearity,
    twin_fock_state,
)
from dimer_chaos.quantum import (
    Propagator,
    chebyshev_expm,
    condensate_fraction,
    condensate_fraction_direct,
    condensate_fraction_map,
    evolve_state,
    number_distribution,
    propagate,
    q_function,
)
from dimer_chaos.semiclassical import GridSpec, evolve_points


def test_chebyshev_matches_dense_expm():
    H = hamiltonian_matrix(build_params(0.3, 1.0, 0.0, 1.0, 12))
    psi = bloch_coherent_state(12, 2.0, 0.4)
    ref = expm(-1j * H.toarray() * 0.7) @ psi
    np.testing.assert_allclose(chebyshev_expm(H, psi, 0.7), ref, atol=1e-13)


class TestPropagation:
    def test_linear_dynamics_follow_mean_field(self):
        N = 200
        p = build_params(0.0, 1.0, 0.0, 1.0, N)
        times = np.linspace(0, 10 * math.pi, 101)
        states = propagate(p, bloch_coherent_state(N, 30.0, 0.7), times)
        z_q = np.array([bloch_moments(s).z for s in states])
        z_c, _, _ = evolve_points(p, [30.0], [0.7], times)
        assert np.max(np.abs(z_q - z_c[:, 0])) <= 1e-6 * N

    def test_linear_driven_dynamics_follow_mean_field(self):
        N = 100
        p = build_params(0.0, 1.0, 0.4, 1.3, N)
        times = np.linspace(0, 5 * p.period, 41)
        states = propagate(p, bloch_coherent_state(N, -20.0, 2.0), times)
        z_q = np.array([bloch_moments(s).z for s in states])
        z_c, _, _ = evolve_points(p, [-20.0], [2.0], times)
        assert np.max(np.abs(z_q - z_c[:, 0])) <= 1e-6 * N

    def test_no_tunnelling_keeps_populations(self):
        N = 50
        p = build_params(0.02, 1e-30, 0.0, 1.0, N)
        psi0 = bloch_coherent_state(N, 5.0, 1.0)
        states = propagate(p, psi0, np.linspace(0, 30, 7))
        np.testing.assert_allclose(np.abs(states) ** 2, np.broadcast_to(np.abs(psi0) ** 2, states.shape),
                                   atol=1e-12)

    @pytest.mark.parametrize("mu", [0.0, 0.2])
    def test_unitarity_over_twenty_periods(self, mu):
        N = 300
        p = params_from_nonlinearity(1.0, N, mu=mu, omega=1.37)
        T = 2 * math.pi / 1.37
        psi = evolve_state(p, bloch_coherent_state(N, 15.0, 2.7), 20 * T)
        assert abs(np.linalg.norm(psi) ** 2 - 1) <= 1e-9

    def test_undriven_energy_conservation(self):
        N = 300
        p = params_from_nonlinearity(1.0, N)
        H = hamiltonian_matrix(p)
        T = 2 * math.pi / 1.37
        states = propagate(p, bloch_coherent_state(N, 60.0, 1.0), np.linspace(0, 20 * T, 11))
        E = np.array([H.expectation(s) for s in states])
        assert np.max(np.abs(E - E[0])) <= 1e-8 * abs(E[0])

    def test_magnus_agrees_with_runge_kutta(self):
        N = 40
        p = params_from_nonlinearity(1.0, N, mu=0.5, omega=1.37)
        psi0 = bloch_coherent_state(N, 4.0, 2.5)
        times = np.linspace(0, 3 * p.period, 4)
        a = propagate(p, psi0, times)
        b = propagate(p, psi0, times, method="rk")
        np.testing.assert_allclose(a, b, atol=1e-7)

    def test_batch_equals_single(self):
        N = 30
        p = params_from_nonlinearity(1.0, N, mu=0.2, omega=1.37)
        psis = np.stack([bloch_coherent_state(N, z, 1.0) for z in (-5.0, 0.0, 7.0)], axis=1)
        times = [0.0, 3.0]
        batch = propagate(p, psis, times)[-1]
        for m in range(3):
            np.testing.assert_allclose(batch[:, m], propagate(p, psis[:, m], times)[-1], atol=1e-14)

    def test_effective_source_without_drive(self):
        N = 40
        p = params_from_nonlinearity(1.0, N, mu=0.0, omega=5.0)
        psi0 = bloch_coherent_state(N, 3.0, 0.2)
        a = evolve_state(p, psi0, 7.0)
        b = evolve_state(p, psi0, 7.0, source="effective")
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_rejects_unnormalized(self):
        p = params_from_nonlinearity(1.0, 4)
        with pytest.raises(ValueError):
            propagate(p, 2 * fock_state(4, 1), [0.0, 1.0])

    def test_rejects_unknown_source(self):
        with pytest.raises(ValueError):
            Propagator(params_from_nonlinearity(1.0, 4), "floquet")

    def test_series(self):
        N = 20
        p = params_from_nonlinearity(1.0, N, mu=0.2, omega=1.37)
        times = np.linspace(0, 4.0, 9)
        final, series = evolve_state(p, bloch_coherent_state(N, 2.0, 0.0), 4.0, sample_times=times)
        assert series.z.shape == (9,)
        assert np.all(np.diff(series.t) > 0)
        cf = series.condensate_fraction
        assert np.all((cf >= 0.5 - 1e-12) & (cf <= 1 + 1e-9))
        np.testing.assert_allclose(series.std_z ** 2, [m.var_z for m in series.moments])


class TestQFunction:
    N = 1000

    def test_normalization_default_grid(self):
        q = q_function(bloch_coherent_state(self.N, 123.0, -1.0))
        assert q.integral() == pytest.approx(1.0, abs=1e-3)
        assert np.all(q.Q >= 0)

    @given(zf=st.floats(-0.45, 0.45), phi=st.floats(-3.0, 3.0))
    @settings(max_examples=15, deadline=None)
    def test_peak_at_nearest_node(self, zf, phi):
        q = q_function(bloch_coherent_state(self.N, zf * self.N, phi))
        zc, pc = q.argmax()
        dz = q.z[1] - q.z[0]
        dphi = q.phi[1] - q.phi[0]
        assert abs(zc - zf * self.N) <= dz / 2 + 1e-9
        assert abs((pc - phi + math.pi) % (2 * math.pi) - math.pi) <= dphi / 2 + 1e-9

    def test_antipode_vanishes(self):
        psi = bloch_coherent_state(self.N, 0.0, 0.0)
        q = q_function(psi, z=np.array([0.0, 490.0]), phi=np.array([math.pi]))
        assert 0.0 <= q.Q[0, 0] < 1e-20
        assert np.all(q.Q >= 0)

    def test_small_n_overlap_formula(self):
        # |<z, phi|z0, phi0>|^2 = ((1 + n.n0) / 2)^N for unit Bloch vectors
        N = 8
        z0, p0, z1, p1 = 1.0, 0.3, -2.0, 2.0
        psi = bloch_coherent_state(N, z0, p0)
        q = q_function(psi, z=np.array([z1]), phi=np.array([p1]))

        def unit(z, phi):
            r = math.sqrt(1 - (2 * z / N) ** 2)
            return np.array([r * math.cos(phi), -r * math.sin(phi), 2 * z / N])

        ref = ((1 + unit(z0, p0) @ unit(z1, p1)) / 2) ** N
        assert q.Q[0, 0] == pytest.approx(ref, rel=1e-12)


class TestNumberDistribution:
    def test_fock(self):
        P = number_distribution(fock_state(10, 3)).P
        np.testing.assert_array_equal(P, np.eye(11)[3])

    def test_equator_binomial(self):
        N = 1000
        P = number_distribution(bloch_coherent_state(N, 0.0, 0.8)).P
        n = np.arange(N + 1)
        ref = np.exp(gammaln(N + 1) - gammaln(n + 1) - gammaln(N - n + 1) - N * math.log(2))
        np.testing.assert_allclose(P, ref, atol=1e-15, rtol=1e-10)

    def test_evolved_normalized(self):
        p = params_from_nonlinearity(1.0, 60, mu=0.2, omega=1.37)
        psi = evolve_state(p, bloch_coherent_state(60, 10.0, 1.0), 9.0)
        assert number_distribution(psi).P.sum() == pytest.approx(1.0, abs=1e-12)


class TestCondensateFraction:
    def test_coherent(self):
        assert condensate_fraction(bloch_coherent_state(500, 40.0, 1.0)) == pytest.approx(1.0, abs=1e-9)

    def test_twin_fock(self):
        assert condensate_fraction(twin_fock_state(500)) == pytest.approx(0.5, abs=1e-9)

    @given(seed=st.integers(0, 2 ** 32 - 1), N=st.integers(1, 20))
    @settings(max_examples=50)
    def test_routes_agree(self, seed, N):
        rng = np.random.default_rng(seed)
        psi = rng.normal(size=N + 1) + 1j * rng.normal(size=N + 1)
        psi /= np.linalg.norm(psi)
        assert condensate_fraction(psi) == pytest.approx(condensate_fraction_direct(psi), abs=1e-9)

    def test_map_at_zero_time(self):
        p = params_from_nonlinearity(1.0, 50, mu=0.2, omega=1.37)
        cmap = condensate_fraction_map(p, GridSpec(4, 5), 0.0)
        np.testing.assert_allclose(cmap.fraction, 1.0, atol=1e-9)

    def test_map_threads_deterministic(self):
        p = params_from_nonlinearity(1.0, 40, mu=0.2, omega=1.37)
        a = condensate_fraction_map(p, GridSpec(3, 4), 5.0, chunk=3)
        b = condensate_fraction_map(p, GridSpec(3, 4), 5.0, threads=3, chunk=3)
        assert a.fraction.tobytes() == b.fraction.tobytes()
