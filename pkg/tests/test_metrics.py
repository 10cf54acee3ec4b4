import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dimer_chaos.metrics import (
    DivergenceSeries,
    binning_sigma,
    bhattacharyya_coefficient,
    bhattacharyya_distance,
    is_disjoint,
    perturbation_experiment,
    sampling_noise_floor,
    state_overlap,
    unperturbed_run,
)
from dimer_chaos.model import bloch_coherent_state, params_from_nonlinearity
from dimer_chaos.quantum import evolve_state
from dimer_chaos.wigner import evolve_ensemble, binned_number_distribution, sample_initial_ensemble

probs = arrays(float, 12, elements=st.floats(0, 1)).filter(lambda a: a.sum() > 1e-3).map(lambda a: a / a.sum())


class TestBhattacharyya:
    def test_simple_values(self):
        assert bhattacharyya_coefficient([1, 0], [0.5, 0.5]) == pytest.approx(1 / math.sqrt(2))
        assert bhattacharyya_distance([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2) / 2)
        assert bhattacharyya_distance([0.2, 0.8], [0.2, 0.8]) == pytest.approx(0.0, abs=1e-15)

    def test_disjoint_is_infinite(self):
        assert bhattacharyya_distance([1, 0, 0], [0, 0.5, 0.5]) == math.inf
        assert is_disjoint([1, 0], [0, 1])
        assert not is_disjoint([1, 0], [0.5, 0.5])

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            bhattacharyya_coefficient([1, 0], [1, 0, 0])
        with pytest.raises(ValueError):
            bhattacharyya_coefficient([1.5, -0.5], [0.5, 0.5])
        with pytest.raises(ValueError):
            state_overlap(np.ones(3), np.ones(4))

    @given(P=probs, Q=probs)
    @settings(max_examples=100)
    def test_symmetric_and_bounded(self, P, Q):
        b = bhattacharyya_coefficient(P, Q)
        assert b == bhattacharyya_coefficient(Q, P)
        assert 0.0 <= b <= 1.0
        assert bhattacharyya_distance(P, Q) == bhattacharyya_distance(Q, P)

    @given(seed=st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=100)
    def test_overlap_below_coefficient(self, seed):
        rng = np.random.default_rng(seed)
        a = np.array([1, 1j]) @ rng.normal(size=(2, 9))
        b = np.array([1, 1j]) @ rng.normal(size=(2, 9))
        a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
        assert state_overlap(a, b) <= bhattacharyya_coefficient(abs(a) ** 2, abs(b) ** 2) + 1e-12


class TestNoiseFloor:
    def test_quoted_sigma(self):
        assert sampling_noise_floor(1000, 1.4e-4) == pytest.approx(2.45e-3, rel=0.02)

    def test_zero_sigma(self):
        assert sampling_noise_floor(1000, 0.0) == 0.0

    def test_domain(self):
        with pytest.raises(ValueError):
            sampling_noise_floor(1000, 1e-2)
        with pytest.raises(ValueError):
            sampling_noise_floor(1000, -1e-4)
        with pytest.raises(ValueError):
            binning_sigma(0, 10)

    def test_binning_sigma(self):
        assert binning_sigma(10 ** 5, 10 ** 3) == pytest.approx(1e-4)

    def test_frozen_distribution_floor(self):
        # one spread-out state binned with two independent seeds
        N, n = 1000, 10 ** 4
        p = params_from_nonlinearity(1.0, N, mu=0.2, omega=1.37)
        t = 10 * p.period
        a, b = (binned_number_distribution(
            evolve_ensemble(p, sample_initial_ensemble(p, 45.0, -2.6266, n, seed=s), t), 1, N)
            for s in (1, 2))
        floor = sampling_noise_floor(N, binning_sigma(n, N + 1))
        assert floor / 3 <= bhattacharyya_distance(a, b) <= 3 * floor


class TestPerturbation:
    N = 60
    params = params_from_nonlinearity(1.0, N, mu=0.2, omega=1.37)
    t = np.linspace(0, 4 * 2 * math.pi / 1.37, 9)

    def test_zero_perturbation_exact(self):
        s = perturbation_experiment(self.params, (5.0, -2.6), 0.0, self.t)
        assert np.max(np.abs(s.distance)) <= 1e-12
        assert s.overlap == pytest.approx(1.0, abs=1e-12)

    def test_overlap_bounded_by_coefficient(self):
        s = perturbation_experiment(self.params, (5.0, -2.6), 0.05, self.t)
        assert np.all(s.overlap <= s.coefficient + 1e-12)
        assert np.all(s.coefficient <= 1.0)
        assert s.distance[0] == 0.0

    def test_monotone_in_p(self):
        base = unperturbed_run(self.params, (3.0, 3.0), self.t)
        finals = [perturbation_experiment(self.params, (3.0, 3.0), p, self.t, baseline=base).distance[-1]
                  for p in (1e-1, 1e-2, 1e-3)]
        assert finals[0] >= finals[1] >= finals[2] > 0

    def test_binned_tw_shares_seed(self):
        s = perturbation_experiment(self.params, (5.0, -2.6), 1e-3, self.t[:3], method="binned-TW",
                                    n_traj=2000, seed=4)
        assert s.distance[0] == 0.0
        assert s.n_traj == 2000 and s.seed == 4
        with pytest.raises(ValueError):
            perturbation_experiment(self.params, (5.0, -2.6), 1e-3, self.t, method="binned-TW")

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            perturbation_experiment(self.params, (0.0, 0.0), 1e-3, self.t, method="kl")

    def test_plateau(self):
        s = DivergenceSeries(np.arange(8.0), np.array([0, 1, 2, 3, 4, 5, 7, 9.0]), "exact", 0.1)
        assert s.plateau() == 8.0
