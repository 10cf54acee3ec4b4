import numpy as np
import pytest

from dimer_chaos.model import params_from_nonlinearity
from dimer_chaos.semiclassical import wrap_phase
from dimer_chaos.states import NAMES, locate_representative_states


@pytest.fixture(scope="module")
def located():
    return locate_representative_states(params_from_nonlinearity(1.0, 1000, mu=0.2, omega=1.37), threads=2)


def test_all_states_found(located):
    assert set(located.points) == set(NAMES)
    for name in NAMES:
        z, phi = located[name]
        assert abs(z) < 500 and -np.pi < phi <= np.pi


def test_exponent_ordering(located):
    e = located.exponents
    assert e["chaotic"] > located.threshold
    assert e["regular-1"] <= located.threshold
    assert e["regular-2"] <= located.threshold
    assert e["chaotic"] > 3 * max(e["regular-1"], e["regular-2"])


def test_geometry(located):
    z1, p1 = located["regular-1"]
    z2, p2 = located["regular-2"]
    zc, pc = located["chaotic"]
    # regular 1 sits in an island near the unstable point, regular 2 near the stable one
    assert abs(z1) <= 100 and abs(wrap_phase(p1 - np.pi)) <= 0.6
    assert 150 <= z2 <= 250 and abs(p2) <= 0.5
    assert abs(zc) <= 100 and abs(wrap_phase(pc - np.pi)) <= 0.6


def test_islands_are_enclosed(located):
    assert located.islands.any()
    assert not (located.islands & located.sea).any()


def test_deterministic(located):
    again = locate_representative_states(params_from_nonlinearity(1.0, 1000, mu=0.2, omega=1.37),
                                         threads=3)
    assert again.points == located.points


def test_undriven_rejected():
    with pytest.raises(ValueError):
        locate_representative_states(params_from_nonlinearity(1.0, 1000))


def test_chaotic_ensemble_spreads_over_the_sea(located):
    from dimer_chaos.states import _coarse_index
    from dimer_chaos.wigner import evolve_ensemble, sample_initial_ensemble

    p = located.lyapunov.params
    ens = sample_initial_ensemble(p, *located["chaotic"], 10 ** 4, seed=8)
    z, phi = evolve_ensemble(p, ens, 20 * p.period).phase_points()
    i, j = _coarse_index(located.lyapunov, z, phi)
    visited = np.zeros_like(located.sea)
    visited[i, j] = True
    assert np.sum(visited & located.sea) >= 0.6 * np.sum(located.sea)
