import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noma_offload.channel import Scenario, channel_from_gains
from noma_offload.model import (Allocation, check_feasibility, common_rates, common_sum_rate,
                                individual_rates, max_common_capacity, objective_min_individual,
                                per_device_common_feasible, per_device_min_energy, perspective_bits,
                                single_device_capacity)

W = 1e6


def test_two_device_rates_by_hand():
    gamma = np.array([8.0, 3.0])
    e = np.array([0.5, 1.0])
    tau = 0.5
    r = individual_rates(Allocation(0.5, tau, np.zeros(2), e), gamma, W)
    # strongest decoded first, seeing the weaker one as interference
    assert r[0] == pytest.approx(tau * W * np.log2(1 + 4.0 / (tau + 3.0)), rel=1e-13)
    assert r[1] == pytest.approx(tau * W * np.log2(1 + 3.0 / tau), rel=1e-13)


def test_perspective_zero_time_limit():
    assert perspective_bits(0.0, 0.0, W) == 0.0
    with pytest.raises(ValueError):
        perspective_bits(0.0, 1.0, W)
    with pytest.raises(ValueError):
        perspective_bits(1.0, -1.0, W)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(1e-3, 1e4), min_size=1, max_size=8),
       st.lists(st.floats(0.0, 1.0), min_size=8, max_size=8),
       st.floats(1e-3, 1.0))
def test_sum_of_sic_rates_is_sum_rate(gains, energies, tau):
    gamma = np.sort(np.asarray(gains))[::-1]
    e = np.asarray(energies[:len(gamma)])
    total = common_sum_rate(tau, e, gamma, W)
    assert common_rates(tau, e, gamma, W).sum() == pytest.approx(total, rel=1e-12, abs=1e-9)


def test_tdma_rates_use_sub_slots():
    gamma = np.array([10.0, 1.0])
    alloc = Allocation(0.0, 1.0, np.zeros(2), np.array([0.2, 0.3]), t_sub=np.array([0.3, 0.7]))
    r = individual_rates(alloc, gamma, W)
    assert r[0] == pytest.approx(0.3 * W * np.log2(1 + 2.0 / 0.3))
    assert r[1] == pytest.approx(0.7 * W * np.log2(1 + 0.3 / 0.7))
    assert objective_min_individual(alloc, gamma, W) == pytest.approx(min(r))


@pytest.fixture
def setting():
    sc = Scenario(n_devices=2, k_common_bits=1e6, e_max_j=0.2)
    ch = channel_from_gains([2e-14, 5e-15], 1e-15)
    return sc, ch


def test_feasibility_flags_each_constraint(setting):
    sc, ch = setting
    good = Allocation(0.5, 0.5, np.array([0.1, 0.1]), np.array([0.1, 0.1]))
    assert check_feasibility(good, sc, ch).feasible
    over_e = Allocation(0.5, 0.5, np.array([0.1, 0.1]), np.array([0.15, 0.1]))
    rep = check_feasibility(over_e, sc, ch)
    assert not rep.feasible and rep.energy[0] == pytest.approx(0.05)
    over_t = Allocation(0.6, 0.5, np.array([0.1, 0.1]), np.array([0.1, 0.1]))
    assert not check_feasibility(over_t, sc, ch).feasible
    starved = Allocation(0.5, 0.5, np.array([1e-9, 0.0]), np.array([0.1, 0.1]))
    assert check_feasibility(starved, sc, ch).common[0] > 0


def test_capacities(setting):
    sc, ch = setting
    assert max_common_capacity(sc, ch) == pytest.approx(W * np.log2(1 + 0.2 * 25.0), rel=1e-12)
    assert np.allclose(single_device_capacity(sc, ch), W * np.log2(1 + 0.2 * ch.gamma))


def test_per_device_min_energy_delivers_exactly_k(setting):
    sc, ch = setting
    tau = 0.7
    e = per_device_min_energy(sc, ch, tau)
    assert np.allclose(common_rates(tau, e, ch.gamma, W), sc.k_common_bits, rtol=1e-10)
    assert per_device_common_feasible(sc, ch) == bool(np.all(per_device_min_energy(sc, ch, 1.0) < 0.2))
