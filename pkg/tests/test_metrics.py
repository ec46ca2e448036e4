import math

import numpy as np
import pytest

from noma_offload.metrics import jain_index, stage_bits, stage_ratios
from noma_offload.model import Allocation, common_sum_rate


def test_jain_extremes():
    assert jain_index([3.0, 3.0, 3.0]).value == pytest.approx(1.0)
    assert jain_index([5.0, 0.0, 0.0, 0.0]).value == pytest.approx(0.25)
    assert jain_index([1.0, 2.0]).value == pytest.approx(9 / 10)


def test_jain_huge_values_do_not_overflow():
    assert jain_index([1e200, 1e200]).value == pytest.approx(1.0)


def test_jain_all_zero_is_flagged():
    f = jain_index(np.zeros(4))
    assert f.value == 1.0 and f.all_zero


def test_jain_rejects_negative():
    with pytest.raises(ValueError):
        jain_index([1.0, -0.1])


def test_ratio_conventions():
    alloc = Allocation(tau_c=0.0, tau_i=1.0, e_c=np.array([0.0, 0.1, 0.2]),
                       e_i=np.array([0.0, 0.0, 0.1]))
    r = stage_ratios(alloc)
    assert r.time == 0.0 and not r.time_infinite
    assert r.energy[0] == 0.0 and not r.energy_infinite[0]
    assert math.isinf(r.energy[1]) and r.energy_infinite[1]
    assert r.energy[2] == pytest.approx(2.0)
    assert stage_ratios(Allocation(0.5, 0.0, np.zeros(1), np.zeros(1))).time_infinite


def test_stage_bits_sum_to_common_throughput():
    gamma = np.array([4e3, 2e3, 1e2])
    alloc = Allocation(0.4, 0.6, np.array([0.1, 0.05, 0.2]), np.array([0.1, 0.1, 0.0]))
    common, indiv = stage_bits(alloc, gamma, 1e6)
    assert common.sum() == pytest.approx(common_sum_rate(0.4, alloc.e_c, gamma, 1e6), rel=1e-12)
    assert indiv[2] == 0.0


def test_jain_direct_formula_and_scale_invariance():
    assert jain_index([1.0, 2.0, 3.0]).value == pytest.approx(6 / 7, rel=1e-15)
    x = np.array([0.3, 1.7, 0.0, 4.2])
    assert jain_index(7.5 * x).value == pytest.approx(jain_index(x).value, rel=1e-14)


def test_equal_stage_lengths_give_time_ratio_one():
    alloc = Allocation(0.5, 0.5, np.array([0.1]), np.array([0.1]))
    assert stage_ratios(alloc).time == 1.0


def test_solved_allocation_delivers_common_load(four_device):
    from noma_offload import sca_solve
    sc, ch = four_device
    alloc, _ = sca_solve(sc, ch)
    common, indiv = stage_bits(alloc, ch.gamma, sc.bandwidth_hz)
    assert common.sum() >= sc.k_common_bits * (1 - 1e-6)
    assert np.all(indiv > 0)
