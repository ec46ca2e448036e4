import numpy as np
import pytest

from noma_offload.channel import (Scenario, channel_from_gains, noise_power, sample_channel,
                                  sample_distances, sorted_e_max, reference_scenario)


def test_noise_power_reference_scenario():
    # -174 dBm/Hz over 1 MHz is -114 dBm
    assert noise_power(reference_scenario()) == pytest.approx(10 ** (-14.4) * 1e-3, rel=1e-12)


def test_decode_order_descending_and_stable_on_ties():
    ch = channel_from_gains([1.0, 3.0, 3.0, 2.0], sigma2_w=0.5)
    assert list(ch.order) == [1, 2, 3, 0]
    assert np.allclose(ch.gamma, [6.0, 6.0, 4.0, 2.0])
    assert np.allclose(ch.sorted_gains(), [3.0, 3.0, 2.0, 1.0])


def test_same_seed_same_draw():
    sc = reference_scenario(n_devices=5)
    a = sample_channel(sc, 123)
    b = sample_channel(sc, np.random.SeedSequence(123))
    assert np.array_equal(a.gains, b.gains)
    assert not np.array_equal(a.gains, sample_channel(sc, 124).gains)


def test_distances_uniform_by_area():
    sc = reference_scenario(n_devices=200_000)
    d = sample_distances(sc, np.random.default_rng(0))
    assert d.min() >= 1.0 and d.max() <= 200.0
    # d^2 is uniform on [1, 200^2]
    assert np.mean(d ** 2) == pytest.approx((1 + 200.0 ** 2) / 2, rel=0.01)
    assert np.mean(d < 100) == pytest.approx((100.0 ** 2 - 1) / (200.0 ** 2 - 1), abs=0.005)


def test_fading_is_unit_exponential():
    # fix every distance at 1 m so the gain is the fading power alone
    sc = Scenario(n_devices=100_000, min_dist_m=1.0, cell_radius_m=1.0 + 1e-12)
    ch = sample_channel(sc, 3)
    g = ch.gains
    assert np.mean(g) == pytest.approx(1.0, rel=0.02)
    assert np.mean(g > 1.0) == pytest.approx(np.exp(-1.0), abs=0.01)


def test_e_max_follows_decode_order():
    sc = Scenario(n_devices=3, e_max_j=(0.1, 0.2, 0.3))
    ch = channel_from_gains([1.0, 5.0, 2.0], 1.0)
    assert np.allclose(sorted_e_max(sc, ch), [0.2, 0.3, 0.1])


@pytest.mark.parametrize("kw", [
    dict(n_devices=0),
    dict(n_devices=2, e_max_j=(0.1, 0.2, 0.3)),
    dict(bandwidth_hz=0.0),
    dict(t_max_s=-1.0),
    dict(k_common_bits=-1.0),
    dict(e_max_j=0.0),
    dict(min_dist_m=300.0),
])
def test_scenario_rejects_bad_values(kw):
    with pytest.raises(ValueError):
        Scenario(**kw)


def test_with_pads_budgets():
    sc = Scenario(n_devices=2, e_max_j=(0.1, 0.3))
    assert sc.with_(n_devices=4).e_max_j == (0.1, 0.3, 0.3, 0.3)
    assert sc.with_(n_devices=1).e_max_j == (0.1,)


def test_channel_rejects_nonpositive_gain():
    with pytest.raises(ValueError):
        channel_from_gains([1.0, 0.0], 1.0)
