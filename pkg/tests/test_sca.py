import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from noma_offload import check_feasibility, sample_channel, reference_scenario
from noma_offload.sca import (ScaStatus, SlackPoint, benchmark_init, default_init, sca_solve,
                              taylor_terms, tight_slacks, upper_bound)

W = 1e6


def bits(tau, s3):
    return tau * W * np.log1p(s3 / tau) / np.log(2)


@settings(max_examples=300, deadline=None)
@given(st.floats(1e-3, 1.0), st.floats(0.0, 1e8), st.floats(1e-3, 1.0), st.floats(0.0, 1e8))
def test_linearization_is_a_majorant(tau0, s0, tau, s):
    point = SlackPoint(tau_i=tau0, s3=np.array([s0]))
    terms = taylor_terms(point, W)
    ub = upper_bound(terms, tau0, point.s3, tau, s)[0]
    assert ub >= bits(tau, s) - 1e-10 * max(1.0, bits(tau, s))
    assert upper_bound(terms, tau0, point.s3, tau0, s0)[0] == pytest.approx(bits(tau0, s0), rel=1e-12)


def test_slack_point_validation():
    with pytest.raises(ValueError):
        SlackPoint(tau_i=0.0, s3=np.zeros(1))
    with pytest.raises(ValueError):
        SlackPoint(tau_i=0.5, s3=np.array([-1.0]))


def single_device_optimum(sc, ch):
    """Fine 1-D search over the common-stage length; energy splits exactly."""
    t, k, e, g = sc.t_max_s, sc.k_common_bits, sc.e_max[0], ch.gamma[0]
    lo, hi = 1e-6, t - 1e-9
    best = 0.0
    for _ in range(6):
        tc = np.linspace(lo, hi, 20001)
        with np.errstate(over="ignore"):
            e_c = tc * np.expm1(k / (tc * W) * np.log(2)) / g
        val = np.where(e_c <= e, bits(t - tc, np.maximum(e - e_c, 0) * g), -np.inf)
        i = int(np.argmax(val))
        best = max(best, float(val[i]))
        step = tc[1] - tc[0]
        lo, hi = max(1e-6, tc[i] - 4 * step), min(t - 1e-9, tc[i] + 4 * step)
    return best


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_single_device_matches_line_search(seed):
    sc = reference_scenario(n_devices=1, k_common_bits=3e6)
    ch = sample_channel(sc, seed)
    alloc, trace = sca_solve(sc, ch)
    if alloc is None:
        assert trace.status is ScaStatus.INFEASIBLE
        return
    ref = single_device_optimum(sc, ch)
    assert trace.phi[-1] == pytest.approx(ref, rel=1e-5)


def test_converges_monotone_feasible_and_tight(four_device):
    sc, ch = four_device
    alloc, trace = sca_solve(sc, ch)
    assert trace.status is ScaStatus.CONVERGED
    phi = trace.phi
    assert np.all(np.diff(phi) >= -1e-9 * np.maximum(1.0, phi[:-1]))
    assert check_feasibility(alloc, sc, ch).feasible
    tight = tight_slacks(alloc, ch.gamma)
    xc, xi = alloc.e_c * ch.gamma, alloc.e_i * ch.gamma
    assert tight.s1[0] == pytest.approx(xc.sum(), rel=1e-12)
    assert np.allclose(tight.s2, np.cumsum(xi[::-1])[::-1], rtol=1e-12)
    assert np.allclose(tight.s3, tight.s2[1:], rtol=1e-12)
    # the reported objective is the true min rate of the returned allocation
    from noma_offload.model import objective_min_individual
    assert phi[-1] == pytest.approx(objective_min_individual(alloc, ch.gamma, W), rel=1e-6)


def test_infeasible_common_load():
    sc = reference_scenario(n_devices=2, k_common_bits=1e9)
    ch = sample_channel(sc, 0)
    alloc, trace = sca_solve(sc, ch)
    assert alloc is None
    assert trace.status is ScaStatus.INFEASIBLE
    assert "common-throughput" in trace.diagnosis


def test_zero_common_load_skips_stage_one(two_device):
    sc, ch = two_device
    alloc, trace = sca_solve(sc.with_(k_common_bits=0.0), ch)
    assert alloc.tau_c == 0.0 and np.all(alloc.e_c == 0.0)
    assert alloc.tau_i == pytest.approx(sc.t_max_s, rel=1e-6)


def test_iteration_cap_is_reported(four_device):
    sc, ch = four_device
    alloc, trace = sca_solve(sc, ch, n_max=1)
    assert trace.iterations == 1
    assert trace.status is ScaStatus.ITER_LIMIT
    assert alloc is not None


def test_benchmark_init_is_per_device_feasible():
    sc = reference_scenario(n_devices=3, k_common_bits=2e6)
    ch = sample_channel(sc, 4)
    p = benchmark_init(sc, ch)
    assert 0 < p.tau_c < sc.t_max_s
    assert p.s3c.shape == (2,) and np.all(p.s3c >= 0)
    alloc, trace = sca_solve(sc, ch, common_mode="per_device")
    assert check_feasibility(alloc, sc, ch, common_mode="per_device").feasible
    assert default_init(sc, ch).tau_i == pytest.approx(0.5)


def test_taylor_closed_forms():
    t = taylor_terms(SlackPoint(tau_i=1.0, s3=np.array([1.0, 0.0])), 1.0)
    assert t.b[0] == pytest.approx(1.0, rel=1e-15)
    assert t.d[0] == pytest.approx((np.log(2) - 0.5) / np.log(2), rel=1e-14)
    assert t.q[0] == pytest.approx(1 / (2 * np.log(2)), rel=1e-15)
    assert t.b[1] == 0.0 and t.d[1] == 0.0 and t.q[1] == pytest.approx(1 / np.log(2))


def test_default_init_by_hand():
    from noma_offload.channel import Scenario, channel_from_gains
    sc = Scenario(n_devices=2, e_max_j=0.2)
    ch = channel_from_gains([2.0, 1.0], 1.0)
    p = default_init(sc, ch)
    assert p.tau_i == 0.5 and np.allclose(p.s3, [0.1])
    one = Scenario(n_devices=1)
    assert default_init(one, channel_from_gains([1.0], 1.0)).s3.size == 0


def test_subproblem_layout_n2(two_device):
    from noma_offload.sca import build_subproblem
    sc, ch = two_device
    p = build_subproblem(sc, ch, default_init(sc, ch))
    assert p.n_vars == 11
    assert sorted(p.layout) == sorted(["phi", "tau_c", "tau_i", "e_c", "e_i", "s1", "s2", "s3"])
    assert p.lin_labels.count("energy") == 2 and p.lin_labels.count("time") == 1
    assert p.p_labels == ["common-throughput", "linearized-min-rate", "min-rate"]
    p0 = build_subproblem(sc.with_(k_common_bits=0.0), ch, default_init(sc, ch))
    assert "common-throughput" not in p0.p_labels


def test_subproblem_points_are_feasible_for_original(four_device):
    # restriction property: subproblem-feasible points keep every true rate above phi
    from noma_offload.model import Allocation, individual_rates
    from noma_offload.sca import allocation_from, build_subproblem
    from noma_offload.solver import solve
    sc, ch = four_device
    p = build_subproblem(sc, ch, default_init(sc, ch))
    x_opt = solve(p).x
    i_phi = p.layout["phi"].start
    for lam in np.linspace(0.0, 1.0, 11):
        x = lam * x_opt + (1 - lam) * p.hint  # convex set: the segment stays feasible
        assert p.max_violation(x) <= 1e-9
        alloc = allocation_from(p, x)
        rates = individual_rates(alloc, ch.gamma, sc.bandwidth_hz)
        assert rates.min() >= x[i_phi] * p.scale[i_phi] * (1 - 1e-9)
        assert check_feasibility(alloc, sc, ch, tol=1e-8).feasible
