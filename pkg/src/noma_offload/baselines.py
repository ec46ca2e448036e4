"""The proposed scheme and the three comparison schemes.

* ``proposed``: cooperative NOMA common stage, NOMA individual stage (SCA).
* ``s_noma``: one device uploads all common data, NOMA individual stage.
* ``s_oma``: one device uploads all common data, TDMA individual stage with
  optimized sub-slots (a single concave program, no linearization needed).
* ``benchmark``: every device uploads the whole common data itself.

Vectors in a :class:`SchemeResult` are in SIC decode order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, Scenario, sorted_e_max
from .model import (LN2, TAU_MIN_FRACTION, Allocation, common_rates,
                    individual_rates, single_device_capacity)
from .sca import IterationRecord, ScaStatus, ScaTrace, best_phi_at, sca_solve
from .solver import ConvexSubproblem, ProblemBuilder, Status, is_strictly_feasible, solve

SCHEMES = ("proposed", "s_noma", "s_oma", "benchmark")


@dataclass
class SchemeResult:
    scheme: str
    objective: float
    allocation: Allocation | None
    common_bits: np.ndarray
    individual_bits: np.ndarray
    status: str
    trace: ScaTrace | None = None
    selected_device: int | None = None

    @property
    def feasible(self) -> bool:
        return self.allocation is not None

    @property
    def failed(self) -> bool:
        return self.status == ScaStatus.NUMERICAL_FAILURE.value


def _result(scheme, scenario, channel, allocation, status, trace=None, selected=None):
    n = channel.n_devices
    if allocation is None:
        # infeasible (or failed) instances score zero
        return SchemeResult(scheme, 0.0, None, np.zeros(n), np.zeros(n), status, trace, selected)
    w = scenario.bandwidth_hz
    common = (common_rates(allocation.tau_c, allocation.e_c, channel.gamma, w)
              if allocation.tau_c > 0 else np.zeros(n))
    indiv = individual_rates(allocation, channel.gamma, w)
    return SchemeResult(scheme, float(indiv.min()), allocation, common, indiv, status, trace, selected)


def solve_proposed(scenario: Scenario, channel: ChannelRealization, **kw) -> SchemeResult:
    allocation, trace = sca_solve(scenario, channel, **kw)
    return _result("proposed", scenario, channel, allocation, trace.status.value, trace)


def _best_candidate(scheme, results):
    """Highest objective wins; candidates come strongest channel first, so ties keep it."""
    best = None
    for res in results:
        if res.feasible and (best is None or res.objective > best.objective):
            best = res
    if best is not None:
        return best
    failed = [r for r in results if r.failed]
    pick = failed[0] if failed else results[0]
    pick.scheme = scheme
    return pick


def solve_s_noma(scenario: Scenario, channel: ChannelRealization, **kw) -> SchemeResult:
    if scenario.k_common_bits == 0:
        res = solve_proposed(scenario, channel, **kw)
        res.scheme = "s_noma"
        return res
    results = []
    for i in range(channel.n_devices):
        allocation, trace = sca_solve(scenario, channel, common_devices=[i], **kw)
        results.append(_result("s_noma", scenario, channel, allocation, trace.status.value, trace, i))
    return _best_candidate("s_noma", results)


def solve_benchmark(scenario: Scenario, channel: ChannelRealization, **kw) -> SchemeResult:
    allocation, trace = sca_solve(scenario, channel, common_mode="per_device", **kw)
    return _result("benchmark", scenario, channel, allocation, trace.status.value, trace)


def build_oma_problem(scenario: Scenario, channel: ChannelRealization, device: int | None) -> ConvexSubproblem:
    """Concave program of the single-uploader, TDMA individual-stage scheme.

    ``device`` uploads the common data (``None`` when K = 0). Each device n
    transmits alone for t_n with rate t_n W log2(1 + E_n gamma_n / t_n), which is
    already a perspective term, so E_n^I plays the slack role directly.
    """
    n = channel.n_devices
    gamma = channel.gamma
    e_max = sorted_e_max(scenario, channel)
    t_s = scenario.t_max_s
    e_s = float(e_max.max())
    rate_s = scenario.bandwidth_hz * t_s
    e_frac = e_max / e_s
    tau_lo = TAU_MIN_FRACTION

    b = ProblemBuilder()
    b.add_block("phi", 1, scale=rate_s)
    b.add_block("tau_c", 1, tau_lo, 1.0, scale=t_s)
    b.add_block("tau_i", 1, tau_lo, 1.0, scale=t_s)
    b.add_block("t_sub", n, tau_lo, 1.0, scale=t_s)
    b.add_block("e_c", n, 0.0, e_frac, scale=e_s)
    b.add_block("e_i", n, 0.0, e_frac, scale=e_s)
    i_phi, i_tc, i_ti = b.index("phi"), b.index("tau_c"), b.index("tau_i")
    b.maximize({i_phi: 1.0})
    for j in range(n):
        if j != device:
            b.fix(b.index("e_c", j), 0.0)
    if device is None:
        b.fix(i_tc, 0.0)
    else:
        b.add_perspective(i_tc, b.index("e_c", device), 1 / LN2, e_s * gamma[device] / t_s,
                          {}, scenario.k_common_bits / rate_s, "common-throughput")
    for j in range(n):
        b.add_perspective(b.index("t_sub", j), b.index("e_i", j), 1 / LN2, e_s * gamma[j] / t_s,
                          {i_phi: 1.0}, 0.0, "min-rate")
    for j in range(n):
        b.add_linear({b.index("e_c", j): 1.0, b.index("e_i", j): 1.0}, "<=", e_frac[j], "energy")
    b.add_linear({**{b.index("t_sub", j): 1.0 for j in range(n)}, i_ti: -1.0}, "<=", 0.0, "sub-slots")
    b.add_linear({i_tc: 1.0, i_ti: 1.0}, "<=", 1.0, "time")
    problem = b.build()

    fixed = problem.lower == problem.upper
    for f in ((0.0,) if device is None else (0.5, 0.7, 0.85, 0.95, 0.99, 0.3)):
        x = np.zeros(problem.n_vars)
        lay = problem.layout
        rest = 0.995 - f
        x[lay["tau_c"]] = f
        x[lay["tau_i"]] = rest
        x[lay["t_sub"]] = 0.99 * rest / n
        x[lay["e_c"]] = f * e_frac
        x[lay["e_i"]] = rest * e_frac
        x = np.where(fixed, problem.lower, x)
        x[lay["phi"]] = best_phi_at(problem, x) - 1.0
        if is_strictly_feasible(problem, x):
            problem.hint = x
            break
    return problem


def _solve_oma_candidate(scenario, channel, device, tol):
    start = time.perf_counter()
    problem = build_oma_problem(scenario, channel, device)
    out = solve(problem, tol=tol)
    trace = ScaTrace()
    if out.status is Status.INFEASIBLE:
        trace.status = ScaStatus.INFEASIBLE
        trace.diagnosis = out.diagnosis
        return None, trace
    phys = out.x * problem.scale
    trace.records.append(IterationRecord(
        phi_bits=out.objective * problem.scale[problem.layout["phi"].start],
        subproblem_status=out.status, kkt_residual=out.kkt_residual,
        wall_time_s=time.perf_counter() - start,
        newton_steps=out.newton_steps + out.phase1_steps))
    if not out.ok:
        trace.status = ScaStatus.NUMERICAL_FAILURE
        return None, trace
    trace.status = ScaStatus.CONVERGED
    allocation = Allocation(tau_c=float(problem.block(phys, "tau_c")[0]),
                            tau_i=float(problem.block(phys, "tau_i")[0]),
                            e_c=problem.block(phys, "e_c").copy(),
                            e_i=problem.block(phys, "e_i").copy(),
                            t_sub=problem.block(phys, "t_sub").copy())
    return allocation, trace


def solve_s_oma(scenario: Scenario, channel: ChannelRealization, tol: float = 1e-9) -> SchemeResult:
    if scenario.k_common_bits == 0:
        allocation, trace = _solve_oma_candidate(scenario, channel, None, tol)
        return _result("s_oma", scenario, channel, allocation, trace.status.value, trace)
    caps = single_device_capacity(scenario, channel)
    results = []
    for i in range(channel.n_devices):
        if caps[i] <= scenario.k_common_bits:
            trace = ScaTrace(status=ScaStatus.INFEASIBLE, diagnosis=("common-throughput",))
            results.append(_result("s_oma", scenario, channel, None, trace.status.value, trace, i))
            continue
        allocation, trace = _solve_oma_candidate(scenario, channel, i, tol)
        results.append(_result("s_oma", scenario, channel, allocation, trace.status.value, trace, i))
    return _best_candidate("s_oma", results)


_SOLVERS = {
    "proposed": solve_proposed,
    "s_noma": solve_s_noma,
    "s_oma": solve_s_oma,
    "benchmark": solve_benchmark,
}


def solve_scheme(name: str, scenario: Scenario, channel: ChannelRealization) -> SchemeResult:
    try:
        fn = _SOLVERS[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {', '.join(SCHEMES)}") from None
    return fn(scenario, channel)
