"""Successive convex approximation of the two-stage max-min offloading problem.

The slack-variable problem keeps every perspective term concave; the only
non-concave pieces are the subtracted terms tau W log2(1 + S3/tau) of the
stage-2 SIC rates, which are replaced by their first-order Taylor upper bound
at the current local point. Each resulting subproblem is a restriction of the
original problem, so every iterate is feasible and the objective never drops.

Internally all variables are scaled: times by T_max, energies by the largest
budget, slack SNR-energies by their largest attainable value, and throughput
by W * T_max.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, Scenario, sorted_e_max
from .model import (LN2, TAU_MIN_FRACTION, Allocation, max_common_capacity,
                    per_device_common_feasible, per_device_min_energy)
from .solver import ConvexSubproblem, ProblemBuilder, Status, is_strictly_feasible, solve

DEFAULT_EPS = 1e-4
DEFAULT_N_MAX = 50
SCA_SOLVER_TOL = 1e-9


@dataclass(frozen=True)
class SlackPoint:
    """Local expansion point: tau^I and S_3 (stage-1 analogues for the benchmark)."""

    tau_i: float
    s3: np.ndarray
    tau_c: float | None = None
    s3c: np.ndarray | None = None

    def __post_init__(self):
        if not self.tau_i > 0:
            raise ValueError("expansion point needs tau_i > 0")
        if np.any(np.asarray(self.s3) < 0):
            raise ValueError("expansion point needs S3 >= 0")


@dataclass(frozen=True)
class SlackVars:
    s1: np.ndarray
    s2: np.ndarray
    s3: np.ndarray
    s3c: np.ndarray | None = None


@dataclass(frozen=True)
class TaylorTerms:
    """Value (b), tau-gradient (d) and S3-gradient (q) of tau W log2(1 + S3/tau)."""

    b: np.ndarray
    d: np.ndarray
    q: np.ndarray


def _taylor(tau: float, s3, bandwidth: float) -> TaylorTerms:
    if not tau > 0:
        raise ValueError("Taylor expansion needs tau > 0")
    s3 = np.asarray(s3, float)
    r = s3 / tau
    log_term = np.log1p(r)
    b = tau * bandwidth / LN2 * log_term
    d = bandwidth / LN2 * (log_term - r / (1.0 + r))
    q = bandwidth / (LN2 * (1.0 + r))
    return TaylorTerms(b=b, d=d, q=q)


def taylor_terms(point: SlackPoint, bandwidth: float) -> TaylorTerms:
    return _taylor(point.tau_i, point.s3, bandwidth)


def upper_bound(terms: TaylorTerms, point_tau, point_s3, tau, s3):
    """Linear majorant of tau W log2(1 + S3/tau) around the expansion point."""
    return terms.b + terms.d * (tau - point_tau) + terms.q * (s3 - point_s3)


class ScaStatus(str, enum.Enum):
    CONVERGED = "Converged"
    ITER_LIMIT = "IterLimit"
    INFEASIBLE = "Infeasible"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass
class IterationRecord:
    phi_bits: float
    subproblem_status: Status
    kkt_residual: float
    wall_time_s: float
    newton_steps: int
    carried: bool = False


@dataclass
class ScaTrace:
    records: list[IterationRecord] = field(default_factory=list)
    status: ScaStatus = ScaStatus.ITER_LIMIT
    slacks: SlackVars | None = None
    diagnosis: tuple[str, ...] = ()

    @property
    def phi(self) -> np.ndarray:
        return np.array([r.phi_bits for r in self.records])

    @property
    def iterations(self) -> int:
        return len(self.records)


def default_init(scenario: Scenario, channel: ChannelRealization) -> SlackPoint:
    """Half the latency budget and half of every energy budget for stage 2."""
    e_i = 0.5 * sorted_e_max(scenario, channel)
    x = e_i * channel.gamma
    return SlackPoint(tau_i=0.5 * scenario.t_max_s, s3=_tail_sums(x)[1:-1])


def benchmark_init(scenario: Scenario, channel: ChannelRealization) -> SlackPoint:
    """Expansion point for the per-device common stage.

    Stage 1 is expanded at the minimum-energy SIC allocation for a duration
    halfway between the shortest feasible one and T_max, which makes the first
    subproblem feasible whenever the per-device requirement is.
    """
    base = default_init(scenario, channel)
    t_max = scenario.t_max_s
    e_max = sorted_e_max(scenario, channel)
    lo, hi = 0.0, t_max
    if np.all(per_device_min_energy(scenario, channel, hi) < e_max):
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if np.all(per_device_min_energy(scenario, channel, mid) < e_max):
                hi = mid
            else:
                lo = mid
    tau_c = 0.5 * (hi + t_max)
    e_c = np.minimum(per_device_min_energy(scenario, channel, tau_c), e_max)
    return SlackPoint(tau_i=base.tau_i, s3=base.s3, tau_c=tau_c,
                      s3c=_tail_sums(e_c * channel.gamma)[1:-1])


def _tail_sums(x):
    """Suffix sums: out[n] = sum_{j >= n} x[j], with a trailing 0."""
    return np.concatenate([np.cumsum(x[::-1])[::-1], [0.0]])


@dataclass(frozen=True)
class _Scales:
    t: float
    e: float
    rate: float
    tail: np.ndarray        # sum_{j >= n} E_max_j gamma_j, length N + 1
    common: float           # scale of the scalar S1


def _scales(scenario, channel, common_devices) -> _Scales:
    e_max = sorted_e_max(scenario, channel)
    tail = _tail_sums(e_max * channel.gamma)
    x_common = e_max[common_devices] * channel.gamma[common_devices]
    return _Scales(t=scenario.t_max_s, e=float(e_max.max()),
                   rate=scenario.bandwidth_hz * scenario.t_max_s,
                   tail=tail, common=float(x_common.sum()) if len(x_common) else 1.0)


def build_subproblem(scenario: Scenario, channel: ChannelRealization, point: SlackPoint, *,
                     common_devices=None, common_mode: str = "sum") -> ConvexSubproblem:
    """Concave restriction of the slack problem around ``point``.

    ``common_devices`` restricts which devices may spend energy in stage 1
    (all by default). ``common_mode="per_device"`` asks every device to deliver
    the whole K bits itself (linearized like stage 2); this needs
    ``point.tau_c`` and ``point.s3c``.
    """
    n = channel.n_devices
    gamma = channel.gamma
    e_max = sorted_e_max(scenario, channel)
    w = scenario.bandwidth_hz
    k_bits = scenario.k_common_bits
    if common_devices is None:
        common_devices = np.arange(n)
    common_devices = np.atleast_1d(np.asarray(common_devices, dtype=int))
    sc = _scales(scenario, channel, common_devices)
    tau_lo = TAU_MIN_FRACTION
    skip_common = k_bits == 0
    per_device = common_mode == "per_device"
    if common_mode not in ("sum", "per_device"):
        raise ValueError(f"unknown common_mode {common_mode!r}")
    if per_device and (point.tau_c is None or point.s3c is None):
        raise ValueError("per-device common stage needs a stage-1 expansion point")

    e_frac = e_max / sc.e
    snr_e = sc.e * gamma  # energy-scale SNR contributions
    b = ProblemBuilder()
    b.add_block("phi", 1, scale=sc.rate)
    b.add_block("tau_c", 1, tau_lo, 1.0, scale=sc.t, hint=0.5)
    b.add_block("tau_i", 1, tau_lo, 1.0, scale=sc.t, hint=0.45)
    b.add_block("e_c", n, 0.0, e_frac, scale=sc.e, hint=0.45 * e_frac)
    b.add_block("e_i", n, 0.0, e_frac, scale=sc.e, hint=0.45 * e_frac)
    n_s1 = n if per_device else 1
    s1_scale = sc.tail[:n] if per_device else sc.common
    b.add_block("s1", n_s1, 0.0, 2.0, scale=s1_scale, hint=0.2)
    b.add_block("s2", n, 0.0, 2.0, scale=sc.tail[:n], hint=0.2)
    b.add_block("s3", n - 1, 0.0, 2.0, scale=sc.tail[1:n], hint=0.9)
    if per_device:
        b.add_block("s3c", n - 1, 0.0, 2.0, scale=sc.tail[1:n], hint=0.9)
    i_phi = b.index("phi")
    i_tc = b.index("tau_c")
    i_ti = b.index("tau_i")
    ec = [b.index("e_c", j) for j in range(n)]
    ei = [b.index("e_i", j) for j in range(n)]
    b.maximize({i_phi: 1.0})

    allowed = np.zeros(n, bool)
    allowed[common_devices] = True
    if skip_common:
        b.fix(i_tc, 0.0)
        for j in range(n):
            b.fix(ec[j], 0.0)
        for j in range(n_s1):
            b.fix(b.index("s1", j), 0.0)
    else:
        for j in range(n):
            if not allowed[j]:
                b.fix(ec[j], 0.0)

    k_scaled = k_bits / sc.rate
    if not skip_common and not per_device:
        i_s1 = b.index("s1")
        b.add_perspective(i_tc, i_s1, 1 / LN2, sc.common / sc.t, {}, k_scaled, "common-throughput")
        b.add_linear({i_s1: 1.0, **{ec[j]: -snr_e[j] / sc.common for j in common_devices}},
                     "<=", 0.0, "slack-s1")
    elif not skip_common:
        terms = _taylor(point.tau_c, point.s3c, w)
        for j in range(n):
            i_s1 = b.index("s1", j)
            b.add_linear({i_s1: 1.0, **{ec[k]: -snr_e[k] / sc.tail[j] for k in range(j, n)}},
                         "<=", 0.0, "slack-s1")
            if j == n - 1:
                b.add_perspective(i_tc, i_s1, 1 / LN2, sc.tail[j] / sc.t, {}, k_scaled,
                                  "common-throughput")
                continue
            i_s3c = b.index("s3c", j)
            b.add_linear({i_s3c: -1.0, **{ec[k]: snr_e[k] / sc.tail[j + 1] for k in range(j + 1, n)}},
                         "<=", 0.0, "slack-s3c")
            const = (terms.b[j] - terms.d[j] * point.tau_c - terms.q[j] * point.s3c[j]) / sc.rate
            b.add_perspective(i_tc, i_s1, 1 / LN2, sc.tail[j] / sc.t,
                              {i_tc: terms.d[j] * sc.t / sc.rate,
                               i_s3c: terms.q[j] * sc.tail[j + 1] / sc.rate},
                              k_scaled + const, "linearized-common-throughput")

    terms = _taylor(point.tau_i, point.s3, w)
    for j in range(n):
        i_s2 = b.index("s2", j)
        b.add_linear({i_s2: 1.0, **{ei[k]: -snr_e[k] / sc.tail[j] for k in range(j, n)}},
                     "<=", 0.0, "slack-s2")
        if j == n - 1:
            b.add_perspective(i_ti, i_s2, 1 / LN2, sc.tail[j] / sc.t, {i_phi: 1.0}, 0.0, "min-rate")
            continue
        i_s3 = b.index("s3", j)
        b.add_linear({i_s3: -1.0, **{ei[k]: snr_e[k] / sc.tail[j + 1] for k in range(j + 1, n)}},
                     "<=", 0.0, "slack-s3")
        const = (terms.b[j] - terms.d[j] * point.tau_i - terms.q[j] * point.s3[j]) / sc.rate
        b.add_perspective(i_ti, i_s2, 1 / LN2, sc.tail[j] / sc.t,
                          {i_phi: 1.0, i_ti: terms.d[j] * sc.t / sc.rate,
                           i_s3: terms.q[j] * sc.tail[j + 1] / sc.rate},
                          const, "linearized-min-rate")

    for j in range(n):
        b.add_linear({ec[j]: 1.0, ei[j]: 1.0}, "<=", e_frac[j], "energy")
    b.add_linear({i_tc: 1.0, i_ti: 1.0}, "<=", 1.0, "time")
    problem = b.build()
    hint = _interior_hint(problem, snr_e, sc, e_frac, per_device)
    if hint is not None:
        problem.hint = hint
    return problem


def _interior_hint(problem: ConvexSubproblem, snr_e, sc: _Scales, e_frac, per_device):
    """A strictly feasible point built by hand, or None if the simple recipe fails.

    Stage 1 receives a fraction f of the time and of every budget, stage 2 most
    of the rest; slacks sit just inside their couplings and phi is set below
    the smallest rate row.
    """
    fixed = problem.lower == problem.upper
    n = len(e_frac)
    for f in (0.5, 0.7, 0.85, 0.95, 0.99, 0.3):
        x = np.zeros(problem.n_vars)
        lay = problem.layout
        x[lay["tau_c"]] = f
        x[lay["tau_i"]] = 0.995 - f
        x[lay["e_c"]] = f * e_frac
        x[lay["e_i"]] = (0.995 - f) * e_frac
        if fixed[lay["tau_c"].start]:
            # no common stage: everything goes to stage 2
            x[lay["tau_i"]] = 0.995
            x[lay["e_i"]] = 0.995 * e_frac
        x = np.where(fixed, problem.lower, x)
        xc = x[lay["e_c"]] * snr_e
        xi = x[lay["e_i"]] * snr_e
        tail_c = _tail_sums(xc)
        tail_i = _tail_sums(xi)
        if per_device:
            x[lay["s1"]] = 0.999 * tail_c[:n] / sc.tail[:n]
            x[lay["s3c"]] = 1.001 * tail_c[1:n] / sc.tail[1:n] + 1e-9
        else:
            x[lay["s1"]] = 0.999 * tail_c[0] / sc.common
        x[lay["s2"]] = 0.999 * tail_i[:n] / sc.tail[:n]
        x[lay["s3"]] = 1.001 * tail_i[1:n] / sc.tail[1:n] + 1e-9
        x = np.where(fixed, problem.lower, x)
        x[lay["phi"]] = best_phi_at(problem, x) - 1.0
        if is_strictly_feasible(problem, x):
            return x
    return None


def allocation_from(problem: ConvexSubproblem, x) -> Allocation:
    phys = np.asarray(x, float) * problem.scale
    return Allocation(tau_c=float(problem.block(phys, "tau_c")[0]),
                      tau_i=float(problem.block(phys, "tau_i")[0]),
                      e_c=problem.block(phys, "e_c").copy(),
                      e_i=problem.block(phys, "e_i").copy())


def tight_slacks(allocation: Allocation, gamma, per_device: bool = False) -> SlackVars:
    """Slack values with every coupling met with equality."""
    xc = np.asarray(allocation.e_c) * gamma
    xi = np.asarray(allocation.e_i) * gamma
    tail_c = _tail_sums(xc)
    tail_i = _tail_sums(xi)
    return SlackVars(s1=tail_c[:-1] if per_device else np.array([tail_c[0]]),
                     s2=tail_i[:-1], s3=tail_i[1:-1],
                     s3c=tail_c[1:-1] if per_device else None)


def best_phi_at(problem: ConvexSubproblem, x) -> float:
    """Largest phi keeping every other coordinate of ``x`` feasible."""
    i_phi = problem.layout["phi"].start
    x0 = np.array(x, float)
    x0[i_phi] = 0.0
    coef = problem.p_a[:, i_phi]
    rows = coef != 0
    room = problem.perspective_values(x0) - (problem.p_a @ x0 + problem.p_b)
    return float(np.min(room[rows] / coef[rows]))


def sca_solve(scenario: Scenario, channel: ChannelRealization, init: SlackPoint | None = None,
              eps: float = DEFAULT_EPS, n_max: int = DEFAULT_N_MAX, *, common_devices=None,
              common_mode: str = "sum", tol: float = SCA_SOLVER_TOL):
    """Iterate concave restrictions until the relative gain drops below ``eps``.

    Returns ``(allocation, trace)``; the allocation is ``None`` when stage 1
    cannot carry K bits at all.
    """
    trace = ScaTrace()
    per_device = common_mode == "per_device"
    n = channel.n_devices
    devices = np.arange(n) if common_devices is None else np.atleast_1d(common_devices)
    if scenario.k_common_bits > 0 and not _common_feasible(scenario, channel, devices, per_device):
        trace.status = ScaStatus.INFEASIBLE
        trace.diagnosis = ("common-throughput",)
        return None, trace

    if init is None:
        init = benchmark_init(scenario, channel) if per_device else default_init(scenario, channel)
    point = init
    x_prev = None
    problem = None
    for m in range(n_max):
        start = time.perf_counter()
        problem = build_subproblem(scenario, channel, point, common_devices=common_devices,
                                   common_mode=common_mode)
        out = solve(problem, tol=tol)
        carried = False
        if not out.ok:
            if out.status is Status.INFEASIBLE and m == 0:
                trace.status = ScaStatus.INFEASIBLE
                trace.diagnosis = out.diagnosis
                return None, trace
            trace.status = ScaStatus.ITER_LIMIT if x_prev is not None else ScaStatus.NUMERICAL_FAILURE
            trace.diagnosis = (out.status.value,) + out.diagnosis
            break
        x = out.x
        phi = out.objective
        if x_prev is not None:
            # the previous iterate stays feasible here (exact expansion at its own point)
            phi_carry = best_phi_at(problem, x_prev)
            if phi_carry > phi:
                x = x_prev.copy()
                x[problem.layout["phi"]] = phi_carry
                phi = phi_carry
                carried = True
        trace.records.append(IterationRecord(
            phi_bits=phi * problem.scale[problem.layout["phi"].start],
            subproblem_status=out.status, kkt_residual=out.kkt_residual,
            wall_time_s=time.perf_counter() - start,
            newton_steps=out.newton_steps + out.phase1_steps, carried=carried))
        x_prev = x
        phys = x * problem.scale
        point = SlackPoint(
            tau_i=float(problem.block(phys, "tau_i")[0]),
            s3=problem.block(phys, "s3").copy(),
            tau_c=float(problem.block(phys, "tau_c")[0]) if per_device else None,
            s3c=problem.block(phys, "s3c").copy() if per_device else None)
        if m > 0:
            phi_now, phi_before = trace.records[-1].phi_bits, trace.records[-2].phi_bits
            if (phi_now - phi_before) / max(1.0, phi_before) <= eps:
                trace.status = ScaStatus.CONVERGED
                break
    else:
        trace.status = ScaStatus.ITER_LIMIT

    if x_prev is None:
        return None, trace
    allocation = allocation_from(problem, x_prev)
    trace.slacks = tight_slacks(allocation, channel.gamma, per_device)
    return allocation, trace


def _common_feasible(scenario, channel, devices, per_device) -> bool:
    if per_device:
        return per_device_common_feasible(scenario, channel,
                                          scenario.t_max_s * (1 - TAU_MIN_FRACTION))
    if len(devices) == channel.n_devices:
        cap = max_common_capacity(scenario, channel)
    else:
        e_max = sorted_e_max(scenario, channel)
        cap = scenario.bandwidth_hz / LN2 * scenario.t_max_s * math.log1p(
            float(np.dot(e_max[devices], channel.gamma[devices])) / scenario.t_max_s)
    return cap > scenario.k_common_bits
