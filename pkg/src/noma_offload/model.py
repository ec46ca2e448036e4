"""Rate expressions, constraint residuals and the max-min objective.

All vectors are in SIC decode order (strongest channel first), matching
``ChannelRealization.gamma``. Device indices are 0-based.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import ChannelRealization, Scenario, sorted_e_max

LN2 = np.log(2.0)

# strict time positivity is enforced through this floor inside the optimizer
TAU_MIN_FRACTION = 1e-9


@dataclass(frozen=True)
class Allocation:
    """Decision variables in energy form.

    ``t_sub`` holds per-device exclusive sub-slots when the individual stage
    is orthogonal (OMA); it is ``None`` for NOMA allocations.
    """

    tau_c: float
    tau_i: float
    e_c: np.ndarray
    e_i: np.ndarray
    t_sub: np.ndarray | None = None

    @property
    def p_c(self) -> np.ndarray:
        return _power(self.e_c, self.tau_c)

    @property
    def p_i(self) -> np.ndarray:
        if self.t_sub is not None:
            return _power(self.e_i, self.t_sub)
        return _power(self.e_i, self.tau_i)


def _power(energy, duration):
    energy = np.asarray(energy, float)
    duration = np.broadcast_to(np.asarray(duration, float), energy.shape)
    out = np.zeros_like(energy)
    np.divide(energy, duration, out=out, where=duration > 0)
    return out


def perspective_bits(tau, snr_energy, bandwidth):
    """tau * W * log2(1 + x / tau) with the tau -> 0 limit taken as 0.

    ``snr_energy`` is the energy-normalized SNR term x = E * gamma.
    """
    tau = np.asarray(tau, float)
    x = np.asarray(snr_energy, float)
    if np.any(tau < 0) or np.any(x < 0):
        raise ValueError("durations and energies must be nonnegative")
    if np.any((tau == 0) & (x > 0)):
        raise ValueError("positive energy in a zero-length stage")
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(tau > 0, tau * np.log1p(x / np.where(tau > 0, tau, 1.0)), 0.0)
    return bandwidth / LN2 * val


def _stage_rates(tau, energy, gamma, bandwidth):
    energy = np.asarray(energy, float)
    gamma = np.asarray(gamma, float)
    x = energy * gamma
    if tau < 0 or np.any(x < 0):
        raise ValueError("durations and energies must be nonnegative")
    if tau == 0:
        if np.any(x > 0):
            raise ValueError("positive energy in a zero-length stage")
        return np.zeros_like(x)
    # interference seen by device n: everything decoded after it
    interference = np.concatenate([np.cumsum(x[::-1])[::-1][1:], [0.0]])
    return bandwidth / LN2 * tau * np.log1p(x / (tau + interference))


def common_rates(tau_c, e_c, gamma, bandwidth) -> np.ndarray:
    """Per-device stage-1 bits under SIC decoding."""
    return _stage_rates(tau_c, e_c, gamma, bandwidth)


def common_rate(n, tau_c, e_c, gamma, bandwidth) -> float:
    return float(common_rates(tau_c, e_c, gamma, bandwidth)[n])


def common_sum_rate(tau_c, e_c, gamma, bandwidth) -> float:
    """tau W log2(1 + sum_n E_n gamma_n / tau); equals the sum of per-device rates."""
    x = float(np.dot(np.asarray(e_c, float), np.asarray(gamma, float)))
    return float(perspective_bits(tau_c, x, bandwidth))


def individual_rates_noma(tau_i, e_i, gamma, bandwidth) -> np.ndarray:
    return _stage_rates(tau_i, e_i, gamma, bandwidth)


def individual_rate(n, tau_i, e_i, gamma, bandwidth) -> float:
    return float(individual_rates_noma(tau_i, e_i, gamma, bandwidth)[n])


def individual_rates(allocation: Allocation, gamma, bandwidth) -> np.ndarray:
    """Stage-2 bits per device; orthogonal sub-slots are honoured when present."""
    if allocation.t_sub is not None:
        x = np.asarray(allocation.e_i, float) * np.asarray(gamma, float)
        return perspective_bits(allocation.t_sub, x, bandwidth)
    return individual_rates_noma(allocation.tau_i, allocation.e_i, gamma, bandwidth)


def objective_min_individual(allocation: Allocation, gamma, bandwidth) -> float:
    return float(np.min(individual_rates(allocation, gamma, bandwidth)))


@dataclass(frozen=True)
class FeasibilityReport:
    """Constraint residuals; positive entries are violations.

    Residuals are in physical units (J, s, bits). The verdict compares the
    worst violation, normalized by E_max, T_max and max(K, 1 bit), with ``tol``.
    """

    energy: np.ndarray
    time: float
    common: np.ndarray
    nonnegativity: float
    worst_violation: float
    feasible: bool
    tol: float


def check_feasibility(allocation: Allocation, scenario: Scenario, channel: ChannelRealization,
                      tol: float = 1e-6, common_mode: str = "sum") -> FeasibilityReport:
    """Evaluate the energy, latency and common-data constraints.

    ``common_mode="per_device"`` requires every device to deliver K bits on its
    own in stage 1 (the redundant-offloading benchmark).
    """
    e_max = sorted_e_max(scenario, channel)
    w = scenario.bandwidth_hz
    e_c = np.asarray(allocation.e_c, float)
    e_i = np.asarray(allocation.e_i, float)
    energy = e_c + e_i - e_max
    time = allocation.tau_c + allocation.tau_i - scenario.t_max_s
    neg = [-allocation.tau_c, -allocation.tau_i, *(-e_c), *(-e_i)]
    if allocation.t_sub is not None:
        t_sub = np.asarray(allocation.t_sub, float)
        time = max(time, float(t_sub.sum()) - allocation.tau_i)
        neg.extend(-t_sub)
    nonneg = max(0.0, float(np.max(neg)))

    k = scenario.k_common_bits
    if common_mode not in ("sum", "per_device"):
        raise ValueError(f"unknown common_mode {common_mode!r}")
    try:
        if common_mode == "sum":
            common = np.array([k - common_sum_rate(allocation.tau_c, e_c, channel.gamma, w)])
        else:
            common = k - common_rates(allocation.tau_c, e_c, channel.gamma, w)
    except ValueError:
        # energy spent in a zero-length or negative stage delivers nothing usable
        common = np.array([np.inf])

    worst = max(
        float(np.max(energy / e_max)),
        time / scenario.t_max_s,
        float(np.max(common)) / max(k, 1.0),
        nonneg,
        0.0,
    )
    return FeasibilityReport(energy=energy, time=float(time), common=common,
                             nonnegativity=nonneg, worst_violation=worst,
                             feasible=bool(worst <= tol), tol=tol)


def max_common_capacity(scenario: Scenario, channel: ChannelRealization) -> float:
    """Stage-1 throughput when all time and all energy go to stage 1."""
    e_max = sorted_e_max(scenario, channel)
    return common_sum_rate(scenario.t_max_s, e_max, channel.gamma, scenario.bandwidth_hz)


def single_device_capacity(scenario: Scenario, channel: ChannelRealization) -> np.ndarray:
    """Stage-1 throughput of each device alone with all time and its whole budget."""
    e_max = sorted_e_max(scenario, channel)
    return perspective_bits(scenario.t_max_s, e_max * channel.gamma, scenario.bandwidth_hz)


def per_device_common_feasible(scenario: Scenario, channel: ChannelRealization,
                               tau_c: float | None = None) -> bool:
    """Whether every device can deliver K bits itself within ``tau_c`` under SIC.

    Uses the minimal-energy SIC solution: with target SINR theta, device n needs
    E_n gamma_n / tau >= theta (1 + theta)^(N-1-n).
    """
    tau = scenario.t_max_s if tau_c is None else tau_c
    e_need = per_device_min_energy(scenario, channel, tau)
    return bool(np.all(e_need < sorted_e_max(scenario, channel)))


def per_device_min_energy(scenario: Scenario, channel: ChannelRealization, tau: float) -> np.ndarray:
    n = channel.n_devices
    theta = np.expm1(scenario.k_common_bits / (tau * scenario.bandwidth_hz) * LN2)
    with np.errstate(over="ignore"):
        snr = theta * (1.0 + theta) ** np.arange(n - 1, -1, -1)
    return tau * snr / channel.gamma
