"""Fairness, per-stage offloaded bits and stage energy/time ratios."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Allocation, common_rates, individual_rates


@dataclass(frozen=True)
class Fairness:
    value: float
    all_zero: bool  # vacuous case, reported as 1


def jain_index(x) -> Fairness:
    """(sum x)^2 / (N sum x^2) for a nonnegative vector; an all-zero vector gives 1."""
    x = np.asarray(x, float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("need a nonempty 1-D vector")
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise ValueError("fairness input must be finite and nonnegative")
    sq = float(np.dot(x, x))
    if sq == 0.0:
        return Fairness(1.0, True)
    # scale first so huge bit counts cannot overflow the squares
    y = x / x.max()
    return Fairness(float(y.sum() ** 2 / (len(y) * np.dot(y, y))), False)


def stage_bits(allocation: Allocation, gamma, bandwidth) -> tuple[np.ndarray, np.ndarray]:
    """Per-device bits delivered in the common and the individual stage."""
    n = len(gamma)
    if allocation.tau_c > 0:
        common = common_rates(allocation.tau_c, allocation.e_c, gamma, bandwidth)
    else:
        common = np.zeros(n)
    return common, individual_rates(allocation, gamma, bandwidth)


@dataclass(frozen=True)
class StageRatios:
    energy: np.ndarray       # E_n^C / E_n^I, inf where E_n^I = 0 < E_n^C
    time: float              # tau^C / tau^I
    energy_infinite: np.ndarray
    time_infinite: bool


def _ratio(num, den):
    num = np.asarray(num, float)
    den = np.asarray(den, float)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den > 0)
    inf = (den <= 0) & (num > 0)
    out[inf] = np.inf
    return out, inf


def stage_ratios(allocation: Allocation) -> StageRatios:
    """Energy and time split between the stages; 0/0 counts as 0, x/0 as a flagged inf."""
    energy, e_inf = _ratio(allocation.e_c, allocation.e_i)
    t, t_inf = _ratio(allocation.tau_c, allocation.tau_i)
    return StageRatios(energy=energy, time=float(t), energy_infinite=e_inf, time_infinite=bool(t_inf))
