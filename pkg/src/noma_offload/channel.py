"""Network geometry, Rayleigh block fading and SIC decode ordering."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class Scenario:
    """Static experiment parameters, all in SI units except the noise PSD (dBm/Hz)."""

    n_devices: int = 4
    bandwidth_hz: float = 1e6
    noise_psd_dbm_hz: float = -174.0
    pathloss_exp: float = 3.0
    t_max_s: float = 1.0
    k_common_bits: float = 6e6
    e_max_j: tuple[float, ...] | float = 0.2
    cell_radius_m: float = 200.0
    min_dist_m: float = 1.0

    def __post_init__(self):
        # a scalar budget applies to every device
        e_max = tuple(float(e) for e in np.atleast_1d(self.e_max_j))
        if len(e_max) == 1:
            e_max = e_max * int(self.n_devices)
        object.__setattr__(self, "e_max_j", e_max)
        self.validate()

    def validate(self) -> None:
        if int(self.n_devices) != self.n_devices or self.n_devices < 1:
            raise ValueError(f"n_devices must be an integer >= 1, got {self.n_devices}")
        if len(self.e_max_j) != self.n_devices:
            raise ValueError(
                f"e_max_j has {len(self.e_max_j)} entries for {self.n_devices} devices")
        if not self.bandwidth_hz > 0:
            raise ValueError("bandwidth_hz must be positive")
        if not self.t_max_s > 0:
            raise ValueError("t_max_s must be positive")
        if not self.k_common_bits >= 0:
            raise ValueError("k_common_bits must be nonnegative")
        if not all(e > 0 for e in self.e_max_j):
            raise ValueError("every e_max_j entry must be positive")
        if not 0 < self.min_dist_m < self.cell_radius_m:
            raise ValueError("need 0 < min_dist_m < cell_radius_m")

    @property
    def e_max(self) -> np.ndarray:
        return np.asarray(self.e_max_j, dtype=float)

    def with_(self, **changes) -> "Scenario":
        if "n_devices" in changes and "e_max_j" not in changes:
            # keep per-device budgets, padding with the last one
            n = changes["n_devices"]
            e = self.e_max_j
            changes["e_max_j"] = e[:n] + (e[-1],) * max(0, n - len(e))
        return replace(self, **changes)


def reference_scenario(n_devices: int = 4, k_common_bits: float = 6e6, e_max_j=0.2) -> Scenario:
    """The simulation setting of the reference experiments (W = 1 MHz, T = 1 s, ...)."""
    return Scenario(n_devices=n_devices, k_common_bits=k_common_bits, e_max_j=e_max_j)


@dataclass(frozen=True)
class ChannelRealization:
    """Channel gains of one fading block.

    ``gamma`` is sorted in SIC decode order (descending); ``order[k]`` is the
    original device id of the k-th decoded device.
    """

    gains: np.ndarray
    gamma: np.ndarray
    order: np.ndarray
    sigma2_w: float

    @property
    def n_devices(self) -> int:
        return len(self.gamma)

    def sorted_gains(self) -> np.ndarray:
        return self.gains[self.order]


def noise_power(scenario: Scenario) -> float:
    """Thermal noise power N0 * W in watts."""
    return 10.0 ** ((scenario.noise_psd_dbm_hz - 30.0) / 10.0) * scenario.bandwidth_hz


def channel_from_gains(gains, sigma2_w: float) -> ChannelRealization:
    gains = np.asarray(gains, dtype=float)
    if gains.ndim != 1 or gains.size == 0:
        raise ValueError("need at least one device")
    if not np.all(np.isfinite(gains)) or np.any(gains <= 0):
        raise ValueError("channel gains must be positive and finite")
    # stable sort on -gain keeps the lower device id first on ties
    order = np.argsort(-gains, kind="stable")
    gamma = gains[order] / sigma2_w
    return ChannelRealization(gains=gains, gamma=gamma, order=order, sigma2_w=float(sigma2_w))


def _generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_distances(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Uniform-by-area placement on the annulus [min_dist_m, cell_radius_m]."""
    r0, r1 = scenario.min_dist_m, scenario.cell_radius_m
    return np.sqrt(rng.uniform(r0 * r0, r1 * r1, size=scenario.n_devices))


def sample_channel(scenario: Scenario, seed=None) -> ChannelRealization:
    """Draw device positions and Rayleigh fading, return decode-ordered gains.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``; the same
    int/SeedSequence always reproduces the same realization.
    """
    if scenario.n_devices < 1:
        raise ValueError("n_devices must be >= 1")
    rng = _generator(seed)
    d = sample_distances(scenario, rng)
    # |g|^2 of a CN(0, 1) coefficient is unit-mean exponential
    fading = rng.exponential(1.0, size=scenario.n_devices)
    gains = fading * d ** (-scenario.pathloss_exp)
    return channel_from_gains(gains, noise_power(scenario))


def sorted_e_max(scenario: Scenario, channel: ChannelRealization) -> np.ndarray:
    """Energy budgets rearranged into decode order."""
    return scenario.e_max[channel.order]
