"""Seeded Monte-Carlo sweeps, aggregation, CSV output and the grid oracle."""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import SCHEMES, SchemeResult, solve_scheme
from .channel import ChannelRealization, Scenario, sample_channel, sorted_e_max
from .metrics import jain_index, stage_ratios
from .model import (LN2, Allocation, check_feasibility, max_common_capacity,
                    objective_min_individual)
from .sca import sca_solve

AXES = ("k", "n", "e3")
CSV_HEADER = ("sweep", "scheme", "metric", "mean", "stderr", "n_ok", "n_fail")


@dataclass(frozen=True)
class ExperimentConfig:
    """One sweep.

    ``axis`` is ``"k"`` (common bits), ``"n"`` (device count) or ``"e3"``
    (budget of the device with decode rank ``device_rank``, 0-based, i.e. the
    3rd-strongest channel by default). With ``paired=True`` every sweep value
    reuses the same channel draws (common random numbers); otherwise each
    (sweep, trial) pair gets its own child seed.
    """

    scenario: Scenario
    axis: str
    values: tuple[float, ...]
    schemes: tuple[str, ...] = SCHEMES
    n_trials: int = 100
    master_seed: int = 0
    paired: bool = False
    device_rank: int = 2
    threads: int = 1

    def __post_init__(self):
        if self.axis not in AXES:
            raise ValueError(f"axis must be one of {AXES}, got {self.axis!r}")
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not self.values:
            raise ValueError("need at least one sweep value")
        for s in self.schemes:
            if s not in SCHEMES:
                raise ValueError(f"unknown scheme {s!r}")
        for v in self.values:
            self.scenario_at(v)


    def scenario_at(self, value) -> Scenario:
        if self.axis == "k":
            return self.scenario.with_(k_common_bits=float(value))
        if self.axis == "n":
            if int(value) != value:
                raise ValueError(f"device count must be an integer, got {value}")
            return self.scenario.with_(n_devices=int(value))
        if not value > 0:
            raise ValueError("energy budgets must be positive")
        if not 0 <= self.device_rank < self.scenario.n_devices:
            raise ValueError("device_rank outside the device range")
        return self.scenario


@dataclass(frozen=True)
class AggregateRow:
    sweep: float
    scheme: str
    metric: str
    mean: float
    stderr: float
    n_ok: int
    n_fail: int


@dataclass
class TrialRecord:
    sweep_index: int
    trial: int
    scheme: str
    status: str
    objective: float
    feasible: bool
    failed: bool
    fairness: float = math.nan
    time_ratio: float = math.nan
    energy_ratio: float = math.nan
    energy_ratio_total: float = math.nan
    energy_ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    shares: np.ndarray = field(default_factory=lambda: np.zeros(0))


def child_seed(master: int, sweep_index: int, trial: int, paired: bool = False) -> np.random.SeedSequence:
    key = (trial,) if paired else (sweep_index, trial)
    return np.random.SeedSequence(entropy=master, spawn_key=key)


def trial_instance(config: ExperimentConfig, sweep_index: int, trial: int):
    """Scenario and channel of one work item."""
    value = config.values[sweep_index]
    scenario = config.scenario_at(value)
    seed = child_seed(config.master_seed, sweep_index, trial, config.paired)
    channel = sample_channel(scenario, seed)
    if config.axis == "e3":
        # the swept budget belongs to whoever sits at the given decode rank
        e = scenario.e_max.copy()
        e[channel.order[config.device_rank]] = float(value)
        scenario = scenario.with_(e_max_j=tuple(e))
    return scenario, channel


def _record(sweep_index, trial, res: SchemeResult) -> TrialRecord:
    rec = TrialRecord(sweep_index, trial, res.scheme, res.status, res.objective,
                      res.feasible, res.failed)
    if res.feasible:
        alloc = res.allocation
        rec.fairness = jain_index(res.common_bits).value
        ratios = stage_ratios(alloc)
        rec.time_ratio = ratios.time if not ratios.time_infinite else math.inf
        # per-device ratios in decode order; their device average is the headline
        # number, the pooled ratio is kept since it is far less heavy-tailed
        rec.energy_ratios = ratios.energy
        rec.energy_ratio = float(np.mean(ratios.energy))
        e_i = float(np.sum(alloc.e_i))
        rec.energy_ratio_total = float(np.sum(alloc.e_c)) / e_i if e_i > 0 else math.inf
        total = float(np.sum(res.common_bits))
        rec.shares = res.common_bits / total if total > 0 else np.zeros_like(res.common_bits)
    return rec


def _run_item(args) -> list[TrialRecord]:
    config, sweep_index, trial = args
    scenario, channel = trial_instance(config, sweep_index, trial)
    out = []
    for scheme in config.schemes:
        try:
            res = solve_scheme(scheme, scenario, channel)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            out.append(TrialRecord(sweep_index, trial, scheme, "NumericalFailure", 0.0, False, True))
            continue
        out.append(_record(sweep_index, trial, res))
    return out


def run_trials(config: ExperimentConfig) -> list[TrialRecord]:
    """All (sweep, trial, scheme) records, ordered by key regardless of completion order."""
    items = [(config, i, t) for i in range(len(config.values)) for t in range(config.n_trials)]
    if config.threads <= 1:
        chunks = [_run_item(it) for it in items]
    else:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            chunks = list(pool.map(_run_item, items, chunksize=max(1, len(items) // (8 * config.threads))))
    records = [r for chunk in chunks for r in chunk]
    order = {s: j for j, s in enumerate(config.schemes)}
    records.sort(key=lambda r: (r.sweep_index, order[r.scheme], r.trial))
    return records


def _mean_stderr(x):
    x = np.asarray(x, float)
    if x.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(x))
    stderr = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else 0.0
    return mean, stderr


def aggregate(config: ExperimentConfig, records: list[TrialRecord]) -> list[AggregateRow]:
    """Means over non-failed trials.

    ``objective`` and ``infeasible`` count infeasible trials (objective 0);
    fairness, ratios and stage-1 shares use feasible trials only, and a ratio
    with a zero denominator (flagged infinite) is left out of its mean.
    Per-rank metrics end in ``_<decode rank>`` (1 = strongest channel).
    """
    rows = []
    for i, value in enumerate(config.values):
        for scheme in config.schemes:
            recs = sorted((r for r in records if r.sweep_index == i and r.scheme == scheme),
                          key=lambda r: r.trial)
            n_fail = sum(r.failed for r in recs)
            done = [r for r in recs if not r.failed]
            feas = [r for r in done if r.feasible]
            metrics = {
                "objective": [r.objective for r in done],
                "infeasible": [0.0 if r.feasible else 1.0 for r in done],
                "fairness": [r.fairness for r in feas],
                "time_ratio": [r.time_ratio for r in feas if math.isfinite(r.time_ratio)],
                "energy_ratio": [r.energy_ratio for r in feas if math.isfinite(r.energy_ratio)],
                "energy_ratio_total": [r.energy_ratio_total for r in feas
                                       if math.isfinite(r.energy_ratio_total)],
            }
            n_dev = max((len(r.shares) for r in feas), default=0)
            for k in range(n_dev):
                metrics[f"energy_ratio_{k + 1}"] = [r.energy_ratios[k] for r in feas
                                                    if len(r.energy_ratios) > k
                                                    and math.isfinite(r.energy_ratios[k])]
            for k in range(n_dev):
                metrics[f"common_share_{k + 1}"] = [r.shares[k] for r in feas if len(r.shares) > k]
            for name, vals in metrics.items():
                mean, se = _mean_stderr(vals)
                rows.append(AggregateRow(float(value), scheme, name, mean, se, len(vals), n_fail))
    return rows


def run_monte_carlo(config: ExperimentConfig) -> list[AggregateRow]:
    return aggregate(config, run_trials(config))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else repr(v))
    return str(v)


def write_aggregate_csv(rows: list[AggregateRow], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([_fmt(r.sweep), r.scheme, r.metric, _fmt(r.mean), _fmt(r.stderr), r.n_ok, r.n_fail])


def lookup(rows: list[AggregateRow], scheme: str, metric: str) -> list[AggregateRow]:
    """Rows of one scheme and metric, in sweep order."""
    return [r for r in rows if r.scheme == scheme and r.metric == metric]


# ---------------------------------------------------------------- grid oracle

@dataclass(frozen=True)
class OracleResult:
    objective: float
    allocation: Allocation | None


def _bits(tau, x, w):
    """Vectorized tau W log2(1 + x / tau)."""
    return w / LN2 * tau * np.log1p(x / tau)


def _needed_snr_energy(tau_c, k_bits, w):
    # smallest sum_n E_n^C gamma_n meeting K within tau_c
    return tau_c * np.expm1(k_bits / (tau_c * w) * LN2)


def _refine_box(center, lo, hi, half):
    return max(lo, center - half), min(hi, center + half)


def grid_oracle(scenario: Scenario, channel: ChannelRealization, resolution: int = 64,
                refine_rounds: int = 3, return_allocation: bool = False):
    """Exhaustive search of the max-min objective for N <= 2.

    The search runs over tau^C (tau^I = T - tau^C), the device-1 share of the
    common-stage energy and E_2^I. Two coordinates are fixed by exact
    monotonicity: the common stage gets exactly the SNR-energy it needs
    (spending more only shrinks stage 2), and device 1 puts all of its
    remaining energy into stage 2 (its rate grows with it, device 2's does not
    depend on it). Each refinement round halves the cell size around the
    incumbent.
    """
    n = channel.n_devices
    if n > 2:
        raise ValueError("grid oracle supports at most 2 devices")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    res = _grid_search(scenario, channel, resolution, refine_rounds)
    return res if return_allocation else res.objective


def _grid_search(scenario, channel, resolution, refine_rounds) -> OracleResult:
    n = channel.n_devices
    t_max = scenario.t_max_s
    w = scenario.bandwidth_hz
    k = scenario.k_common_bits
    gamma = channel.gamma
    e_max = sorted_e_max(scenario, channel)
    if k > 0 and max_common_capacity(scenario, channel) <= k:
        return OracleResult(0.0, None)

    def evaluate(tc, u, v):
        """Objective on broadcast grids; tc: common time, u: device-1 share, v: E_2^I fraction."""
        ti = t_max - tc
        if k > 0:
            need = _needed_snr_energy(tc, k, w)
            if n == 1:
                e1c = need / gamma[0] + 0 * u
                e2c = 0.0
            else:
                lo = np.maximum(0.0, (need - e_max[1] * gamma[1]) / gamma[0])
                hi = np.minimum(e_max[0], need / gamma[0])
                e1c = lo + u * (hi - lo)
                e2c = (need - e1c * gamma[0]) / gamma[1]
                ok = hi >= lo
        else:
            e1c = 0.0 * tc + 0 * u
            e2c = 0.0
        b1 = e_max[0] - e1c
        if n == 1:
            valid = b1 >= 0
            val = _bits(ti, np.maximum(b1, 0) * gamma[0], w)
            return np.where(valid & (ti > 0), val, -np.inf) + 0 * v, (e1c, e2c)
        b2 = e_max[1] - e2c
        valid = (b1 >= 0) & (b2 >= 0) & (ti > 0)
        if k > 0:
            valid &= ok
        x1 = np.maximum(b1, 0) * gamma[0]
        x2 = v * np.maximum(b2, 0) * gamma[1]
        r1 = _bits(ti, x1 * ti / (ti + x2), w)  # tau log(1 + x1 / (tau + x2))
        r2 = _bits(ti, x2, w)
        return np.where(valid, np.minimum(r1, r2), -np.inf), (e1c, e2c)

    if k == 0:
        tc_box = (0.0, 0.0)
    else:
        tc_box = (t_max * 1e-6, t_max * (1 - 1e-9))
    boxes = [tc_box, (0.0, 1.0), (0.0, 1.0)]
    best = None
    for rnd in range(refine_rounds + 1):
        axes = [np.linspace(lo, hi, resolution) if hi > lo else np.array([lo]) for lo, hi in boxes]
        if n == 1:
            axes[1] = np.array([0.0])
            axes[2] = np.array([1.0])
        tc, u, v = np.meshgrid(*axes, indexing="ij")
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            val, _ = evaluate(tc, u, v)
        idx = np.unravel_index(int(np.argmax(val)), val.shape)
        if not np.isfinite(val[idx]):
            break
        point = tuple(float(a[i]) for a, i in zip(axes, idx))
        if best is None or val[idx] > best[0]:
            best = (float(val[idx]), point)
        # next round: same point count over a box half as fine
        boxes = []
        for (lo, hi), a, c in zip(([tc_box, (0.0, 1.0), (0.0, 1.0)]), axes, best[1]):
            cell = (a[-1] - a[0]) / max(len(a) - 1, 1)
            half = 0.5 * cell * (resolution - 1) / 2
            boxes.append(_refine_box(c, lo, hi, half) if len(a) > 1 else (c, c))
    if best is None:
        return OracleResult(0.0, None)

    tc, u, v = best[1]
    _, (e1c, e2c) = evaluate(np.array(tc), np.array(u), np.array(v))
    e1c = float(e1c)
    e2c = float(e2c)
    if n == 1:
        alloc = Allocation(tau_c=tc, tau_i=t_max - tc, e_c=np.array([e1c]),
                           e_i=np.array([e_max[0] - e1c]))
    else:
        alloc = Allocation(tau_c=tc, tau_i=t_max - tc, e_c=np.array([e1c, e2c]),
                           e_i=np.array([e_max[0] - e1c, v * (e_max[1] - e2c)]))
    # report the model's own evaluation of the incumbent, not the grid value
    report = check_feasibility(alloc, scenario, channel, tol=1e-9)
    if not report.feasible:
        raise RuntimeError(f"grid oracle incumbent infeasible: {report}")
    return OracleResult(objective_min_individual(alloc, gamma, w), alloc)


# -------------------------------------------------------- convergence study

@dataclass
class ConvergenceTable:
    phi_bits: list[float]
    status: str
    oracle_bits: float | None
    iterations: int


def convergence_experiment(scenario: Scenario, channel: ChannelRealization,
                           oracle_resolution: int = 64) -> ConvergenceTable:
    """Per-iteration SCA objective, plus the grid-oracle value when N <= 2."""
    _, trace = sca_solve(scenario, channel)
    oracle = None
    if channel.n_devices <= 2:
        oracle = float(grid_oracle(scenario, channel, resolution=oracle_resolution))
    return ConvergenceTable(phi_bits=[float(p) for p in trace.phi], status=trace.status.value,
                            oracle_bits=oracle, iterations=trace.iterations)


def default_threads() -> int:
    env = os.environ.get("NOMA_OFFLOAD_THREADS")
    return int(env) if env else 1
