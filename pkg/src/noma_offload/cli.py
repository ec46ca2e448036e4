"""Command-line entry point: ``noma-offload {solve,sweep,convergence}``.

Configs are flat ``key = value`` text files (``#`` starts a comment); every
number is in SI units except ``noise_psd_dbm_hz``. ``--set key=value``
overrides single keys.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import fields
from importlib import metadata
from pathlib import Path

from .baselines import SCHEMES, solve_scheme
from .channel import Scenario, sample_channel
from .harness import (AXES, ExperimentConfig, convergence_experiment, default_threads,
                      run_monte_carlo, write_aggregate_csv)
from .metrics import jain_index, stage_ratios

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

SCENARIO_KEYS = {f.name for f in fields(Scenario)}
RUN_KEYS = {"seed", "n_trials", "schemes", "paired", "device_rank"}
DEFAULTS = {"seed": "0", "n_trials": "100", "schemes": "proposed", "paired": "false",
            "device_rank": "2"}


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, origin: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        _check_key(key)
        out[key] = value
    return out


def _check_key(key):
    if key not in SCENARIO_KEYS and key not in RUN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")


def _as_float(key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"config key {key!r}: expected a number, got {value!r}") from None


def _as_int(key, value):
    f = _as_float(key, value)
    if f != int(f):
        raise ConfigError(f"config key {key!r}: expected an integer, got {value!r}")
    return int(f)


def _as_bool(key, value):
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: expected true/false, got {value!r}")


def scenario_from(cfg: dict[str, str]) -> Scenario:
    kw = {}
    for key, value in cfg.items():
        if key not in SCENARIO_KEYS:
            continue
        if key == "n_devices":
            kw[key] = _as_int(key, value)
        elif key == "e_max_j":
            kw[key] = tuple(_as_float(key, v) for v in value.split(","))
        else:
            kw[key] = _as_float(key, value)
    try:
        return Scenario(**kw)
    except ValueError as exc:
        raise ConfigError(f"invalid scenario: {exc}") from None


def _schemes(value: str) -> tuple[str, ...]:
    names = tuple(s.strip() for s in value.split(",") if s.strip())
    for s in names:
        if s not in SCHEMES:
            raise ConfigError(f"unknown scheme {s!r}; choose from {', '.join(SCHEMES)}")
    if not names:
        raise ConfigError("empty scheme list")
    return names


def parse_values(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (stop included) or a comma list."""
    if ":" in text:
        try:
            start, stop, step = (float(p) for p in text.split(":"))
        except ValueError:
            raise ConfigError(f"bad range {text!r}, expected start:stop:step") from None
        if step <= 0 or stop < start:
            raise ConfigError(f"bad range {text!r}")
        count = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(float(start + i * step) for i in range(count))
    try:
        return tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"bad value list {text!r}") from None


def resolve_config(args) -> dict[str, str]:
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        cfg.update(parse_config_text(text, args.config))
    for item in args.set or []:
        cfg.update(parse_config_text(item, "--set"))
    if args.seed is not None:
        cfg["seed"] = str(args.seed)
    if args.schemes:
        cfg["schemes"] = args.schemes
    return cfg


def config_text(cfg: dict[str, str]) -> str:
    return "".join(f"{k} = {cfg[k]}\n" for k in sorted(cfg))


def _write_atomic(path: Path, data: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def write_manifest(out: Path, command: str, cfg: dict, outputs: list[str], started: float, **extra):
    manifest = {
        "command": command,
        "version": _version(),
        "seed": int(cfg["seed"]),
        "config": dict(sorted(cfg.items())),
        "config_text": config_text(cfg),
        "outputs": outputs,
        "wall_time_s": time.perf_counter() - started,
        **extra,
    }
    _write_atomic(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return max(1, default_threads())


def _num(v) -> str:
    return repr(float(v))


def cmd_solve(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    scenario = scenario_from(cfg)
    schemes = _schemes(cfg["schemes"])
    seed = _as_int("seed", cfg["seed"])
    channel = sample_channel(scenario, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    first_feasible = None
    for name in schemes:
        res = solve_scheme(name, scenario, channel)
        if first_feasible is None:
            first_feasible = res.feasible
        print(f"[{name}] status={res.status} objective_bits={res.objective:.6g}")
        if not res.feasible:
            continue
        alloc = res.allocation
        ratios = stage_ratios(alloc)
        fair = jain_index(res.common_bits)
        print(f"  tau_c={alloc.tau_c:.6g} s  tau_i={alloc.tau_i:.6g} s  "
              f"time_ratio={ratios.time:.6g}  fairness={fair.value:.6g}")
        for r in range(channel.n_devices):
            t_sub = alloc.t_sub[r] if alloc.t_sub is not None else math.nan
            print(f"  device {int(channel.order[r])} (rank {r + 1}): common_bits={res.common_bits[r]:.6g} "
                  f"individual_bits={res.individual_bits[r]:.6g} E_c={alloc.e_c[r]:.6g} J "
                  f"E_i={alloc.e_i[r]:.6g} J")
            rows.append([name, int(channel.order[r]), r + 1, _num(alloc.tau_c), _num(alloc.tau_i),
                         _num(alloc.e_c[r]), _num(alloc.e_i[r]), _num(t_sub),
                         _num(res.common_bits[r]), _num(res.individual_bits[r])])
    path = out / "allocation.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scheme", "device", "decode_rank", "tau_c", "tau_i", "e_c", "e_i", "t_sub",
                    "common_bits", "individual_bits"])
        w.writerows(rows)
    write_manifest(out, "solve", cfg, [path.name], started)
    return EXIT_OK if first_feasible else EXIT_INFEASIBLE


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    scenario = scenario_from(cfg)
    if args.trials is not None:
        cfg["n_trials"] = str(args.trials)
    if args.paired:
        cfg["paired"] = "true"
    values = parse_values(args.values)
    try:
        config = ExperimentConfig(
            scenario=scenario, axis=args.axis, values=values, schemes=_schemes(cfg["schemes"]),
            n_trials=_as_int("n_trials", cfg["n_trials"]), master_seed=_as_int("seed", cfg["seed"]),
            paired=_as_bool("paired", cfg["paired"]),
            device_rank=_as_int("device_rank", cfg["device_rank"]), threads=_threads(args))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_monte_carlo(config)
    path = out / f"sweep_{args.axis}.csv"
    write_aggregate_csv(rows, path)
    print(f"wrote {len(rows)} rows to {path}")
    write_manifest(out, "sweep", cfg, [path.name], started, axis=args.axis, values=list(values))
    return EXIT_OK


def cmd_convergence(args) -> int:
    started = time.perf_counter()
    cfg = resolve_config(args)
    scenario = scenario_from(cfg)
    channel = sample_channel(scenario, _as_int("seed", cfg["seed"]))
    table = convergence_experiment(scenario, channel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "convergence.csv"
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "phi_bits"])
        for m, phi in enumerate(table.phi_bits, 1):
            w.writerow([m, _num(phi)])
        if table.oracle_bits is not None:
            w.writerow(["oracle", _num(table.oracle_bits)])
    note = None
    if table.oracle_bits is None:
        note = "grid oracle omitted: it is only defined for n_devices <= 2"
        print(note, file=sys.stderr)
    print(f"status={table.status} iterations={table.iterations}"
          + (f" final_phi_bits={table.phi_bits[-1]:.6g}" if table.phi_bits else ""))
    write_manifest(out, "convergence", cfg, [path.name], started, status=table.status, note=note)
    return EXIT_INFEASIBLE if table.status == "Infeasible" else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--threads", type=int, help="worker processes (env NOMA_OFFLOAD_THREADS)")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--schemes", help=f"comma list from {','.join(SCHEMES)}")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")

    p = argparse.ArgumentParser(prog="noma-offload",
                                description="Two-stage NOMA offloading: SCA solver and experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve one channel draw")
    sw = sub.add_parser("sweep", parents=[common], help="Monte-Carlo sweep")
    sw.add_argument("--axis", required=True, choices=AXES)
    sw.add_argument("--values", required=True, help="start:stop:step or a comma list")
    sw.add_argument("--trials", type=int, help="trials per sweep value")
    sw.add_argument("--paired", action="store_true", help="reuse channel draws across sweep values")
    sub.add_parser("convergence", parents=[common], help="per-iteration SCA objective")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"solve": cmd_solve, "sweep": cmd_sweep, "convergence": cmd_convergence}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
