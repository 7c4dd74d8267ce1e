"""Command-line entry point: ``clocksync collective|sync|scenario``."""
from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import random
import sys
from pathlib import Path

from . import collectives as col
from .netsim import ExecutionError, LatencyModel, Network, schedule_to_csv, validate_schedule
from .rtt import RttThresholds, UnstableChannelError
from .scenarios import (
    ConfigError, RunManifest, aggregate, aggregate_csv, load_config, metrics_csv,
    run_replications, scenario_config,
)
from .timebase import SimulatedClock, to_seconds

PATTERNS = ("broadcast", "gather", "ring-shift-copy", "rd-shift-copy", "rd-shift-max")
SUMMARY_COLUMNS = "pattern,N,rounds,steps,valid"


def build_pattern(pattern: str, n: int) -> tuple[col.CommSchedule, int]:
    """Schedule for a named pattern and its step count (copy counted as a step)."""
    if n < 1:
        raise ValueError("N must be >= 1")
    if pattern == "broadcast":
        s = col.broadcast_schedule_recursive_doubling(n)
        return s, s.n_rounds
    if pattern == "gather":
        s = col.gather_schedule_recursive_doubling(n)
        return s, s.n_rounds
    values = list(range(n))
    if pattern == "ring-shift-copy":
        res = col.ring_shift_copy_all(n, values)
    elif pattern == "rd-shift-copy":
        res = col.recursive_doubled_shift_copy(n, values)
    elif pattern == "rd-shift-max":
        res = col.recursive_doubled_shift_copy(n, [(v, v) for v in values], "running-max-keyed")
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return res.schedule, res.steps


def run_collective(n: int, pattern: str, out: str | None) -> str:
    sched, steps = build_pattern(pattern, n)
    valid = validate_schedule(sched, n) is None
    summary = f"{pattern},{n},{sched.n_rounds},{steps},{str(valid).lower()}"
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        m = RunManifest("collective", None, [], out)
        m.write_file(f"schedule_{pattern}_N{n}.csv", schedule_to_csv(sched))
        m.write_file(f"summary_{pattern}_N{n}.csv", f"{SUMMARY_COLUMNS}\n{summary}\n")
        m.save()
    return summary


def make_network(n: int, seed: int, max_offset: float, freq_ppm: float,
                 latency: LatencyModel) -> Network:
    rng = random.Random(seed)
    clocks = [
        SimulatedClock(i, local_time=rng.uniform(-max_offset, max_offset),
                       frequency_error=rng.uniform(-freq_ppm, freq_ppm) * 1e-6,
                       rng_seed=rng.randrange(2**32))
        for i in range(n)
    ]
    return Network(clocks, latency)


def _max_pairwise(values) -> float:
    return max(values) - min(values) if values else 0.0


def run_sync(n: int, method: str, seed: int = 0, base_latency: float = 0.0,
             per_bit_cost: float = 0.0, jitter: tuple[float, float] = (0.0, 0.0),
             max_offset: float = 10.0, freq_ppm: float = 0.0,
             thresholds: RttThresholds | None = None) -> dict:
    """Synchronize a fresh network and report how far apart the clocks are.

    Residuals are measured against the mean the unsynchronized clocks would
    show at the same true instant.
    """
    if n < 2:
        raise ValueError("sync needs N >= 2")
    latency = LatencyModel(base_latency, per_bit_cost, jitter, seed=seed)
    net = make_network(n, seed, max_offset, freq_ppm, latency)
    shadow = copy.deepcopy(net.clocks)
    start = net.truth.ticks
    pre = [c.read() for c in net.clocks]

    if method == "distributed":
        res = col.distributed_sync(net, thresholds)
        rounds = res.comm_rounds
    elif method == "leader":
        col.leader_sync(net, 0, thresholds)
        rounds = 2 * (n - 1)
    elif method == "leader-rd":
        rounds = col.leader_rd_sync(net, 0, thresholds).comm_rounds
    else:
        raise ValueError(f"unknown method {method!r}")

    elapsed = net.truth.ticks - start
    for c in shadow:
        c.advance_ticks(elapsed)
    target = sum(c.read_ticks() for c in shadow) / n
    post = [c.read_ticks() for c in net.clocks]
    return {
        "method": method,
        "N": n,
        "seed": seed,
        "rounds": rounds,
        "rounds_leader_sequential": 2 * (n - 1),
        "rounds_leader_recursive_doubling": 2 * math.ceil(math.log2(n)),
        "rounds_distributed": len(col.doubling_jumps(n)) if col.is_power_of_two(n) else n - 1,
        "pre_max_offset": _max_pairwise(pre),
        "post_max_offset": to_seconds(_max_pairwise(post)),
        "mean_offset": to_seconds(post[0] - net.truth.ticks),
        "residuals": [to_seconds(p - target) for p in post],
    }


def parse_seeds(text: str) -> list[int]:
    """``"10"`` means seeds 0..9; ``"1,5,9"`` is an explicit list."""
    text = text.strip()
    if "," in text:
        return [int(s) for s in text.split(",") if s.strip()]
    k = int(text)
    if k < 1:
        raise ValueError("seed count must be >= 1")
    return list(range(k))


def run_scenario(scenarios: dict, names: list[str], seeds: list[int], protocols: list[str],
                 out: str, config_path: str | None = None, workers: int = 1) -> list:
    Path(out).mkdir(parents=True, exist_ok=True)
    manifest = RunManifest("scenario", config_path, seeds, out)
    everything = []
    for name in names:
        cfg = scenarios[name]
        series = run_replications(cfg, seeds, protocols, workers)
        for s in series:
            manifest.write_file(f"metrics_{s.scenario}_{s.protocol}_seed{s.seed}.csv", metrics_csv([s]))
        everything += series
    aggs = aggregate(everything)
    manifest.write_file("aggregate.csv", aggregate_csv(aggs))
    manifest.save()
    return aggs


def _floats(text: str) -> tuple[float, float]:
    lo, hi = (float(x) for x in text.split(","))
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="clocksync", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collective", help="build and check a communication schedule")
    p.add_argument("--n", "-N", type=int, required=True)
    p.add_argument("--pattern", choices=PATTERNS, required=True)
    p.add_argument("--out", help="directory for schedule and summary CSVs")

    p = sub.add_parser("sync", help="synchronize one simulated network")
    p.add_argument("--n", "-N", type=int, default=8)
    p.add_argument("--method", choices=("leader", "leader-rd", "distributed"), default="distributed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--base-latency", type=float, default=0.001)
    p.add_argument("--per-bit-cost", type=float, default=0.0)
    p.add_argument("--jitter", type=_floats, default=(0.0, 0.0), metavar="LO,HI")
    p.add_argument("--max-offset", type=float, default=10.0)
    p.add_argument("--freq-ppm", type=float, default=0.0)
    p.add_argument("--out", help="write the report as JSON here")

    p = sub.add_parser("scenario", help="run the mobile-agent experiments")
    p.add_argument("--config", help="INI file; presets are used when omitted")
    p.add_argument("--scenario", action="append", choices=("A", "B", "C"),
                   help="repeatable; default is every scenario in the config")
    p.add_argument("--seeds", default="10", help="count or comma-separated list")
    p.add_argument("--protocol", choices=("proposed", "baseline", "both"), default="both")
    p.add_argument("--duration", type=float, help="override the run length in seconds")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "collective":
            print(SUMMARY_COLUMNS)
            print(run_collective(args.n, args.pattern, args.out))
        elif args.command == "sync":
            report = run_sync(args.n, args.method, args.seed, args.base_latency,
                              args.per_bit_cost, args.jitter, args.max_offset, args.freq_ppm)
            text = json.dumps(report, indent=2)
            if args.out:
                Path(args.out).write_text(text + "\n")
            print(text)
        else:
            scenarios = load_config(args.config) if args.config else {
                k: scenario_config(k) for k in ("A", "B", "C")}
            names = args.scenario or list(scenarios)
            missing = [n for n in names if n not in scenarios]
            if missing:
                raise ConfigError(f"scenario(s) {missing} not defined in the config")
            if args.duration is not None:
                scenarios = {k: dataclasses.replace(v, duration=args.duration)
                             for k, v in scenarios.items()}
            protocols = ["proposed", "baseline"] if args.protocol == "both" else [args.protocol]
            aggs = run_scenario(scenarios, names, parse_seeds(args.seeds), protocols,
                                args.out, args.config, args.workers)
            print("scenario,protocol,seeds,steady_state_mean,steady_state_std")
            for a in aggs:
                print(f"{a.scenario},{a.protocol},{a.seeds},{a.mean:.3f},{a.std:.3f}")
    except (ValueError, OSError, UnstableChannelError, ExecutionError) as exc:
        print(f"clocksync: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
