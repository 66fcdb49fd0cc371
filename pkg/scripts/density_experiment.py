#!/usr/bin/env python3
"""How many containers fit in a host before triggering everything gets slow?

Sweeps the container count, installs synthetic ~2 KiB programs across a few
hooks, fires every hook, and reports wall times for the install phase, the
first trigger sweep (which verifies every container), and a warm sweep.
"""

import argparse
import json
import random
import statistics
import sys
import time
from dataclasses import dataclass

from femtoc.asm import assemble
from femtoc.engine import Contract, Engine


@dataclass(frozen=True)
class DensityConfig:
    counts: tuple[int, ...] = (10, 25, 50, 100)
    slots: int = 250  # 8 bytes each; 250 slots = 2000 bytes of bytecode
    hooks: int = 4
    repeats: int = 3
    seed: int = 1


def synthetic_program(rng: random.Random, slots: int):
    ops = ("add64", "xor64", "or64", "and64", "mov64")
    lines = [
        f"{rng.choice(ops)} r{rng.randrange(2, 6)}, {rng.randrange(1, 255)}"
        for _ in range(slots - 2)
    ]
    lines += ["mov64 r0, 0", "exit"]
    return assemble("\n".join(lines))


def run_once(config: DensityConfig, count: int, rng: random.Random) -> dict:
    programs = [synthetic_program(rng, config.slots) for _ in range(count)]

    t0 = time.perf_counter()
    engine = Engine(rng=random.Random(rng.getrandbits(32)))
    tenant = engine.register_tenant("load")
    hooks = [
        engine.register_hook(f"hook{i}", set(), slot_limit=(count // config.hooks) + 1)
        for i in range(config.hooks)
    ]
    for index, program in enumerate(programs):
        engine.install_container(tenant, program, Contract.of(), hooks[index % config.hooks])
    install_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    for hook in hooks:
        for slot in engine.trigger_hook(hook).outcomes:
            assert slot.outcome is not None and slot.outcome.ok
    first_sweep_s = time.perf_counter() - t0

    t0 = time.perf_counter()
    for hook in hooks:
        engine.trigger_hook(hook)
    warm_sweep_s = time.perf_counter() - t0

    executed = sum(c.stats.total_executed for c in engine.containers.values())
    return {
        "containers": count,
        "bytes_each": config.slots * 8,
        "install_s": install_s,
        "first_sweep_s": first_sweep_s,
        "warm_sweep_s": warm_sweep_s,
        "instructions": executed,
    }


def run_sweep(config: DensityConfig) -> list[dict]:
    rng = random.Random(config.seed)
    rows = []
    for count in config.counts:
        samples = [run_once(config, count, rng) for _ in range(config.repeats)]
        row = dict(samples[0])
        for key in ("install_s", "first_sweep_s", "warm_sweep_s"):
            row[key] = statistics.median(s[key] for s in samples)
        rows.append(row)
    return rows


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--counts", default="10,25,50,100", help="comma-separated sweep")
    parser.add_argument("--slots", type=int, default=250)
    parser.add_argument("--hooks", type=int, default=4)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args(argv)

    config = DensityConfig(
        counts=tuple(int(c) for c in args.counts.split(",")),
        slots=args.slots,
        hooks=args.hooks,
        repeats=args.repeats,
        seed=args.seed,
    )
    rows = run_sweep(config)
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0

    header = f"{'n':>5} {'bytes':>6} {'install ms':>11} {'first ms':>9} {'warm ms':>8} {'instr':>8}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            f"{row['containers']:>5} {row['bytes_each']:>6} "
            f"{row['install_s'] * 1e3:>11.2f} {row['first_sweep_s'] * 1e3:>9.2f} "
            f"{row['warm_sweep_s'] * 1e3:>8.2f} {row['instructions']:>8}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
