#!/usr/bin/env python3
"""Interpreter timing table for all bundled bench fixtures.

For each fixture this reports the median cost of the pre-flight checks alone,
a first run (checks + execution, what an install pays on its first trigger),
and a warm run (execution only), plus a derived ns-per-instruction figure.
"""

import argparse
import json
import statistics
import sys
import time

from femtoc.fixtures import BENCH_FIXTURES, bench_case
from femtoc.verifier import VerifyLimits, check_program, verify
from femtoc.vm import exec_program


def time_fixture(name: str, repeats: int, limits: VerifyLimits) -> dict:
    case = bench_case(name)
    verify_ns, first_ns, warm_ns = [], [], []
    instructions = 0
    for _ in range(repeats):
        t0 = time.perf_counter_ns()
        errors = check_program(case.program, limits, case.allowed_syscalls)
        verify_ns.append(time.perf_counter_ns() - t0)
        assert not errors, errors

        ctx, acl, table = case.make_run()
        t0 = time.perf_counter_ns()
        vp = verify(case.program, limits, case.allowed_syscalls)
        outcome = exec_program(vp, ctx, acl, table)
        first_ns.append(time.perf_counter_ns() - t0)
        assert outcome.ok, outcome.fault

        t0 = time.perf_counter_ns()
        outcome = exec_program(vp, ctx, acl, table)
        warm_ns.append(time.perf_counter_ns() - t0)
        instructions = outcome.executed

    warm = int(statistics.median(warm_ns))
    return {
        "fixture": name,
        "slots": len(case.program.slots),
        "verify_ns": int(statistics.median(verify_ns)),
        "first_run_ns": int(statistics.median(first_ns)),
        "warm_run_ns": warm,
        "instructions": instructions,
        "ns_per_instruction": round(warm / instructions, 2) if instructions else 0.0,
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=9)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args(argv)

    rows = [time_fixture(name, args.repeat, VerifyLimits()) for name in BENCH_FIXTURES]
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0

    header = (
        f"{'fixture':<16} {'slots':>5} {'verify us':>10} {'first us':>9} "
        f"{'warm us':>8} {'instr':>6} {'ns/instr':>9}"
    )
    print(header)
    print("-" * len(header))
    for row in rows:
        print(
            f"{row['fixture']:<16} {row['slots']:>5} {row['verify_ns'] / 1e3:>10.1f} "
            f"{row['first_run_ns'] / 1e3:>9.1f} {row['warm_run_ns'] / 1e3:>8.1f} "
            f"{row['instructions']:>6} {row['ns_per_instruction']:>9}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
