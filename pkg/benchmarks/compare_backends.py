#!/usr/bin/env python3
"""Compare the compiled (numba) and plain-NumPy kernel backends.

Runs the same hot workloads in one subprocess per backend (the selection via
BYZOPT_BACKEND happens at import time) and prints a timing table. The final
estimates must agree bit-for-bit across backends; the script asserts it.

Usage: python benchmarks/compare_backends.py [--rounds 20000]
"""

import argparse
import json
import os
import subprocess
import sys


def worker(rounds: int) -> None:
    import time

    from byzopt import (
        AdversaryStrategy,
        FunctionEnsemble,
        Huber,
        Scenario,
        run_algorithm,
        solve_root,
    )
    from byzopt.kernels import BACKEND

    hub = {i + 1: Huber(v, 2.0, 1.0)
           for i, v in enumerate([0.7, 2.3, 3.1, 4.8])}
    ens = FunctionEnsemble(tuple(hub.values()), 1)

    def scn(alg):
        return Scenario(
            n=4, f=1, functions=hub, algorithm=alg, max_rounds=rounds,
            tol=0.0, lipschitz=2.0, faulty=frozenset({4}),
            adversary={4: AdversaryStrategy("median_drag",
                                            {"target": 0.0,
                                             "magnitude": 2.0})},
        )

    results = {"backend": BACKEND, "rounds": rounds}
    solve_root(ens, "trimmed", 1e-12)  # warm-up / jit compile
    t0 = time.perf_counter()
    for _ in range(500):
        solve_root(ens, "trimmed", 1e-12)
    results["root_x500_s"] = time.perf_counter() - t0

    for alg in ("alg3", "alg4", "alg5"):
        run_algorithm(scn(alg))  # warm-up
        t0 = time.perf_counter()
        out = run_algorithm(scn(alg))
        results[f"{alg}_s"] = time.perf_counter() - t0
        results[f"{alg}_x"] = out.outputs[1].hex()
    print(json.dumps(results))


def launch(backend: str, rounds: int) -> dict:
    env = dict(os.environ, BYZOPT_BACKEND=backend)
    proc = subprocess.run(
        [sys.executable, os.path.abspath(__file__), "--worker",
         "--rounds", str(rounds)],
        env=env, capture_output=True, text=True, check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--rounds", type=int, default=20_000)
    parser.add_argument("--worker", action="store_true")
    args = parser.parse_args()
    if args.worker:
        worker(args.rounds)
        return 0

    fast = launch("numba", args.rounds)
    slow = launch("numpy", args.rounds)
    print(f"{args.rounds} rounds per iterative run, 500 bisection solves")
    print(f"{'workload':<12}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for key, label in (("root_x500_s", "root x500"), ("alg3_s", "alg3"),
                       ("alg4_s", "alg4"), ("alg5_s", "alg5")):
        a, b = fast[key], slow[key]
        print(f"{label:<12}{a:>11.3f}s{b:>11.3f}s{b / a:>9.1f}x")
    for alg in ("alg3", "alg4", "alg5"):
        assert fast[f"{alg}_x"] == slow[f"{alg}_x"], \
            f"{alg}: backends disagree"
    print("final estimates identical across backends (bit-for-bit)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
