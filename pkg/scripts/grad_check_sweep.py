#!/usr/bin/env python3
"""Sweep the finite-difference gradient check over operators and seeds.

Prints one JSON line per operator with the worst relative error seen,
then a summary line.  Exits nonzero if any instance breaks tolerance.
"""

import argparse
import json
import time

from stakit.attention import GRAD_CHECK_OPS, grad_check, random_instance


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--ops", nargs="+", choices=GRAD_CHECK_OPS,
                        default=list(GRAD_CHECK_OPS))
    parser.add_argument("--seeds", type=int, default=20, help="seeds per operator")
    parser.add_argument("--eps", type=float, default=1e-5)
    parser.add_argument("--tolerance", type=float, default=1e-5)
    parser.add_argument("--d-model", dest="d_model", type=int, default=6)
    parser.add_argument("--heads", type=int, default=2)
    parser.add_argument("--n-tokens", dest="n_tokens", type=int, default=2)
    parser.add_argument("--mlp-hidden", dest="mlp_hidden", type=int, default=12)
    args = parser.parse_args()

    start = time.perf_counter()
    failures = 0
    for op in args.ops:
        worst = 0.0
        worst_seed = None
        for seed in range(args.seeds):
            inputs, weights = random_instance(op, seed, d_model=args.d_model,
                                              heads=args.heads, n_tokens=args.n_tokens,
                                              mlp_hidden=args.mlp_hidden)
            report = grad_check(op, inputs, weights, args.eps)
            if report.max_rel_error > worst:
                worst = report.max_rel_error
                worst_seed = seed
            if report.max_rel_error > args.tolerance:
                failures += 1
        print(json.dumps({"op": op, "seeds": args.seeds, "worst_rel_error": worst,
                          "worst_seed": worst_seed}))
    print(json.dumps({"elapsed_s": round(time.perf_counter() - start, 3),
                      "failures": failures, "tolerance": args.tolerance}))
    raise SystemExit(1 if failures else 0)


if __name__ == "__main__":
    main()
