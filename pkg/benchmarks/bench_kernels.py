"""Time the SGD epoch and batch-predict kernels under numba and under the numpy fallback.

    python benchmarks/bench_kernels.py [--users 2000 --items 1500 --ratings 200000 --rank 20]

The fallback is measured in a child process with ``TAILMC_DISABLE_NUMBA=1``
because the backend is fixed at import time.
"""

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _measure(n_users, n_items, n_ratings, rank, repeats):
    from tailmc import kernels
    from tailmc._accel import backend

    gen = np.random.default_rng(0)
    users = gen.integers(0, n_users, n_ratings)
    items = gen.integers(0, n_items, n_ratings)
    ratings = gen.uniform(-10, 10, n_ratings)
    active = gen.integers(1, rank + 1, n_ratings).astype(np.int64)
    weights = np.ones(n_ratings)
    order = gen.permutation(n_ratings)
    P = gen.uniform(-0.01, 0.01, (n_users, rank))
    Q = gen.uniform(-0.01, 0.01, (n_items, rank))

    # warm-up pays numba's compile (or cache load) outside the timed region
    kernels.sgd_epoch(P.copy(), Q.copy(), users[:10], items[:10], ratings[:10], order[:10] % 10,
                      active[:10], weights[:10], 0.005, 0.01)
    kernels.predict_batch(P, Q, users[:10], items[:10], active[:10])

    sgd, pred = [], []
    for _ in range(repeats):
        Pc, Qc = P.copy(), Q.copy()
        t = time.perf_counter()
        kernels.sgd_epoch(Pc, Qc, users, items, ratings, order, active, weights, 0.005, 0.01)
        sgd.append(time.perf_counter() - t)
        t = time.perf_counter()
        kernels.predict_batch(Pc, Qc, users, items, active)
        pred.append(time.perf_counter() - t)
    return {"backend": backend(), "sgd_epoch_s": min(sgd), "predict_s": min(pred)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--users", type=int, default=2000)
    ap.add_argument("--items", type=int, default=1500)
    ap.add_argument("--ratings", type=int, default=200_000)
    ap.add_argument("--rank", type=int, default=20)
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    sizes = (args.users, args.items, args.ratings, args.rank, args.repeats)

    if args.child:
        print(json.dumps(_measure(*sizes)))
        return 0

    results = []
    for disable in ("0", "1"):
        env = dict(os.environ, TAILMC_DISABLE_NUMBA=disable)
        cmd = [sys.executable, __file__, "--child", "--users", str(args.users), "--items",
               str(args.items), "--ratings", str(args.ratings), "--rank", str(args.rank),
               "--repeats", str(args.repeats)]
        proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
        results.append(json.loads(proc.stdout.strip().splitlines()[-1]))

    print(f"{args.ratings} ratings, {args.users}x{args.items}, rank {args.rank}, best of {args.repeats}")
    print(f"{'backend':<8} {'sgd epoch (s)':>14} {'predict (s)':>12}")
    for r in results:
        print(f"{r['backend']:<8} {r['sgd_epoch_s']:>14.4f} {r['predict_s']:>12.4f}")
    fast, slow = results
    print(f"speedup  {slow['sgd_epoch_s'] / fast['sgd_epoch_s']:>14.1f}x "
          f"{slow['predict_s'] / fast['predict_s']:>11.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
