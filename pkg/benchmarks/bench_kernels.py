"""Compare the numba kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because the backend is fixed at
import time by HAZARD_CTMC_DISABLE_NUMBA.  Usage:

    python3 benchmarks/bench_kernels.py [--repeat 3]
"""

import argparse
import json
import os
import subprocess
import sys
import time

CASES = ("sample_dataset", "mcmc_batch_grad", "enumerate_set", "marginal_logp")


def _time(func, repeat):
    func()  # compile / warm up
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        func()
        best = min(best, time.perf_counter() - start)
    return best


def run_cases(repeat, scale):
    import numpy as np

    from hazard_ctmc import kernels
    from hazard_ctmc._jit import backend_name
    from hazard_ctmc.analysis import synthetic_model
    from hazard_ctmc.mcmc import ChainConfig, batch_grad
    from hazard_ctmc.rng import derive
    from hazard_ctmc.sampler import generate_dataset

    model = synthetic_model("five", 15, derive(0, "bench"))
    th = model.theta
    data = generate_dataset(model, 500, rng=1)
    arrays = data.item_arrays()[: max(10, int(500 * scale))]
    items = np.arange(7, dtype=np.int64)
    seqs = [np.asarray(derive(0, "seq", i).permutation(20)[:8], dtype=np.int64) for i in range(200)]
    count = max(1000, int(20000 * scale))

    cases = {
        "sample_dataset": lambda: generate_dataset(model, count, rng=2, threads=1),
        "mcmc_batch_grad": lambda: batch_grad(th, arrays, ChainConfig(), 3, 0, threads=1),
        "enumerate_set": lambda: kernels.enumerate_logp(th, items),
        "marginal_logp": lambda: [kernels.marginal_seq_logp(th, s) for s in seqs],
    }
    return backend_name(), {k: _time(cases[k], repeat) for k in CASES}


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--scale", type=float, default=1.0,
                        help="shrink workloads of the slow fallback (default 1)")
    parser.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = parser.parse_args()
    if args.child:
        backend, timings = run_cases(args.repeat, args.scale)
        print(json.dumps({"backend": backend, "timings": timings}))
        return
    results = {}
    for disable in ("0", "1"):
        env = dict(os.environ, HAZARD_CTMC_DISABLE_NUMBA=disable)
        out = subprocess.run(
            [sys.executable, __file__, "--child", "--repeat", str(args.repeat),
             "--scale", str(args.scale)],
            env=env, check=True, capture_output=True, text=True,
        )
        res = json.loads(out.stdout.strip().splitlines()[-1])
        results[res["backend"]] = res["timings"]
    names = sorted(results)
    print(f"{'case':<18}" + "".join(f"{n:>14}" for n in names) + f"{'speedup':>10}")
    for case in CASES:
        row = [results[n][case] for n in names]
        fast = results.get("numba", {}).get(case)
        slow = results.get("numpy", {}).get(case)
        ratio = f"{slow / fast:9.1f}x" if fast and slow else ""
        print(f"{case:<18}" + "".join(f"{t:14.4f}" for t in row) + f"{ratio:>10}")


if __name__ == "__main__":
    main()
