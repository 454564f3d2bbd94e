#!/usr/bin/env python3
"""Compare the compiled kernels against the pure-NumPy fallback.

The backend is chosen at import time from MLSQC_DISABLE_NUMBA, so the
comparison runs each side in its own subprocess and tabulates the results.
Workload sizes are deliberately small: the fallback executes the same loops
as interpreted Python and would crawl at production scale.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import json
import os
import subprocess
import sys
import time


def _workloads():
    import numpy as np

    from mlsqc import _kernels
    from mlsqc.boosting import GbtParams, fit_gbt
    from mlsqc.boosting import predict_proba as gbt_predict
    from mlsqc.core import build_index
    from mlsqc.features import extract_all
    from mlsqc.forest import ForestParams, fit_forest
    from mlsqc.forest import predict_proba as rf_predict

    rng = np.random.default_rng(0)
    cloud = rng.uniform(0, 20, size=(20000, 3)) * [1, 1, 0.15]
    queries = cloud[rng.integers(0, cloud.shape[0], size=2000)]
    small = np.ascontiguousarray(cloud[:3000])
    X = rng.normal(size=(8000, 21))
    y = (X[:, 0] + 0.6 * X[:, 3] + rng.normal(scale=0.8, size=8000)
         > 0).astype(np.int64)

    def knn():
        build_index(cloud, leaf_size=32).query(queries, k=30)

    def features():
        extract_all(small, k_min=10, k_max=50)

    def forest():
        params = ForestParams(n_estimators=8, max_depth=10)
        model = fit_forest(X, y, params)
        rf_predict(model, X)

    def gbt():
        params = GbtParams(num_boost_round=20, early_stopping_rounds=20)
        model = fit_gbt(X[:6000], y[:6000], X[6000:], y[6000:], params)
        gbt_predict(model, X)

    return _kernels.backend_name(), [
        ("kd-tree build+query (20k pts, 2k queries, k=30)", knn),
        ("feature extraction (3k pts, k 10..50)", features),
        ("random forest fit+predict (8k x 21)", forest),
        ("boosted trees fit+predict (8k x 21)", gbt),
    ]


def run_worker(repeats):
    backend, workloads = _workloads()
    results = {"backend": backend, "timings": {}}
    for name, fn in workloads:
        fn()  # warmup: JIT compilation lands here on the compiled side
        best = min(_timed(fn) for _ in range(repeats))
        results["timings"][name] = best
    print(json.dumps(results))


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def run_comparison(repeats):
    sides = {}
    for disable in ("0", "1"):
        env = dict(os.environ, MLSQC_DISABLE_NUMBA=disable)
        proc = subprocess.run(
            [sys.executable, __file__, "--worker", "--repeats", str(repeats)],
            env=env, capture_output=True, text=True, check=True)
        doc = json.loads(proc.stdout.strip().splitlines()[-1])
        sides[doc["backend"]] = doc["timings"]
    if set(sides) != {"numba", "numpy"}:
        raise SystemExit(f"expected both backends, got {sorted(sides)} "
                         "(is numba installed?)")

    width = max(len(n) for n in sides["numba"])
    print(f"{'workload':<{width}}  {'numba':>9}  {'numpy':>9}  {'speedup':>8}")
    for name, compiled in sides["numba"].items():
        fallback = sides["numpy"][name]
        print(f"{name:<{width}}  {compiled:>8.3f}s  {fallback:>8.3f}s  "
              f"{fallback / compiled:>7.1f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--worker", action="store_true",
                        help="time the current backend and emit JSON")
    parser.add_argument("--repeats", type=int, default=3,
                        help="timed repetitions per workload (best is kept)")
    args = parser.parse_args()
    if args.worker:
        run_worker(args.repeats)
    else:
        run_comparison(args.repeats)


if __name__ == "__main__":
    main()
