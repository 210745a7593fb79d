"""Compiled vs NumPy sampler kernels on baseline networks.

Usage: python3 benchmarks/bench_kernels.py [--sizes 64 128] [--iterations 200]

Both backends run the same seeded chain, so the timing compares identical
work; the script checks that the final log joint agrees.
"""

from __future__ import annotations

import argparse
import time

from netcausal.hmmb_infer import McmcConfig, backend, run_mcmc
from netcausal.netcore import baseline_config, sample_hmmb_params, sample_network


def time_backend(name: str, net, iterations: int, repeats: int) -> tuple[float, float]:
    config = McmcConfig(chains=1, iterations=iterations, burn_in=iterations // 2, backend=name)
    best, last = float("inf"), None
    for _ in range(repeats):
        start = time.perf_counter()
        post = run_mcmc(net, 4, config, seed=0)
        best = min(best, time.perf_counter() - start)
        last = post
    return best, float(last.log_joint[0, -1])


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[64, 128])
    parser.add_argument("--iterations", type=int, default=200)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if backend.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    print(f"{'N':>5} {'python s':>10} {'compiled s':>11} {'speedup':>8}  log joint agrees")
    for n in args.sizes:
        params = sample_hmmb_params(baseline_config(n), n)
        net = sample_network(params, n + 1)
        tp, lp = time_backend("python", net, args.iterations, args.repeats)
        tc, lc = time_backend("compiled", net, args.iterations, args.repeats)
        print(f"{n:>5} {tp:>10.3f} {tc:>11.3f} {tp / tc:>7.1f}x  {abs(lp - lc) <= 1e-8 * abs(lp)}")


if __name__ == "__main__":
    main()
