"""Time the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on
both backends over the same inputs, after checking that the outputs agree.
"""
import argparse
import timeit

import numpy as np

from ivxq.kernels import backends


def _cases(n, p, lags):
    rng = np.random.default_rng(0)
    v = rng.standard_normal((n, p))
    rho = np.full(p, 0.99)
    weights = np.ascontiguousarray(rng.standard_normal((lags, p, p)) * 0.3)
    u = rng.standard_normal(n * p)
    return {
        "ar_recursion": lambda impl: impl.ar_recursion(v, rho),
        "linear_filter": lambda impl: impl.linear_filter(v, weights),
        "check_loss_sum": lambda impl: impl.check_loss_sum(u, 0.05),
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=100_000, help="rows per input")
    parser.add_argument("--p", type=int, default=2, help="columns per input")
    parser.add_argument("--lags", type=int, default=3, help="filter length")
    parser.add_argument("--repeat", type=int, default=5, help="timing repetitions")
    args = parser.parse_args(argv)

    impls = backends()
    if "cython" not in impls:
        print("compiled kernels are not built; only the fallback is available")
    print(f"n={args.n} p={args.p} lags={args.lags}, best of {args.repeat} (ms)")
    print(f"{'kernel':<16}" + "".join(f"{name:>10}" for name in impls) + f"{'speedup':>10}")
    for name, run in _cases(args.n, args.p, args.lags).items():
        outs = [np.asarray(run(impl)) for impl in impls.values()]
        for out in outs[1:]:
            np.testing.assert_allclose(out, outs[0], rtol=1e-10, atol=1e-10)
        times = [min(timeit.repeat(lambda: run(impl), number=1, repeat=args.repeat)) * 1e3 for impl in impls.values()]
        speed = f"{times[0] / times[-1]:>9.1f}x" if len(times) > 1 else f"{'-':>10}"
        print(f"{name:<16}" + "".join(f"{t:>10.2f}" for t in times) + speed)


if __name__ == "__main__":
    main()
