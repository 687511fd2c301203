"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Workloads: a torus Fourier product, the product and the bracket of the
lattice quartic Hamiltonian with itself.
"""
import argparse
import time

import numpy as np

from dnlskam import kernels
from dnlskam.dnls import DnlsConfig, quartic_part
from dnlskam.fourier import random_fourier
from dnlskam.hamiltonian import Caps, poisson_bracket, product


def workloads():
    rng = np.random.default_rng(0)
    f = random_fourier(rng, (1, 2, 3), 6, 400)
    g = random_fourier(rng, (1, 2, 3), 6, 400)
    P = quartic_part(DnlsConfig(jmax=6)).with_caps(Caps(8, 8))
    return {
        "fourier_product": lambda: kernels.fourier_product(f.keys, f.coeffs, g.keys, g.coeffs, 12),
        "poly_product": lambda: product(P, P),
        "poly_bracket": lambda: poisson_bracket(P, P),
    }


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    jobs = workloads()
    backends = kernels.available_backends()
    if len(backends) < 2:
        print("compiled kernels not built; timing the fallback only")
    print(f"{'workload':<18}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for name, fn in jobs.items():
        row = {}
        for b in backends:
            with kernels.using_backend(b):
                fn()  # warm up
                row[b] = best_of(fn, args.repeat)
        line = f"{name:<18}" + "".join(f"{row[b]*1e3:>10.1f}ms" for b in backends)
        if len(backends) > 1:
            line += f"{row['python'] / row['cython']:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
