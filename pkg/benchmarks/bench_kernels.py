"""Time the compiled and NumPy particle kernels on identical inputs.

Usage::

    python benchmarks/bench_kernels.py [--particles 100 1000] [--sizes 15 60] [--dims 1 6]

For every (N, t, p) the script runs each batched op on both backends,
reports the best-of-``--repeat`` wall time, the speedup of the compiled
kernels, and the largest difference between the two outputs, scaled by
``max(1, |python output|)``. The random latent values are not drawn from the
latent GP, so log densities can be very large in magnitude.
"""

import argparse
import timeit

import numpy as np

from nsgp import _backend

A, B, NUGGET = 4.0, 2.0, 1e-7


def make_inputs(n, t, p, rng):
    X = rng.uniform(size=(t, p))
    F = np.sin(3 * X).sum(axis=1)
    Z = rng.normal(size=(n, t))
    phi = np.exp(rng.normal(0.5, 0.5, size=(n, p + 1)))
    phit = np.exp(rng.normal(0.5, 0.5, size=(n, p)))
    Xq = rng.uniform(size=(50, p))
    Zq = rng.normal(size=(n, 50))
    return X, F, Z, phi, phit, Xq, Zq


def cases(ops, X, F, Z, phi, phit, Xq, Zq):
    L, _, nug, _ = ops.factorize(X, Z, phi, NUGGET)
    Lt, _, nugt, _ = ops.factorize(X, None, phit, NUGGET)
    x_new = np.full(X.shape[1], 0.5)
    z_new = np.zeros(Z.shape[0])
    return {
        "factorize": lambda: ops.factorize(X, Z, phi, NUGGET)[0],
        "loglik": lambda: ops.loglik(X, F, Z, phi, NUGGET, A, B),
        "latent_logdens": lambda: ops.latent_logdens(X, Z, phit, NUGGET),
        "predict": lambda: ops.predict(X, F, L, Z, phi, nug, Xq, Zq, A, B)[1],
        "krige": lambda: ops.krige(X, Lt, Z, phit, nugt, Xq)[0],
        "extend": lambda: ops.extend(L, X, Z, phi, nug, x_new, z_new)[0],
    }


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--particles", type=int, nargs="+", default=[100, 1000])
    parser.add_argument("--sizes", type=int, nargs="+", default=[15, 60])
    parser.add_argument("--dims", type=int, nargs="+", default=[1, 6])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args(argv)

    names = _backend.available()
    if "compiled" not in names:
        print("compiled kernels are not built; only the NumPy backend is available")
    backends = {name: _backend.get(name) for name in names}

    header = f"{'op':<15}{'N':>6}{'t':>5}{'p':>3}" + "".join(f"{n + ' s':>13}" for n in backends)
    if len(backends) == 2:
        header += f"{'speedup':>9}{'rel diff':>11}"
    print(header)
    rng = np.random.default_rng(0)
    for n in args.particles:
        for t in args.sizes:
            for p in args.dims:
                inputs = make_inputs(n, t, p, rng)
                per_backend = {name: cases(ops, *inputs) for name, ops in backends.items()}
                for op in per_backend[names[0]]:
                    times, outputs = {}, {}
                    for name, table in per_backend.items():
                        times[name] = min(timeit.repeat(table[op], number=1, repeat=args.repeat))
                        outputs[name] = np.asarray(table[op]())
                    line = f"{op:<15}{n:>6}{t:>5}{p:>3}" + "".join(f"{times[k]:>13.4f}" for k in backends)
                    if len(backends) == 2:
                        a, b = outputs["compiled"], outputs["python"]
                        finite = np.isfinite(a) & np.isfinite(b)
                        scale = np.maximum(1.0, np.abs(b[finite]))
                        diff = float(np.max(np.abs(a[finite] - b[finite]) / scale)) if finite.any() else 0.0
                        line += f"{times['python'] / times['compiled']:>9.1f}{diff:>11.1e}"
                    print(line, flush=True)


if __name__ == "__main__":
    main()
