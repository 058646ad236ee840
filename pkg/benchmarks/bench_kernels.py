"""Compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import timeit

import numpy as np

from neumat import _fallback
from neumat.render import gaussian_window

try:
    from neumat import _kernels
except ImportError:
    _kernels = None


def unit(n, rng):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def cases():
    rng = np.random.default_rng(0)
    pts = unit(20000, rng)
    vals = rng.random((20000, 3))
    q = unit(400, rng)
    img = rng.random((256, 256))
    k = gaussian_window()
    return {
        "knn_interpolate (400 queries, 20000 samples, k=8)": ("knn_interpolate", (q, pts, vals, 8, 0.1)),
        "filter_valid (256x256, 11-tap)": ("filter_valid", (img, k)),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    impls = {"python": _fallback}
    if _kernels is not None:
        impls["cython"] = _kernels
    else:
        print("compiled extension not built; timing the fallback only")
    print(f"{'kernel':52s} " + " ".join(f"{n:>10s}" for n in impls) + "   speedup")
    for label, (fn, a) in cases().items():
        times = {n: min(timeit.repeat(lambda m=m: getattr(m, fn)(*a), number=1, repeat=args.repeat))
                 for n, m in impls.items()}
        if len(impls) == 2:
            ref = getattr(_fallback, fn)(*a)
            assert np.allclose(getattr(_kernels, fn)(*a), ref, rtol=1e-12, atol=1e-13)
        cells = " ".join(f"{t * 1e3:8.2f}ms" for t in times.values())
        speed = f"{times['python'] / times['cython']:8.1f}x" if "cython" in times else ""
        print(f"{label:52s} {cells} {speed}")


if __name__ == "__main__":
    main()
