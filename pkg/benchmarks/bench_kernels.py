"""Compiled vs pure-Python kernels: timing on pipeline-sized inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints one line per kernel with the best-of-N time for each backend and the
speedup. Results are also checked for agreement.
"""

import argparse
import timeit

import numpy as np

from ouve import _kernels_py as py
from ouve import kernels


def cases(rng):
    planes = rng.standard_normal((4, 256, 126))
    frames = rng.standard_normal((126, 510))
    blob = np.frombuffer(rng.bytes(270_000), dtype=np.uint8)  # about one weights file
    n = 16_000
    x = rng.standard_normal(n)
    coeffs = (np.full(n, 0.2), np.full(n, -1.6), np.full(n, 0.81))
    return {
        "extract_patches (4x256x126, k=5)": (lambda m: m.extract_patches(planes, 5)),
        "overlap_add (126 x 510, hop 128)": (lambda m: m.overlap_add(frames, 128)),
        "fnv1a64 (270 kB)": (lambda m: m.fnv1a64(blob)),
        "resonator (16000 samples)": (lambda m: m.resonator(x, *coeffs)),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    compiled = kernels.compiled_backend
    if compiled is None:
        raise SystemExit("compiled extension is not built; run `pip install -e . --no-build-isolation`")
    rng = np.random.default_rng(0)
    print(f"{'kernel':36s} {'python [ms]':>12s} {'compiled [ms]':>14s} {'speedup':>8s}")
    for name, fn in cases(rng).items():
        a, b = fn(py), fn(compiled)
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        number = 1 if name.startswith("fnv") or name.startswith("resonator") else 3
        t_py = min(timeit.repeat(lambda: fn(py), number=number, repeat=args.repeat)) / number
        t_c = min(timeit.repeat(lambda: fn(compiled), number=number, repeat=args.repeat)) / number
        print(f"{name:36s} {1e3 * t_py:12.2f} {1e3 * t_c:14.3f} {t_py / t_c:8.1f}x")


if __name__ == "__main__":
    main()
