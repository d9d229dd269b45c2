"""Compare the compiled convolution kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeats 20]

Times im2col / col2im on extractor-sized tensors and one full extractor
training step with each backend, and checks that both give the same numbers.
"""

from __future__ import annotations

import argparse
import timeit
from contextlib import contextmanager

import numpy as np

from fusionerc import kernels
from fusionerc.extractor import ExtractorConfig, TripletExtractor, extractor_train_step, make_blob_patches, \
    sample_triplets
from fusionerc.losses import ExtractorLossConfig
from fusionerc.optim import AdamW, AdamWConfig

SHAPES = [  # (N, C, H, W, kernel, stride, pad)
    (48, 1, 16, 16, 3, 2, 1),
    (48, 8, 8, 8, 3, 1, 1),
    (16, 1, 48, 128, 3, 2, 1),
    (16, 16, 24, 64, 3, 1, 1),
]


@contextmanager
def backend(name: str):
    saved = kernels._compiled
    if name == "numpy":
        kernels._compiled = None
    try:
        yield
    finally:
        kernels._compiled = saved


def best_of(fn, repeats: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def bench_kernels(repeats: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'shape':34s} {'op':7s} {'compiled ms':>12s} {'numpy ms':>10s} {'speedup':>8s}")
    for n, c, h, w, k, s, p in SHAPES:
        x = rng.normal(size=(n, c, h, w))
        cols = kernels.im2col_numpy(x, k, k, s, p)
        assert np.array_equal(kernels.im2col(x, k, k, s, p), cols)
        assert np.allclose(kernels.col2im(cols, x.shape, k, k, s, p),
                           kernels.col2im_numpy(cols, x.shape, k, k, s, p), rtol=0, atol=1e-12)
        for op, fast, slow in (
            ("im2col", lambda: kernels.im2col(x, k, k, s, p), lambda: kernels.im2col_numpy(x, k, k, s, p)),
            ("col2im", lambda: kernels.col2im(cols, x.shape, k, k, s, p),
             lambda: kernels.col2im_numpy(cols, x.shape, k, k, s, p)),
        ):
            tf, ts = best_of(fast, repeats) * 1e3, best_of(slow, repeats) * 1e3
            label = f"{(n, c, h, w)} k{k} s{s} p{p}"
            print(f"{label:34s} {op:7s} {tf:12.3f} {ts:10.3f} {ts / tf:7.2f}x")


def bench_train_step(repeats: int) -> None:
    x, y = make_blob_patches(20, 3, (16, 16, 1), seed=0)
    trips = sample_triplets(x, y, 16, seed=0)
    timings = {}
    for name in ("compiled", "numpy"):
        with backend(name):
            model = TripletExtractor(ExtractorConfig((16, 16, 1), (8, 16, 32), 16))
            opt = AdamW(model.parameters(), AdamWConfig(lr=1e-4, weight_decay=1e-6))
            timings[name] = best_of(lambda: extractor_train_step(model, trips, ExtractorLossConfig(), opt),
                                    repeats)
    print(f"\nextractor train step (batch 16 triplets): compiled {timings['compiled'] * 1e3:.2f} ms, "
          f"numpy {timings['numpy'] * 1e3:.2f} ms, speedup {timings['numpy'] / timings['compiled']:.2f}x")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()
    if kernels.BACKEND != "compiled":
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    bench_kernels(args.repeats)
    bench_train_step(max(3, args.repeats // 4))


if __name__ == "__main__":
    main()
