"""Timing comparison of the compiled and pure-numpy GCN kernels.

Run: python benchmarks/bench_kernels.py

Covers the two shapes that dominate a search run: the training minibatch
(small batch, forward + backward) and full-space scoring (large batch,
forward only).
"""

import time

import numpy as np

from pbnas.kernels import available_backends, get_backend


def make_case(rng, b, l, din, dout):
    a = (rng.random((b, l, l)) < 0.3).astype(np.float64) + np.eye(l)
    ahat = np.ascontiguousarray(a / np.sqrt(a.sum(axis=2))[:, :, None])
    h = np.ascontiguousarray(rng.standard_normal((b, l, din)))
    w = np.ascontiguousarray(rng.standard_normal((din, dout)))
    return ahat, h, w


def time_fn(fn, repeats=30):
    fn()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    rng = np.random.default_rng(0)
    cases = [
        ("train minibatch (B=128, L=5, 16->16)", 128, 5, 16, 16),
        ("train minibatch (B=128, L=5, 3->16)", 128, 5, 3, 16),
        ("full-space scoring (B=38637, L=5, 16->16)", 38637, 5, 16, 16),
        ("wide paper shape (B=256, L=7, 256->256)", 256, 7, 256, 256),
    ]
    backends = available_backends()
    print(f"available backends: {backends}\n")
    for label, b, l, din, dout in cases:
        ahat, h, w = make_case(rng, b, l, din, dout)
        print(label)
        times = {}
        for name in backends:
            be = get_backend(name)
            post = be.conv_forward(ahat, h, w)
            g = np.ascontiguousarray(rng.standard_normal(post.shape))
            fwd = time_fn(lambda: be.conv_forward(ahat, h, w))
            bwd = time_fn(lambda: be.conv_backward(ahat, h, post, w, g, True))
            times[name] = (fwd, bwd)
            print(f"  {name:7s} forward {fwd * 1e3:8.3f} ms   backward {bwd * 1e3:8.3f} ms")
        if len(times) == 2:
            f_ratio = times["python"][0] / times["cython"][0]
            b_ratio = times["python"][1] / times["cython"][1]
            print(f"  speedup  forward {f_ratio:7.2f}x    backward {b_ratio:7.2f}x")
        print()


if __name__ == "__main__":
    main()
