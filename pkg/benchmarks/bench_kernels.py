"""Compare the compiled and numpy kernel backends on training-shaped inputs.

Run as ``python benchmarks/bench_kernels.py`` (or ``spikeav bench``). The
auto backend policy in ``spikeav._kernels`` follows what this benchmark
shows on typical desktops: BLAS-backed im2col wins the convolutions, the
fused compiled scans win the membrane updates.
"""

import time

import numpy as np

from spikeav._kernels import available_backends, get_backend

CONV_CASES = [
    # (input, kernel, stride): early/mid/late visual blocks at batch 16*T
    ((448, 2, 44, 44), (8, 2, 3, 3), 2),
    ((448, 8, 22, 22), (8, 8, 3, 3), 1),
    ((448, 16, 11, 11), (16, 16, 3, 3), 1),
    ((448, 32, 6, 6), (32, 32, 3, 3), 1),
]

SCAN_CASES = [
    (28, 16, 256),          # speech path, batch 16
    (28, 16, 32, 22, 22),   # visual block, batch 16
    (28, 1, 256),           # single-sample eval
]


def _time(fn, reps=3):
    fn()     # warm
    t0 = time.time()
    for _ in range(reps):
        fn()
    return (time.time() - t0) / reps * 1e3


def main():
    rng = np.random.default_rng(0)
    names = available_backends()
    print(f"backends: {', '.join(names)}\n")
    print(f"{'kernel':44s} " + "".join(f"{n:>12s}" for n in names))
    for xs, ws, stride in CONV_CASES:
        x = (rng.random(xs) < 0.15).astype(np.float64)
        w = rng.standard_normal(ws)
        b = rng.standard_normal(ws[0])
        row = []
        for n in names:
            be = get_backend(n)
            row.append(_time(lambda: be.conv2d_forward(x, w, b, stride, 1)))
        print(f"{'conv fwd ' + str(xs):44s} "
              + "".join(f"{ms:10.1f}ms" for ms in row))
        out = get_backend(names[0]).conv2d_forward(x, w, b, stride, 1)
        g = rng.standard_normal(out.shape)
        row = []
        for n in names:
            be = get_backend(n)
            row.append(_time(lambda: be.conv2d_backward(g, x, w, stride, 1)))
        print(f"{'conv bwd ' + str(xs):44s} "
              + "".join(f"{ms:10.1f}ms" for ms in row))
    for shape in SCAN_CASES:
        cur = rng.standard_normal(shape)
        row = []
        for n in names:
            be = get_backend(n)
            row.append(_time(lambda: be.lif_scan_forward(cur, 0.5, 1.0)))
        print(f"{'lif scan fwd ' + str(shape):44s} "
              + "".join(f"{ms:10.2f}ms" for ms in row))
        s, u = get_backend(names[0]).lif_scan_forward(cur, 0.5, 1.0)
        g = rng.standard_normal(shape)
        row = []
        for n in names:
            be = get_backend(n)
            row.append(_time(
                lambda: be.lif_scan_backward(g, u, s, 0.5, 1.0, 1.0)))
        print(f"{'lif scan bwd ' + str(shape):44s} "
              + "".join(f"{ms:10.2f}ms" for ms in row))


if __name__ == "__main__":
    main()
