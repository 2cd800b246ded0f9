"""Compare the numba and numpy kernel backends on model-sized inputs.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends live in the same module, so a single process can time them side
by side. The numba timings exclude the first (compiling) call.
"""
import argparse
import time

import numpy as np

from mrwavenet import _kernels as K
from mrwavenet.model import MREEGWaveNet, ModelConfig


def best_of(fn, repeat):
    fn()  # warm-up / JIT
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    # depthwise halving on a 19-channel, 10 s, 500 Hz batch
    x = rng.standard_normal((32, 19, 5000))
    w = rng.standard_normal((19, 1, 2))
    yield "depthwise k2 s2 (32x19x5000)", "conv", (x, w, 2, 19)
    # first dense conv of a spatio-temporal block
    x = rng.standard_normal((32, 19, 625))
    w = rng.standard_normal((32, 19, 4))
    yield "dense 19->32 k4 (32x19x625)", "conv", (x, w, 1, 1)
    x = rng.standard_normal((32, 32, 622))
    w = rng.standard_normal((32, 32, 4))
    yield "dense 32->32 k4 (32x32x622)", "conv", (x, w, 1, 1)
    yield "ecdf tails (2000x192)", "ecdf", (rng.standard_normal((2000, 192)),)


def run_kernel(kind, backend, args):
    if kind == "conv":
        x, w, stride, groups = args
        fwd = getattr(K, f"conv1d_forward_{backend}")
        bwd = getattr(K, f"conv1d_backward_{backend}")
        y = fwd(x, w, stride, groups)
        return lambda: (fwd(x, w, stride, groups), bwd(x, w, y, stride, groups))
    return lambda: getattr(K, f"ecdf_tails_{backend}")(*args)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not K.HAVE_NUMBA:
        raise SystemExit("numba unavailable (or MRWAVENET_BACKEND=numpy); nothing to compare")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, kind, data in cases(rng):
        t_np = best_of(run_kernel(kind, "numpy", data), args.repeat)
        t_nb = best_of(run_kernel(kind, "numba", data), args.repeat)
        print(f"{name:34s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.2f}")

    # whole forward+backward step with the active backend
    cfg = ModelConfig(channels=19, sample_rate=500.0)
    model = MREEGWaveNet(cfg, seed=0)
    x = rng.standard_normal((16, 19, cfg.n_samples)).astype(np.float32)
    y = rng.integers(0, 2, 16)
    t = best_of(lambda: model.loss_and_backward(x, y, (0.75, 1.5)), max(1, args.repeat // 2))
    print(f"\nfull train step, batch 16, backend={K.BACKEND}: {1e3 * t:.1f} ms")


if __name__ == "__main__":
    main()
