"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeats 5]

Times each kernel on a CIFAR-sized batch and a full forward/backward/SGD step
of a small network, then prints per-backend medians and the speedup.
"""
import argparse
import statistics
import time

import numpy as np

from repeatnet import functional as F
from repeatnet import kernels
from repeatnet.model import Network
from repeatnet.optim import SGD, SgdConfig
from repeatnet.planner import cifar_4conv, plan_width_scale
from repeatnet.tensor import Tape, backward


def timeit(fn, repeats):
    fn()  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(rng):
    x = rng.standard_normal((64, 32, 32, 32)).astype(np.float32)
    k, ho, wo = 3, 32, 32
    cols = kernels.get_backend("python").im2col(x, k, 1, 1, ho, wo)
    gamma = np.ones(32, np.float32)
    beta = np.zeros(32, np.float32)
    y, xhat, _, _, inv_std = kernels.get_backend("python").bn_forward_train(x, gamma, beta, 1e-5)
    _, idx = kernels.get_backend("python").maxpool_forward(x, 2)
    g_pool = rng.standard_normal((64, 32, 16, 16)).astype(np.float32)
    return {
        "im2col": lambda: kernels.im2col(x, k, 1, 1, ho, wo),
        "col2im": lambda: kernels.col2im(cols, x.shape, k, 1, 1, ho, wo),
        "bn_forward": lambda: kernels.bn_forward_train(x, gamma, beta, 1e-5),
        "bn_backward": lambda: kernels.bn_backward_train(y, xhat, gamma, inv_std),
        "maxpool_forward": lambda: kernels.maxpool_forward(x, 2),
        "maxpool_backward": lambda: kernels.maxpool_backward(g_pool, idx, 2, 32, 32),
    }


def train_step_case(rng):
    plan = plan_width_scale(cifar_4conv(8), 2, "s")
    net = Network(plan, seed=0)
    opt = SGD(net.param_groups(), SgdConfig())
    x = rng.standard_normal((64, 3, 32, 32)).astype(np.float32)
    y = rng.integers(0, 10, 64)

    def step():
        net.zero_grad()
        with Tape() as tape:
            loss = F.softmax_cross_entropy(net.forward(x, training=True), y)
        backward(tape, loss, retain_grad=False)
        opt.step(0)

    return step


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    try:
        kernels.get_backend("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    bench = cases(rng)
    bench["train_step"] = train_step_case(rng)
    results = {}
    for backend in ("python", "cython"):
        previous = kernels.set_backend(backend)
        try:
            results[backend] = {name: timeit(fn, args.repeats) for name, fn in bench.items()}
        finally:
            kernels.set_backend(previous)

    print(f"{'kernel':<18}{'python (ms)':>13}{'cython (ms)':>13}{'speedup':>10}")
    for name in bench:
        py, cy = results["python"][name], results["cython"][name]
        print(f"{name:<18}{py * 1e3:>13.2f}{cy * 1e3:>13.2f}{py / cy:>9.2f}x")


if __name__ == "__main__":
    main()
