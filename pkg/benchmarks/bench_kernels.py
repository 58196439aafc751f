#!/usr/bin/env python3
"""Benchmark the two implementations of the hot kernels.

Every hot kernel ships as a numba scalar-loop version and a vectorized
pure-numpy fallback (selected at import time via AIRMASK_NO_NUMBA). This
script times both on attack-realistic shapes and checks they agree.

Run:  python3 benchmarks/bench_kernels.py
"""

import time

import numpy as np

from airmask import _accel
from airmask.ctc import _fb_loops, _fb_numpy, extended_labels, log_softmax
from airmask.room_sim import _accumulate_taps_loops, _accumulate_taps_numpy

if _accel.USING_NUMBA:
    from numba import njit

    fb_numba = njit(cache=True, nogil=True)(_fb_loops.py_func if hasattr(_fb_loops, "py_func") else _fb_loops)
    taps_numba = njit(cache=True, nogil=True)(
        _accumulate_taps_loops.py_func if hasattr(_accumulate_taps_loops, "py_func") else _accumulate_taps_loops
    )
else:
    fb_numba = None
    taps_numba = None


def timeit(fn, *args, repeat=200):
    fn(*args)  # warm up (JIT compile on the numba path)
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn(*args)
    return (time.perf_counter() - t0) / repeat


def bench_ctc():
    rng = np.random.default_rng(0)
    T, K, L = 40, 7, 3  # one room's logits in the reference attack
    logp = np.ascontiguousarray(log_softmax(rng.normal(0, 2, (T, K))))
    ext = extended_labels(rng.integers(1, K, L))

    t_np = timeit(lambda: _fb_numpy(logp, ext))
    print(f"ctc forward-backward  numpy   {t_np * 1e6:9.1f} us")
    if fb_numba is not None:
        t_nb = timeit(lambda: fb_numba(logp, ext))
        loss_a, occ_a = fb_numba(logp, ext)
        loss_b, occ_b = _fb_numpy(logp, ext)
        assert abs(loss_a - loss_b) < 1e-10
        assert np.max(np.abs(occ_a - occ_b)) < 1e-10
        print(f"ctc forward-backward  numba   {t_nb * 1e6:9.1f} us   ({t_np / t_nb:5.1f}x)")


def bench_ism_taps():
    rng = np.random.default_rng(1)
    n_images, n_taps = 1500, 4000  # order-6 shoebox at 0.25 s
    delays = rng.uniform(100.0, 3800.0, n_images)
    amps = rng.normal(0, 0.2, n_images)

    t_np = timeit(lambda: _accumulate_taps_numpy(np.zeros(n_taps), delays, amps, 40.0), repeat=50)
    print(f"ism tap accumulation  numpy   {t_np * 1e6:9.1f} us")
    if taps_numba is not None:
        t_nb = timeit(lambda: taps_numba(np.zeros(n_taps), delays, amps, 40.0), repeat=50)
        a = taps_numba(np.zeros(n_taps), delays, amps, 40.0)
        b = _accumulate_taps_numpy(np.zeros(n_taps), delays, amps, 40.0)
        assert np.max(np.abs(a - b)) < 1e-12
        print(f"ism tap accumulation  numba   {t_nb * 1e6:9.1f} us   ({t_np / t_nb:5.1f}x)")


if __name__ == "__main__":
    print(f"numba active: {_accel.USING_NUMBA}")
    bench_ctc()
    bench_ism_taps()
