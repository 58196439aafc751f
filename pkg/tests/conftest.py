import numpy as np
import pytest

from airmask.signal_core import Waveform


@pytest.fixture
def rng():
    return np.random.default_rng(20260810)


@pytest.fixture
def noise_wave(rng):
    return Waveform(rng.normal(0.0, 0.1, 16000))


def fd_check(func, x, grad, coords, h=1e-6, rtol=1e-4, floor_scale=1e-8):
    """Central finite differences of scalar `func` against `grad` at `coords`.

    The relative error denominator is floored at `floor_scale` times the
    largest gradient entry so near-zero coordinates do not dominate.
    """
    gmax = max(np.max(np.abs(grad)), 1e-12)
    worst = 0.0
    for i in coords:
        xp = x.copy()
        xp[i] += h
        fp = func(xp)
        xp[i] -= 2 * h
        fm = func(xp)
        fd = (fp - fm) / (2 * h)
        denom = max(abs(fd), abs(grad[i]), floor_scale * gmax)
        worst = max(worst, abs(fd - grad[i]) / denom)
    assert worst < rtol, f"finite-difference mismatch: {worst} >= {rtol}"
    return worst
