import itertools

import numpy as np
import pytest

from airmask.ctc import _fb_loops, _fb_numpy, ctc_loss, extended_labels, log_softmax, min_frames
from airmask.errors import InvalidInputError

from conftest import fd_check


def brute_force_loss(logits, target_ids, vocab_size):
    """Independent oracle: enumerate every frame labelling, collapse it, and
    sum the probabilities of those that spell the target."""
    T = logits.shape[0]
    logp = log_softmax(np.asarray(logits, dtype=np.float64))
    target = tuple(int(i) for i in target_ids)
    total = 0.0
    for path in itertools.product(range(vocab_size), repeat=T):
        collapsed = []
        prev = -1
        for s in path:
            if s != prev and s != 0:
                collapsed.append(s)
            prev = s
        if tuple(collapsed) == target:
            total += float(np.exp(sum(logp[t, s] for t, s in enumerate(path))))
    return -np.log(total) if total > 0 else np.inf


class TestKnownValues:
    def test_uniform_two_frames_single_symbol(self):
        # paths (a,a), (a,-), (-,a): 3 * (1/3)^2 -> loss = ln 3
        loss, _ = ctc_loss(np.zeros((2, 3)), [1])
        assert abs(loss - np.log(3.0)) < 1e-12

    def test_near_one_hot_target_loss_near_zero(self):
        logits = np.full((4, 3), -20.0)
        for t, s in enumerate([1, 0, 2, 0]):
            logits[t, s] = 20.0
        loss, _ = ctc_loss(logits, [1, 2])
        assert loss < 1e-6

    def test_loss_non_negative(self, rng):
        for _ in range(20):
            T = int(rng.integers(2, 9))
            K = int(rng.integers(2, 5))
            logits = rng.normal(0, 2, (T, K))
            L = int(rng.integers(1, max(2, T // 2)))
            ids = rng.integers(1, K, L)
            if min_frames(ids) > T:
                continue
            loss, _ = ctc_loss(logits, ids)
            assert loss >= -1e-12


class TestOracle:
    def test_matches_exhaustive_enumeration(self, rng):
        for _ in range(60):
            K = int(rng.integers(2, 5))
            T = int(rng.integers(1, 9))
            logits = rng.normal(0, 2, (T, K))
            L = int(rng.integers(1, 4))
            ids = rng.integers(1, K, L)
            if min_frames(ids) > T:
                continue
            loss, _ = ctc_loss(logits, ids)
            oracle = brute_force_loss(logits, ids, K)
            assert abs(loss - oracle) <= 1e-9 * max(1.0, abs(oracle))


class TestGradient:
    def test_matches_finite_differences(self, rng):
        T, K = 7, 4
        logits = rng.normal(0, 1.5, (T, K))
        ids = np.array([1, 3, 3])
        _, grad = ctc_loss(logits, ids)
        flat = logits.reshape(-1)

        def scalar(v):
            return ctc_loss(v.reshape(T, K), ids)[0]

        fd_check(scalar, flat, grad.reshape(-1), range(T * K), rtol=1e-5)

    def test_grad_rows_sum_to_zero(self, rng):
        logits = rng.normal(0, 1, (6, 4))
        _, grad = ctc_loss(logits, [2, 1])
        assert np.max(np.abs(grad.sum(axis=1))) < 1e-9


class TestValidation:
    def test_infeasible_target_rejected(self):
        with pytest.raises(InvalidInputError):
            ctc_loss(np.zeros((2, 3)), [1, 1])  # repeat needs a blank between

    def test_out_of_vocab_rejected(self):
        with pytest.raises(InvalidInputError):
            ctc_loss(np.zeros((4, 3)), [3])
        with pytest.raises(InvalidInputError):
            ctc_loss(np.zeros((4, 3)), [0])

    def test_min_frames(self):
        assert min_frames(np.array([1, 2, 3])) == 3
        assert min_frames(np.array([1, 1])) == 3
        assert min_frames(np.array([])) == 0

    def test_extended_labels(self):
        assert extended_labels(np.array([2, 1])).tolist() == [0, 2, 0, 1, 0]


class TestDualPaths:
    def test_loop_and_numpy_kernels_agree(self, rng):
        for _ in range(25):
            K = int(rng.integers(2, 6))
            T = int(rng.integers(2, 12))
            logits = rng.normal(0, 2, (T, K))
            L = int(rng.integers(1, 4))
            ids = rng.integers(1, K, L)
            if min_frames(ids) > T:
                continue
            logp = np.ascontiguousarray(log_softmax(logits))
            ext = extended_labels(ids)
            loss_a, occ_a = _fb_loops.py_func(logp, ext) if hasattr(_fb_loops, "py_func") else _fb_loops(logp, ext)
            loss_b, occ_b = _fb_numpy(logp, ext)
            assert abs(loss_a - loss_b) < 1e-10 * max(1.0, abs(loss_b))
            assert np.max(np.abs(occ_a - occ_b)) < 1e-10

    def test_empty_target_all_blanks(self):
        logits = np.zeros((3, 2))
        loss, _ = ctc_loss(logits, [])
        # only path is (-, -, -): prob (1/2)^3
        assert abs(loss - 3 * np.log(2.0)) < 1e-12
