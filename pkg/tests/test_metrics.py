import numpy as np
import pytest

from airmask.channel import AugmentConfig
from airmask.errors import InvalidInputError
from airmask.metrics import (
    EvalReport,
    edit_distance,
    evaluate_attack,
    per,
    report_to_csv,
    report_to_json,
    wer,
)
from airmask.room_sim import Rir
from airmask.signal_core import Waveform
from airmask.toy_asr import Vocab, init_model


class TestEditDistance:
    def test_identical(self):
        assert edit_distance("abc", "abc") == 0

    def test_classic_pair(self):
        assert edit_distance("kitten", "sitting") == 3

    def test_against_empty(self):
        assert edit_distance("abcd", "") == 4
        assert edit_distance("", "xy") == 2

    def test_metric_properties(self, rng):
        alphabet = list("abcd")
        seqs = [
            "".join(rng.choice(alphabet, size=rng.integers(0, 8)))
            for _ in range(12)
        ]
        for a in seqs:
            assert edit_distance(a, a) == 0
            for b in seqs:
                d_ab = edit_distance(a, b)
                assert d_ab >= 0
                assert d_ab == edit_distance(b, a)
                if a != b:
                    assert d_ab > 0
                for c in seqs:
                    assert d_ab <= edit_distance(a, c) + edit_distance(c, b)


class TestWer:
    def test_exact(self):
        assert wer("the cat sat", "the cat sat") == 0.0

    def test_single_deletion(self):
        assert wer("the cat sat", "the cat") == pytest.approx(1 / 3)

    def test_can_exceed_one(self):
        assert wer("one", "one two three four") > 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(InvalidInputError):
            wer("   ", "something")


class TestPer:
    def test_exact(self):
        assert per("abc", "abc") == 0.0

    def test_substitution(self):
        assert per("ab", "ac") == 0.5

    def test_denominator_is_reference(self):
        assert per("ab", "abcd") == 1.0
        assert per("abcd", "ab") == 0.5

    def test_whitespace_removed(self):
        assert per("a b", "ab") == 0.0

    def test_empty_reference_rejected(self):
        with pytest.raises(InvalidInputError):
            per("", "x")


def constant_model(vocab, symbol_index):
    model = init_model(vocab, 8, 8, seed=0)
    b3 = np.full(len(vocab), -10.0)
    b3[symbol_index] = 10.0
    return model.with_params(
        (
            np.zeros_like(model.w1),
            model.b1,
            np.zeros_like(model.w2),
            model.b2,
            np.zeros_like(model.w3),
            b3,
        )
    )


@pytest.fixture
def rirs():
    taps = np.zeros(64)
    taps[0] = 1.0
    return [Rir(taps, peak_delay=0), Rir(taps, peak_delay=0)]


class TestEvaluateAttack:
    def test_always_correct_model(self, rng, rirs):
        vocab = Vocab.from_letters("ab")
        model = constant_model(vocab, 1)  # every frame decodes 'a'
        wave = Waveform(rng.normal(0, 0.1, 4000))
        report = evaluate_attack(wave, "a", rirs, model, AugmentConfig(pad_max=16, seed=4), trials=10)
        assert report.success_rate == 1.0
        assert report.per == 0.0
        assert report.wer == 0.0

    def test_never_correct_model(self, rng, rirs):
        vocab = Vocab.from_letters("ab")
        model = constant_model(vocab, 2)  # decodes 'b', target is 'a'
        wave = Waveform(rng.normal(0, 0.1, 4000))
        report = evaluate_attack(wave, "a", rirs, model, AugmentConfig(pad_max=16, seed=4), trials=10)
        assert report.success_rate == 0.0

    def test_success_implies_zero_rates_per_trial(self, rng, rirs):
        vocab = Vocab.from_letters("ab")
        model = constant_model(vocab, 1)
        wave = Waveform(rng.normal(0, 0.1, 4000))
        report = evaluate_attack(wave, "a", rirs, model, AugmentConfig(pad_max=16, seed=4), trials=7)
        for t in report.transcripts:
            if t == "a":
                assert per("a", t) == 0.0 and wer("a", t) == 0.0

    def test_rate_is_exact_fraction(self, rng, rirs):
        vocab = Vocab.from_letters("ab")
        model = constant_model(vocab, 1)
        wave = Waveform(rng.normal(0, 0.1, 4000))
        report = evaluate_attack(wave, "a", rirs, model, AugmentConfig(pad_max=16, seed=4), trials=8)
        successes = sum(1 for t in report.transcripts if t == "a")
        assert report.success_rate == successes / 8

    def test_deterministic_given_seed(self, rng, rirs):
        vocab = Vocab.from_letters("ab")
        model = constant_model(vocab, 1)
        wave = Waveform(rng.normal(0, 0.1, 4000))
        cfg = AugmentConfig(pad_max=16, seed=4)
        a = evaluate_attack(wave, "a", rirs, model, cfg, trials=5)
        b = evaluate_attack(wave, "a", rirs, model, cfg, trials=5)
        assert a.transcripts == b.transcripts

    def test_thread_count_does_not_change_results(self, rng, rirs):
        vocab = Vocab.from_letters("ab")
        model = constant_model(vocab, 1)
        wave = Waveform(rng.normal(0, 0.1, 4000))
        cfg = AugmentConfig(pad_max=16, seed=4)
        a = evaluate_attack(wave, "a", rirs, model, cfg, trials=6, threads=1)
        b = evaluate_attack(wave, "a", rirs, model, cfg, trials=6, threads=4)
        assert a == b

    def test_zero_trials_rejected(self, rng, rirs):
        vocab = Vocab.from_letters("ab")
        model = constant_model(vocab, 1)
        with pytest.raises(InvalidInputError):
            evaluate_attack(Waveform(np.zeros(4000)), "a", rirs, model, AugmentConfig(), trials=0)


class TestReportOutput:
    def test_csv_row(self):
        report = EvalReport(10, 0.4, 0.03, 0.09, ("a",) * 10)
        text = report_to_csv(report, (True, True, True), 0.15, 11.5)
        lines = text.splitlines()
        assert lines[0] == "fr,rs,ts,lambda,success_rate,per,wer,generation_time_s"
        assert lines[1] == "+,+,+,0.15,0.4,0.03,0.09,11.5"

    def test_json_sorted_and_labelled(self):
        report = EvalReport(2, 0.5, 0.1, 0.5, ("a", "b"))
        doc = report_to_json(report, flags=(True, False, True), lam=0.15, generation_time_s=3.5)
        import json

        parsed = json.loads(doc)
        assert parsed["channel"] == "simulated"
        assert parsed["per_level"] == "character"
        assert parsed["rs"] is False
        assert parsed["lambda"] == 0.15
