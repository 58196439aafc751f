"""Edit-distance metrics and the simulated held-out-room evaluation harness.

The phoneme error rate is computed at character level here (the toy
recognizer has no phoneme layer); report headers label it accordingly so the
numbers are read as trends, not absolutes. Playback is a simulated channel
over rooms never seen during generation.
"""

import json
from dataclasses import dataclass

import numpy as np

from .channel import AugmentConfig, simulate_channel
from .errors import InvalidInputError
from .parallel import thread_map
from .signal_core import Waveform
from .toy_asr import AcousticModel, featurize, forward, greedy_decode


def edit_distance(a, b):
    """Levenshtein distance with unit insert/delete/substitute costs."""
    a, b = list(a), list(b)
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = np.arange(len(b) + 1)
    for i, ca in enumerate(a, start=1):
        cur = np.empty(len(b) + 1, dtype=np.int64)
        cur[0] = i
        for j, cb in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb))
        prev = cur
    return int(prev[-1])


def wer(ref, hyp):
    """Word error rate: edit distance over whitespace tokens / |ref words|."""
    ref_words = ref.split()
    if not ref_words:
        raise InvalidInputError("reference has no words")
    return edit_distance(ref_words, hyp.split()) / len(ref_words)


def per(ref, hyp):
    """Character-level error rate (phoneme-rate proxy), whitespace removed."""
    ref_chars = [c for c in ref if not c.isspace()]
    if not ref_chars:
        raise InvalidInputError("reference has no characters")
    hyp_chars = [c for c in hyp if not c.isspace()]
    return edit_distance(ref_chars, hyp_chars) / len(ref_chars)


@dataclass(frozen=True)
class EvalReport:
    trials: int
    success_rate: float
    per: float
    wer: float
    transcripts: tuple
    channel: str = "simulated"
    per_level: str = "character"


def evaluate_attack(
    attack: Waveform,
    target: str,
    heldout_rirs,
    model: AcousticModel,
    cfg: AugmentConfig,
    trials=10,
    threads=1,
) -> EvalReport:
    """Decode the attack through `trials` random held-out channels.

    Each trial draws one held-out room and fresh pads; success means the
    decoded transcript equals the target exactly.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    if not heldout_rirs:
        raise InvalidInputError("no held-out rooms")
    if not target:
        raise InvalidInputError("target transcript is empty")
    max_len = max(r.taps.size for r in heldout_rirs)

    def trial(i):
        try:
            rng = np.random.Generator(np.random.Philox(key=cfg.seed, counter=[i, 0, 0, 1]))
            room = int(rng.integers(len(heldout_rirs)))
            co = simulate_channel(
                attack, heldout_rirs[room], cfg, rng=rng, canonical_rir_len=max_len, room_index=room
            )
            return greedy_decode(forward(model, featurize(co.waveform)), model.vocab)
        except Exception as exc:
            exc.args = (f"trial {i}: {exc}",)
            raise

    transcripts = thread_map(trial, range(trials), threads)
    successes = sum(1 for t in transcripts if t == target)
    return EvalReport(
        trials=trials,
        success_rate=successes / trials,
        per=float(np.mean([per(target, t) for t in transcripts])),
        wer=float(np.mean([wer(target, t) for t in transcripts])),
        transcripts=tuple(transcripts),
    )


def report_to_json(report: EvalReport, flags=None, lam=None, generation_time_s=None):
    doc = {
        "channel": report.channel,
        "per_level": report.per_level,
        "trials": report.trials,
        "success_rate": report.success_rate,
        "per": report.per,
        "wer": report.wer,
        "transcripts": list(report.transcripts),
    }
    if flags is not None:
        doc["fr"], doc["rs"], doc["ts"] = (bool(v) for v in flags)
    if lam is not None:
        doc["lambda"] = lam
    if generation_time_s is not None:
        doc["generation_time_s"] = generation_time_s
    return json.dumps(doc, sort_keys=True) + "\n"


def report_to_csv(report: EvalReport, flags, lam, generation_time_s=""):
    """One row in the ablation-table column order."""
    fr, rs, ts = ("+" if v else "-" for v in flags)
    header = "fr,rs,ts,lambda,success_rate,per,wer,generation_time_s\n"
    row = (
        f"{fr},{rs},{ts},{lam!r},{report.success_rate!r},"
        f"{report.per!r},{report.wer!r},{generation_time_s}\n"
    )
    return header + row
