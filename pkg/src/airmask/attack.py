"""Perturbation optimization against the summed multi-room loss.

Each iteration pushes the perturbation down the gradient of

    sum_rooms ctc_loss(recognizer(channel(x + delta, room)), target)
        + lambda * spectral_excess_penalty(delta)

with an adaptive-moment update and an amplitude clip. Every
``check_interval`` iterations the current attack is decoded through a
deterministic channel (fixed mid-range pads) in every generation room; on a
total transcription match lambda rises by a fixed step, and the run stops in
success when a match occurs at the lambda ceiling. The per-check history is
enough to replot iterations-to-reach-lambda curves.
"""

import os
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .channel import AugmentConfig, RoomChannelBank, select_rooms
from .ctc import ctc_loss, min_frames
from .errors import AttackDivergenceError, InvalidInputError
from .psychoacoustic import (
    compute_masking_thresholds,
    f_pam,
    f_pam_gradient,
)
from .signal_core import StftConfig, Waveform, frame_count, stft, write_wav
from .toy_asr import (
    AcousticModel,
    backward_batch,
    featurize_batch_with_cache,
    featurize_backward_batch,
    forward_batch_with_cache,
    greedy_decode,
)

_CHECKPOINT_MAGIC = b"ATKS"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class AttackConfig:
    target: str
    lambda_step: float = 0.05
    lambda_max: float = 1.0
    check_interval: int = 10
    learning_rate: float = 1e-3
    max_iterations: int = 20000
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip: float = 0.5
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    threads: int = 1
    checkpoint_every: int = 0
    checkpoint_path: str = ""

    def __post_init__(self):
        if not self.target:
            raise InvalidInputError("target transcript is empty")
        if not 0.0 < self.lambda_step <= 1.0:
            raise InvalidInputError("lambda_step must lie in (0, 1]")
        if not 0.0 < self.lambda_max <= 1.0:
            raise InvalidInputError("lambda_max must lie in (0, 1]")
        if self.check_interval < 1:
            raise InvalidInputError("check_interval must be >= 1")
        if not 0.0 < self.clip <= 1.0:
            raise InvalidInputError("clip must lie in (0, 1]")
        if self.max_iterations < 1:
            raise InvalidInputError("max_iterations must be >= 1")


@dataclass(frozen=True)
class CheckRecord:
    iteration: int
    lam: float
    ctc_sum: float
    f_pam: float
    matches: int
    total_rooms: int


@dataclass
class AttackState:
    delta: np.ndarray
    lam: float
    iteration: int
    m: np.ndarray
    v: np.ndarray
    match_count: int
    history: list


@dataclass(frozen=True)
class AttackResult:
    delta: Waveform
    attack: Waveform
    lam: float
    status: str
    history: tuple
    iterations: int
    seconds: float
    transcripts: tuple

    @property
    def success(self):
        return self.status == "success"


def _iteration_rng(seed, iteration, stream):
    # counter-based streams: reproducible regardless of scheduling
    return np.random.Generator(np.random.Philox(key=seed, counter=[iteration, stream, 0, 0]))


def _schedule_lambda(match_count, cfg: AttackConfig):
    return min(match_count * cfg.lambda_step, cfg.lambda_max)


class _Workspace:
    """Per-attack state that never changes across iterations: the carrier,
    the batched frequency-domain channel bank, the target ids and the
    precomputed masking thresholds. All per-room work runs as one batched
    numpy pass, so results are independent of any thread configuration."""

    def __init__(self, x: Waveform, rirs, model: AcousticModel, cfg: AttackConfig):
        if not rirs:
            raise InvalidInputError("attack needs at least one room impulse response")
        self.x = x
        self.rirs = rirs
        self.model = model
        self.cfg = cfg
        self.target_ids = model.vocab.encode(cfg.target)
        self.bank = RoomChannelBank(len(x), rirs, cfg.augment)
        self.m_pam = compute_masking_thresholds(stft(x))

    def _draw(self, rng):
        aug = self.cfg.augment
        indices = select_rooms(len(self.rirs), aug, rng) if aug.enable_rooms else list(
            range(len(self.rirs))
        )
        pads = [
            tuple(int(v) for v in rng.integers(0, aug.pad_max + 1, size=2))
            if aug.enable_timeshift
            else (0, 0)
            for _ in indices
        ]
        return indices, pads

    def _ctc_terms(self, logits):
        losses = []
        grads = np.empty_like(logits)
        for j in range(logits.shape[0]):
            try:
                loss_j, grads[j] = ctc_loss(logits[j], self.target_ids)
            except Exception as exc:
                exc.args = (f"room {j}: {exc}",)
                raise
            losses.append(loss_j)
        return losses, grads

    def loss(self, delta, lam, rng):
        x_prime = self.x.samples + delta
        indices, pads = self._draw(rng)
        outs = self.bank.forward_batch(x_prime, indices, pads)
        feats, fcache = featurize_batch_with_cache(outs)
        logits, ncache = forward_batch_with_cache(self.model, feats)
        losses, grad_logits = self._ctc_terms(logits)
        grad_feats = backward_batch(self.model, ncache, grad_logits)
        grad_samples = featurize_backward_batch(grad_feats, fcache)
        grad = self.bank.adjoint_batch(grad_samples, indices, pads)
        ctc_sum = float(sum(losses))

        delta_wave = Waveform(delta)
        penalty = f_pam(delta_wave, self.m_pam)
        value = ctc_sum + lam * penalty
        if lam != 0.0:
            grad = grad + lam * f_pam_gradient(delta_wave, self.m_pam)
        return value, grad, ctc_sum, penalty

    def check(self, delta):
        aug = self.cfg.augment
        pads = (aug.pad_max // 2, aug.pad_max // 2) if aug.enable_timeshift else (0, 0)
        indices = list(range(len(self.rirs)))
        outs = self.bank.forward_batch(self.x.samples + delta, indices, [pads] * len(indices))
        feats, _ = featurize_batch_with_cache(outs)
        logits, _ = forward_batch_with_cache(self.model, feats)
        transcripts = [greedy_decode(logits[j], self.model.vocab) for j in indices]
        return all(t == self.cfg.target for t in transcripts), transcripts


def combined_loss(delta, x: Waveform, rirs, model: AcousticModel, lam, m_pam, cfg: AttackConfig, rng):
    """Summed per-room CTC loss plus lam * masking penalty, with its gradient.

    The penalty term depends only on the perturbation and enters once, not
    per room. Returns (value, gradient, ctc_sum, penalty).
    """
    ws = _Workspace(x, rirs, model, cfg)
    if m_pam is not None:
        ws.m_pam = m_pam
    return ws.loss(np.asarray(delta, dtype=np.float64), lam, rng)


def check_total_match(delta, x: Waveform, rirs, model: AcousticModel, cfg: AttackConfig):
    """Deterministic-channel decode in every room; true iff all equal the target."""
    ws = _Workspace(x, rirs, model, cfg)
    return ws.check(np.asarray(delta, dtype=np.float64))


def _check_feasible(x: Waveform, rirs, model: AcousticModel, cfg: AttackConfig):
    from .channel import canonical_length
    from .toy_asr import logit_frames

    target_ids = model.vocab.encode(cfg.target)
    max_len = max(r.taps.size for r in rirs) if cfg.augment.enable_rooms else 0
    n_out = canonical_length(len(x), cfg.augment, max_len)
    out_frames = logit_frames(frame_count(n_out, StftConfig()))
    need = min_frames(target_ids)
    if out_frames < need:
        raise InvalidInputError(
            f"target {cfg.target!r} needs {need} output frames, channel yields {out_frames}"
        )


def generate_attack(x: Waveform, rirs, model: AcousticModel, cfg: AttackConfig) -> AttackResult:
    """Run the optimization loop until success or the iteration budget ends."""
    if not rirs:
        raise InvalidInputError("attack needs at least one room impulse response")
    _check_feasible(x, rirs, model, cfg)

    start = time.perf_counter()
    ws = _Workspace(x, rirs, model, cfg)
    init_rng = np.random.default_rng(cfg.seed)
    state = AttackState(
        delta=init_rng.uniform(-1e-4, 1e-4, len(x)),
        lam=0.0,
        iteration=0,
        m=np.zeros(len(x)),
        v=np.zeros(len(x)),
        match_count=0,
        history=[],
    )

    best_delta = state.delta.copy()
    best_kind = None  # None -> never matched; "match" -> best_delta is from a match
    best_loss = np.inf
    final_transcripts = ()

    for it in range(1, cfg.max_iterations + 1):
        state.iteration = it
        rng = _iteration_rng(cfg.seed, it, 0)
        value, grad, ctc_sum, penalty = ws.loss(state.delta, state.lam, rng)
        if not (np.isfinite(value) and np.all(np.isfinite(grad))):
            raise AttackDivergenceError(
                f"non-finite loss or gradient at iteration {it}",
                snapshot={
                    "iteration": it,
                    "lambda": state.lam,
                    "value": value,
                    "ctc_sum": ctc_sum,
                    "penalty": penalty,
                    "grad_finite": bool(np.all(np.isfinite(grad))),
                },
            )
        state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
        state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad**2
        m_hat = state.m / (1.0 - cfg.beta1**it)
        v_hat = state.v / (1.0 - cfg.beta2**it)
        state.delta = np.clip(
            state.delta - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.epsilon),
            -cfg.clip,
            cfg.clip,
        )

        if it % cfg.check_interval == 0:
            matched, transcripts = ws.check(state.delta)
            n_match = sum(1 for t in transcripts if t == cfg.target)
            state.history.append(
                CheckRecord(it, state.lam, ctc_sum, penalty, n_match, len(rirs))
            )
            if cfg.checkpoint_every and len(state.history) % cfg.checkpoint_every == 0:
                if cfg.checkpoint_path:
                    save_checkpoint(cfg.checkpoint_path, state)
            if ctc_sum < best_loss and best_kind is None:
                best_loss = ctc_sum
                best_delta = state.delta.copy()
            if matched:
                best_kind = "match"
                best_delta = state.delta.copy()
                final_transcripts = tuple(transcripts)
                if state.lam >= cfg.lambda_max:
                    return _result(x, state.delta, state, "success", start, transcripts)
                state.match_count += 1
                state.lam = _schedule_lambda(state.match_count, cfg)

    return _result(x, best_delta, state, "iteration-budget-exhausted", start, final_transcripts)


def _result(x, delta, state: AttackState, status, start, transcripts):
    delta_w = Waveform(delta)
    attack = Waveform(np.clip(x.samples + delta, -1.0, 1.0))
    return AttackResult(
        delta=delta_w,
        attack=attack,
        lam=state.lam,
        status=status,
        history=tuple(state.history),
        iterations=state.iteration,
        seconds=time.perf_counter() - start,
        transcripts=tuple(transcripts),
    )


def export_attack(result: AttackResult, out_dir):
    """Write attack.wav (x + delta, clipped) and delta.wav; count clipping."""
    os.makedirs(out_dir, exist_ok=True)
    attack_path = os.path.join(out_dir, "attack.wav")
    delta_path = os.path.join(out_dir, "delta.wav")
    raw = result.attack.samples  # already clipped to [-1, 1] at result build
    write_wav(attack_path, result.attack)
    write_wav(delta_path, result.delta)
    clipped = int(np.sum(np.abs(raw) >= 1.0))
    return {"attack": attack_path, "delta": delta_path, "clipped_samples": clipped}


def write_history_csv(history, path):
    with open(path, "w") as fh:
        fh.write("iteration,lambda,ctc_sum,f_pam,matches,total_rooms\n")
        for r in history:
            fh.write(
                f"{r.iteration},{r.lam!r},{r.ctc_sum!r},{r.f_pam!r},{r.matches},{r.total_rooms}\n"
            )


def save_checkpoint(path, state: AttackState):
    n = state.delta.size
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQdQQ", _CHECKPOINT_VERSION, state.iteration, state.lam, state.match_count, n))
        for arr in (state.delta, state.m, state.v):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> AttackState:
    from .errors import FormatError

    with open(path, "rb") as fh:
        if fh.read(4) != _CHECKPOINT_MAGIC:
            raise FormatError(f"{path}: not an attack checkpoint")
        version, iteration, lam, match_count, n = struct.unpack("<IQdQQ", fh.read(36))
        if version != _CHECKPOINT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        arrays = []
        for _ in range(3):
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise FormatError(f"{path}: truncated checkpoint")
            arrays.append(np.frombuffer(buf, dtype="<f8").copy())
    return AttackState(
        delta=arrays[0],
        lam=lam,
        iteration=iteration,
        m=arrays[1],
        v=arrays[2],
        match_count=match_count,
        history=[],
    )
