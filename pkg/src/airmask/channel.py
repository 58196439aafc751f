"""Per-iteration playback-channel augmentation with exact adjoints.

The simulated path from file to recognizer is: random zero-padding of both
ends (trigger misalignment), a speaker band-pass, the room impulse response,
and the microphone band-pass (the same [50; 7900] Hz kernel stands in for
both transducers). Every stage is linear in the audio, so the chain's
backward pass is the adjoint chain in reverse and needs no stored
activations. Disabled stages are exact pass-throughs.

Outputs are zero-extended to a canonical per-batch length (worst-case pads
plus filter and room tails) so all rooms produce equal shapes; nothing is
ever truncated.
"""

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import InvalidInputError
from .room_sim import Rir
from .signal_core import (
    SAMPLE_RATE,
    Waveform,
    convolve_adjoint,
    convolve_samples,
    design_bandpass,
)

FR_LOW_HZ = 50.0
FR_HIGH_HZ = 7900.0
FR_TAPS = 511

_fr_kernel_cache = {}


def fr_kernel(sr=SAMPLE_RATE):
    if sr not in _fr_kernel_cache:
        _fr_kernel_cache[sr] = design_bandpass(FR_LOW_HZ, FR_HIGH_HZ, sr, FR_TAPS)
    return _fr_kernel_cache[sr]


@dataclass(frozen=True)
class AugmentConfig:
    """Which channel stages run, plus padding and room-batch policy."""

    enable_fr: bool = True
    enable_rooms: bool = True
    enable_timeshift: bool = True
    pad_max: int = 1600
    room_batch: object = "all"
    seed: int = 0

    def __post_init__(self):
        if self.pad_max < 0:
            raise InvalidInputError("pad_max must be >= 0")
        if self.room_batch != "all" and (not isinstance(self.room_batch, int) or self.room_batch < 1):
            raise InvalidInputError('room_batch must be "all" or a positive integer')


@dataclass(frozen=True)
class ChannelOutput:
    waveform: Waveform
    left_pad: int
    right_pad: int
    room_index: int = -1


def random_pad(w: Waveform, pad_max, rng):
    """Zero-pad both ends by independent uniform draws from [0, pad_max]."""
    if pad_max < 0:
        raise InvalidInputError("pad_max must be >= 0")
    left, right = (int(v) for v in rng.integers(0, pad_max + 1, size=2))
    padded = np.concatenate([np.zeros(left), w.samples, np.zeros(right)])
    return Waveform(padded, w.sample_rate), left, right


def canonical_length(n_in, cfg: AugmentConfig, rir_len=0):
    n = n_in
    if cfg.enable_timeshift:
        n += 2 * cfg.pad_max
    if cfg.enable_fr:
        n += 2 * (FR_TAPS - 1)
    if cfg.enable_rooms:
        n += max(rir_len - 1, 0)
    return n


def _stage_lengths(n_in, left, right, cfg, rir_len):
    lens = [n_in]
    if cfg.enable_timeshift:
        lens.append(lens[-1] + left + right)
    if cfg.enable_fr:
        lens.append(lens[-1] + FR_TAPS - 1)
    if cfg.enable_rooms:
        lens.append(lens[-1] + rir_len - 1)
    if cfg.enable_fr:
        lens.append(lens[-1] + FR_TAPS - 1)
    return lens


def simulate_channel(
    w: Waveform,
    rir: Rir = None,
    cfg: AugmentConfig = AugmentConfig(),
    rng=None,
    pads=None,
    canonical_rir_len=None,
    room_index=-1,
) -> ChannelOutput:
    """One pass through the enabled stages, zero-extended to canonical length."""
    if len(w) == 0:
        raise InvalidInputError("channel input is empty")
    if cfg.enable_rooms and rir is None:
        raise InvalidInputError("room stage enabled but no RIR given")
    left = right = 0
    x = w.samples
    if cfg.enable_timeshift:
        if pads is not None:
            left, right = pads
            if left < 0 or right < 0 or left > cfg.pad_max or right > cfg.pad_max:
                raise InvalidInputError(f"pads {pads} outside [0, {cfg.pad_max}]")
        else:
            if rng is None:
                raise InvalidInputError("time shift enabled: need an rng or explicit pads")
            left, right = (int(v) for v in rng.integers(0, cfg.pad_max + 1, size=2))
        x = np.concatenate([np.zeros(left), x, np.zeros(right)])
    if cfg.enable_fr:
        x = convolve_samples(x, fr_kernel(w.sample_rate).taps)
    if cfg.enable_rooms:
        x = convolve_samples(x, rir.taps)
    if cfg.enable_fr:
        x = convolve_samples(x, fr_kernel(w.sample_rate).taps)
    rir_len = canonical_rir_len if canonical_rir_len is not None else (rir.taps.size if rir is not None else 0)
    total = canonical_length(len(w), cfg, rir_len)
    if x.size < total:
        x = np.concatenate([x, np.zeros(total - x.size)])
    return ChannelOutput(Waveform(x, w.sample_rate), left, right, room_index)


def channel_adjoint(grad_out, n_in, left, right, rir, cfg: AugmentConfig):
    """Adjoint of `simulate_channel` in its audio input.

    `grad_out` is a cotangent over the canonical-length output; the return
    value is the gradient over the `n_in` input samples.
    """
    rir_len = rir.taps.size if rir is not None else 0
    lens = _stage_lengths(n_in, left, right, cfg, rir_len if cfg.enable_rooms else 0)
    g = np.asarray(grad_out, dtype=np.float64)[: lens[-1]]
    stage = len(lens) - 1
    if cfg.enable_fr:
        stage -= 1
        g = convolve_adjoint(g, fr_kernel().taps, lens[stage])
    if cfg.enable_rooms:
        stage -= 1
        g = convolve_adjoint(g, rir.taps, lens[stage])
    if cfg.enable_fr:
        stage -= 1
        g = convolve_adjoint(g, fr_kernel().taps, lens[stage])
    if cfg.enable_timeshift:
        g = g[left : left + n_in]
    return g


class RoomChannel:
    """Frequency-domain form of `simulate_channel` for one room and one input size.

    The three convolution stages collapse into a single combined kernel whose
    FFT is precomputed, so the per-iteration cost is one forward and one
    inverse transform instead of re-transforming the static kernels. Output
    and adjoint agree with `simulate_channel` / `channel_adjoint` to rounding.
    """

    def __init__(self, n_in, rir, cfg: AugmentConfig, canonical_rir_len=None):
        if cfg.enable_rooms and rir is None:
            raise InvalidInputError("room stage enabled but no RIR given")
        self.n_in = n_in
        self.cfg = cfg
        kernel = np.ones(1)
        if cfg.enable_fr:
            fr = fr_kernel().taps
            kernel = np.convolve(kernel, fr)
        if cfg.enable_rooms:
            kernel = convolve_samples(kernel, rir.taps)
        if cfg.enable_fr:
            kernel = convolve_samples(kernel, fr)
        self.kernel = kernel
        self.kernel_len = kernel.size
        pad_budget = 2 * cfg.pad_max if cfg.enable_timeshift else 0
        self.nfft = scipy.fft.next_fast_len(n_in + pad_budget + kernel.size - 1)
        self.kf = np.fft.rfft(kernel, self.nfft)
        rir_len = canonical_rir_len if canonical_rir_len is not None else (
            rir.taps.size if rir is not None else 0
        )
        self.canonical = canonical_length(n_in, cfg, rir_len)

    def _natural_len(self, left, right):
        return self.n_in + left + right + self.kernel_len - 1

    def forward(self, x, left=0, right=0):
        out = np.zeros(self.canonical)
        if self.kernel_len == 1:  # every stage disabled: exact pass-through
            out[left : left + self.n_in] = x
            return out
        buf = np.zeros(self.nfft)
        buf[left : left + self.n_in] = x
        y = np.fft.irfft(np.fft.rfft(buf) * self.kf, self.nfft)
        n = min(self._natural_len(left, right), self.canonical)
        out[:n] = y[:n]
        return out

    def adjoint(self, grad_out, left=0, right=0):
        if self.kernel_len == 1:
            return np.asarray(grad_out, dtype=np.float64)[left : left + self.n_in].copy()
        g = np.zeros(self.nfft)
        n = min(self._natural_len(left, right), self.canonical)
        g[:n] = grad_out[:n]
        z = np.fft.irfft(np.fft.rfft(g) * np.conj(self.kf), self.nfft)
        return z[left : left + self.n_in]


class RoomChannelBank:
    """All rooms' channels batched at one FFT size.

    The pads shift the input inside the transform via the FFT shift theorem,
    so one forward transform of the input serves every room; the per-room
    spectra differ only by a phase ramp and the combined kernel.
    """

    def __init__(self, n_in, rirs, cfg: AugmentConfig):
        if not rirs:
            raise InvalidInputError("empty RIR list")
        self.n_in = n_in
        self.cfg = cfg
        max_len = max(r.taps.size for r in rirs)
        self.channels = [RoomChannel(n_in, r, cfg, canonical_rir_len=max_len) for r in rirs]
        self.canonical = self.channels[0].canonical
        self.nfft = scipy.fft.next_fast_len(max(ch.nfft for ch in self.channels))
        self.kf = np.stack([np.fft.rfft(ch.kernel, self.nfft) for ch in self.channels])
        self.omega = -2j * np.pi * np.arange(self.nfft // 2 + 1) / self.nfft

    def _phases(self, lefts):
        return np.exp(self.omega[None, :] * np.asarray(lefts, dtype=np.float64)[:, None])

    def forward_batch(self, x, indices, pads):
        """(rooms, canonical) outputs for one input against selected rooms."""
        xf = np.fft.rfft(x, self.nfft)
        lefts = [p[0] for p in pads]
        spec = xf[None, :] * self._phases(lefts) * self.kf[indices]
        y = np.fft.irfft(spec, self.nfft, axis=1)
        return y[:, : self.canonical]

    def adjoint_batch(self, grads, indices, pads):
        """Sum over rooms of the adjoint applied to each room's cotangent.

        The conjugate phase ramp already undoes each room's pad shift, so
        every row is sliced at offset zero.
        """
        g = np.zeros((len(indices), self.nfft))
        g[:, : min(self.canonical, self.nfft)] = grads[:, : min(self.canonical, self.nfft)]
        lefts = [p[0] for p in pads]
        spec = np.fft.rfft(g, axis=1) * np.conj(self._phases(lefts) * self.kf[indices])
        z = np.fft.irfft(spec, self.nfft, axis=1)
        return z[:, : self.n_in].sum(axis=0)


def select_rooms(n_rooms, cfg: AugmentConfig, rng):
    """Room indices for one iteration: all, or a fresh uniform subset."""
    if n_rooms < 1:
        raise InvalidInputError("no rooms to select from")
    if cfg.room_batch == "all" or cfg.room_batch >= n_rooms:
        return list(range(n_rooms))
    picked = rng.choice(n_rooms, size=cfg.room_batch, replace=False)
    return sorted(int(i) for i in picked)


def batch_channel(x_prime: Waveform, rirs, cfg: AugmentConfig, rng):
    """One ChannelOutput per selected room; pads drawn independently per room."""
    if not rirs:
        raise InvalidInputError("empty RIR list")
    indices = select_rooms(len(rirs), cfg, rng) if cfg.enable_rooms else list(range(len(rirs)))
    max_len = max(r.taps.size for r in rirs)
    pads = [
        tuple(int(v) for v in rng.integers(0, cfg.pad_max + 1, size=2)) if cfg.enable_timeshift else (0, 0)
        for _ in indices
    ]
    return [
        simulate_channel(
            x_prime,
            rirs[i],
            cfg,
            pads=pads[j],
            canonical_rir_len=max_len,
            room_index=i,
        )
        for j, i in enumerate(indices)
    ]
