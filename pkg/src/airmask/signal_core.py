"""Waveform containers, STFT/ISTFT, FIR filtering, convolution and WAV I/O.

Everything operates at a fixed internal rate of 16 kHz in float64; files at
any other rate are rejected rather than resampled. All operations are pure
functions of their inputs and every linear operation ships with its adjoint,
so gradient chains elsewhere in the package can be assembled without an
autodiff framework.
"""

from dataclasses import dataclass

import numpy as np
import scipy.io.wavfile
import scipy.signal

from .errors import FormatError, InvalidInputError

SAMPLE_RATE = 16000

_PCM16_SCALE = 32767.0


def _as_samples(values):
    # own the buffer before freezing it, so callers' arrays stay writeable
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 1:
        raise InvalidInputError(f"samples must be one-dimensional, got shape {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise InvalidInputError("samples contain non-finite values")
    return arr


@dataclass(frozen=True)
class Waveform:
    """Mono audio as float64 samples in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        arr = _as_samples(self.samples)
        arr.flags.writeable = False
        object.__setattr__(self, "samples", arr)
        if int(self.sample_rate) <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def _window_array(name, length):
    if name == "hann":
        # periodic taper, exact overlap-add behaviour at power-of-two hops
        n = np.arange(length)
        return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / length)
    if name == "rect":
        return np.ones(length)
    raise InvalidInputError(f"unknown window {name!r} (supported: hann, rect)")


@dataclass(frozen=True)
class StftConfig:
    """Analysis grid: window length (power of two), hop and taper."""

    window_len: int = 512
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        w = int(self.window_len)
        h = int(self.hop)
        if w <= 0 or (w & (w - 1)) != 0:
            raise InvalidInputError(f"window_len must be a power of two, got {w}")
        if not 0 < h <= w:
            raise InvalidInputError(f"hop must satisfy 0 < hop <= window_len, got {h}")
        object.__setattr__(self, "window_len", w)
        object.__setattr__(self, "hop", h)
        taper = _window_array(self.window, w)
        # weighted overlap-add inverse needs the summed squared taper to stay
        # bounded away from zero over the steady-state interior
        den = np.zeros(4 * w)
        for off in range(0, 3 * w, h):
            den[off : off + w] += taper**2
        if den[w : 2 * w].min() <= 1e-8:
            raise InvalidInputError(
                f"window {self.window!r} with hop {h} cannot be inverted by overlap-add"
            )

    @property
    def taper(self):
        return _window_array(self.window, self.window_len)

    @property
    def bins(self):
        return self.window_len // 2 + 1


@dataclass(frozen=True)
class Spectrogram:
    """frames x bins complex grid with its frequency and time steps."""

    values: np.ndarray
    bin_hz: float
    frame_s: float

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.complex128, copy=True)
        if arr.ndim != 2:
            raise InvalidInputError(f"spectrogram must be 2-D, got shape {arr.shape}")
        if arr.size and not np.all(np.isfinite(arr)):
            raise InvalidInputError("spectrogram contains non-finite values")
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def n_bins(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class FilterKernel:
    """Linear-phase FIR taps plus a human-readable band description."""

    taps: np.ndarray
    description: str = ""

    def __post_init__(self):
        arr = _as_samples(self.taps)
        if arr.size % 2 == 0:
            raise InvalidInputError(f"tap count must be odd, got {arr.size}")
        arr.flags.writeable = False
        object.__setattr__(self, "taps", arr)


def frame_count(n_samples, cfg):
    """Frames covering `n_samples`: the last window is zero-padded if the
    signal does not end on a hop boundary."""
    if n_samples < cfg.window_len:
        raise InvalidInputError(
            f"signal of {n_samples} samples is shorter than one {cfg.window_len}-sample window"
        )
    return 1 + -((n_samples - cfg.window_len) // -cfg.hop)


def _frame_signal(x, cfg):
    n = frame_count(x.size, cfg)
    total = cfg.window_len + (n - 1) * cfg.hop
    padded = np.zeros(total)
    padded[: x.size] = x
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(n)[:, None]
    return padded[idx]


def stft(w: Waveform, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Windowed rfft per frame. Linear in the input samples."""
    frames = _frame_signal(w.samples, cfg)
    values = np.fft.rfft(frames * cfg.taper[None, :], axis=1)
    return Spectrogram(values, bin_hz=w.sample_rate / cfg.window_len, frame_s=cfg.hop / w.sample_rate)


def _check_grid(s: Spectrogram, cfg: StftConfig, sr=SAMPLE_RATE):
    if s.n_bins != cfg.bins:
        raise InvalidInputError(f"spectrogram has {s.n_bins} bins, config expects {cfg.bins}")
    if abs(s.bin_hz * cfg.window_len - sr) > 1e-6 or abs(s.frame_s * sr - cfg.hop) > 1e-6:
        raise InvalidInputError("spectrogram grid does not match the STFT config")


def istft(s: Spectrogram, cfg: StftConfig = StftConfig()) -> Waveform:
    """Weighted overlap-add inverse, normalized by the summed squared taper.

    Reconstruction is exact (to rounding) wherever the taper overlap covers
    the signal; the first and last partial windows are best-effort.
    """
    _check_grid(s, cfg)
    taper = cfg.taper
    n = s.n_frames
    total = cfg.window_len + (n - 1) * cfg.hop
    y = np.zeros(total)
    den = np.zeros(total)
    segs = np.fft.irfft(s.values, n=cfg.window_len, axis=1)
    for t in range(n):
        o = t * cfg.hop
        y[o : o + cfg.window_len] += segs[t] * taper
        den[o : o + cfg.window_len] += taper**2
    out = np.where(den > 1e-10, y / np.where(den > 1e-10, den, 1.0), 0.0)
    return Waveform(out, int(round(cfg.hop / s.frame_s)))


def stft_batch(rows, cfg: StftConfig = StftConfig()):
    """`stft` over a (batch, samples) array; returns (batch, frames, bins)."""
    rows = np.asarray(rows, dtype=np.float64)
    n = frame_count(rows.shape[1], cfg)
    total = cfg.window_len + (n - 1) * cfg.hop
    padded = np.zeros((rows.shape[0], total))
    padded[:, : rows.shape[1]] = rows
    idx = np.arange(cfg.window_len)[None, :] + cfg.hop * np.arange(n)[:, None]
    frames = padded[:, idx]  # (batch, frames, window)
    return np.fft.rfft(frames * cfg.taper[None, None, :], axis=2)


def stft_adjoint_batch(cotangent, n_samples, cfg: StftConfig = StftConfig()):
    """`stft_adjoint` over a (batch, frames, bins) cotangent."""
    g = np.asarray(cotangent, dtype=np.complex128)
    n = frame_count(n_samples, cfg)
    if g.shape[1:] != (n, cfg.bins):
        raise InvalidInputError(f"cotangent shape {g.shape} does not match grid ({n}, {cfg.bins})")
    h = g.copy()
    h[:, :, 1:-1] *= 0.5
    segs = np.fft.irfft(h, n=cfg.window_len, axis=2) * cfg.window_len
    segs *= cfg.taper[None, None, :]
    grad = np.zeros((g.shape[0], cfg.window_len + (n - 1) * cfg.hop))
    for t in range(n):
        o = t * cfg.hop
        grad[:, o : o + cfg.window_len] += segs[:, t]
    return grad[:, :n_samples]


def stft_adjoint(cotangent, n_samples, cfg: StftConfig = StftConfig()):
    """Adjoint of `stft` as a map from samples to the complex grid.

    `cotangent[t, k]` holds dL/dRe + 1j*dL/dIm for cell (t, k); the return
    value is dL/dx over the original `n_samples` samples. Cells at bins 0 and
    Nyquist must carry zero imaginary cotangent (the forward output there is
    always real, so no differentiable loss produces one).
    """
    g = np.asarray(cotangent, dtype=np.complex128)
    n = frame_count(n_samples, cfg)
    if g.shape != (n, cfg.bins):
        raise InvalidInputError(f"cotangent shape {g.shape} does not match grid ({n}, {cfg.bins})")
    h = g.copy()
    h[:, 1:-1] *= 0.5
    segs = np.fft.irfft(h, n=cfg.window_len, axis=1) * cfg.window_len
    segs *= cfg.taper[None, :]
    grad = np.zeros(cfg.window_len + (n - 1) * cfg.hop)
    for t in range(n):
        o = t * cfg.hop
        grad[o : o + cfg.window_len] += segs[t]
    return grad[:n_samples]


def design_bandpass(low_hz, high_hz, sr=SAMPLE_RATE, taps=511) -> FilterKernel:
    """Kaiser-windowed-sinc linear-phase band-pass FIR.

    The Kaiser shape (beta 3.4) keeps the transition band narrow enough that
    a 511-tap kernel at 16 kHz holds the pass band within +-1 dB two octaves
    above the low edge while still burying sub-20 Hz content by over 40 dB.
    """
    if not 0 < low_hz < high_hz <= sr / 2:
        raise InvalidInputError(
            f"band edges must satisfy 0 < low < high <= sr/2, got ({low_hz}, {high_hz}) at sr {sr}"
        )
    if taps % 2 == 0 or taps < 3:
        raise InvalidInputError(f"tap count must be odd and >= 3, got {taps}")
    window = ("kaiser", 3.4)
    if high_hz >= sr / 2 - 1e-9:
        # upper edge at Nyquist: the band-pass degenerates to a high-pass
        kernel = scipy.signal.firwin(taps, low_hz, window=window, pass_zero=False, fs=sr)
    else:
        kernel = scipy.signal.firwin(taps, [low_hz, high_hz], window=window, pass_zero=False, fs=sr)
    return FilterKernel(kernel, description=f"bandpass {low_hz:g}-{high_hz:g} Hz @ {sr} Hz")


def kernel_response_db(kernel: FilterKernel, freqs_hz, sr=SAMPLE_RATE):
    """Magnitude response of the kernel in dB at the given frequencies."""
    w = 2.0 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / sr
    _, h = scipy.signal.freqz(kernel.taps, worN=w)
    return 20.0 * np.log10(np.maximum(np.abs(h), 1e-300))


def convolve(w: Waveform, taps) -> Waveform:
    """Full linear convolution; output length len(w) + len(taps) - 1."""
    k = np.asarray(taps, dtype=np.float64)
    if len(w) == 0 or k.size == 0:
        raise InvalidInputError("convolve requires non-empty inputs")
    out = scipy.signal.fftconvolve(w.samples, k, mode="full")
    return Waveform(out, w.sample_rate)


def convolve_samples(x, taps):
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(taps, dtype=np.float64)
    if x.size == 0 or k.size == 0:
        raise InvalidInputError("convolve requires non-empty inputs")
    return scipy.signal.fftconvolve(x, k, mode="full")


def convolve_adjoint(grad_out, taps, n_in):
    """Adjoint of `convolve_samples` in its first argument: correlation with
    the taps, trimmed to the input length."""
    g = np.asarray(grad_out, dtype=np.float64)
    k = np.asarray(taps, dtype=np.float64)
    if g.size != n_in + k.size - 1:
        raise InvalidInputError(
            f"gradient length {g.size} does not match convolution output {n_in + k.size - 1}"
        )
    return scipy.signal.fftconvolve(g, k[::-1], mode="valid")


def read_wav(path) -> Waveform:
    """Read PCM16 or float32 WAV; stereo is averaged to mono.

    Only 16 kHz files are accepted; anything else raises rather than
    resampling behind the caller's back.
    """
    try:
        rate, data = scipy.io.wavfile.read(path)
    except FileNotFoundError:
        raise
    except (ValueError, EOFError) as exc:
        raise FormatError(f"{path}: not a readable WAV file ({exc})") from exc
    if data.size == 0:
        raise FormatError(f"{path}: WAV file holds no samples")
    if data.ndim == 2:
        data = data.mean(axis=1)
    elif data.ndim != 1:
        raise FormatError(f"{path}: unsupported channel layout {data.shape}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / _PCM16_SCALE
    elif data.dtype == np.float32 or data.dtype == np.float64:
        samples = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise FormatError(f"{path}: unsupported sample encoding {data.dtype}")
    if rate != SAMPLE_RATE:
        raise InvalidInputError(f"{path}: sample rate {rate} Hz, this toolkit runs at {SAMPLE_RATE} Hz")
    return Waveform(np.clip(samples, -1.0, 1.0), rate)


def write_wav(path, w: Waveform):
    """Write 16-bit PCM; samples are clipped to [-1, 1] first."""
    clipped = np.clip(w.samples, -1.0, 1.0)
    pcm = np.round(clipped * _PCM16_SCALE).astype(np.int16)
    scipy.io.wavfile.write(path, w.sample_rate, pcm)
