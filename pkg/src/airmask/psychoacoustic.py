"""Masking-threshold estimation and the spectral-excess penalty on a perturbation.

A simplified MPEG-1 psychoacoustic model 1 runs per spectrogram frame of the
carrier: tonal maskers are strict spectral peaks standing 7 dB above a
band-dependent neighborhood, the residual energy is pooled per critical band
into non-tonal maskers, every masker is spread with a two-slope function on
the Bark axis, and the spread contributions are power-summed with the quiet
threshold. The resulting matrix is held fixed for a whole attack (it depends
only on the carrier).

Level convention: a unit-amplitude sinusoid maps to 96 dB ("full scale"),
zero magnitude is floored at -20 dB, and the same fixed mapping is used both
for building thresholds and for measuring the perturbation, so adding energy
anywhere can only raise thresholds.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .signal_core import Spectrogram, StftConfig, Waveform, stft, stft_adjoint

REFERENCE_DB = 96.0
DB_FLOOR = -20.0
DB_CEIL = 96.0

_LOWER_SLOPE = 27.0  # dB per bark toward lower frequencies


def absolute_threshold(f):
    """Quiet-threshold curve in dB for 20 Hz <= f <= 8 kHz."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 20.0) or np.any(f > 8000.0):
        raise InvalidInputError("absolute_threshold is defined for 20 Hz <= f <= 8000 Hz")
    return _ath_unchecked(f)


def _ath_unchecked(f):
    khz = np.asarray(f, dtype=np.float64) / 1000.0
    return (
        3.64 * khz**-0.8
        - 6.5 * np.exp(-0.6 * (khz - 3.3) ** 2)
        + 1e-3 * khz**4
    )


def hz_to_bark(f):
    """Critical-band (Bark) scale; strictly increasing in f."""
    f = np.asarray(f, dtype=np.float64)
    if np.any(f < 0):
        raise InvalidInputError("frequency must be non-negative")
    return 13.0 * np.arctan(0.00076 * f) + 3.5 * np.arctan((f / 7500.0) ** 2)


@dataclass(frozen=True)
class Masker:
    bin: int
    level_db: float
    tonal: bool


@dataclass(frozen=True)
class MaskerSet:
    """Per-frame maskers found in a carrier spectrogram."""

    per_frame: tuple


@dataclass(frozen=True)
class MaskingThresholdMatrix:
    """Per-frame, per-bin hearing thresholds in dB on the carrier's grid."""

    thresholds: np.ndarray
    bin_hz: float
    frame_s: float
    reference_db: float = REFERENCE_DB

    def __post_init__(self):
        arr = np.array(self.thresholds, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise InvalidInputError(f"threshold matrix must be 2-D, got {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "thresholds", arr)

    @property
    def n_frames(self):
        return self.thresholds.shape[0]

    @property
    def n_bins(self):
        return self.thresholds.shape[1]


def _mag_reference(cfg: StftConfig):
    # magnitude a unit-amplitude sine at a bin center produces on this grid
    return cfg.taper.sum() / 2.0


def spl_from_magnitude(mag, cfg: StftConfig = StftConfig()):
    """Fixed full-scale dB mapping with the -20 dB zero floor."""
    mag = np.asarray(mag, dtype=np.float64)
    ref = _mag_reference(cfg)
    with np.errstate(divide="ignore"):
        db = REFERENCE_DB + 20.0 * np.log10(mag / ref)
    return np.maximum(db, DB_FLOOR)


def clamped_ath(n_bins, bin_hz):
    """Quiet threshold sampled on the bin grid, clamped to [-20, 96] dB."""
    freqs = np.clip(np.arange(n_bins) * bin_hz, 20.0, 8000.0)
    return np.clip(_ath_unchecked(freqs), DB_FLOOR, DB_CEIL)


def _neighborhood_span(freqs_hz):
    span = np.full(freqs_hz.size, 6, dtype=np.int64)
    span[freqs_hz < 5500.0] = 3
    span[freqs_hz < 2500.0] = 2
    return span


def find_maskers(carrier_spec: Spectrogram, cfg: StftConfig = StftConfig()) -> MaskerSet:
    """Tonal peaks and per-critical-band residual aggregates, frame by frame."""
    ref = _mag_reference(cfg)
    power = np.abs(carrier_spec.values) ** 2 / ref**2
    db = np.maximum(REFERENCE_DB + 10.0 * np.log10(np.maximum(power, 1e-300)), DB_FLOOR)
    n_frames, n_bins = power.shape
    freqs = np.arange(n_bins) * carrier_spec.bin_hz
    span = _neighborhood_span(freqs)
    band = np.floor(hz_to_bark(freqs)).astype(np.int64)

    frames = []
    for t in range(n_frames):
        p = power[t]
        d = db[t]
        maskers = []
        tonal_excluded = np.zeros(n_bins, dtype=bool)
        for k in range(2, n_bins - 2):
            w = span[k]
            if k - w < 0 or k + w >= n_bins:
                continue
            if not (d[k] > d[k - 1] and d[k] > d[k + 1]):
                continue
            deltas = np.arange(2, w + 1)
            if np.all(d[k] >= d[k + deltas] + 7.0) and np.all(d[k] >= d[k - deltas] + 7.0):
                level_lin = p[k - 1] + p[k] + p[k + 1]
                level = REFERENCE_DB + 10.0 * np.log10(max(level_lin, 1e-300))
                if level >= DB_FLOOR:
                    maskers.append(Masker(k, float(level), True))
                tonal_excluded[max(0, k - w) : k + w + 1] = True
        residual = p * ~tonal_excluded
        for b in range(band.max() + 1):
            members = np.nonzero((band == b) & ~tonal_excluded)[0]
            if members.size == 0:
                continue
            level_lin = residual[members].sum()
            if level_lin <= 0.0:
                continue
            level = REFERENCE_DB + 10.0 * np.log10(level_lin)
            if level < DB_FLOOR:
                continue
            maskers.append(Masker(int(members[members.size // 2]), float(level), False))
        frames.append(tuple(maskers))
    return MaskerSet(tuple(frames))


def _spread(level_db, bark_masker, bark_grid):
    dz = bark_grid - bark_masker
    upper_slope = -max(24.0 + 0.23 * (level_db - 40.0), 10.0)
    return level_db + np.where(dz < 0.0, _LOWER_SLOPE * dz, upper_slope * dz)


def compute_masking_thresholds(
    carrier_spec: Spectrogram, cfg: StftConfig = StftConfig()
) -> MaskingThresholdMatrix:
    """Masking thresholds for every cell of the carrier's spectrogram grid."""
    if carrier_spec.n_bins != cfg.bins:
        raise InvalidInputError(
            f"spectrogram has {carrier_spec.n_bins} bins, config expects {cfg.bins}"
        )
    n_frames, n_bins = carrier_spec.values.shape
    freqs = np.arange(n_bins) * carrier_spec.bin_hz
    barks = hz_to_bark(freqs)
    ath = clamped_ath(n_bins, carrier_spec.bin_hz)
    maskers = find_maskers(carrier_spec, cfg)

    out = np.empty((n_frames, n_bins))
    for t, frame_maskers in enumerate(maskers.per_frame):
        if not frame_maskers:
            out[t] = ath
            continue
        acc = np.power(10.0, ath / 10.0)
        for m in frame_maskers:
            acc = acc + np.power(10.0, _spread(m.level_db, barks[m.bin], barks) / 10.0)
        out[t] = np.clip(10.0 * np.log10(acc), DB_FLOOR, DB_CEIL)
    return MaskingThresholdMatrix(out, carrier_spec.bin_hz, carrier_spec.frame_s)


def _delta_spectrogram(delta: Waveform, m: MaskingThresholdMatrix, cfg: StftConfig):
    spec = stft(delta, cfg)
    if spec.values.shape != m.thresholds.shape:
        raise InvalidInputError(
            f"perturbation grid {spec.values.shape} does not match thresholds {m.thresholds.shape}"
        )
    return spec


def f_pam(delta: Waveform, m: MaskingThresholdMatrix, cfg: StftConfig = StftConfig()):
    """L2 norm of the perturbation's dB excess over the masking thresholds."""
    spec = _delta_spectrogram(delta, m, cfg)
    excess = np.maximum(spl_from_magnitude(np.abs(spec.values), cfg) - m.thresholds, 0.0)
    return float(np.sqrt(np.sum(excess**2)))


def f_pam_gradient(delta: Waveform, m: MaskingThresholdMatrix, cfg: StftConfig = StftConfig()):
    """Exact reverse-mode gradient of `f_pam` with respect to the samples.

    Cells at or below threshold (and cells pinned on the -20 dB floor)
    contribute exactly zero.
    """
    spec = _delta_spectrogram(delta, m, cfg)
    mag = np.abs(spec.values)
    spl = spl_from_magnitude(mag, cfg)
    excess = np.maximum(spl - m.thresholds, 0.0)
    norm = np.sqrt(np.sum(excess**2))
    if norm == 0.0:
        return np.zeros(len(delta))
    g_excess = excess / norm
    active = (excess > 0.0) & (spl > DB_FLOOR)
    g_mag = np.where(active, g_excess * (20.0 / np.log(10.0)) / np.maximum(mag, 1e-300), 0.0)
    cot = np.where(mag > 0.0, g_mag * spec.values / np.maximum(mag, 1e-300), 0.0)
    return stft_adjoint(cot, len(delta), cfg)
