"""Shoebox room variants and their impulse responses via the image-source method.

A room template (box, sofa box, per-surface absorptions, speaker and mic
positions) is jittered into any number of variants; each variant's RIR is the
sum of fractional-delay sinc pulses contributed by the mirror-image lattice
up to a reflection order cap. The sofa does not take part in the reflections
(the image-source method is exact only for the empty box); its absorption is
folded into the floor in proportion to its footprint.
"""

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .errors import GenerationError, InvalidInputError
from .signal_core import SAMPLE_RATE, Waveform, convolve

SPEED_OF_SOUND = 343.0

SURFACES = ("floor", "ceiling", "wall_x0", "wall_x1", "wall_y0", "wall_y1")
WALLS = SURFACES[2:]

_SINC_HALF = 40  # 81-tap windowed-sinc fractional delay


def _vec3(v, name):
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != (3,) or not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be a finite 3-vector, got {v!r}")
    return arr


@dataclass(frozen=True)
class RoomTemplate:
    """Shoebox with an interior sofa box, absorptions, speaker and mic."""

    size: np.ndarray
    speaker: np.ndarray
    mic: np.ndarray
    sofa_origin: np.ndarray
    sofa_size: np.ndarray
    absorption: dict
    sofa_absorption: float
    curtain_wall: str = "wall_y1"

    def __post_init__(self):
        for name in ("size", "speaker", "mic", "sofa_origin", "sofa_size"):
            object.__setattr__(self, name, _vec3(getattr(self, name), name))
        object.__setattr__(self, "absorption", dict(self.absorption))
        self.validate()

    def validate(self):
        if np.any(self.size <= 0) or np.any(self.sofa_size <= 0):
            raise InvalidInputError("room and sofa dimensions must be positive")
        missing = [s for s in SURFACES if s not in self.absorption]
        if missing:
            raise InvalidInputError(f"absorption missing surfaces: {missing}")
        for s, a in self.absorption.items():
            if s not in SURFACES:
                raise InvalidInputError(f"unknown surface {s!r}")
            if not 0.0 <= a <= 1.0:
                raise InvalidInputError(f"absorption[{s}]={a} outside [0, 1]")
        if not 0.0 <= self.sofa_absorption <= 1.0:
            raise InvalidInputError("sofa absorption outside [0, 1]")
        if self.curtain_wall not in WALLS:
            raise InvalidInputError(f"curtain wall must be one of {WALLS}")
        lo, hi = self.sofa_origin, self.sofa_origin + self.sofa_size
        # the sofa may rest on the floor (z origin 0) but must clear every wall
        if not (np.all(lo[:2] > 0) and np.all(hi[:2] < self.size[:2]) and lo[2] >= 0 and hi[2] < self.size[2]):
            raise InvalidInputError("sofa must sit strictly inside the room")
        for name, p in (("speaker", self.speaker), ("mic", self.mic)):
            if np.any(p <= 0) or np.any(p >= self.size):
                raise InvalidInputError(f"{name} must be strictly inside the room")
            if np.all(p >= lo) and np.all(p <= hi):
                raise InvalidInputError(f"{name} sits inside the sofa box")
        if np.linalg.norm(self.speaker - self.mic) < 0.1:
            raise InvalidInputError("speaker and mic must be at least 0.1 m apart")

    def is_valid(self):
        try:
            self.validate()
            return True
        except InvalidInputError:
            return False


@dataclass(frozen=True)
class RoomVariant(RoomTemplate):
    variant_id: int = 0


@dataclass(frozen=True)
class RoomGenConfig:
    """How many jittered variants to draw and how far they may wander."""

    count: int
    wall_jitter_m: float = 0.5
    position_jitter_m: float = 0.3
    seed: int = 0
    max_retries: int = 1000

    def __post_init__(self):
        if self.count <= 0:
            raise InvalidInputError(f"room count must be positive, got {self.count}")
        if self.wall_jitter_m < 0 or self.position_jitter_m < 0:
            raise InvalidInputError("jitter ranges must be non-negative")


@dataclass(frozen=True)
class Rir:
    """Impulse response taps at 16 kHz plus the direct-path delay."""

    taps: np.ndarray
    peak_delay: int

    def __post_init__(self):
        arr = np.array(self.taps, dtype=np.float64, copy=True)
        if arr.size == 0 or not np.all(np.isfinite(arr)):
            raise InvalidInputError("RIR taps must be non-empty and finite")
        if not np.any(arr != 0.0):
            raise InvalidInputError("RIR has no nonzero tap")
        arr.flags.writeable = False
        object.__setattr__(self, "taps", arr)


def generate_rooms(template: RoomTemplate, cfg: RoomGenConfig):
    """Jitter walls and speaker/mic positions; resample until placement holds."""
    rng = np.random.default_rng(cfg.seed)
    variants = []
    for i in range(cfg.count):
        for _ in range(cfg.max_retries):
            size = template.size + rng.uniform(-cfg.wall_jitter_m, cfg.wall_jitter_m, 3)
            speaker = template.speaker + rng.uniform(-cfg.position_jitter_m, cfg.position_jitter_m, 3)
            mic = template.mic + rng.uniform(-cfg.position_jitter_m, cfg.position_jitter_m, 3)
            try:
                variants.append(
                    RoomVariant(
                        size=size,
                        speaker=speaker,
                        mic=mic,
                        sofa_origin=template.sofa_origin,
                        sofa_size=template.sofa_size,
                        absorption=template.absorption,
                        sofa_absorption=template.sofa_absorption,
                        curtain_wall=template.curtain_wall,
                        variant_id=i,
                    )
                )
                break
            except InvalidInputError:
                continue
        else:
            raise GenerationError(
                f"no valid jitter for variant {i} after {cfg.max_retries} retries"
            )
    return variants


def effective_absorptions(room: RoomTemplate):
    """Six-surface absorption vector with the sofa folded into the floor."""
    ratio = (room.sofa_size[0] * room.sofa_size[1]) / (room.size[0] * room.size[1])
    a = dict(room.absorption)
    a["floor"] = a["floor"] * (1.0 - ratio) + room.sofa_absorption * ratio
    return a


def enumerate_images(room: RoomTemplate, max_order: int):
    """Mirror-image lattice up to `max_order` reflections.

    Returns (positions (n,3), amplitudes (n,)) where each amplitude is the
    product of per-bounce reflection coefficients sqrt(1 - absorption),
    without the 1/distance spreading term.
    """
    if max_order < 0:
        raise InvalidInputError("max_order must be >= 0")
    a = effective_absorptions(room)
    # per axis: reflection coefficient of the wall at coordinate 0 and its opposite
    near = np.sqrt(1.0 - np.array([a["wall_x0"], a["wall_y0"], a["floor"]]))
    far = np.sqrt(1.0 - np.array([a["wall_x1"], a["wall_y1"], a["ceiling"]]))

    r_axis = np.arange(-max_order - 1, max_order + 1)
    r = np.array(list(itertools.product(r_axis, r_axis, r_axis)), dtype=np.int64)
    p = np.array(list(itertools.product((0, 1), repeat=3)), dtype=np.int64)
    r = np.repeat(r, 8, axis=0)
    p = np.tile(p, (len(r_axis) ** 3, 1))
    order = (np.abs(r + p) + np.abs(r)).sum(axis=1)
    keep = order <= max_order
    r, p = r[keep], p[keep]
    pos = (1 - 2 * p) * (room.speaker[None, :] + 2.0 * r * room.size[None, :])
    amp = np.prod(near[None, :] ** np.abs(r + p) * far[None, :] ** np.abs(r), axis=1)
    return pos, amp


def _accumulate_taps_loops(taps, delays, amps, half):
    n = taps.shape[0]
    for i in range(delays.shape[0]):
        d = delays[i]
        a = amps[i]
        lo = max(0, int(math.ceil(d - half)))
        hi = min(n - 1, int(math.floor(d + half)))
        for k in range(lo, hi + 1):
            t = k - d
            x = math.pi * t
            if abs(x) < 1e-12:
                s = 1.0
            else:
                s = math.sin(x) / x
            taps[k] += a * s * 0.5 * (1.0 + math.cos(math.pi * t / half))
    return taps


def _accumulate_taps_numpy(taps, delays, amps, half):
    n = taps.shape[0]
    offsets = np.arange(-int(half), int(half) + 1)
    centers = np.round(delays).astype(np.int64)
    idx = centers[:, None] + offsets[None, :]
    t = idx - delays[:, None]
    window = np.where(np.abs(t) <= half, 0.5 * (1.0 + np.cos(np.pi * t / half)), 0.0)
    values = amps[:, None] * np.sinc(t) * window
    ok = (idx >= 0) & (idx < n)
    np.add.at(taps, idx[ok], values[ok])
    return taps


if _accel.USING_NUMBA:
    _accumulate_taps = _accel.jit_kernel(_accumulate_taps_loops)
else:
    _accumulate_taps = _accumulate_taps_numpy


def compute_rir(room: RoomTemplate, max_order=6, sr=SAMPLE_RATE, max_seconds=0.5) -> Rir:
    """Image-source RIR: one windowed-sinc pulse of amplitude prod(beta)/d per image."""
    pos, amp = enumerate_images(room, max_order)
    dist = np.linalg.norm(pos - room.mic[None, :], axis=1)
    if np.any(dist < 1e-6):
        raise InvalidInputError("degenerate geometry: an image source coincides with the mic")
    delays = dist / SPEED_OF_SOUND * sr
    amps = amp / dist
    n_taps = int(round(max_seconds * sr))
    keep = delays - _SINC_HALF < n_taps
    taps = np.zeros(n_taps)
    _accumulate_taps(taps, delays[keep], amps[keep], float(_SINC_HALF))
    direct = float(np.linalg.norm(room.speaker - room.mic))
    return Rir(taps, peak_delay=int(round(direct / SPEED_OF_SOUND * sr)))


def apply_rir(w: Waveform, r: Rir) -> Waveform:
    return convolve(w, r.taps)


def template_to_dict(t: RoomTemplate):
    d = {
        "size": t.size.tolist(),
        "speaker": t.speaker.tolist(),
        "mic": t.mic.tolist(),
        "sofa_origin": t.sofa_origin.tolist(),
        "sofa_size": t.sofa_size.tolist(),
        "absorption": {k: float(v) for k, v in sorted(t.absorption.items())},
        "sofa_absorption": float(t.sofa_absorption),
        "curtain_wall": t.curtain_wall,
    }
    if isinstance(t, RoomVariant):
        d["variant_id"] = t.variant_id
    return d


def template_from_dict(d, variant=False):
    cls = RoomVariant if variant else RoomTemplate
    kwargs = dict(
        size=d["size"],
        speaker=d["speaker"],
        mic=d["mic"],
        sofa_origin=d["sofa_origin"],
        sofa_size=d["sofa_size"],
        absorption=d["absorption"],
        sofa_absorption=d["sofa_absorption"],
        curtain_wall=d["curtain_wall"],
    )
    if variant:
        kwargs["variant_id"] = d["variant_id"]
    return cls(**kwargs)


def save_rooms(path, template: RoomTemplate, cfg: RoomGenConfig, variants):
    doc = {
        "template": template_to_dict(template),
        "generation": {
            "count": cfg.count,
            "wall_jitter_m": cfg.wall_jitter_m,
            "position_jitter_m": cfg.position_jitter_m,
            "seed": cfg.seed,
            "max_retries": cfg.max_retries,
        },
        "variants": [template_to_dict(v) for v in variants],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_rooms(path):
    with open(path) as fh:
        doc = json.load(fh)
    template = template_from_dict(doc["template"])
    g = doc["generation"]
    cfg = RoomGenConfig(
        count=g["count"],
        wall_jitter_m=g["wall_jitter_m"],
        position_jitter_m=g["position_jitter_m"],
        seed=g["seed"],
        max_retries=g.get("max_retries", 1000),
    )
    variants = [template_from_dict(v, variant=True) for v in doc["variants"]]
    return template, cfg, variants
