import numpy as np
import pytest

from airmask.errors import GenerationError, InvalidInputError
from airmask.room_sim import (
    SPEED_OF_SOUND,
    Rir,
    RoomGenConfig,
    RoomTemplate,
    _accumulate_taps_loops,
    _accumulate_taps_numpy,
    apply_rir,
    compute_rir,
    effective_absorptions,
    enumerate_images,
    generate_rooms,
    load_rooms,
    save_rooms,
    template_from_dict,
    template_to_dict,
)
from airmask.signal_core import SAMPLE_RATE, Waveform, convolve


def make_template(**overrides):
    kwargs = dict(
        size=[5.0, 4.0, 2.7],
        speaker=[1.2, 1.0, 1.2],
        mic=[3.4, 2.7, 1.1],
        sofa_origin=[2.2, 0.5, 0.0],
        sofa_size=[1.8, 0.8, 0.7],
        absorption={
            "floor": 0.25,
            "ceiling": 0.15,
            "wall_x0": 0.10,
            "wall_x1": 0.10,
            "wall_y0": 0.10,
            "wall_y1": 0.40,
        },
        sofa_absorption=0.60,
        curtain_wall="wall_y1",
    )
    kwargs.update(overrides)
    return RoomTemplate(**kwargs)


def anechoic(**overrides):
    absorb = {k: 1.0 for k in ("floor", "ceiling", "wall_x0", "wall_x1", "wall_y0", "wall_y1")}
    return make_template(absorption=absorb, sofa_absorption=1.0, **overrides)


def brute_force_images(room, max_order):
    """Independent oracle: breadth-first mirroring across the six wall planes.

    Every reflection path up to `max_order` bounces produces an image at a
    mirrored position with the product of the touched walls' reflection
    coefficients; positions met at several orders keep the first (shortest)
    path, which is the amplitude the lattice formula assigns.
    """
    a = effective_absorptions(room)
    beta = {
        ("x", 0): np.sqrt(1 - a["wall_x0"]),
        ("x", 1): np.sqrt(1 - a["wall_x1"]),
        ("y", 0): np.sqrt(1 - a["wall_y0"]),
        ("y", 1): np.sqrt(1 - a["wall_y1"]),
        ("z", 0): np.sqrt(1 - a["floor"]),
        ("z", 1): np.sqrt(1 - a["ceiling"]),
    }
    axes = {"x": 0, "y": 1, "z": 2}
    found = {tuple(np.round(room.speaker, 9)): 1.0}
    frontier = [(np.array(room.speaker, dtype=float), 1.0)]
    for _ in range(max_order):
        nxt = []
        for pos, amp in frontier:
            for ax, idx in axes.items():
                for side in (0, 1):
                    plane = 0.0 if side == 0 else room.size[idx]
                    mirrored = pos.copy()
                    mirrored[idx] = 2 * plane - pos[idx]
                    key = tuple(np.round(mirrored, 9))
                    new_amp = amp * beta[(ax, side)]
                    if key not in found:
                        found[key] = new_amp
                        nxt.append((mirrored, new_amp))
        frontier = nxt
    return found


class TestTemplate:
    def test_valid_template(self):
        make_template()

    def test_sofa_outside_rejected(self):
        with pytest.raises(InvalidInputError):
            make_template(sofa_origin=[4.0, 3.8, 0.0])

    def test_speaker_in_sofa_rejected(self):
        with pytest.raises(InvalidInputError):
            make_template(speaker=[2.5, 0.7, 0.3])

    def test_mic_outside_room_rejected(self):
        with pytest.raises(InvalidInputError):
            make_template(mic=[5.5, 2.0, 1.0])

    def test_absorption_out_of_range_rejected(self):
        bad = make_template().absorption
        bad = dict(bad, floor=1.5)
        with pytest.raises(InvalidInputError):
            make_template(absorption=bad)

    def test_serialization_roundtrip(self):
        t = make_template()
        again = template_from_dict(template_to_dict(t))
        assert np.array_equal(t.size, again.size)
        assert t.absorption == again.absorption

    def test_sofa_raises_floor_absorption(self):
        t = make_template()
        eff = effective_absorptions(t)
        assert eff["floor"] > t.absorption["floor"]
        assert eff["ceiling"] == t.absorption["ceiling"]


class TestGenerateRooms:
    def test_count(self):
        rooms = generate_rooms(make_template(), RoomGenConfig(count=7, seed=1))
        assert len(rooms) == 7
        assert [r.variant_id for r in rooms] == list(range(7))

    def test_zero_jitter_copies_template(self):
        t = make_template()
        rooms = generate_rooms(t, RoomGenConfig(count=3, wall_jitter_m=0.0, position_jitter_m=0.0, seed=5))
        for r in rooms:
            assert np.array_equal(r.size, t.size)
            assert np.array_equal(r.mic, t.mic)

    def test_same_seed_bit_identical(self):
        t = make_template()
        cfg = RoomGenConfig(count=5, seed=77)
        a = generate_rooms(t, cfg)
        b = generate_rooms(t, cfg)
        for ra, rb in zip(a, b):
            assert np.array_equal(ra.size, rb.size)
            assert np.array_equal(ra.speaker, rb.speaker)
            assert np.array_equal(ra.mic, rb.mic)

    def test_unsatisfiable_jitter_raises(self):
        with pytest.raises(GenerationError):
            generate_rooms(
                make_template(),
                RoomGenConfig(count=1, position_jitter_m=80.0, seed=3, max_retries=50),
            )

    def test_variants_stay_valid(self):
        rooms = generate_rooms(make_template(), RoomGenConfig(count=25, seed=9))
        for r in rooms:
            assert r.is_valid()

    def test_rooms_json_roundtrip(self, tmp_path):
        t = make_template()
        cfg = RoomGenConfig(count=4, seed=2)
        rooms = generate_rooms(t, cfg)
        path = tmp_path / "rooms.json"
        save_rooms(path, t, cfg, rooms)
        t2, cfg2, rooms2 = load_rooms(path)
        assert cfg2.seed == cfg.seed
        assert len(rooms2) == 4
        assert np.allclose(rooms2[3].mic, rooms[3].mic)


class TestImageEnumeration:
    def test_order_zero_single_image(self):
        pos, amp = enumerate_images(make_template(), 0)
        assert pos.shape == (1, 3)
        assert amp[0] == 1.0

    def test_order_two_count(self):
        pos, amp = enumerate_images(make_template(), 2)
        # 1 direct + 6 first-order + 18 second-order in a shoebox
        assert pos.shape[0] == 25

    @pytest.mark.parametrize("order", [0, 1, 2])
    def test_matches_brute_force_mirroring(self, order):
        room = make_template()
        pos, amp = enumerate_images(room, order)
        oracle = brute_force_images(room, order)
        assert pos.shape[0] == len(oracle)
        for p, a in zip(pos, amp):
            key = tuple(np.round(p, 9))
            assert key in oracle
            assert abs(oracle[key] - a) < 1e-9

    def test_negative_order_rejected(self):
        with pytest.raises(InvalidInputError):
            enumerate_images(make_template(), -1)


def interp_peak(taps, around, span=3.0, step=0.001):
    """Band-limited interpolation of the tap sequence near `around`."""
    grid = np.arange(around - span, around + span, step)
    n = np.arange(len(taps))
    vals = np.array([np.sum(taps * np.sinc(t - n)) for t in grid])
    i = int(np.argmax(np.abs(vals)))
    return grid[i], vals[i]


class TestComputeRir:
    def test_fully_absorbing_leaves_direct_path(self):
        room = anechoic()
        rir = compute_rir(room, max_order=4)
        d = float(np.linalg.norm(room.speaker - room.mic))
        expect_delay = d / SPEED_OF_SOUND * SAMPLE_RATE
        t_peak, v_peak = interp_peak(rir.taps, expect_delay)
        assert abs(t_peak - expect_delay) <= 0.5
        assert abs(abs(v_peak) - 1.0 / d) <= 0.01 / d
        # nothing but the single pulse
        outside = np.abs(rir.taps.copy())
        lo = int(expect_delay) - 45
        hi = int(expect_delay) + 46
        outside[max(lo, 0) : hi] = 0.0
        assert outside.max() < 1e-6 / d

    def test_order_zero_is_direct_only(self):
        reflective = make_template()
        rir0 = compute_rir(reflective, max_order=0)
        rir_anech = compute_rir(anechoic(), max_order=0)
        assert np.allclose(rir0.taps, rir_anech.taps, atol=1e-12)

    def test_tail_energy_drops_with_absorption(self):
        base = make_template()
        damped_abs = {k: min(1.0, v + 0.5) for k, v in base.absorption.items()}
        damped = make_template(absorption=damped_abs)
        r1 = compute_rir(base, max_order=4)
        r2 = compute_rir(damped, max_order=4)
        cut = r1.peak_delay + 60
        assert np.sum(r2.taps[cut:] ** 2) < np.sum(r1.taps[cut:] ** 2)

    def test_reciprocity(self):
        room = make_template()
        swapped = make_template(speaker=room.mic.tolist(), mic=room.speaker.tolist())
        a = compute_rir(room, max_order=3)
        b = compute_rir(swapped, max_order=3)
        assert np.max(np.abs(a.taps - b.taps)) < 1e-9

    def test_deterministic(self):
        room = make_template()
        a = compute_rir(room, max_order=3)
        b = compute_rir(room, max_order=3)
        assert np.array_equal(a.taps, b.taps)

    def test_peak_delay_matches_geometry(self):
        room = make_template()
        rir = compute_rir(room, max_order=2)
        d = float(np.linalg.norm(room.speaker - room.mic))
        assert rir.peak_delay == int(round(d / SPEED_OF_SOUND * SAMPLE_RATE))

    def test_finite_energy_and_amplitude_bound(self):
        room = make_template()
        pos, amp = enumerate_images(room, 6)
        dist = np.linalg.norm(pos - room.mic[None, :], axis=1)
        assert np.all(np.isfinite(amp / dist))
        assert np.max(amp / dist) <= 1.0 / dist.min() + 1e-12

    def test_degenerate_geometry_rejected(self):
        room = make_template()
        with pytest.raises(InvalidInputError):
            RoomTemplate(
                size=room.size,
                speaker=[1.0, 1.0, 1.0],
                mic=[1.0, 1.0, 1.05],
                sofa_origin=room.sofa_origin,
                sofa_size=room.sofa_size,
                absorption=room.absorption,
                sofa_absorption=room.sofa_absorption,
            )


class TestTapKernels:
    def test_numba_and_numpy_paths_agree(self, rng):
        delays = rng.uniform(50.0, 900.0, 200)
        amps = rng.normal(0, 0.3, 200)
        a = _accumulate_taps_loops(np.zeros(1000), delays, amps, 40.0)
        b = _accumulate_taps_numpy(np.zeros(1000), delays, amps, 40.0)
        assert np.max(np.abs(a - b)) < 1e-12


class TestApplyRir:
    def test_identity_impulse(self, rng):
        w = Waveform(rng.normal(0, 0.5, 300))
        taps = np.zeros(10)
        taps[0] = 1.0
        out = apply_rir(w, Rir(taps, peak_delay=0))
        assert np.allclose(out.samples[:300], w.samples, atol=1e-12)

    def test_pure_delay(self, rng):
        w = Waveform(rng.normal(0, 0.5, 300))
        taps = np.zeros(10)
        taps[4] = 1.0
        out = apply_rir(w, Rir(taps, peak_delay=4))
        assert np.allclose(out.samples[4 : 4 + 300], w.samples, atol=1e-12)

    def test_matches_convolve(self, rng):
        w = Waveform(rng.normal(0, 0.5, 256))
        taps = rng.normal(0, 0.2, 64)
        rir = Rir(taps, peak_delay=0)
        assert np.max(np.abs(apply_rir(w, rir).samples - convolve(w, taps).samples)) < 1e-12


class TestRirType:
    def test_all_zero_rejected(self):
        with pytest.raises(InvalidInputError):
            Rir(np.zeros(16), peak_delay=0)

    def test_non_finite_rejected(self):
        taps = np.zeros(16)
        taps[3] = np.inf
        with pytest.raises(InvalidInputError):
            Rir(taps, peak_delay=0)
