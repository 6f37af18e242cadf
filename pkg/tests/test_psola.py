"""Pitch tracking, mark placement, grain resynthesis, alignment, transplant."""

import numpy as np
import pytest
from scipy.signal import sawtooth

from selfecho.dsp import Waveform
from selfecho.engine import seeded_rng
from selfecho.errors import FactorOutOfRange, LengthMismatch, ParseError, TooShort
from selfecho.psola import (
    AlignmentPath,
    PitchMarks,
    dtw_align,
    estimate_f0,
    extract_prosody,
    load_segments,
    place_pitch_marks,
    psola_resynthesize,
    transplant_prosody,
)

SR = 16000


def saw_tone(f0, duration_s=1.0, amplitude=0.4):
    t = np.arange(int(duration_s * SR)) / SR
    return Waveform(amplitude * sawtooth(2 * np.pi * f0 * t))


def sine_tone(f0, duration_s=1.0, amplitude=0.4):
    t = np.arange(int(duration_s * SR)) / SR
    return Waveform(amplitude * np.sin(2 * np.pi * f0 * t))


def modulated_saw(duration_s, f0_start, f0_end):
    """Chirped sawtooth with one loudness bump: alignable, fully voiced."""
    n = int(duration_s * SR)
    t = np.arange(n) / SR
    f = np.linspace(f0_start, f0_end, n)
    phase = 2 * np.pi * np.cumsum(f) / SR
    envelope = 0.2 + 0.3 * np.sin(np.pi * t / duration_s) ** 2
    return Waveform(envelope * sawtooth(phase))


def voiced_values(contour):
    return contour[contour > 0]


class TestEstimateF0:
    def test_sawtooth_220(self):
        contour = estimate_f0(saw_tone(220.0))
        voiced = voiced_values(contour)
        assert voiced.size > 0.8 * contour.size
        assert np.all(np.abs(voiced - 220.0) <= 0.05 * 220.0)

    def test_sine_100(self):
        voiced = voiced_values(estimate_f0(sine_tone(100.0)))
        assert voiced.size > 0
        assert np.all(np.abs(voiced - 100.0) <= 2.0)

    def test_silence_unvoiced(self):
        contour = estimate_f0(Waveform(np.zeros(SR)))
        np.testing.assert_array_equal(contour, 0.0)

    def test_too_short(self):
        with pytest.raises(TooShort):
            estimate_f0(Waveform(np.zeros(400)))

    def test_bad_range(self):
        with pytest.raises(ValueError):
            estimate_f0(sine_tone(100.0), f0_min=500.0, f0_max=400.0)


class TestPitchMarks:
    def test_spacing_at_100_hz(self):
        wave = saw_tone(100.0)
        marks = place_pitch_marks(wave, estimate_f0(wave))
        spacing = np.diff(marks.positions)
        assert abs(np.median(spacing) - 160.0) <= 8.0

    def test_unvoiced_fallback_uniform(self):
        rng = seeded_rng(0)
        wave = Waveform(0.01 * rng.uniform(-1, 1, SR))
        marks = place_pitch_marks(wave, np.zeros(98))
        np.testing.assert_array_equal(np.diff(marks.positions), 160)

    def test_marks_in_bounds(self):
        wave = saw_tone(300.0, duration_s=0.3)
        marks = place_pitch_marks(wave, estimate_f0(wave))
        assert marks.positions[0] >= 0
        assert marks.positions[-1] < wave.samples.size

    def test_validation_rejects_disorder(self):
        with pytest.raises(ValueError):
            PitchMarks(np.array([100, 90, 200]))

    def test_validation_rejects_wild_spacing(self):
        with pytest.raises(ValueError):
            PitchMarks(np.array([0, 5, 10]))


class TestResynthesis:
    def interior_snr(self, reference, candidate, margin=2000):
        stop = min(reference.size, candidate.size) - margin
        a, b = reference[margin:stop], candidate[margin:stop]
        noise = np.linalg.norm(a - b)
        if noise == 0:
            return np.inf
        return 20.0 * np.log10(np.linalg.norm(a) / noise)

    def marks_for(self, wave):
        return place_pitch_marks(wave, estimate_f0(wave))

    def test_identity_transplant(self):
        wave = saw_tone(150.0)
        out = psola_resynthesize(wave, self.marks_for(wave), 1.0, 1.0)
        assert out.samples.size == wave.samples.size
        assert self.interior_snr(wave.samples, out.samples) >= 30.0

    def test_time_factor_two_doubles_length(self):
        wave = saw_tone(120.0)
        out = psola_resynthesize(wave, self.marks_for(wave), 1.0, 2.0)
        period = SR / 120.0
        assert abs(out.samples.size - 2 * wave.samples.size) <= period

    def test_time_factor_half(self):
        wave = saw_tone(120.0)
        out = psola_resynthesize(wave, self.marks_for(wave), 1.0, 0.5)
        period = SR / 120.0
        assert abs(out.samples.size - wave.samples.size / 2) <= period

    def test_pitch_factor_two(self):
        wave = saw_tone(110.0)
        out = psola_resynthesize(wave, self.marks_for(wave), 2.0, 1.0)
        voiced = voiced_values(estimate_f0(out))
        assert voiced.size > 0
        assert abs(np.median(voiced) - 220.0) <= 0.05 * 220.0

    def test_pitch_factor_law(self):
        wave = saw_tone(160.0)
        for factor in (0.5, 1.0, 2.0):
            out = psola_resynthesize(wave, self.marks_for(wave), factor, 1.0)
            voiced = voiced_values(estimate_f0(out))
            assert voiced.size > 0
            target = 160.0 * factor
            assert abs(np.median(voiced) - target) <= 0.05 * target

    def test_factor_out_of_range(self):
        wave = saw_tone(150.0)
        marks = self.marks_for(wave)
        with pytest.raises(FactorOutOfRange):
            psola_resynthesize(wave, marks, 5.0, 1.0)
        with pytest.raises(FactorOutOfRange):
            psola_resynthesize(wave, marks, 1.0, 0.1)

    def test_output_peak_bounded(self):
        wave = modulated_saw(1.0, 130.0, 170.0)
        marks = self.marks_for(wave)
        out = psola_resynthesize(wave, marks, 1.8, 1.3)
        assert np.max(np.abs(out.samples)) <= 1.0

    def test_per_mark_factor_arrays(self):
        wave = saw_tone(140.0)
        marks = self.marks_for(wave)
        count = marks.positions.size
        rising = np.linspace(0.8, 1.5, count)
        out = psola_resynthesize(wave, marks, rising, np.ones(count))
        assert out.samples.size > 0


class TestExtractProsody:
    def test_duration(self):
        profile = extract_prosody(sine_tone(100.0))
        assert profile.total_duration_s == pytest.approx(1.0)

    def test_flat_intensity_for_steady_tone(self):
        profile = extract_prosody(sine_tone(100.0))
        interior = profile.intensity_db[5:-5]
        assert interior.max() - interior.min() < 1.0

    def test_silence(self):
        profile = extract_prosody(Waveform(np.zeros(SR)))
        np.testing.assert_array_equal(profile.f0_hz, 0.0)
        np.testing.assert_array_equal(profile.intensity_db, -80.0)

    def test_contour_lengths_match(self):
        profile = extract_prosody(saw_tone(180.0, duration_s=1.3))
        assert profile.f0_hz.shape == profile.intensity_db.shape


class TestDtwAlign:
    def frames(self, seed, count):
        rng = seeded_rng(seed)
        return rng.normal(size=(6, count))

    def brute_force_cost(self, a, b):
        # enumerate every monotone path; tractable for tiny inputs
        dist = np.zeros((a.shape[1], b.shape[1]))
        for i in range(a.shape[1]):
            for j in range(b.shape[1]):
                dist[i, j] = np.linalg.norm(a[:, i] - b[:, j])

        best = [np.inf]

        def walk(i, j, cost):
            cost += dist[i, j]
            if cost >= best[0]:
                return
            if i == a.shape[1] - 1 and j == b.shape[1] - 1:
                best[0] = cost
                return
            for di, dj in ((1, 1), (1, 0), (0, 1)):
                if i + di < a.shape[1] and j + dj < b.shape[1]:
                    walk(i + di, j + dj, cost)

        walk(0, 0, 0.0)
        return best[0]

    def test_identity_is_diagonal(self):
        a = self.frames(1, 7)
        path = dtw_align(a, a)
        assert path.total_cost == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_array_equal(path.pairs[:, 0], path.pairs[:, 1])

    def test_duplicated_frame_single_insertion(self):
        a = self.frames(2, 6)
        b = np.insert(a, 3, a[:, 3], axis=1)
        path = dtw_align(a, b)
        steps = [tuple(s) for s in np.diff(path.pairs, axis=0)]
        assert steps.count((0, 1)) == 1
        assert path.total_cost == pytest.approx(0.0, abs=1e-12)

    def test_cost_symmetry(self):
        a, b = self.frames(3, 5), self.frames(4, 8)
        assert dtw_align(a, b).total_cost == pytest.approx(
            dtw_align(b, a).total_cost, rel=1e-12
        )

    def test_matches_brute_force(self):
        for seed in range(6):
            rng = seeded_rng(100 + seed)
            a = rng.normal(size=(4, int(rng.integers(2, 6))))
            b = rng.normal(size=(4, int(rng.integers(2, 6))))
            got = dtw_align(a, b).total_cost
            assert got == pytest.approx(self.brute_force_cost(a, b), rel=1e-9)

    def test_path_invariants_enforced(self):
        with pytest.raises(ValueError):
            AlignmentPath(np.array([[0, 0], [2, 1]]))
        with pytest.raises(ValueError):
            AlignmentPath(np.array([[1, 0], [2, 1]]))

    def test_empty_rejected(self):
        with pytest.raises(LengthMismatch):
            dtw_align(np.zeros((6, 0)), np.zeros((6, 3)))


class TestTransplant:
    def test_identity(self):
        wave = modulated_saw(1.0, 120.0, 180.0)
        out = transplant_prosody(wave, wave)
        margin = 2400
        stop = min(out.samples.size, wave.samples.size) - margin
        a = wave.samples[margin:stop]
        b = out.samples[margin:stop]
        snr = 20.0 * np.log10(np.linalg.norm(a) / np.linalg.norm(a - b))
        assert snr >= 25.0
        assert abs(out.samples.size - wave.samples.size) <= 160

    def test_duration_follows_native(self):
        native = modulated_saw(2.0, 120.0, 180.0)
        learner = modulated_saw(1.0, 120.0, 180.0)
        out = transplant_prosody(native, learner)
        assert abs(out.samples.size - native.samples.size) <= 160

    def test_rising_pitch_transfers(self):
        native = modulated_saw(1.0, 100.0, 200.0)
        learner = modulated_saw(1.0, 140.0, 140.0)
        out = transplant_prosody(native, learner)
        out_f0 = estimate_f0(out)
        native_f0 = extract_prosody(native).f0_hz
        length = min(out_f0.size, native_f0.size)
        both = (out_f0[:length] > 0) & (native_f0[:length] > 0)
        assert both.sum() > 20
        r = np.corrcoef(out_f0[:length][both], native_f0[:length][both])[0, 1]
        assert r >= 0.8

    def test_identity_preserves_pitch(self):
        wave = modulated_saw(1.0, 130.0, 170.0)
        out = transplant_prosody(wave, wave)
        f_in = extract_prosody(wave).f0_hz
        f_out = estimate_f0(out)
        length = min(f_in.size, f_out.size)
        both = (f_in[:length] > 0) & (f_out[:length] > 0)
        ratio = f_out[:length][both] / f_in[:length][both]
        assert np.all(np.abs(ratio - 1.0) <= 0.05)

    def test_intensity_follows_native(self):
        native = modulated_saw(1.0, 150.0, 150.0)
        learner = Waveform(0.05 * sawtooth(
            2 * np.pi * 150.0 * np.arange(SR) / SR
        ))
        out = transplant_prosody(native, learner)
        native_int = extract_prosody(native).intensity_db
        out_int = extract_prosody(out).intensity_db
        length = min(native_int.size, out_int.size) - 5
        assert np.max(np.abs(out_int[5:length] - native_int[5:length])) < 3.0

    def test_too_short(self):
        with pytest.raises(TooShort):
            transplant_prosody(modulated_saw(1.0, 120, 160), Waveform(np.zeros(600)))

    def test_segment_alignment(self, tmp_path):
        wave = modulated_saw(1.0, 120.0, 180.0)
        segments = [(0.0, 0.5, "a"), (0.5, 1.0, "b")]
        out = transplant_prosody(
            wave, wave, native_segments=segments, learner_segments=segments
        )
        assert abs(out.samples.size - wave.samples.size) <= 160

    def test_segment_count_mismatch(self):
        wave = modulated_saw(1.0, 120.0, 180.0)
        with pytest.raises(LengthMismatch):
            transplant_prosody(
                wave,
                wave,
                native_segments=[(0.0, 1.0, "a")],
                learner_segments=[(0.0, 0.5, "a"), (0.5, 1.0, "b")],
            )


class TestSegmentsFile:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "seg.tsv"
        path.write_text("# comment\n0.0\t0.4\the\n0.4\t1.0\tlo\n", encoding="utf-8")
        assert load_segments(path) == [(0.0, 0.4, "he"), (0.4, 1.0, "lo")]

    def test_bad_field_count(self, tmp_path):
        path = tmp_path / "seg.tsv"
        path.write_text("0.0\t0.4\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_segments(path)

    def test_non_numeric(self, tmp_path):
        path = tmp_path / "seg.tsv"
        path.write_text("zero\t0.4\tx\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_segments(path)

    def test_non_increasing(self, tmp_path):
        path = tmp_path / "seg.tsv"
        path.write_text("0.0\t0.5\ta\n0.4\t0.9\tb\n", encoding="utf-8")
        with pytest.raises(ParseError):
            load_segments(path)
