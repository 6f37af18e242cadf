"""Prosody transplantation baseline.

Extracts pitch, intensity, and duration from a reference utterance and
transfers them onto another recording with pitch-synchronous
overlap-add: grains of two local periods are re-spaced to hit the
target pitch and re-walked to hit the target duration, and frame-wise
gain matching applies the target loudness contour last.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .dsp import Waveform
from .errors import FactorOutOfRange, LengthMismatch, ParseError, TooShort

logger = logging.getLogger(__name__)

FRAME_STEP_S = 0.010
F0_MIN_HZ = 60.0
F0_MAX_HZ = 400.0
VOICING_THRESHOLD = 0.5
SILENCE_RMS = 1e-4
FACTOR_MIN = 0.25
FACTOR_MAX = 4.0
INTENSITY_WINDOW_S = 0.020
MAX_GAIN_DB = 40.0


@dataclass
class ProsodyProfile:
    """Per-frame pitch and loudness plus overall length, on a 10 ms grid."""

    f0_hz: np.ndarray
    intensity_db: np.ndarray
    total_duration_s: float
    segment_boundaries_s: np.ndarray | None = None
    f0_min_hz: float = F0_MIN_HZ
    f0_max_hz: float = F0_MAX_HZ

    def __post_init__(self):
        self.f0_hz = np.asarray(self.f0_hz, dtype=np.float64)
        self.intensity_db = np.asarray(self.intensity_db, dtype=np.float64)
        if self.f0_hz.shape != self.intensity_db.shape:
            raise LengthMismatch("pitch and intensity contours must align")
        if self.total_duration_s <= 0:
            raise ValueError("duration must be positive")
        voiced = self.f0_hz[self.f0_hz > 0]
        tol = 1e-9
        if voiced.size and (
            np.any(voiced < self.f0_min_hz - tol)
            or np.any(voiced > self.f0_max_hz + tol)
        ):
            raise ValueError("voiced pitch values outside the search range")

    @property
    def voiced_fraction(self) -> float:
        return float(np.mean(self.f0_hz > 0)) if self.f0_hz.size else 0.0


@dataclass
class PitchMarks:
    """Strictly increasing sample positions, one per pitch period."""

    positions: np.ndarray
    sample_rate_hz: int = dsp.DEFAULT_SAMPLE_RATE
    f0_min_hz: float = F0_MIN_HZ
    f0_max_hz: float = F0_MAX_HZ

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.int64)
        if self.positions.size < 2:
            raise ValueError("need at least two pitch marks")
        gaps = np.diff(self.positions)
        if np.any(gaps <= 0):
            raise ValueError("pitch marks must strictly increase")
        if np.any(self.positions < 0):
            raise ValueError("pitch marks must be nonnegative")
        shortest = 0.5 * self.sample_rate_hz / self.f0_max_hz
        longest = 2.0 * self.sample_rate_hz / self.f0_min_hz
        if np.any(gaps < shortest) or np.any(gaps > longest):
            raise ValueError("pitch mark spacing outside the plausible range")


@dataclass
class AlignmentPath:
    """Monotone frame correspondence between two sequences."""

    pairs: np.ndarray
    total_cost: float = 0.0

    def __post_init__(self):
        self.pairs = np.asarray(self.pairs, dtype=np.int64)
        if self.pairs.ndim != 2 or self.pairs.shape[1] != 2:
            raise ValueError("path must be a sequence of index pairs")
        if tuple(self.pairs[0]) != (0, 0):
            raise ValueError("path must start at (0, 0)")
        steps = set(map(tuple, np.diff(self.pairs, axis=0)))
        if not steps <= {(1, 0), (0, 1), (1, 1)}:
            raise ValueError(f"illegal path steps: {steps}")


def _frame_step(sample_rate_hz: int) -> int:
    return max(1, int(round(FRAME_STEP_S * sample_rate_hz)))


def estimate_f0(
    wave: Waveform,
    f0_min: float = F0_MIN_HZ,
    f0_max: float = F0_MAX_HZ,
) -> np.ndarray:
    """Autocorrelation pitch track on 10 ms steps; 0 marks unvoiced frames.

    The lag of the strongest normalized autocorrelation peak is refined
    by parabolic interpolation; frames whose peak falls under the
    voicing threshold, or that are nearly silent, report 0.
    """
    sr = wave.sample_rate_hz
    if not 0 < f0_min < f0_max < sr / 2:
        raise ValueError("need 0 < f0_min < f0_max < Nyquist")
    step = _frame_step(sr)
    frame_len = int(round(3.0 * sr / f0_min))
    if wave.samples.size < frame_len:
        raise TooShort(
            f"need at least {frame_len} samples for pitch analysis"
        )
    frames = np.lib.stride_tricks.sliding_window_view(wave.samples, frame_len)[::step]
    frames = frames - frames.mean(axis=1, keepdims=True)
    fft_len = 1 << int(np.ceil(np.log2(2 * frame_len)))
    spectrum = np.fft.rfft(frames, n=fft_len, axis=1)
    autocorr = np.fft.irfft(np.abs(spectrum) ** 2, n=fft_len, axis=1)[:, :frame_len]
    energy = autocorr[:, 0]
    rms = np.sqrt(np.maximum(energy, 0.0) / frame_len)

    lag_lo = int(np.floor(sr / f0_max))
    lag_hi = min(int(np.ceil(sr / f0_min)), frame_len - 2)
    contour = np.zeros(frames.shape[0])
    for i in range(frames.shape[0]):
        if rms[i] < SILENCE_RMS:
            continue
        r = autocorr[i] / energy[i]
        lag = lag_lo + int(np.argmax(r[lag_lo:lag_hi + 1]))
        if r[lag] < VOICING_THRESHOLD:
            continue
        left, mid, right = r[lag - 1], r[lag], r[lag + 1]
        denom = left - 2.0 * mid + right
        shift = 0.0 if denom == 0 else 0.5 * (left - right) / denom
        shift = float(np.clip(shift, -1.0, 1.0))
        contour[i] = float(np.clip(sr / (lag + shift), f0_min, f0_max))
    return contour


def place_pitch_marks(
    wave: Waveform,
    f0: np.ndarray,
    f0_min: float = F0_MIN_HZ,
    f0_max: float = F0_MAX_HZ,
) -> PitchMarks:
    """Walk the signal one period at a time, snapping marks to local peaks.

    Voiced regions advance by the local period and land on the highest
    sample within a 20% search window; unvoiced regions fall back to a
    uniform 10 ms grid with no snapping.
    """
    f0 = np.asarray(f0, dtype=np.float64)
    sr = wave.sample_rate_hz
    step = _frame_step(sr)
    n = wave.samples.size
    min_gap = max(1, int(np.ceil(0.5 * sr / f0_max)))
    positions: list[int] = []
    cursor = 0.0
    while True:
        frame = min(int(cursor) // step, f0.size - 1)
        current = f0[frame] if f0.size else 0.0
        if current > 0:
            period = sr / current
            lo = int(cursor + 0.8 * period)
            hi = min(int(cursor + 1.2 * period) + 1, n)
            if lo >= n:
                break
            mark = lo + int(np.argmax(wave.samples[lo:hi]))
        else:
            mark = int(cursor) + step
        if positions:
            mark = max(mark, positions[-1] + min_gap)
        if mark >= n:
            break
        positions.append(mark)
        cursor = float(mark)
    if len(positions) < 2:
        raise TooShort("signal too short to carry two pitch marks")
    return PitchMarks(np.array(positions), sr, f0_min, f0_max)


def _check_factors(values: np.ndarray, name: str) -> None:
    if np.any(values < FACTOR_MIN) or np.any(values > FACTOR_MAX):
        raise FactorOutOfRange(
            f"{name} must stay within [{FACTOR_MIN}, {FACTOR_MAX}]"
        )


def clamp_factors(values: np.ndarray, name: str) -> np.ndarray:
    """Pull factors into the legal range, warning instead of failing."""
    values = np.asarray(values, dtype=np.float64)
    clipped = np.clip(values, FACTOR_MIN, FACTOR_MAX)
    excess = int(np.sum(clipped != values))
    if excess:
        logger.warning("clamped %d %s value(s) into [%s, %s]",
                       excess, name, FACTOR_MIN, FACTOR_MAX)
    return clipped


def psola_resynthesize(
    wave: Waveform,
    marks: PitchMarks,
    pitch_factor,
    time_factor,
) -> Waveform:
    """Grain-based resynthesis with per-mark pitch and duration control.

    Grains two analysis periods long are re-placed at intervals of
    period/pitch_factor along a timeline stretched by time_factor, then
    overlap-added; the result is rescaled to peak 1 if the sum leaves
    full scale. At one-period spacing the Hann windows sum to one, so
    unit factors reproduce the input.
    """
    pos = marks.positions
    count = pos.size
    pitch = np.broadcast_to(np.asarray(pitch_factor, dtype=np.float64), (count,))
    timef = np.broadcast_to(np.asarray(time_factor, dtype=np.float64), (count,))
    _check_factors(pitch, "pitch_factor")
    _check_factors(timef, "time_factor")

    x = wave.samples
    n = x.size
    gaps = np.diff(pos)
    periods = np.concatenate([gaps, gaps[-1:]]).astype(np.int64)

    # map the full input timeline, edges included, through the stretch
    anchors_in = np.concatenate([[0.0], pos.astype(np.float64), [float(n)]])
    interval_tf = np.concatenate([timef[:1], timef[:-1], timef[-1:]])
    anchors_out = np.concatenate([[0.0], np.cumsum(interval_tf * np.diff(anchors_in))])

    out_len = int(round(anchors_out[-1]))
    max_half = int(np.max(periods) * FACTOR_MAX) + 2
    acc = np.zeros(out_len + 2 * max_half + 2)

    o = anchors_out[1]
    stop = anchors_out[-2]
    while o <= stop + 1e-9:
        u = float(np.interp(o, anchors_out, anchors_in))
        k = int(np.searchsorted(pos, u))
        if k >= count or (k > 0 and u - pos[k - 1] <= pos[k] - u):
            k -= 1
        period = int(periods[k])
        half = period
        window = np.hanning(2 * half + 1)
        src_lo = pos[k] - half
        src_hi = pos[k] + half + 1
        grain = np.zeros(2 * half + 1)
        lo_clip = max(src_lo, 0)
        hi_clip = min(src_hi, n)
        grain[lo_clip - src_lo:hi_clip - src_lo] = x[lo_clip:hi_clip]
        center = int(round(o)) + max_half
        acc[center - half:center + half + 1] += window * grain
        o += max(period / pitch[k], 1.0)

    out = acc[max_half:max_half + out_len]
    peak = float(np.max(np.abs(out))) if out.size else 0.0
    if peak > 1.0:
        out = out / peak
    return Waveform(out, wave.sample_rate_hz)


def extract_prosody(wave: Waveform) -> ProsodyProfile:
    """Pitch, frame RMS in dB, and duration on a shared 10 ms grid."""
    sr = wave.sample_rate_hz
    f0 = estimate_f0(wave)
    step = _frame_step(sr)
    window = int(round(INTENSITY_WINDOW_S * sr))
    intensity = np.empty(f0.size)
    for i in range(f0.size):
        chunk = wave.samples[i * step:i * step + window]
        intensity[i] = dsp.db_compress(
            np.array([[np.sqrt(np.mean(chunk ** 2))]])
        )[0, 0]
    return ProsodyProfile(f0, intensity, wave.samples.size / sr)


def dtw_align(frames_a: np.ndarray, frames_b: np.ndarray) -> AlignmentPath:
    """Minimal-cost monotone alignment between two frame sequences.

    Cost is the Euclidean distance between frame vectors; steps advance
    either index or both. Ties prefer the diagonal.
    """
    a = np.asarray(frames_a, dtype=np.float64)
    b = np.asarray(frames_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] < 1 or b.shape[1] < 1:
        raise LengthMismatch("both frame matrices must be non-empty")
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch("frame dimensionality differs")
    ta, tb = a.shape[1], b.shape[1]
    # direct differences: identical frames must cost exactly zero
    diff = a.T[:, None, :] - b.T[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))

    total = np.full((ta, tb), np.inf)
    total[0, 0] = dist[0, 0]
    for i in range(ta):
        for j in range(tb):
            if i == 0 and j == 0:
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = total[i - 1, j - 1]
            if i > 0:
                best = min(best, total[i - 1, j])
            if j > 0:
                best = min(best, total[i, j - 1])
            total[i, j] = dist[i, j] + best

    pairs = [(ta - 1, tb - 1)]
    i, j = ta - 1, tb - 1
    while (i, j) != (0, 0):
        options = []
        if i > 0 and j > 0:
            options.append((total[i - 1, j - 1], (i - 1, j - 1)))
        if i > 0:
            options.append((total[i - 1, j], (i - 1, j)))
        if j > 0:
            options.append((total[i, j - 1], (i, j - 1)))
        _, (i, j) = min(options, key=lambda item: item[0])
        pairs.append((i, j))
    pairs.reverse()
    return AlignmentPath(np.array(pairs), float(total[ta - 1, tb - 1]))


def _mel_db_frames(wave: Waveform) -> np.ndarray:
    fb = dsp.mel_filterbank(sample_rate_hz=wave.sample_rate_hz)
    return dsp.db_compress(dsp.mel_project(dsp.stft(wave).magnitudes(), fb))


def load_segments(path) -> list[tuple[float, float, str]]:
    """Parse a segmentation file: one "start<TAB>end<TAB>label" per line."""
    segments = []
    with open(path, "r", encoding="utf-8") as handle:
        for ln, line in enumerate(handle, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(f"line {ln}: expected start, end, label")
            try:
                start, end = float(parts[0]), float(parts[1])
            except ValueError as exc:
                raise ParseError(f"line {ln}: times must be numeric") from exc
            if end <= start or (segments and start < segments[-1][1]):
                raise ParseError(f"line {ln}: segments must increase")
            segments.append((start, end, parts[2]))
    return segments


def _alignment_map(
    native: Waveform,
    learner: Waveform,
    native_segments,
    learner_segments,
) -> tuple[np.ndarray, int]:
    """Map each learner analysis frame to a fractional native frame."""
    native_frames = _mel_db_frames(native)
    learner_frames = _mel_db_frames(learner)
    tb = learner_frames.shape[1]
    if native_segments is not None and learner_segments is not None:
        if len(native_segments) != len(learner_segments):
            raise LengthMismatch("segment lists must pair one-to-one")
        to_frame = lambda t, w: t * w.sample_rate_hz / dsp.HOP
        knots_l = [0.0] + [to_frame(s[1], learner) for s in learner_segments]
        knots_n = [0.0] + [to_frame(s[1], native) for s in native_segments]
        mapped = np.interp(np.arange(tb, dtype=np.float64), knots_l, knots_n)
        return mapped, tb
    path = dtw_align(native_frames, learner_frames)
    mapped = np.zeros(tb)
    counts = np.zeros(tb)
    for i, j in path.pairs:
        mapped[j] += i
        counts[j] += 1
    return mapped / np.maximum(counts, 1.0), tb


def transplant_prosody(
    native: Waveform,
    learner: Waveform,
    native_segments=None,
    learner_segments=None,
) -> Waveform:
    """Impose the reference pitch, duration, and loudness on a recording.

    Aligns the two by minimal-cost matching of mel-dB frames (or by
    supplied segment boundaries), derives per-mark pitch and duration
    ratios from the aligned contours, resynthesizes, and finally matches
    the frame loudness contour. Extreme local ratios are clamped with a
    warning so feedback is always produced.
    """
    for wave, name in ((native, "native"), (learner, "learner")):
        if wave.samples.size < dsp.N_FFT + 2 * dsp.HOP:
            raise TooShort(f"{name} recording must span at least three frames")

    mapped, tb = _alignment_map(native, learner, native_segments, learner_segments)

    # lift the frame correspondence to a sample-domain map whose endpoints
    # pin the full durations, so the stretch total is exact rather than
    # subject to frame quantization
    n_learner = learner.samples.size
    n_native = native.samples.size
    center = dsp.N_FFT / 2.0
    knots_l = np.concatenate(
        [[0.0], np.arange(tb) * dsp.HOP + center, [float(n_learner)]]
    )
    knots_n = np.concatenate(
        [[0.0], mapped * dsp.HOP + center, [float(n_native)]]
    )
    knots_n = np.maximum.accumulate(knots_n)

    def to_native(sample):
        return np.interp(sample, knots_l, knots_n)

    prosody_native = extract_prosody(native)
    prosody_learner = extract_prosody(learner)
    step = _frame_step(learner.sample_rate_hz)

    marks = place_pitch_marks(learner, prosody_learner.f0_hz)
    pos = marks.positions.astype(np.float64)
    edges = np.concatenate([pos, [float(n_learner)]])
    time_factors = (to_native(edges[1:]) - to_native(edges[:-1])) / np.maximum(
        edges[1:] - edges[:-1], 1.0
    )
    time_factors = clamp_factors(time_factors, "time_factor")

    # both contours live on the same grid of frame centers, so the two
    # lookups must share one convention or identity input drifts
    half_frame = round(3.0 * learner.sample_rate_hz / F0_MIN_HZ) / 2.0

    def contour_index(sample, size):
        return int(np.clip(round((sample - half_frame) / step), 0, size - 1))

    pitch_factors = np.ones(marks.positions.size)
    for idx, mark in enumerate(marks.positions):
        p = contour_index(mark, prosody_learner.f0_hz.size)
        q = contour_index(float(to_native(mark)), prosody_native.f0_hz.size)
        f_learner = prosody_learner.f0_hz[p]
        f_native = prosody_native.f0_hz[q]
        if f_learner > 0 and f_native > 0:
            pitch_factors[idx] = f_native / f_learner
    pitch_factors = clamp_factors(pitch_factors, "pitch_factor")

    shifted = psola_resynthesize(learner, marks, pitch_factors, time_factors)
    return _match_intensity(shifted, prosody_native)


def _match_intensity(wave: Waveform, target: ProsodyProfile) -> Waveform:
    """Frame-wise RMS matching against the target loudness contour."""
    sr = wave.sample_rate_hz
    step = _frame_step(sr)
    window = int(round(INTENSITY_WINDOW_S * sr))
    n_frames = max(1, (wave.samples.size - window) // step + 1)
    gains = np.ones(n_frames)
    for i in range(n_frames):
        chunk = wave.samples[i * step:i * step + window]
        rms_db = dsp.db_compress(np.array([[np.sqrt(np.mean(chunk ** 2))]]))[0, 0]
        q = min(i, target.intensity_db.size - 1)
        delta = float(np.clip(target.intensity_db[q] - rms_db, -MAX_GAIN_DB, MAX_GAIN_DB))
        gains[i] = 10.0 ** (delta / 20.0)
    centers = np.arange(n_frames) * step + window / 2.0
    per_sample = np.interp(np.arange(wave.samples.size), centers, gains)
    out = wave.samples * per_sample
    peak = float(np.max(np.abs(out))) if out.size else 0.0
    if peak > 1.0:
        out = out / peak
    return Waveform(out, sr)
