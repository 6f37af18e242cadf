"""Speech to spectrogram images and back.

The forward path windows the signal, takes DFT magnitudes, projects them
onto a mel filterbank, compresses to decibels, normalizes, and pads the
result with low-level white noise to a square image. The reverse path
undoes each step and recovers phase iteratively from magnitudes alone.

Also holds the three on-disk formats this stage speaks: mono PCM16 WAV,
the SPEC1 binary spectrogram container, and lossy PNG export.
"""

from __future__ import annotations

import struct
import wave as wave_module
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage
from scipy.optimize import nnls

from .engine.rng import seeded_rng
from .errors import (
    BadConfig,
    BadCutoff,
    CorruptFile,
    CorruptHeader,
    InputTooLong,
    NonFinite,
    ShapeMismatch,
    TooShort,
    UnsupportedFormat,
)

DEFAULT_SAMPLE_RATE = 16000
N_FFT = 512
# one-third overlap of the 512-sample window, rounded
HOP = 342
N_BINS = N_FFT // 2 + 1
IMAGE_SIZE = 128
N_MELS = 128
MEL_LOW_HZ = 300.0
MEL_HIGH_HZ = 8000.0
DB_FLOOR = -80.0
DB_CEILING = 0.0
EPSILON_DB = 1e-5
NOISE_BAND = 0.05
DEFAULT_CUTOFF_FRACTION = 0.95


@dataclass
class Waveform:
    """Mono audio samples in [-1, 1] at a known rate."""

    samples: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise BadConfig("waveform needs a non-empty 1-d sample array")
        if not np.all(np.isfinite(self.samples)):
            raise NonFinite("waveform contains non-finite samples")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0:
            raise BadConfig(f"samples exceed full scale (peak {peak:.6f})")
        if int(self.sample_rate_hz) <= 0:
            raise BadConfig("sample rate must be a positive integer")
        self.sample_rate_hz = int(self.sample_rate_hz)

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass
class StftMatrix:
    """Complex bins, one column per analysis frame."""

    bins: np.ndarray
    n_fft: int = N_FFT
    hop: int = HOP
    window: str = "hann"
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=np.complex128)
        expected = self.n_fft // 2 + 1
        if self.bins.ndim != 2 or self.bins.shape[0] != expected:
            raise ShapeMismatch(
                f"expected {expected} bins per frame, got shape {self.bins.shape}"
            )
        if self.bins.shape[1] < 1:
            raise ShapeMismatch("need at least one frame")

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    def magnitudes(self) -> np.ndarray:
        return np.abs(self.bins)


@dataclass
class ImageMeta:
    """Everything needed to invert a spectrogram image back to audio."""

    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    hop: int = HOP
    n_fft: int = N_FFT
    mel_low_hz: float = MEL_LOW_HZ
    mel_high_hz: float = MEL_HIGH_HZ
    db_floor: float = DB_FLOOR
    db_ceiling: float = DB_CEILING
    n_valid_frames: int = IMAGE_SIZE
    pad_seed: int = 0


@dataclass
class SpectrogramImage:
    """128x128 normalized mel-dB grid; trailing columns are noise padding."""

    pixels: np.ndarray
    meta: ImageMeta = field(default_factory=ImageMeta)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.shape != (IMAGE_SIZE, IMAGE_SIZE):
            raise ShapeMismatch(
                f"image must be {IMAGE_SIZE}x{IMAGE_SIZE}, got {self.pixels.shape}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise NonFinite("image contains non-finite pixels")
        if np.any(self.pixels < 0.0) or np.any(self.pixels > 1.0):
            raise BadConfig("pixels must lie in [0, 1]")
        if not 1 <= self.meta.n_valid_frames <= IMAGE_SIZE:
            raise BadConfig("n_valid_frames must lie in [1, 128]")


@dataclass
class MelFilterbank:
    """Triangular band responses sampled at the DFT bin frequencies."""

    weights: np.ndarray
    band_edges_hz: np.ndarray
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE
    n_fft: int = N_FFT

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.band_edges_hz = np.asarray(self.band_edges_hz, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ShapeMismatch("filterbank weights must be a matrix")
        if np.any(self.weights < 0):
            raise BadConfig("filterbank weights must be nonnegative")
        if np.any(self.weights.sum(axis=1) == 0.0):
            raise BadConfig(
                "every band must touch at least one bin; widen the frequency range"
            )

    @property
    def n_bands(self) -> int:
        return self.weights.shape[0]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    n_bands: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
    low_hz: float = MEL_LOW_HZ,
    high_hz: float = MEL_HIGH_HZ,
) -> MelFilterbank:
    """Build triangular mel bands between low_hz and high_hz.

    The default low edge of 300 Hz keeps every one of the 128 triangles
    wide enough to cover at least one of the 257 bin centers; starting at
    0 Hz would leave the lowest bands empty at this resolution.
    """
    nyquist = sample_rate_hz / 2.0
    if not 0.0 <= low_hz < high_hz <= nyquist:
        raise BadConfig(
            f"need 0 <= low ({low_hz}) < high ({high_hz}) <= Nyquist ({nyquist})"
        )
    edges = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), n_bands + 2))
    # the mel round trip can overshoot the endpoints by float epsilon
    edges[0] = low_hz
    edges[-1] = high_hz
    bin_hz = np.arange(n_fft // 2 + 1) * (sample_rate_hz / n_fft)
    lower = edges[:-2][:, None]
    center = edges[1:-1][:, None]
    upper = edges[2:][:, None]
    rising = (bin_hz[None, :] - lower) / (center - lower)
    falling = (upper - bin_hz[None, :]) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    return MelFilterbank(weights, edges, sample_rate_hz, n_fft)


def _hann(n_fft: int) -> np.ndarray:
    # periodic form, so overlapped analysis frames tile the signal evenly
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft)


def frames_for_samples(n_samples: int, n_fft: int = N_FFT, hop: int = HOP) -> int:
    if n_samples < n_fft:
        raise TooShort(f"need at least {n_fft} samples, got {n_samples}")
    return (n_samples - n_fft) // hop + 1


def samples_for_frames(n_frames: int, n_fft: int = N_FFT, hop: int = HOP) -> int:
    return (n_frames - 1) * hop + n_fft


def _stft_array(samples: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(samples, n_fft)[::hop]
    return np.fft.rfft(frames * _hann(n_fft), axis=1).T


def _istft_array(bins: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    """Least-squares inverse: overlap-add of windowed frames over summed
    squared windows. Exact on consistent input for any hop; samples the
    window never touches come back as zero."""
    window = _hann(n_fft)
    frames = np.fft.irfft(bins.T, n=n_fft)
    n_frames = frames.shape[0]
    length = samples_for_frames(n_frames, n_fft, hop)
    numerator = np.zeros(length)
    weight = np.zeros(length)
    for t in range(n_frames):
        start = t * hop
        numerator[start:start + n_fft] += window * frames[t]
        weight[start:start + n_fft] += window * window
    out = np.zeros(length)
    covered = weight > 1e-12
    out[covered] = numerator[covered] / weight[covered]
    return out


def stft(wave: Waveform, n_fft: int = N_FFT, hop: int = HOP) -> StftMatrix:
    """Windowed DFT; frame t covers samples [t*hop, t*hop + n_fft)."""
    if wave.samples.size < n_fft:
        raise TooShort(
            f"need at least {n_fft} samples, got {wave.samples.size}"
        )
    bins = _stft_array(wave.samples, n_fft, hop)
    return StftMatrix(bins, n_fft, hop, "hann", wave.sample_rate_hz)


def istft(matrix: StftMatrix) -> Waveform:
    """Invert an STFT by least squares.

    If the matrix is inconsistent enough that the inverse leaves full
    scale, the signal is rescaled to peak 1 rather than rejected.
    """
    samples = _istft_array(matrix.bins, matrix.n_fft, matrix.hop)
    peak = float(np.max(np.abs(samples))) if samples.size else 0.0
    if peak > 1.0:
        samples = samples / peak
    return Waveform(samples, matrix.sample_rate_hz)


def db_compress(magnitudes: np.ndarray) -> np.ndarray:
    """Magnitude to clipped decibels: 20*log10(m + eps) into [floor, ceiling]."""
    db = 20.0 * np.log10(np.asarray(magnitudes, dtype=np.float64) + EPSILON_DB)
    return np.clip(db, DB_FLOOR, DB_CEILING)


def db_to_linear(db: np.ndarray) -> np.ndarray:
    return np.maximum(0.0, 10.0 ** (np.asarray(db, dtype=np.float64) / 20.0) - EPSILON_DB)


def magnitude_db(matrix: StftMatrix) -> np.ndarray:
    return db_compress(matrix.magnitudes())


def normalize_db(db: np.ndarray) -> np.ndarray:
    return (np.asarray(db, dtype=np.float64) - DB_FLOOR) / (DB_CEILING - DB_FLOOR)


def denormalize_db(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float64) * (DB_CEILING - DB_FLOOR) + DB_FLOOR


def mel_project(matrix: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != fb.weights.shape[1]:
        raise ShapeMismatch(
            f"expected {fb.weights.shape[1]} rows, got shape {matrix.shape}"
        )
    return fb.weights @ matrix


def mel_project_mean(matrix: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Row-normalized projection: each band averages rather than sums.

    Used when projecting dB values, which must stay inside the dB range.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != fb.weights.shape[1]:
        raise ShapeMismatch(
            f"expected {fb.weights.shape[1]} rows, got shape {matrix.shape}"
        )
    row_sums = fb.weights.sum(axis=1, keepdims=True)
    return (fb.weights / row_sums) @ matrix


def mel_pseudo_inverse(mel: np.ndarray, fb: MelFilterbank) -> np.ndarray:
    """Nonnegative least-squares spectrum whose projection matches `mel`."""
    mel = np.asarray(mel, dtype=np.float64)
    if mel.ndim != 2 or mel.shape[0] != fb.n_bands:
        raise ShapeMismatch(f"expected {fb.n_bands} rows, got shape {mel.shape}")
    out = np.zeros((fb.weights.shape[1], mel.shape[1]))
    for col in range(mel.shape[1]):
        target = mel[:, col]
        if np.any(target != 0.0):
            out[:, col], _ = nnls(fb.weights, target)
    return out


def pad_to_image(
    mel_db: np.ndarray,
    seed: int,
    meta: ImageMeta | None = None,
) -> SpectrogramImage:
    """Normalize a mel-dB matrix and pad its time axis with white noise."""
    mel_db = np.asarray(mel_db, dtype=np.float64)
    if mel_db.ndim != 2 or mel_db.shape[0] != IMAGE_SIZE:
        raise ShapeMismatch(f"expected {IMAGE_SIZE} bands, got shape {mel_db.shape}")
    n_frames = mel_db.shape[1]
    if n_frames > IMAGE_SIZE:
        raise InputTooLong(
            f"{n_frames} frames exceed the {IMAGE_SIZE}-column image"
        )
    if n_frames < 1:
        raise BadConfig("need at least one frame")
    if seed < 0:
        raise BadConfig("pad seed must be nonnegative")
    pixels = np.empty((IMAGE_SIZE, IMAGE_SIZE))
    pixels[:, :n_frames] = np.clip(normalize_db(mel_db), 0.0, 1.0)
    rng = seeded_rng(seed)
    pixels[:, n_frames:] = rng.uniform(
        0.0, NOISE_BAND, size=(IMAGE_SIZE, IMAGE_SIZE - n_frames)
    )
    meta = meta or ImageMeta()
    meta.n_valid_frames = n_frames
    meta.pad_seed = seed
    return SpectrogramImage(pixels, meta)


def image_to_mel_db(image: SpectrogramImage) -> np.ndarray:
    """Drop the padding columns and undo normalization."""
    valid = image.pixels[:, : image.meta.n_valid_frames]
    low, high = image.meta.db_floor, image.meta.db_ceiling
    return valid * (high - low) + low


def lowpass_zero(
    linear_mag: np.ndarray,
    cutoff_hz: float,
    sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
    n_fft: int = N_FFT,
) -> np.ndarray:
    """Zero every bin whose center frequency is above the cutoff."""
    linear_mag = np.asarray(linear_mag, dtype=np.float64)
    nyquist = sample_rate_hz / 2.0
    if cutoff_hz < 0.0 or cutoff_hz > nyquist:
        raise BadCutoff(f"cutoff {cutoff_hz} Hz outside [0, {nyquist}]")
    bin_hz = np.arange(linear_mag.shape[0]) * (sample_rate_hz / n_fft)
    out = linear_mag.copy()
    out[bin_hz > cutoff_hz, :] = 0.0
    return out


def wave_to_image(
    wave: Waveform,
    pad_seed: int,
    fb: MelFilterbank | None = None,
    order: str = "mel_then_db",
    n_fft: int = N_FFT,
    hop: int = HOP,
) -> SpectrogramImage:
    """Full forward path from audio to a padded spectrogram image.

    `order` picks where the dB compression happens: "mel_then_db"
    projects linear magnitudes onto the mel bands first (the default,
    since summing linear energy is the physically meaningful choice);
    "db_then_mel" compresses per bin first and then band-averages the
    dB values.
    """
    if fb is None:
        fb = mel_filterbank(sample_rate_hz=wave.sample_rate_hz, n_fft=n_fft)
    matrix = stft(wave, n_fft, hop)
    magnitudes = matrix.magnitudes()
    if order == "mel_then_db":
        mel_db = db_compress(mel_project(magnitudes, fb))
    elif order == "db_then_mel":
        mel_db = mel_project_mean(db_compress(magnitudes), fb)
    else:
        raise BadConfig(f"unknown order {order!r}")
    meta = ImageMeta(
        sample_rate_hz=wave.sample_rate_hz,
        hop=hop,
        n_fft=n_fft,
        mel_low_hz=fb.band_edges_hz[0],
        mel_high_hz=fb.band_edges_hz[-1],
    )
    return pad_to_image(mel_db, pad_seed, meta)


def griffin_lim_from_magnitude(
    target_mag: np.ndarray,
    n_fft: int = N_FFT,
    hop: int = HOP,
    iterations: int = 1000,
    seed: int = 0,
) -> tuple[np.ndarray, list[float]]:
    """Iterative phase recovery from a fixed magnitude target.

    Returns the signal and the per-iterate consistency error
    ||  |STFT(x_k)| - M  ||_F measured over the full (mirrored) spectrum
    of each frame, the metric in which the update provably never
    increases the error.
    """
    target_mag = np.asarray(target_mag, dtype=np.float64)
    if iterations < 0:
        raise BadConfig("iterations must be nonnegative")
    n_bins = target_mag.shape[0]
    # bins 1..n-2 appear twice in the mirrored spectrum of a real frame
    fold = np.full((n_bins, 1), 2.0)
    fold[0, 0] = 1.0
    fold[-1, 0] = 1.0

    def consistency(mag: np.ndarray) -> float:
        return float(np.sqrt(np.sum(fold * (mag - target_mag) ** 2)))

    rng = seeded_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target_mag.shape))
    # edge bins of a real signal's spectrum carry no phase freedom
    phase[0, :] = 1.0
    phase[-1, :] = 1.0
    signal = _istft_array(target_mag * phase, n_fft, hop)
    history = []
    for _ in range(iterations):
        bins = _stft_array(signal, n_fft, hop)
        mag = np.abs(bins)
        history.append(consistency(mag))
        safe = np.where(mag > 0.0, mag, 1.0)
        phase = bins / safe
        signal = _istft_array(target_mag * phase, n_fft, hop)
    history.append(consistency(np.abs(_stft_array(signal, n_fft, hop))))
    return signal, history


def griffin_lim(
    image: SpectrogramImage,
    iterations: int = 1000,
    cutoff_hz: float | None = None,
    seed: int = 0,
) -> Waveform:
    """Invert a spectrogram image to audio.

    De-normalizes the valid columns, undoes the dB compression, lifts the
    mel bands back to linear bins by nonnegative least squares, zeroes
    bins above the cutoff, and runs iterative phase recovery on the
    result. The target is framed by silent guard frames so every sample
    of the returned span has full analysis coverage; without them the
    least-squares inverse amplifies whatever lands under the near-zero
    window tails at the edges. The output covers exactly the valid
    frames and is scaled down to peak 1 if recovery overshoots.
    """
    meta = image.meta
    if cutoff_hz is None:
        cutoff_hz = DEFAULT_CUTOFF_FRACTION * meta.sample_rate_hz / 2.0
    fb = mel_filterbank(
        sample_rate_hz=meta.sample_rate_hz,
        n_fft=meta.n_fft,
        low_hz=meta.mel_low_hz,
        high_hz=meta.mel_high_hz,
    )
    mel_linear = db_to_linear(image_to_mel_db(image))
    target = mel_pseudo_inverse(mel_linear, fb)
    target = lowpass_zero(target, cutoff_hz, meta.sample_rate_hz, meta.n_fft)
    guard = 2
    padded = np.pad(target, ((0, 0), (guard, guard)))
    signal, _ = griffin_lim_from_magnitude(
        padded, meta.n_fft, meta.hop, iterations, seed
    )
    start = guard * meta.hop
    span = samples_for_frames(meta.n_valid_frames, meta.n_fft, meta.hop)
    signal = signal[start:start + span]
    peak = float(np.max(np.abs(signal))) if signal.size else 0.0
    if peak > 1.0:
        signal = signal / peak
    return Waveform(signal, meta.sample_rate_hz)


def load_wav(path) -> Waveform:
    """Read a mono PCM16 RIFF/WAVE file, scaling samples by 1/32768."""
    try:
        with wave_module.open(str(path), "rb") as handle:
            channels = handle.getnchannels()
            width = handle.getsampwidth()
            comp = handle.getcomptype()
            rate = handle.getframerate()
            count = handle.getnframes()
            raw = handle.readframes(count)
    except (wave_module.Error, EOFError) as exc:
        raise CorruptHeader(f"not a readable WAV file: {exc}") from exc
    if channels != 1:
        raise UnsupportedFormat(f"need mono audio, got {channels} channels")
    if width != 2 or comp != "NONE":
        raise UnsupportedFormat("need uncompressed 16-bit PCM")
    if count == 0 or len(raw) < 2 * count:
        raise CorruptHeader("WAV data chunk shorter than its header claims")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def save_wav(wave: Waveform, path) -> None:
    """Write mono PCM16, saturating anything outside the integer range."""
    scaled = np.rint(wave.samples * 32768.0)
    ints = np.clip(scaled, -32768, 32767).astype("<i2")
    with wave_module.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(wave.sample_rate_hz)
        handle.writeframes(ints.tobytes())


_SPEC1_MAGIC = b"SPEC1"
_SPEC1_VERSION = 1
_SPEC1_HEADER = "<5sBIIIddddIQ"


def save_spec(image: SpectrogramImage, path) -> None:
    """Write the SPEC1 container: header fields then 128x128 f32 pixels."""
    meta = image.meta
    header = struct.pack(
        _SPEC1_HEADER,
        _SPEC1_MAGIC,
        _SPEC1_VERSION,
        meta.sample_rate_hz,
        meta.hop,
        meta.n_fft,
        meta.mel_low_hz,
        meta.mel_high_hz,
        meta.db_floor,
        meta.db_ceiling,
        meta.n_valid_frames,
        meta.pad_seed,
    )
    body = image.pixels.astype("<f4").tobytes()
    with open(path, "wb") as handle:
        handle.write(header + body)


def load_spec(path) -> SpectrogramImage:
    with open(path, "rb") as handle:
        blob = handle.read()
    header_size = struct.calcsize(_SPEC1_HEADER)
    if len(blob) < header_size or blob[:5] != _SPEC1_MAGIC:
        raise CorruptHeader("not a SPEC1 file")
    fields = struct.unpack(_SPEC1_HEADER, blob[:header_size])
    if fields[1] != _SPEC1_VERSION:
        raise CorruptHeader(f"unsupported SPEC1 version {fields[1]}")
    expected = header_size + IMAGE_SIZE * IMAGE_SIZE * 4
    if len(blob) != expected:
        raise CorruptFile(f"expected {expected} bytes, found {len(blob)}")
    pixels = np.frombuffer(blob[header_size:], dtype="<f4").astype(np.float64)
    pixels = pixels.reshape(IMAGE_SIZE, IMAGE_SIZE)
    meta = ImageMeta(
        sample_rate_hz=fields[2],
        hop=fields[3],
        n_fft=fields[4],
        mel_low_hz=fields[5],
        mel_high_hz=fields[6],
        db_floor=fields[7],
        db_ceiling=fields[8],
        n_valid_frames=fields[9],
        pad_seed=fields[10],
    )
    return SpectrogramImage(pixels, meta)


def save_png(image: SpectrogramImage, path) -> None:
    """Lossy 8-bit grayscale export for visual inspection."""
    levels = np.rint(image.pixels * 255.0).astype(np.uint8)
    PILImage.fromarray(levels, mode="L").save(str(path))
