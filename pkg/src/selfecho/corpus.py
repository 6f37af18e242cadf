"""Corpus plumbing and a synthetic two-domain speech generator.

The manifest format, cross-product pairing, and held-out split cover
ingestion of real recordings. The synthetic generator renders seeded
source-filter "syllable sequences" in two renditions per utterance
script: native speakers get full formant glides and a declining pitch
contour; non-native speakers get configurable distortions (frozen
formant trajectories, truncated finals, slower articulation, flattened
pitch). That gives a desk-scale corpus with a known ground-truth
counterpart for every non-native item.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import sosfilt

from . import dsp
from .engine.rng import derive_rng, seeded_rng
from .errors import (
    BadConfig,
    BadSpec,
    DuplicateEntry,
    NotEnoughData,
    ParseError,
    ShapeMismatch,
    UnsupportedFormat,
)

DOMAINS = ("native", "nonnative")
DEFAULT_N_TEST = 162

# tags for independent child rng streams
_TAG_SCRIPT, _TAG_SPEAKER, _TAG_RENDITION = 1, 2, 3


@dataclass(frozen=True)
class Recording:
    """One utterance by one speaker in one domain, stored on disk."""

    utterance_id: str
    speaker_id: str
    domain: str
    path: Path

    def __post_init__(self):
        if not self.utterance_id or not self.speaker_id:
            raise BadConfig("utterance_id and speaker_id must be non-empty")
        if self.domain not in DOMAINS:
            raise BadConfig(f"domain must be one of {DOMAINS}, got {self.domain!r}")

    @property
    def key(self) -> str:
        return f"{self.utterance_id}|{self.speaker_id}|{self.domain}"


@dataclass
class PairedSample:
    """A non-native image x matched with a native image y of the same text."""

    x: dsp.SpectrogramImage
    y: dsp.SpectrogramImage
    utterance_id: str


def load_manifest(path) -> list[Recording]:
    """Parse a tab-separated manifest; '#' lines are comments.

    Each record is "utterance_id<TAB>speaker_id<TAB>domain<TAB>path",
    with paths resolved relative to the manifest location.
    """
    path = Path(path)
    base = path.parent
    recordings: list[Recording] = []
    seen: set[tuple[str, str, str]] = set()
    with open(path, "r", encoding="utf-8") as handle:
        for ln, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 4:
                raise ParseError(
                    f"line {ln}: expected 4 tab-separated fields, got {len(parts)}"
                )
            utt, spk, domain, rel = (p.strip() for p in parts)
            if not utt or not spk or not rel:
                raise ParseError(f"line {ln}: empty field")
            if domain not in DOMAINS:
                raise ParseError(
                    f"line {ln}: domain must be 'native' or 'nonnative', got {domain!r}"
                )
            triple = (utt, spk, domain)
            if triple in seen:
                raise DuplicateEntry(f"line {ln}: duplicate entry {triple}")
            seen.add(triple)
            recordings.append(Recording(utt, spk, domain, base / rel))
    return recordings


def pad_seed_for(recording: Recording) -> int:
    """Stable per-recording seed for the image noise padding."""
    return zlib.crc32(recording.key.encode("utf-8"))


def load_recording_image(recording: Recording, order: str = "mel_then_db") -> dsp.SpectrogramImage:
    """Read a recording and convert it to a spectrogram image."""
    suffix = recording.path.suffix.lower()
    if suffix == ".wav":
        wave = dsp.load_wav(recording.path)
        return dsp.wave_to_image(wave, pad_seed=pad_seed_for(recording), order=order)
    if suffix == ".spec":
        return dsp.load_spec(recording.path)
    raise UnsupportedFormat(f"cannot load {recording.path.name}: need .wav or .spec")


def build_pairs(recordings, loader=load_recording_image) -> list[PairedSample]:
    """Cross product per utterance: every non-native x every native item."""
    order: list[str] = []
    by_utt: dict[str, dict[str, list[Recording]]] = {}
    for rec in recordings:
        if rec.utterance_id not in by_utt:
            by_utt[rec.utterance_id] = {"native": [], "nonnative": []}
            order.append(rec.utterance_id)
        by_utt[rec.utterance_id][rec.domain].append(rec)

    cache: dict[str, dsp.SpectrogramImage] = {}

    def image(rec: Recording) -> dsp.SpectrogramImage:
        if rec.key not in cache:
            cache[rec.key] = loader(rec)
        return cache[rec.key]

    pairs: list[PairedSample] = []
    for utt in order:
        groups = by_utt[utt]
        for nn in groups["nonnative"]:
            for nat in groups["native"]:
                pairs.append(PairedSample(image(nn), image(nat), utt))
    return pairs


def holdout_split(recordings, n_test: int = DEFAULT_N_TEST, seed: int = 0):
    """Seeded shuffle split into (train, test); test gets exactly n_test."""
    total = len(recordings)
    if not 0 <= n_test < total:
        raise NotEnoughData(f"cannot hold out {n_test} of {total} recordings")
    order = seeded_rng(seed).permutation(total)
    test_idx = sorted(order[:n_test].tolist())
    train_idx = sorted(order[n_test:].tolist())
    train = [recordings[i] for i in train_idx]
    test = [recordings[i] for i in test_idx]
    return train, test


def pool_pixels(pixels: np.ndarray, side: int) -> np.ndarray:
    """Average-pool a square pixel grid down to side x side."""
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ShapeMismatch(f"expected a square image, got {pixels.shape}")
    n = pixels.shape[0]
    if side < 1 or n % side != 0:
        raise BadConfig(f"cannot pool {n} px down to {side} px")
    f = n // side
    return pixels.reshape(side, f, side, f).mean(axis=(1, 3))


# -- synthetic corpus -------------------------------------------------------

@dataclass
class SynthSpec:
    """Recipe for a seeded two-domain corpus of source-filter utterances."""

    n_utterances: int = 8
    n_native_speakers: int = 2
    n_nonnative_speakers: int = 2
    sample_rate: int = dsp.DEFAULT_SAMPLE_RATE
    monophthongization: bool = True
    final_deletion: float = 0.2
    duration_stretch: float = 1.3
    pitch_contour_flatten: bool = True
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if min(self.n_utterances, self.n_native_speakers, self.n_nonnative_speakers) < 1:
            raise BadSpec("utterance and speaker counts must be >= 1")
        if self.sample_rate < 16000:
            raise BadSpec("sample_rate must be at least 16000")
        if not 1.0 <= self.duration_stretch <= 2.0:
            raise BadSpec(f"duration_stretch must lie in [1, 2], got {self.duration_stretch}")
        if not 0.0 <= self.final_deletion <= 0.5:
            raise BadSpec(f"final_deletion must lie in [0, 0.5], got {self.final_deletion}")
        if self.seed < 0:
            raise BadSpec("seed must be nonnegative")
        return self


@dataclass
class _Script:
    """Seeded utterance plan shared by every rendition of the utterance."""

    syllable_s: np.ndarray          # per-syllable durations, seconds
    f0_start: float
    f0_end: float
    accents: np.ndarray             # per-syllable accent heights
    formant_targets: np.ndarray     # (n_syllables, 3 formants, start/end) Hz
    closure_s: float
    burst_s: float


_FORMANT_BANDWIDTHS = (90.0, 120.0, 170.0)


def _make_script(spec: SynthSpec, utterance: int) -> _Script:
    rng = derive_rng(spec.seed, _TAG_SCRIPT, utterance)
    n_syl = int(rng.integers(2, 5))
    weights = rng.uniform(0.8, 1.2, size=n_syl)
    body_s = rng.uniform(0.72, 0.95)
    syllable_s = body_s * weights / weights.sum()

    f0_start = rng.uniform(115.0, 170.0)
    f0_end = f0_start * rng.uniform(0.7, 0.85)
    accents = rng.uniform(0.05, 0.25, size=n_syl)

    # per-utterance formant centers with wide within-syllable glides, so
    # freezing the trajectory is clearly measurable on centroid tracks
    centers = np.array([
        rng.uniform(420.0, 650.0),
        rng.uniform(1250.0, 1750.0),
        rng.uniform(2400.0, 2700.0),
    ])
    spans = np.array([220.0, 600.0, 260.0])
    targets = np.empty((n_syl, 3, 2))
    for s in range(n_syl):
        offsets = rng.uniform(-0.05, 0.05, size=3) * spans
        direction = rng.choice([-1.0, 1.0], size=3)
        for fi in range(3):
            mid = centers[fi] + offsets[fi]
            half = spans[fi] / 2.0
            targets[s, fi, 0] = mid - direction[fi] * half
            targets[s, fi, 1] = mid + direction[fi] * half
    return _Script(
        syllable_s=syllable_s,
        f0_start=f0_start,
        f0_end=f0_end,
        accents=accents,
        formant_targets=targets,
        closure_s=float(rng.uniform(0.04, 0.06)),
        burst_s=float(rng.uniform(0.03, 0.05)),
    )


def _resonator_sos(freq: float, bandwidth: float, sr: int) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / sr)
    theta = 2.0 * np.pi * freq / sr
    return np.array([[1.0 - r, 0.0, 0.0, 1.0, -2.0 * r * np.cos(theta), r * r]])


def _render(script: _Script, spec: SynthSpec, speaker_rng, rendition_rng,
            stretch: float, monophthong: bool, flatten_pitch: bool,
            delete_final: float) -> dsp.Waveform:
    sr = spec.sample_rate
    f0_mult = speaker_rng.uniform(0.85, 1.2)
    formant_mult = speaker_rng.uniform(0.95, 1.05)
    peak = speaker_rng.uniform(0.38, 0.5)

    syl_samples = np.maximum((script.syllable_s * stretch * sr).round().astype(int), 1)
    n_body = int(syl_samples.sum())
    edges = np.concatenate([[0], np.cumsum(syl_samples)])

    f0 = np.empty(n_body)
    formants = np.empty((3, n_body))
    envelope = np.ones(n_body)
    decline = np.linspace(script.f0_start, script.f0_end, n_body) * f0_mult
    for s, (lo, hi) in enumerate(zip(edges[:-1], edges[1:])):
        t_rel = np.linspace(0.0, 1.0, hi - lo, endpoint=False)
        f0[lo:hi] = decline[lo:hi] * (1.0 + script.accents[s] * np.sin(np.pi * t_rel) ** 2)
        jitter = rendition_rng.normal(0.0, 12.0, size=3)
        for fi in range(3):
            start, end = script.formant_targets[s, fi] * formant_mult + jitter[fi]
            if monophthong:
                start = end = 0.5 * (start + end)
            formants[fi, lo:hi] = start + (end - start) * t_rel
        attack = min(int(0.015 * sr), (hi - lo) // 3)
        release = min(int(0.025 * sr), (hi - lo) // 3)
        if attack > 0:
            envelope[lo:lo + attack] = np.sin(
                0.5 * np.pi * np.arange(attack) / attack
            ) ** 2
        if release > 0:
            envelope[hi - release:hi] = 0.15 + 0.85 * np.sin(
                0.5 * np.pi * np.arange(release, 0, -1) / release
            ) ** 2
    if flatten_pitch:
        f0[:] = f0.mean()

    # glottal source: one impulse per period plus faint aspiration
    phase = np.cumsum(f0 / sr)
    onsets = np.where(np.diff(np.floor(phase)) > 0)[0] + 1
    source = rendition_rng.normal(0.0, 0.002, size=n_body)
    source[onsets] += 1.0

    # piecewise-constant formant filtering with carried state
    body = source.copy()
    step = max(1, int(round(0.01 * sr)))
    for fi in range(3):
        out = np.empty(n_body)
        zi = np.zeros((1, 2))
        for lo in range(0, n_body, step):
            hi = min(lo + step, n_body)
            mid = (lo + hi) // 2
            sos = _resonator_sos(formants[fi, mid], _FORMANT_BANDWIDTHS[fi], sr)
            out[lo:hi], zi = sosfilt(sos, body[lo:hi], zi=zi)
        body = out
    body *= envelope

    closure = rendition_rng.normal(0.0, 1e-4, size=int(script.closure_s * stretch * sr))
    n_burst = int(script.burst_s * stretch * sr)
    burst_noise = rendition_rng.normal(0.0, 1.0, size=n_burst)
    burst, _ = sosfilt(_resonator_sos(3000.0, 1600.0, sr), burst_noise,
                       zi=np.zeros((1, 2)))
    burst *= np.exp(-np.arange(n_burst) / (0.012 * sr))
    burst *= 0.4 * np.max(np.abs(body)) / max(np.max(np.abs(burst)), 1e-12)

    samples = np.concatenate([body, closure, burst])
    if delete_final > 0.0:
        samples = samples[: int(round(samples.size * (1.0 - delete_final)))]
    samples = samples - samples.mean()
    samples *= peak / max(np.max(np.abs(samples)), 1e-12)
    return dsp.Waveform(samples, sr)


def generate_synthetic_corpus(spec: SynthSpec, out_dir):
    """Render the corpus to WAVs plus manifest and ground-truth tables.

    Returns (native recordings, non-native recordings, ground truth) where
    the ground truth maps each non-native relative path to the relative
    path of its designated native counterpart. The counterpart mapping is
    for evaluation only.
    """
    spec.validate()
    out_dir = Path(out_dir)
    (out_dir / "native").mkdir(parents=True, exist_ok=True)
    (out_dir / "nonnative").mkdir(parents=True, exist_ok=True)

    native: list[Recording] = []
    nonnative: list[Recording] = []
    ground_truth: dict[str, str] = {}
    manifest_rows: list[str] = []
    pair_rows: list[str] = []

    for u in range(spec.n_utterances):
        script = _make_script(spec, u)
        utt_id = f"u{u:03d}"
        native_paths: list[str] = []
        for i in range(spec.n_native_speakers):
            spk = f"n{i:02d}"
            wave = _render(
                script, spec,
                speaker_rng=derive_rng(spec.seed, _TAG_SPEAKER, i),
                rendition_rng=derive_rng(spec.seed, _TAG_RENDITION, u, i),
                stretch=1.0, monophthong=False, flatten_pitch=False,
                delete_final=0.0,
            )
            rel = f"native/{utt_id}_{spk}.wav"
            dsp.save_wav(wave, out_dir / rel)
            native.append(Recording(utt_id, spk, "native", out_dir / rel))
            native_paths.append(rel)
            manifest_rows.append(f"{utt_id}\t{spk}\tnative\t{rel}")
        for j in range(spec.n_nonnative_speakers):
            spk = f"x{j:02d}"
            wave = _render(
                script, spec,
                speaker_rng=derive_rng(spec.seed, _TAG_SPEAKER, 1000 + j),
                rendition_rng=derive_rng(spec.seed, _TAG_RENDITION, u, 1000 + j),
                stretch=spec.duration_stretch,
                monophthong=spec.monophthongization,
                flatten_pitch=spec.pitch_contour_flatten,
                delete_final=spec.final_deletion,
            )
            rel = f"nonnative/{utt_id}_{spk}.wav"
            dsp.save_wav(wave, out_dir / rel)
            nonnative.append(Recording(utt_id, spk, "nonnative", out_dir / rel))
            manifest_rows.append(f"{utt_id}\t{spk}\tnonnative\t{rel}")
            counterpart = native_paths[j % spec.n_native_speakers]
            ground_truth[rel] = counterpart
            pair_rows.append(f"{utt_id}\t{rel}\t{counterpart}")

    manifest = out_dir / "manifest.tsv"
    with open(manifest, "w", encoding="utf-8") as handle:
        handle.write("# utterance_id\tspeaker_id\tdomain\trelative_path\n")
        handle.write("\n".join(manifest_rows) + "\n")
    with open(out_dir / "ground_truth_pairs.tsv", "w", encoding="utf-8") as handle:
        handle.write("# utterance_id\tnonnative_path\tnative_path\n")
        handle.write("\n".join(pair_rows) + "\n")
    return native, nonnative, ground_truth


def load_ground_truth(path) -> dict[str, str]:
    """Read a ground-truth pair table back into a counterpart map."""
    path = Path(path)
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for ln, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split("\t")
            if len(parts) != 3:
                raise ParseError(f"line {ln}: expected 3 tab-separated fields")
            if parts[1] in mapping:
                raise DuplicateEntry(f"line {ln}: duplicate non-native path {parts[1]!r}")
            mapping[parts[1]] = parts[2]
    return mapping
