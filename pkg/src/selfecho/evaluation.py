"""Objective surrogates for the perceptual comparison of the three systems.

Human MOS ratings cannot be automated, so this module scores held-out
utterances with spectral and signal-level proxies instead: log-spectral
distance between dB-mel grids, aligned reconstruction SNR between
waveforms, and a discriminator-derived nativelikeness score. The report
keeps an optional manual-entry block with the five perceptual criteria
so rater data can be attached later without code changes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .corpus import pool_pixels
from .engine import tensor as T
from .engine.tensor import Tensor
from .errors import (
    BadConfig,
    LengthMismatch,
    MissingGroundTruth,
    ParseError,
    ShapeMismatch,
)
from .gan import set_deterministic

SNR_CAP_DB = 120.0
ALIGN_WINDOW = dsp.N_FFT

MOS_CRITERIA = (
    "holistic",
    "segmental",
    "suprasegmental",
    "imitability",
    "sound_quality",
)
MOS_MIN = 1.0
MOS_MAX = 5.0

ITEM_FIELDS = (
    "utterance_id",
    "lsd_to_reference_db",
    "lsd_identity_baseline_db",
    "cycle_error",
    "nativelikeness_score",
    "psola_lsd_db",
)


# -- spectral distance --------------------------------------------------------

def lsd_grid(a_db: np.ndarray, b_db: np.ndarray) -> float:
    """RMS difference between two dB grids of identical shape."""
    a_db = np.asarray(a_db, dtype=np.float64)
    b_db = np.asarray(b_db, dtype=np.float64)
    if a_db.shape != b_db.shape:
        raise ShapeMismatch(f"dB grids differ in shape: {a_db.shape} vs {b_db.shape}")
    return float(np.sqrt(np.mean((a_db - b_db) ** 2)))


def _denormalize(pixels: np.ndarray, meta: dsp.ImageMeta | None) -> np.ndarray:
    floor = meta.db_floor if meta is not None else float(dsp.DB_FLOOR)
    ceiling = meta.db_ceiling if meta is not None else float(dsp.DB_CEILING)
    return np.asarray(pixels, dtype=np.float64) * (ceiling - floor) + floor


def log_spectral_distance(a: dsp.SpectrogramImage, b: dsp.SpectrogramImage) -> float:
    """LSD between two spectrogram images over their shared valid columns."""
    if a.pixels.shape != b.pixels.shape:
        raise ShapeMismatch(
            f"images differ in shape: {a.pixels.shape} vs {b.pixels.shape}"
        )
    n_valid = min(a.meta.n_valid_frames, b.meta.n_valid_frames)
    n_valid = max(1, min(n_valid, a.pixels.shape[1]))
    return lsd_grid(
        _denormalize(a.pixels[:, :n_valid], a.meta),
        _denormalize(b.pixels[:, :n_valid], b.meta),
    )


# -- waveform SNR -------------------------------------------------------------

def reconstruction_snr(reference: dsp.Waveform, estimate: dsp.Waveform) -> float:
    """SNR in dB after aligning the estimate by its best integer lag.

    The search covers lags within one analysis window; anything needing
    a larger shift is a length contract violation, not an alignment
    problem. Perfect reconstruction is capped at 120 dB.
    """
    if reference.sample_rate_hz != estimate.sample_rate_hz:
        raise LengthMismatch(
            f"sample rates differ: {reference.sample_rate_hz} "
            f"vs {estimate.sample_rate_hz}"
        )
    ref = np.asarray(reference.samples, dtype=np.float64)
    est = np.asarray(estimate.samples, dtype=np.float64)
    if abs(len(ref) - len(est)) > ALIGN_WINDOW:
        raise LengthMismatch(
            f"lengths {len(ref)} and {len(est)} differ by more than "
            f"the {ALIGN_WINDOW}-sample alignment window"
        )
    best = -math.inf
    for lag in range(-ALIGN_WINDOW, ALIGN_WINDOW + 1):
        ref_lo, est_lo = max(0, -lag), max(0, lag)
        span = min(len(ref) - ref_lo, len(est) - est_lo)
        if span <= 0:
            continue
        r = ref[ref_lo:ref_lo + span]
        e = est[est_lo:est_lo + span]
        signal = float(np.sum(r * r))
        if signal == 0.0:
            continue
        error = float(np.sum((r - e) ** 2))
        if error == 0.0:
            return SNR_CAP_DB
        best = max(best, 10.0 * math.log10(signal / error))
    if best == -math.inf:
        raise LengthMismatch("no overlap between reference and estimate")
    return min(best, SNR_CAP_DB)


# -- discriminator scoring ----------------------------------------------------

def _fit_pixels(item, side: int) -> np.ndarray:
    pixels = item.pixels if isinstance(item, dsp.SpectrogramImage) else item
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ShapeMismatch(f"expected a square image, got shape {pixels.shape}")
    if pixels.shape[0] == side:
        return pixels
    if pixels.shape[0] % side != 0:
        raise ShapeMismatch(f"cannot pool a {pixels.shape[0]} px image to {side} px")
    return pool_pixels(pixels, side)


def nativelikeness_scores(d, images) -> np.ndarray:
    """Mean sigmoid of the patch logit map, one score per image."""
    if getattr(d, "in_channels", 1) != 1:
        raise ShapeMismatch(
            "nativelikeness needs an unconditional discriminator (one input channel)"
        )
    batch = np.stack([_fit_pixels(img, d.image_size) for img in images])
    was_training = d.training
    d.eval()
    try:
        logits = d(Tensor(batch[:, None, :, :].astype(T.default_dtype()))).data
    finally:
        d.train(was_training)
    probs = 1.0 / (1.0 + np.exp(-np.asarray(logits, dtype=np.float64)))
    return probs.mean(axis=(1, 2, 3))


def nativelikeness_score(d, image) -> float:
    return float(nativelikeness_scores(d, [image])[0])


def sign_test_p(k: int, n: int) -> float:
    """One-sided binomial tail: P(X >= k) for X ~ Binomial(n, 1/2)."""
    if not 0 <= k <= n:
        raise BadConfig(f"need 0 <= k <= n, got k={k}, n={n}")
    return sum(math.comb(n, i) for i in range(k, n + 1)) / 2.0 ** n


# -- the report ---------------------------------------------------------------

@dataclass
class EvalItem:
    utterance_id: str
    lsd_to_reference_db: float
    lsd_identity_baseline_db: float
    cycle_error: float | None = None
    nativelikeness_score: float | None = None
    psola_lsd_db: float | None = None

    def as_row(self) -> list[str]:
        row = [self.utterance_id]
        for name in ITEM_FIELDS[1:]:
            value = getattr(self, name)
            row.append("" if value is None else repr(float(value)))
        return row


@dataclass
class EvalReport:
    items: list[EvalItem] = field(default_factory=list)
    manual_mos: list[dict] | None = None

    def aggregates(self) -> dict[str, tuple[float, float]]:
        """Fresh mean and standard deviation per metric, Nones skipped."""
        out: dict[str, tuple[float, float]] = {}
        for name in ITEM_FIELDS[1:]:
            values = [
                getattr(item, name)
                for item in self.items
                if getattr(item, name) is not None
            ]
            if values:
                arr = np.asarray(values, dtype=np.float64)
                out[name] = (float(arr.mean()), float(arr.std()))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(ITEM_FIELDS)
            for item in self.items:
                writer.writerow(item.as_row())

    def summary_text(self) -> str:
        lines = [f"evaluation over {len(self.items)} held-out items"]
        for name, (mean, std) in self.aggregates().items():
            count = sum(1 for i in self.items if getattr(i, name) is not None)
            lines.append(f"  {name}: {mean:.4f} +/- {std:.4f} (n={count})")
        if self.manual_mos:
            lines.append("manual MOS block:")
            by_system: dict[str, list[dict]] = {}
            for row in self.manual_mos:
                by_system.setdefault(row["system"], []).append(row)
            for system in sorted(by_system):
                rows = by_system[system]
                parts = []
                for criterion in MOS_CRITERIA:
                    mean = float(np.mean([r[criterion] for r in rows]))
                    parts.append(f"{criterion} {mean:.3f}")
                lines.append(f"  {system} (n={len(rows)}): " + ", ".join(parts))
        else:
            lines.append("manual MOS block: not collected")
        return "\n".join(lines) + "\n"

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.summary_text())


def load_manual_mos(path) -> list[dict]:
    """Read rater scores; every criterion must sit in [1, 5]."""
    expected = ["utterance_id", "system", *MOS_CRITERIA]
    rows: list[dict] = []
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty manual MOS file") from None
        if header != expected:
            raise ParseError(
                f"{path}: header must be {','.join(expected)}, got {','.join(header)}"
            )
        for lineno, raw in enumerate(reader, start=2):
            if not raw or (len(raw) == 1 and not raw[0].strip()):
                continue
            if len(raw) != len(expected):
                raise ParseError(
                    f"{path}:{lineno}: expected {len(expected)} fields, got {len(raw)}"
                )
            row: dict = {"utterance_id": raw[0], "system": raw[1]}
            for name, text in zip(MOS_CRITERIA, raw[2:]):
                try:
                    value = float(text)
                except ValueError:
                    raise ParseError(
                        f"{path}:{lineno}: {name} is not a number: {text!r}"
                    ) from None
                if not MOS_MIN <= value <= MOS_MAX:
                    raise ParseError(
                        f"{path}:{lineno}: {name} must lie in "
                        f"[{MOS_MIN:g}, {MOS_MAX:g}], got {value:g}"
                    )
                row[name] = value
            rows.append(row)
    return rows


# -- system evaluation --------------------------------------------------------

def _pooled_valid_columns(item, ref, side: int) -> int:
    """Shared valid-column count, scaled from full frames to pooled pixels."""
    counts = []
    for image in (item, ref):
        if isinstance(image, dsp.SpectrogramImage):
            factor = max(1, image.pixels.shape[1] // side)
            counts.append(math.ceil(image.meta.n_valid_frames / factor))
    if not counts:
        return side
    return max(1, min(min(counts), side))


def _run_deterministic(net, pixels: np.ndarray) -> np.ndarray:
    batch = pixels[None, None, :, :].astype(T.default_dtype())
    out = net(Tensor(batch)).data[0, 0]
    return np.clip(np.asarray(out, dtype=np.float64), 0.0, 1.0)


def evaluate_system(
    models: dict,
    test_items,
    ground_truth: dict,
    psola_outputs: dict | None = None,
    *,
    deterministic: bool = True,
) -> EvalReport:
    """Score every held-out item against its quarantined counterpart.

    ``models`` maps "G" to the translation generator and optionally "F"
    to the reverse generator (enables cycle error) and "D" to an
    unconditional discriminator (enables nativelikeness). ``test_items``
    is an iterable of (utterance_id, image); ``ground_truth`` maps each
    id to the native counterpart image, ``psola_outputs`` optionally to
    the baseline system's output image.
    """
    if "G" not in models or models["G"] is None:
        raise BadConfig("evaluate_system needs a generator under key 'G'")
    g = models["G"]
    f = models.get("F")
    d = models.get("D")
    side = g.image_size

    touched = [net for net in (g, f) if net is not None]
    saved = [(net, net.training) for net in touched]
    for net in touched:
        net.eval()
        if deterministic:
            set_deterministic(net, True)
    try:
        items: list[EvalItem] = []
        for utterance_id, image in test_items:
            if utterance_id not in ground_truth:
                raise MissingGroundTruth(
                    f"no native counterpart for held-out item {utterance_id!r}"
                )
            reference = ground_truth[utterance_id]
            x = _fit_pixels(image, side)
            r = _fit_pixels(reference, side)
            translated = _run_deterministic(g, x)

            n_valid = _pooled_valid_columns(image, reference, side)
            meta = image.meta if isinstance(image, dsp.SpectrogramImage) else None
            ref_meta = (
                reference.meta if isinstance(reference, dsp.SpectrogramImage) else None
            )
            r_db = _denormalize(r[:, :n_valid], ref_meta)
            item = EvalItem(
                utterance_id=str(utterance_id),
                lsd_to_reference_db=lsd_grid(
                    _denormalize(translated[:, :n_valid], meta), r_db
                ),
                lsd_identity_baseline_db=lsd_grid(
                    _denormalize(x[:, :n_valid], meta), r_db
                ),
            )
            if f is not None:
                back = _run_deterministic(f, translated)
                item.cycle_error = float(np.mean(np.abs(back - x)))
            if d is not None:
                item.nativelikeness_score = float(
                    nativelikeness_scores(d, [translated])[0]
                )
            if psola_outputs is not None and utterance_id in psola_outputs:
                p = _fit_pixels(psola_outputs[utterance_id], side)
                p_meta = (
                    psola_outputs[utterance_id].meta
                    if isinstance(psola_outputs[utterance_id], dsp.SpectrogramImage)
                    else None
                )
                item.psola_lsd_db = lsd_grid(
                    _denormalize(p[:, :n_valid], p_meta), r_db
                )
            items.append(item)
    finally:
        for net, was_training in saved:
            if deterministic:
                set_deterministic(net, False)
            net.train(was_training)
    return EvalReport(items=items)
