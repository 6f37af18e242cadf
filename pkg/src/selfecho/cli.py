"""Command-line surface: the five pipeline steps as composable commands.

Each subcommand wraps one library entry point and maps every
domain error onto a stable nonzero exit code, so shell pipelines can
branch on what failed. All randomness is seeded; reruns with identical
inputs and flags write byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import corpus, dsp, evaluation, figures, psola, training
from .config import read_config, synth_spec_from, train_config_from
from .engine import tensor as T
from .errors import (
    BadConfig,
    BadCutoff,
    BadSpec,
    CorruptCheckpoint,
    CorruptFile,
    CorruptHeader,
    DuplicateEntry,
    EmptyCorpus,
    FactorOutOfRange,
    InputTooLong,
    IoFailure,
    LengthMismatch,
    MissingGroundTruth,
    MissingPart,
    NonFinite,
    NoGraph,
    NotEnoughData,
    ParseError,
    SelfEchoError,
    ShapeMismatch,
    TooShort,
    UnsupportedFormat,
)
from .gan import set_deterministic

# documented exit codes; first match wins
_EXIT_CODES = (
    (IoFailure, 1),
    ((UnsupportedFormat, CorruptHeader, CorruptFile), 2),
    (InputTooLong, 3),
    (TooShort, 4),
    (MissingGroundTruth, 5),
    ((ParseError, DuplicateEntry), 6),
    ((BadConfig, BadSpec, BadCutoff, FactorOutOfRange), 7),
    (CorruptCheckpoint, 8),
    ((EmptyCorpus, NotEnoughData), 9),
    (NonFinite, 10),
    ((ShapeMismatch, LengthMismatch, MissingPart, NoGraph), 11),
)
_FALLBACK_EXIT = 12

TRANSLATED_SUFFIX = "_translated"
DEFAULT_GL_ITERATIONS = 1000


def _exit_code(exc: SelfEchoError) -> int:
    for kinds, code in _EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return _FALLBACK_EXIT


def _env_seed() -> int | None:
    raw = os.environ.get("SELFECHO_SEED")
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw)
    except ValueError:
        raise BadConfig(f"SELFECHO_SEED must be an integer, got {raw!r}") from None


def _resolve_seed(flag_value: int | None, fallback: int = 0) -> int:
    if flag_value is not None:
        return flag_value
    env = _env_seed()
    return fallback if env is None else env


def _require_file(path: Path) -> Path:
    if not path.is_file():
        raise IoFailure(f"missing file: {path}")
    return path


# -- single-file commands -----------------------------------------------------

def cmd_wav2spec(args) -> int:
    wave = dsp.load_wav(_require_file(Path(args.in_path)))
    seed = _resolve_seed(args.seed)
    image = dsp.wave_to_image(wave, pad_seed=seed)
    dsp.save_spec(image, args.out_path)
    if args.png:
        dsp.save_png(image, args.png)
    print(f"wrote {args.out_path} ({image.meta.n_valid_frames} valid frames)")
    return 0


def cmd_spec2wav(args) -> int:
    image = dsp.load_spec(_require_file(Path(args.in_path)))
    wave = dsp.griffin_lim(
        image,
        iterations=args.iters,
        cutoff_hz=args.cutoff,
        seed=_resolve_seed(args.seed),
    )
    dsp.save_wav(wave, args.out_path)
    print(f"wrote {args.out_path} ({wave.samples.size} samples)")
    return 0


def cmd_psola(args) -> int:
    native = dsp.load_wav(_require_file(Path(args.native)))
    learner = dsp.load_wav(_require_file(Path(args.learner)))
    if (args.segments is None) != (args.native_segments is None):
        raise BadConfig(
            "segment files come in pairs: pass both "
            "--segments and --native-segments, or neither"
        )
    native_segments = learner_segments = None
    if args.segments is not None:
        learner_segments = psola.load_segments(_require_file(Path(args.segments)))
        native_segments = psola.load_segments(
            _require_file(Path(args.native_segments))
        )
    out = psola.transplant_prosody(
        native,
        learner,
        native_segments=native_segments,
        learner_segments=learner_segments,
    )
    dsp.save_wav(out, args.out_path)
    print(f"wrote {args.out_path} ({out.samples.size} samples)")
    return 0


# -- corpus and training ------------------------------------------------------

def cmd_synth_data(args) -> int:
    mapping = read_config(_require_file(Path(args.spec))) if args.spec else {}
    spec = synth_spec_from(mapping, seed=args.seed if args.seed is not None
                           else _env_seed())
    native, nonnative, _ = corpus.generate_synthetic_corpus(spec, args.out_dir)
    print(
        f"wrote {len(native)} native and {len(nonnative)} non-native "
        f"recordings to {args.out_dir}"
    )
    return 0


def _training_probes(mode: str, pairs, images):
    if mode == "paired":
        return pairs[: 2]
    return images[: 2]


def cmd_train(args) -> int:
    T.set_default_dtype("float32")
    mapping = read_config(_require_file(Path(args.config))) if args.config else {}
    if "seed" not in mapping:
        env = _env_seed()
        if env is not None:
            mapping["seed"] = str(env)
    cfg = train_config_from(mapping, mode=args.mode, output_dir=str(args.out_dir))
    recordings = corpus.load_manifest(
        _require_file(Path(args.data) / "manifest.tsv")
    )
    if cfg.mode == "paired":
        pairs = corpus.build_pairs(recordings)
        probes = _training_probes("paired", pairs, None)
        state = training.train_paired(pairs, cfg, snapshot_probes=probes)
    else:
        xs = [
            corpus.load_recording_image(r)
            for r in recordings
            if r.domain == "nonnative"
        ]
        ys = [
            corpus.load_recording_image(r) for r in recordings if r.domain == "native"
        ]
        probes = _training_probes("unpaired", None, xs)
        state = training.train_unpaired(xs, ys, cfg, snapshot_probes=probes)

    rows = [
        {
            "d_loss": r.d_loss,
            "g_adv": r.g_adv_loss,
            "l1": r.l1_loss,
            "cycle": r.cycle_loss,
            "total": r.total_g_loss,
        }
        for _, r in state.loss_history
    ]
    out_dir = Path(cfg.output_dir)
    figures.render_loss_curves(rows, out_dir / "loss_curves.png")
    last = state.loss_history[-1][1] if state.loss_history else None
    tail = f", final total G loss {last.total_g_loss:.4f}" if last else ""
    print(f"trained {state.global_step} steps into {out_dir}{tail}")
    return 0


# -- inference and evaluation -------------------------------------------------

def _load_model_state(model_arg) -> training.TrainState:
    path = Path(model_arg)
    if path.is_dir():
        path = path / training.CHECKPOINT_NAME
    _require_file(path)
    return training.load_state(path)


def _read_input_image(path: Path, seed: int) -> dsp.SpectrogramImage:
    suffix = path.suffix.lower()
    if suffix == ".wav":
        return dsp.wave_to_image(dsp.load_wav(path), pad_seed=seed)
    if suffix == ".spec":
        return dsp.load_spec(path)
    raise UnsupportedFormat(f"{path}: translate reads .wav or .spec inputs")


def cmd_translate(args) -> int:
    T.set_default_dtype("float32")
    state = _load_model_state(args.model)
    g = state.nets["G"]
    in_path = _require_file(Path(args.in_path))
    image = _read_input_image(in_path, _resolve_seed(args.seed))

    side = state.config.image_size
    pooled = (
        corpus.pool_pixels(image.pixels, side)
        if image.pixels.shape[0] != side
        else np.array(image.pixels, dtype=np.float64)
    )
    g.eval()
    set_deterministic(g, True)
    try:
        batch = pooled[None, None, :, :].astype(T.default_dtype())
        generated = np.asarray(g(training.Tensor(batch)).data[0, 0], dtype=np.float64)
    finally:
        set_deterministic(g, False)
    generated = np.clip(generated, 0.0, 1.0)
    translated = training._full_scale_image(generated, image.meta)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = in_path.stem
    input_spec = out_dir / f"{stem}_input.spec"
    spec_path = out_dir / f"{stem}{TRANSLATED_SUFFIX}.spec"
    wav_path = out_dir / f"{stem}{TRANSLATED_SUFFIX}.wav"
    png_path = out_dir / f"{stem}{TRANSLATED_SUFFIX}.png"
    dsp.save_spec(image, input_spec)
    dsp.save_spec(translated, spec_path)
    dsp.save_wav(dsp.griffin_lim(translated, iterations=args.iters), wav_path)
    difference = np.abs(translated.pixels - image.pixels)
    figures.render_panels(
        [image.pixels, translated.pixels, difference],
        ["input", "translated", "absolute difference"],
        png_path,
    )
    print(f"wrote {spec_path}, {wav_path}, {png_path}")
    return 0


def _eval_inputs(data_dir: Path, truth_path: Path | None, psola_dir):
    manifest = _require_file(data_dir / "manifest.tsv")
    recordings = corpus.load_manifest(manifest)
    truth_path = truth_path or (data_dir / "ground_truth_pairs.tsv")
    if not truth_path.is_file():
        raise MissingGroundTruth(
            f"no ground-truth pair table at {truth_path}; "
            "pass --truth or evaluate a corpus that ships one"
        )
    pair_map = corpus.load_ground_truth(truth_path)

    items = []
    ground_truth = {}
    psola_outputs = {} if psola_dir is not None else None
    for rec in recordings:
        if rec.domain != "nonnative":
            continue
        rel = str(Path(rec.path).relative_to(data_dir))
        if rel not in pair_map:
            raise MissingGroundTruth(f"{rel} has no native counterpart in {truth_path}")
        items.append((rel, corpus.load_recording_image(rec)))
        counterpart = data_dir / pair_map[rel]
        ground_truth[rel] = dsp.load_spec(counterpart) if counterpart.suffix == ".spec" \
            else dsp.wave_to_image(
                dsp.load_wav(_require_file(counterpart)),
                pad_seed=corpus.pad_seed_for(rec),
            )
        if psola_outputs is not None:
            candidate = Path(psola_dir) / Path(rel).name
            if candidate.is_file():
                psola_outputs[rel] = dsp.wave_to_image(
                    dsp.load_wav(candidate), pad_seed=corpus.pad_seed_for(rec)
                )
    return items, ground_truth, psola_outputs


def cmd_eval(args) -> int:
    T.set_default_dtype("float32")
    state = _load_model_state(args.model)
    models = {"G": state.nets["G"]}
    if "F" in state.nets:
        models["F"] = state.nets["F"]
    if "D_Y" in state.nets:
        models["D"] = state.nets["D_Y"]

    items, ground_truth, psola_outputs = _eval_inputs(
        Path(args.data),
        Path(args.truth) if args.truth else None,
        args.psola_dir,
    )
    report = evaluation.evaluate_system(
        models, items, ground_truth, psola_outputs=psola_outputs
    )
    if args.mos:
        report.manual_mos = evaluation.load_manual_mos(_require_file(Path(args.mos)))

    out_path = Path(args.out_path)
    if out_path.parent != Path(""):
        out_path.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_path)
    summary_path = out_path.with_name(out_path.stem + "_summary.txt")
    report.write_summary(summary_path)

    aggregates = report.aggregates()
    if aggregates:
        labels, means, stds = [], [], []
        for name, (mean, std) in aggregates.items():
            labels.append(name.replace("_", "\n"))
            means.append(mean)
            stds.append(std)
        figures.render_metric_bars(
            labels,
            means,
            stds,
            out_path.with_name(out_path.stem + "_metrics.png"),
            "held-out evaluation",
            "metric value",
        )
    sys.stdout.write(report.summary_text())
    return 0


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selfecho",
        description=(
            "Self-imitating pronunciation feedback: record, translate the "
            "spectrogram toward the native domain, and resynthesize."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(
            name,
            help=help_text,
            formatter_class=argparse.ArgumentDefaultsHelpFormatter,
        )
        p.set_defaults(func=func)
        return p

    p = add("wav2spec", cmd_wav2spec, "render a WAV into a SPEC1 spectrogram image")
    p.add_argument("--in", dest="in_path", required=True, help="input WAV path")
    p.add_argument("--out", dest="out_path", required=True, help="output SPEC1 path")
    p.add_argument("--png", default=None, help="also export a grayscale PNG here")
    p.add_argument("--seed", type=int, default=None,
                   help="padding-noise seed (default: SELFECHO_SEED or 0)")

    p = add("spec2wav", cmd_spec2wav, "invert a SPEC1 image back to audio")
    p.add_argument("--in", dest="in_path", required=True, help="input SPEC1 path")
    p.add_argument("--out", dest="out_path", required=True, help="output WAV path")
    p.add_argument("--iters", type=int, default=DEFAULT_GL_ITERATIONS,
                   help="phase reconstruction iterations")
    p.add_argument("--cutoff", type=float, default=None,
                   help="low-pass cutoff in Hz (default: 95%% of Nyquist)")
    p.add_argument("--seed", type=int, default=None,
                   help="initial-phase seed (default: SELFECHO_SEED or 0)")

    p = add("psola", cmd_psola, "prosody-transplant baseline feedback")
    p.add_argument("--native", required=True, help="native reference WAV")
    p.add_argument("--learner", required=True, help="learner WAV")
    p.add_argument("--out", dest="out_path", required=True, help="output WAV path")
    p.add_argument("--segments", default=None,
                   help="learner segment TSV (start, end, label)")
    p.add_argument("--native-segments", default=None,
                   help="native segment TSV; required with --segments")

    p = add("synth-data", cmd_synth_data, "generate the two-domain synthetic corpus")
    p.add_argument("--spec", default=None, help="key = value corpus settings file")
    p.add_argument("--out", dest="out_dir", required=True, help="corpus directory")
    p.add_argument("--seed", type=int, default=None,
                   help="corpus seed (default: SELFECHO_SEED or config value)")

    p = add("train", cmd_train, "train a translation model on a corpus")
    p.add_argument("--mode", required=True, choices=training.MODES,
                   help="paired (conditional) or unpaired (cycle-consistent)")
    p.add_argument("--data", required=True, help="corpus directory with manifest.tsv")
    p.add_argument("--config", default=None, help="key = value training settings file")
    p.add_argument("--out", dest="out_dir", required=True,
                   help="run directory for checkpoint, loss log, and snapshots")

    p = add("translate", cmd_translate, "translate one utterance toward the native domain")
    p.add_argument("--model", required=True, help="run directory or checkpoint file")
    p.add_argument("--in", dest="in_path", required=True, help="input WAV or SPEC1")
    p.add_argument("--out", dest="out_dir", required=True, help="output directory")
    p.add_argument("--iters", type=int, default=DEFAULT_GL_ITERATIONS,
                   help="phase reconstruction iterations for the feedback WAV")
    p.add_argument("--seed", type=int, default=None,
                   help="padding/phase seed (default: SELFECHO_SEED or 0)")

    p = add("eval", cmd_eval, "score held-out items against quarantined counterparts")
    p.add_argument("--model", required=True, help="run directory or checkpoint file")
    p.add_argument("--data", required=True, help="held-out corpus directory")
    p.add_argument("--truth", default=None,
                   help="ground-truth pair TSV (default: <data>/ground_truth_pairs.tsv)")
    p.add_argument("--psola-dir", default=None,
                   help="directory of PSOLA output WAVs named like the learner files")
    p.add_argument("--mos", default=None, help="optional manual MOS CSV to attach")
    p.add_argument("--out", dest="out_path", required=True, help="report CSV path")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        name = exc.filename if exc.filename else exc
        print(f"error: missing file: {name}", file=sys.stderr)
        return 1
    except SelfEchoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
