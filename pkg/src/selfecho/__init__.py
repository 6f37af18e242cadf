"""selfecho: self-imitating pronunciation feedback.

Converts learner speech to mel-dB spectrogram images, translates them
toward the native domain with adversarially trained generators (paired
and cycle-consistent variants), inverts the result back to audio, and
compares against a prosody-transplantation baseline.
"""

from . import config, corpus, dsp, evaluation, figures, gan, psola, training
from .corpus import (
    PairedSample,
    Recording,
    SynthSpec,
    build_pairs,
    generate_synthetic_corpus,
    holdout_split,
    load_ground_truth,
    load_manifest,
)
from .dsp import (
    SpectrogramImage,
    Waveform,
    griffin_lim,
    load_spec,
    load_wav,
    save_spec,
    save_wav,
    wave_to_image,
)
from .evaluation import (
    EvalItem,
    EvalReport,
    evaluate_system,
    log_spectral_distance,
    nativelikeness_score,
    reconstruction_snr,
)
from .psola import extract_prosody, transplant_prosody
from .training import TrainConfig, load_state, save_state, train_paired, train_unpaired

__version__ = "0.1.0"

__all__ = [
    "config", "corpus", "dsp", "evaluation", "figures", "gan", "psola",
    "training",
    "PairedSample", "Recording", "SynthSpec", "build_pairs",
    "generate_synthetic_corpus", "holdout_split", "load_ground_truth",
    "load_manifest",
    "SpectrogramImage", "Waveform", "griffin_lim", "load_spec", "load_wav",
    "save_spec", "save_wav", "wave_to_image",
    "EvalItem", "EvalReport", "evaluate_system", "log_spectral_distance",
    "nativelikeness_score", "reconstruction_snr",
    "extract_prosody", "transplant_prosody",
    "TrainConfig", "load_state", "save_state", "train_paired",
    "train_unpaired",
    "__version__",
]
