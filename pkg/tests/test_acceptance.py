"""Top-level acceptance checks, one printed verdict line per criterion.

Each test measures the property end to end at desk scale and prints a
single PASS/FAIL line with the observed numbers, so a bare pytest run
doubles as a scorecard. The training criteria share module fixtures to
keep the whole file inside its runtime budgets.
"""

import hashlib
import math
import shutil
import time

import numpy as np
import pytest
from scipy.signal import sawtooth

from selfecho import corpus, dsp, evaluation, gan, psola, training as tr
from selfecho.cli import main as cli_main
from selfecho.corpus import pool_pixels
from selfecho.dsp import Waveform, istft, stft
from selfecho.engine import (
    BatchNorm2d,
    ConcatSkip,
    Conv2d,
    ConvTranspose2d,
    Dropout,
    InstanceNorm2d,
    LeakyReLU,
    Module,
    ReLU,
    ResidualBlock,
    Sigmoid,
    Tanh,
    Tensor,
    seeded_rng,
)
from selfecho.engine import tensor as T

from gradcheck import assert_grad_matches, numerical_grad, relative_error

SR = dsp.DEFAULT_SAMPLE_RATE


@pytest.fixture(autouse=True)
def _float64_default():
    T.set_default_dtype("float64")
    yield
    T.set_default_dtype("float64")


def _verdict(capsys, number, passed, detail):
    line = f"[criterion {number:2d}] {'PASS' if passed else 'FAIL'}  {detail}"
    with capsys.disabled():
        print(line, flush=True)
    assert passed, line


def harmonic_wave(f0=125.0, n_harmonics=6, seed=3):
    t = np.arange(SR) / SR
    rng = seeded_rng(seed)
    x = np.zeros_like(t)
    for k in range(1, n_harmonics + 1):
        x += rng.uniform(0.3, 1.0) / k * np.sin(2 * np.pi * f0 * k * t)
    return Waveform(0.5 * x / np.max(np.abs(x)))


def test_criterion_01_stft_round_trip(capsys):
    start = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        x = seeded_rng(seed).uniform(-0.5, 0.5, SR)
        back = istft(stft(Waveform(x))).samples
        lo, hi = dsp.N_FFT, min(x.size, back.size) - dsp.N_FFT
        err = np.linalg.norm(back[lo:hi] - x[lo:hi]) / np.linalg.norm(x[lo:hi])
        worst = max(worst, float(err))
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10.0
    _verdict(capsys, 1, ok,
             f"stft round trip: worst interior rel L2 {worst:.2e} "
             f"(< 1e-06) on 50 random 1 s signals; {elapsed:.1f} s")


def test_criterion_02_griffin_lim(capsys):
    start = time.perf_counter()
    fb = dsp.mel_filterbank()
    targets = []
    for i in range(5):
        targets.append(stft(harmonic_wave(125.0 + 31.25 * i, seed=i)).magnitudes())
    for i in range(5):
        noise = Waveform(seeded_rng(50 + i).uniform(-0.3, 0.3, SR))
        mel = dsp.mel_project(stft(noise).magnitudes(), fb)
        targets.append(dsp.lowpass_zero(dsp.mel_pseudo_inverse(mel, fb), 7600.0))
    worst_rise = -np.inf
    for i, target in enumerate(targets):
        _, history = dsp.griffin_lim_from_magnitude(target, iterations=60, seed=i)
        worst_rise = max(worst_rise, float(np.max(np.diff(history))))
    monotone = worst_rise <= 1e-9

    worst_snr = np.inf
    for i, f0 in enumerate((125.0, 156.25, 187.5)):
        target = stft(harmonic_wave(f0, seed=i)).magnitudes()
        signal, _ = dsp.griffin_lim_from_magnitude(target, iterations=1000, seed=i)
        got = np.abs(dsp._stft_array(signal, dsp.N_FFT, dsp.HOP))
        snr = 20.0 * np.log10(np.linalg.norm(target) / np.linalg.norm(got - target))
        worst_snr = min(worst_snr, float(snr))
    elapsed = time.perf_counter() - start
    ok = monotone and worst_snr >= 20.0 and elapsed < 120.0
    _verdict(capsys, 2, ok,
             f"griffin-lim: worst consistency rise {worst_rise:.2e} (<= 1e-09) "
             f"over 10 targets x 60 iters; worst self-magnitude SNR "
             f"{worst_snr:.1f} dB (>= 20) at 1000 iters; {elapsed:.1f} s")


class _MicroD(Module):
    """Smallest discriminator-shaped module: one conv to a logit map."""

    def __init__(self, in_channels, seed):
        self.in_channels = in_channels
        self.image_size = 4
        self.conv = Conv2d(in_channels, 1, 3, stride=1, pad=0,
                           rng=seeded_rng(seed))

    def forward(self, x, rng=None):
        return self.conv(x)


class _MicroG(Module):
    """One-conv generator with the standard [0, 1] output remap."""

    image_size = 4

    def __init__(self, seed):
        self.conv = Conv2d(1, 1, 3, stride=1, pad=1, rng=seeded_rng(seed))

    def forward(self, x, rng=None):
        return T.mul_scalar(T.add(T.tanh(self.conv(x)), 1.0), 0.5)


def _signed_away_from_zero(rng, shape, lo=0.2, hi=1.0):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def test_criterion_03_gradients(capsys):
    start = time.perf_counter()
    rng = seeded_rng(99)
    checked = []

    def check(name, loss_fn, params):
        assert_grad_matches(loss_fn, params, tol=1e-4)
        checked.append(name)

    def sq(out):
        return T.tsum(T.square(out))

    x = Tensor(rng.normal(0, 1, (2, 1, 4, 4)), requires_grad=True)
    conv = Conv2d(1, 2, 3, stride=1, pad=1, rng=seeded_rng(1))
    check("conv2d", lambda: sq(conv(x)), [p for _, p in conv.named_parameters()] + [x])

    xt = Tensor(rng.normal(0, 1, (1, 1, 2, 2)), requires_grad=True)
    deconv = ConvTranspose2d(1, 2, 4, stride=2, pad=1, rng=seeded_rng(2))
    check("conv_transpose2d", lambda: sq(deconv(xt)),
          [p for _, p in deconv.named_parameters()] + [xt])

    xb = Tensor(rng.normal(0, 1, (2, 2, 3, 3)), requires_grad=True)
    bn = BatchNorm2d(2)
    check("batch_norm", lambda: sq(bn(xb)), [bn.gamma, bn.beta, xb])

    xi = Tensor(rng.normal(0, 1, (2, 2, 4, 4)), requires_grad=True)
    inorm = InstanceNorm2d(2)
    check("instance_norm", lambda: sq(inorm(xi)), [xi])

    for name, layer in (("relu", ReLU()), ("leaky_relu", LeakyReLU(0.2))):
        xa = Tensor(_signed_away_from_zero(rng, (2, 1, 3, 3)), requires_grad=True)
        check(name, lambda layer=layer, xa=xa: sq(layer(xa)), [xa])
    for name, layer in (("tanh", Tanh()), ("sigmoid", Sigmoid())):
        xa = Tensor(rng.normal(0, 1, (2, 1, 3, 3)), requires_grad=True)
        check(name, lambda layer=layer, xa=xa: sq(layer(xa)), [xa])

    xd = Tensor(_signed_away_from_zero(rng, (2, 1, 4, 4)), requires_grad=True)
    drop = Dropout(0.5)
    check("dropout", lambda: sq(drop(xd, rng=seeded_rng(11))), [xd])

    xr = Tensor(rng.normal(0, 1, (1, 2, 4, 4)), requires_grad=True)
    block = ResidualBlock(2, norm="instance", rng=seeded_rng(3))
    check("residual_block", lambda: sq(block(xr)),
          [p for _, p in block.named_parameters()] + [xr])

    xc = Tensor(rng.normal(0, 1, (1, 1, 4, 4)), requires_grad=True)
    skip = Tensor(rng.normal(0, 1, (1, 2, 4, 4)), requires_grad=True)
    cat = ConcatSkip()
    weights = Tensor(rng.normal(0, 1, (1, 3, 4, 4)))
    check("concat_skip",
          lambda: T.tsum(T.square(T.mul(cat.forward(xc, skip=skip), weights))),
          [xc, skip])

    def unit_images(shape):
        return Tensor(rng.uniform(0.05, 0.95, shape), requires_grad=True)

    for mode in ("log", "least_squares"):
        d1 = _MicroD(1, seed=21)
        real, fake = unit_images((2, 1, 4, 4)), unit_images((2, 1, 4, 4))
        check(f"adversarial_d_{mode}",
              lambda d1=d1, real=real, fake=fake, mode=mode:
                  gan.discriminator_loss(d1, real, fake, adv_loss=mode),
              [p for _, p in d1.named_parameters()] + [real])
        d1b = _MicroD(1, seed=22)
        g_out = unit_images((2, 1, 4, 4))
        check(f"adversarial_g_{mode}",
              lambda d1b=d1b, g_out=g_out, mode=mode:
                  gan.generator_adv_loss(d1b, None, g_out, adv_loss=mode),
              [p for _, p in d1b.named_parameters()] + [g_out])

    d2 = _MicroD(2, seed=23)
    cx, cy, cg = (unit_images((1, 1, 4, 4)) for _ in range(3))
    check("conditional_adversarial_d",
          lambda: gan.cgan_discriminator_loss(d2, cx, cy, cg),
          [p for _, p in d2.named_parameters()] + [cx, cy])
    d2b = _MicroD(2, seed=24)
    check("conditional_adversarial_g",
          lambda: gan.generator_adv_loss(d2b, cx, cg),
          [p for _, p in d2b.named_parameters()] + [cg])

    la, lb = unit_images((2, 1, 4, 4)), unit_images((2, 1, 4, 4))
    check("l1", lambda: gan.l1_loss(la, lb), [la, lb])

    g_net, f_net = _MicroG(31), _MicroG(32)
    bx, by = unit_images((1, 1, 4, 4)), unit_images((1, 1, 4, 4))
    cycle_params = [p for _, p in g_net.named_parameters()]
    cycle_params += [p for _, p in f_net.named_parameters()]
    check("cycle", lambda: gan.cycle_loss(g_net, f_net, bx, by),
          cycle_params + [bx, by])

    elapsed = time.perf_counter() - start
    ok = elapsed < 60.0
    _verdict(capsys, 3, ok,
             f"gradients: {len(checked)} layer and loss kinds pass central "
             f"finite differences at rel err < 1e-04 on <= 4x4 instances; "
             f"{elapsed:.1f} s")


class _IdentityG(Module):
    image_size = 4

    def forward(self, x, rng=None):
        return x


class _ScaleG(Module):
    image_size = 4

    def __init__(self, factor):
        self.factor = float(factor)

    def forward(self, x, rng=None):
        return T.mul_scalar(x, self.factor)


def test_criterion_04_loss_oracles(capsys):
    eps = gan.EPSILON_PROB
    sigmoid = lambda v: 1.0 / (1.0 + math.exp(-v))
    clip = lambda p: min(max(p, eps), 1.0 - eps)

    def brute_av(r, f):
        logs_r = [math.log(clip(v)) for v in r.flat]
        logs_f = [math.log(1.0 - clip(v)) for v in f.flat]
        return sum(logs_r) / len(logs_r) + sum(logs_f) / len(logs_f)

    def brute_mean_abs(a, b):
        diffs = [abs(u - v) for u, v in zip(a.flat, b.flat)]
        return sum(diffs) / len(diffs)

    def brute_bce(real_logits, fake_logits):
        lr = [math.log(clip(sigmoid(v))) for v in real_logits.flat]
        lf = [math.log(1.0 - clip(sigmoid(v))) for v in fake_logits.flat]
        return -(sum(lr) / len(lr) + sum(lf) / len(lf))

    half = np.full((2, 1, 3, 3), 0.5)
    anchor = abs(gan.adversarial_value(half, half) + 2.0 * math.log(2.0))
    g_id, f_id = _IdentityG(), _IdentityG()
    ident = seeded_rng(0).uniform(0, 1, (2, 1, 4, 4))
    cycle_anchor = float(gan.cycle_loss(g_id, f_id, Tensor(ident), Tensor(ident)).data)
    ok = anchor <= 1e-9 and cycle_anchor == 0.0

    d2 = _MicroD(2, seed=5)
    g_half, f_third = _ScaleG(0.5), _ScaleG(1.0 / 3.0)
    worst = 0.0
    for k in range(100):
        rng = seeded_rng(1000 + k)
        r = rng.uniform(0, 1, (2, 1, 2, 2))
        f = rng.uniform(0, 1, (2, 1, 2, 2))
        worst = max(worst, abs(gan.adversarial_value(r, f) - brute_av(r, f)))

        a = rng.uniform(0, 1, (2, 1, 3, 3))
        b = rng.uniform(0, 1, (2, 1, 3, 3))
        got = float(gan.l1_loss(Tensor(a), Tensor(b)).data)
        worst = max(worst, abs(got - brute_mean_abs(a, b)))

        x = rng.uniform(0, 1, (1, 1, 4, 4))
        y = rng.uniform(0, 1, (1, 1, 4, 4))
        got = float(gan.cycle_loss(g_half, f_third, Tensor(x), Tensor(y)).data)
        expect = brute_mean_abs(x / 6.0, x) + brute_mean_abs(y / 6.0, y)
        worst = max(worst, abs(got - expect))

        g_out = rng.uniform(0, 1, (1, 1, 4, 4))
        got = float(gan.cgan_discriminator_loss(d2, Tensor(x), Tensor(y),
                                                Tensor(g_out)).data)
        real_logits = d2(Tensor(np.concatenate([x, y], axis=1))).data
        fake_logits = d2(Tensor(np.concatenate([x, g_out], axis=1))).data
        worst = max(worst, abs(got - brute_bce(real_logits, fake_logits)))

        got = float(gan.generator_adv_loss(d2, Tensor(x), Tensor(g_out)).data)
        lg = [math.log(clip(sigmoid(v))) for v in fake_logits.flat]
        worst = max(worst, abs(got + sum(lg) / len(lg)))

    ok = ok and worst <= 1e-9
    _verdict(capsys, 4, ok,
             f"loss oracles: worst |loss - brute force| {worst:.2e} (<= 1e-09) "
             f"over 100 random batches; indifference anchor off by {anchor:.2e}; "
             f"identity cycle {cycle_anchor}")


def test_criterion_05_psola_factor_laws(capsys):
    start = time.perf_counter()
    t = np.arange(SR) / SR
    wave = Waveform(0.4 * sawtooth(2 * np.pi * 150.0 * t))
    f0_track = psola.estimate_f0(wave)
    marks = psola.place_pitch_marks(wave, f0_track)
    base = float(np.median(f0_track[f0_track > 0]))

    pitch_errs = {}
    for factor in (0.5, 2.0):
        out = psola.psola_resynthesize(wave, marks, factor, 1.0)
        contour = psola.estimate_f0(out)
        med = float(np.median(contour[contour > 0]))
        pitch_errs[factor] = abs(med / base - factor) / factor
    pitch_ok = all(err <= 0.05 for err in pitch_errs.values())

    doubled = psola.psola_resynthesize(wave, marks, 1.0, 2.0)
    period = SR / base
    drift = abs(doubled.samples.size - 2 * wave.samples.size)
    time_ok = drift <= period

    transplanted = psola.transplant_prosody(wave, wave)
    snr = evaluation.reconstruction_snr(wave, transplanted)
    elapsed = time.perf_counter() - start
    ok = pitch_ok and time_ok and snr >= 25.0 and elapsed < 30.0
    _verdict(capsys, 5, ok,
             f"psola: pitch-factor errors {pitch_errs[0.5]:.3f}/{pitch_errs[2.0]:.3f} "
             f"(<= 0.05); time x2 drift {drift:.0f} <= one period ({period:.0f}); "
             f"identity transplant SNR {snr:.2f} dB (>= 25); {elapsed:.1f} s")


# -- desk-scale training criteria --------------------------------------------

N_SEEDS = 10


@pytest.fixture(scope="module")
def paired_results(tmp_path_factory):
    """Train the conditional translator from 10 seeds on one tiny corpus."""
    T.set_default_dtype("float32")
    try:
        start = time.perf_counter()
        data_dir = tmp_path_factory.mktemp("paired_corpus")
        spec = corpus.SynthSpec(
            n_utterances=30, n_native_speakers=2, n_nonnative_speakers=4,
            duration_stretch=2.0, final_deletion=0.0, seed=0,
        )
        corpus.generate_synthetic_corpus(spec, data_dir)
        recs = corpus.load_manifest(data_dir / "manifest.tsv")
        pairs = corpus.build_pairs(recs)
        assert len(pairs) == 240
        train, held = pairs[:200], pairs[200:]
        train_ids = sorted({p.utterance_id for p in train})
        held_ids = sorted({p.utterance_id for p in held})

        hx = np.stack([pool_pixels(p.x.pixels, 32) for p in held])[:, None]
        hy = np.stack([pool_pixels(p.y.pixels, 32) for p in held])[:, None]
        identity_l1 = float(np.mean(np.abs(hx - hy)))

        ratios = []
        for seed in range(N_SEEDS):
            cfg = tr.TrainConfig(
                mode="paired", batch_size=4, image_size=32, base_channels=32,
                unet_depth=3, n_downsample=2, seed=seed,
            )
            state = tr.train_paired(train, cfg, steps=200,
                                    train_ids=train_ids, holdout_ids=held_ids)
            g = state.nets["G"]
            g.eval()
            gan.set_deterministic(g, True)
            out = g(Tensor(hx.astype(T.default_dtype()))).data
            ratios.append(float(np.mean(np.abs(out - hy))) / identity_l1)
        return {
            "ratios": ratios,
            "identity_l1": identity_l1,
            "elapsed": time.perf_counter() - start,
        }
    finally:
        T.set_default_dtype("float64")


def test_criterion_06_paired_training(capsys, paired_results):
    ratios = paired_results["ratios"]
    wins = sum(r <= 0.8 for r in ratios)
    elapsed = paired_results["elapsed"]
    ok = wins >= 9 and elapsed < 600.0
    _verdict(capsys, 6, ok,
             f"paired training: held-out L1 ratio vs identity baseline "
             f"{min(ratios):.2f}..{max(ratios):.2f} (need <= 0.8), "
             f"{wins}/{N_SEEDS} seeds (need >= 9); 200 pairs x 200 steps; "
             f"{elapsed:.0f} s")


def _eval_nets(*nets):
    for net in nets:
        net.eval()
        gan.set_deterministic(net, True)


def _cycle_error(g, f, batch):
    _eval_nets(g, f)
    xb = Tensor(batch.astype(T.default_dtype()))
    return float(np.mean(np.abs(f(g(xb)).data - batch)))


def _lsd32(a, b):
    span = dsp.DB_CEILING - dsp.DB_FLOOR
    return float(np.sqrt(np.mean((span * (a - b)) ** 2)))


@pytest.fixture(scope="module")
def unpaired_results(tmp_path_factory):
    """Train the cycle translator from 10 seeds; keep the first seed's nets."""
    T.set_default_dtype("float32")
    try:
        start = time.perf_counter()
        data_dir = tmp_path_factory.mktemp("unpaired_corpus")
        spec = corpus.SynthSpec(
            n_utterances=40, n_native_speakers=4, n_nonnative_speakers=4,
            duration_stretch=2.0, final_deletion=0.0, seed=1,
        )
        corpus.generate_synthetic_corpus(spec, data_dir)
        recs = corpus.load_manifest(data_dir / "manifest.tsv")
        truth = corpus.load_ground_truth(data_dir / "ground_truth_pairs.tsv")
        pooled = {}
        rel_of = {}
        for rec in recs:
            pooled[rec.key] = pool_pixels(corpus.load_recording_image(rec).pixels, 32)
            rel_of[rec.key] = rec.path.relative_to(data_dir).as_posix()
        by_rel = {rel_of[r.key]: pooled[r.key] for r in recs}

        utt_num = lambda r: int(r.utterance_id.lstrip("u"))
        train_x = [pooled[r.key] for r in recs
                   if r.domain == "nonnative" and utt_num(r) < 25]
        train_y = [pooled[r.key] for r in recs
                   if r.domain == "native" and utt_num(r) < 25]
        held_non = [r for r in recs if r.domain == "nonnative" and utt_num(r) >= 25]
        held_nat = [r for r in recs if r.domain == "native" and utt_num(r) >= 25]
        assert len(train_x) == 100 and len(train_y) == 100
        assert len(held_non) == 60 and len(held_nat) == 60

        hx = np.stack([pooled[r.key] for r in held_non])[:, None]
        refs = np.stack([by_rel[truth[rel_of[r.key]]] for r in held_non])
        identity_lsd = float(np.mean(
            [_lsd32(hx[i, 0], refs[i]) for i in range(len(held_non))]
        ))

        per_seed = []
        first_state = None
        for seed in range(N_SEEDS):
            cfg = tr.TrainConfig(
                mode="unpaired", batch_size=4, image_size=32, base_channels=8,
                n_residual_blocks=2, n_downsample=2, seed=seed,
            )
            fresh = tr.make_state(cfg)
            step0 = _cycle_error(fresh.nets["G"], fresh.nets["F"], hx)
            state = tr.train_unpaired(
                train_x, train_y, cfg, steps=500,
                train_ids=[f"u{k:03d}" for k in range(25)],
                holdout_ids=[f"u{k:03d}" for k in range(25, 40)],
            )
            trained = _cycle_error(state.nets["G"], state.nets["F"], hx)
            g = state.nets["G"]
            out = g(Tensor(hx.astype(T.default_dtype()))).data
            translated_lsd = float(np.mean(
                [_lsd32(out[i, 0], refs[i]) for i in range(len(held_non))]
            ))
            per_seed.append({
                "cycle_ratio": trained / step0,
                "lsd_ratio": translated_lsd / identity_lsd,
            })
            if first_state is None:
                first_state = state
        return {
            "per_seed": per_seed,
            "identity_lsd": identity_lsd,
            "first_state": first_state,
            "held_nat": [pooled[r.key] for r in held_nat],
            "held_non": [pooled[r.key] for r in held_non],
            "elapsed": time.perf_counter() - start,
        }
    finally:
        T.set_default_dtype("float64")


def test_criterion_07_unpaired_training(capsys, unpaired_results):
    per_seed = unpaired_results["per_seed"]
    wins = sum(s["cycle_ratio"] <= 0.25 and s["lsd_ratio"] <= 0.9 for s in per_seed)
    cyc = [s["cycle_ratio"] for s in per_seed]
    lsd = [s["lsd_ratio"] for s in per_seed]
    elapsed = unpaired_results["elapsed"]
    ok = wins >= 8 and elapsed < 1200.0
    _verdict(capsys, 7, ok,
             f"unpaired training: cycle ratio {min(cyc):.2f}..{max(cyc):.2f} "
             f"(need <= 0.25), translated/identity LSD {min(lsd):.2f}..{max(lsd):.2f} "
             f"(need <= 0.9), {wins}/{N_SEEDS} seeds (need >= 8); "
             f"100+100 images x 500 steps; {elapsed:.0f} s")


def test_criterion_08_nativelikeness_direction(capsys, unpaired_results):
    T.set_default_dtype("float32")
    d = unpaired_results["first_state"].nets["D_Y"]
    nat = evaluation.nativelikeness_scores(d, unpaired_results["held_nat"][:50])
    non = evaluation.nativelikeness_scores(d, unpaired_results["held_non"][:50])
    k = sum(a > b for a, b in zip(nat, non))
    p = evaluation.sign_test_p(k, 50)
    gap = float(np.mean(nat) - np.mean(non))
    ok = gap > 0 and p < 0.05
    _verdict(capsys, 8, ok,
             f"nativelikeness: mean score gap native - non-native {gap:+.3f} "
             f"(need > 0), sign test k={k}/50, p={p:.2e} (need < 0.05)")


def test_criterion_09_corpus_arithmetic(capsys, tmp_path):
    rows = ["# utterance_id\tspeaker_id\tdomain\trelative_path"]
    for spk in range(107):
        for utt in range(300):
            rows.append(f"u{utt:03d}\tn{spk:03d}\tnative\t"
                        f"native/u{utt:03d}_n{spk:03d}.wav")
    for spk in range(217):
        for utt in range(300):
            rows.append(f"u{utt:03d}\tx{spk:03d}\tnonnative\t"
                        f"nonnative/u{utt:03d}_x{spk:03d}.wav")
    manifest = tmp_path / "manifest.tsv"
    manifest.write_text("\n".join(rows) + "\n")

    recs = corpus.load_manifest(manifest)
    n_native = sum(r.domain == "native" for r in recs)
    n_non = len(recs) - n_native
    train, test = corpus.holdout_split(recs)
    disjoint = not ({r.key for r in train} & {r.key for r in test})
    counts_ok = (n_native, n_non, len(recs)) == (32100, 65100, 97200)
    split_ok = len(test) == 162 and disjoint and len(train) + len(test) == len(recs)
    ok = counts_ok and split_ok
    _verdict(capsys, 9, ok,
             f"corpus arithmetic: {n_native} native / {n_non} non-native / "
             f"{len(recs)} total; holdout {len(test)} items, "
             f"disjoint={disjoint}")


def _tree_hashes(root):
    return {
        p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*")) if p.is_file()
    }


def test_criterion_10_determinism(capsys, tmp_path):
    t = np.arange(SR) / SR
    tone = tmp_path / "tone.wav"
    dsp.save_wav(Waveform(0.4 * np.sin(2 * np.pi * 220.0 * t)), tone)

    spec_conf = tmp_path / "spec.conf"
    spec_conf.write_text("n_utterances = 4\nn_native_speakers = 1\n"
                         "n_nonnative_speakers = 1\nseed = 0\n")
    train_conf = tmp_path / "train.conf"
    train_conf.write_text("batch_size = 4\nepochs = 1\nimage_size = 32\n"
                          "base_channels = 4\nunet_depth = 2\nn_downsample = 1\n"
                          "seed = 0\n")

    data = tmp_path / "data"
    run = tmp_path / "run"
    spec_path = tmp_path / "tone.spec"
    commands = {
        "synth-data": (data, ["synth-data", "--spec", str(spec_conf),
                              "--out", str(data)]),
        "wav2spec": (spec_path, ["wav2spec", "--in", str(tone),
                                 "--out", str(spec_path)]),
        "spec2wav": (tmp_path / "back.wav",
                     ["spec2wav", "--in", str(spec_path),
                      "--out", str(tmp_path / "back.wav"), "--iters", "8"]),
        "psola": (tmp_path / "fb.wav",
                  ["psola", "--native", str(tone), "--learner", str(tone),
                   "--out", str(tmp_path / "fb.wav")]),
        "train": (run, ["train", "--mode", "paired", "--data", str(data),
                        "--config", str(train_conf), "--out", str(run)]),
        "translate": (tmp_path / "fbdir",
                      ["translate", "--model", str(run),
                       "--in", str(data / "nonnative" / "u000_x00.wav"),
                       "--out", str(tmp_path / "fbdir"), "--iters", "5"]),
        "eval": (tmp_path / "report",
                 ["eval", "--model", str(run), "--data", str(data),
                  "--out", str(tmp_path / "report" / "eval.csv")]),
    }

    unstable = []
    for name, (target, argv) in commands.items():
        assert cli_main(argv) == 0, name
        if target.is_dir():
            first = _tree_hashes(target)
            shutil.rmtree(target)
        else:
            first = {target.name: hashlib.sha256(target.read_bytes()).hexdigest()}
            target.unlink()
        assert cli_main(argv) == 0, name
        second = (_tree_hashes(target) if target.is_dir() else
                  {target.name: hashlib.sha256(target.read_bytes()).hexdigest()})
        if first != second:
            unstable.append(name)
    ok = not unstable
    _verdict(capsys, 10, ok,
             "determinism: byte-identical reruns for "
             f"{len(commands)} commands ({', '.join(commands)})"
             + (f"; UNSTABLE: {', '.join(unstable)}" if unstable else ""))
