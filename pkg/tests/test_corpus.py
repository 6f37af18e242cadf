"""Manifest arithmetic, pairing rule, split, and synthetic corpus checks."""

import numpy as np
import pytest

from selfecho import corpus, dsp, psola
from selfecho.errors import (
    BadConfig,
    BadSpec,
    DuplicateEntry,
    NotEnoughData,
    ParseError,
    ShapeMismatch,
    UnsupportedFormat,
)


def _dummy_image():
    return dsp.SpectrogramImage(np.zeros((dsp.IMAGE_SIZE, dsp.IMAGE_SIZE)))


def _recordings(utterances, n_native, n_nonnative):
    recs = []
    for u in range(utterances):
        for i in range(n_native):
            recs.append(corpus.Recording(f"u{u}", f"n{i}", "native", f"n{u}_{i}.wav"))
        for j in range(n_nonnative):
            recs.append(corpus.Recording(f"u{u}", f"x{j}", "nonnative", f"x{u}_{j}.wav"))
    return recs


class TestRecording:
    def test_domain_checked(self):
        with pytest.raises(BadConfig):
            corpus.Recording("u1", "s1", "foreign", "a.wav")

    def test_ids_non_empty(self):
        with pytest.raises(BadConfig):
            corpus.Recording("", "s1", "native", "a.wav")
        with pytest.raises(BadConfig):
            corpus.Recording("u1", "", "native", "a.wav")


class TestLoadManifest:
    def test_round_trip(self, tmp_path):
        text = (
            "# comment line\n"
            "\n"
            "u001\tspk1\tnative\taudio/u001_spk1.wav\n"
            "u001\tspk2\tnonnative\taudio/u001_spk2.wav\n"
        )
        path = tmp_path / "manifest.tsv"
        path.write_text(text, encoding="utf-8")
        recs = corpus.load_manifest(path)
        assert len(recs) == 2
        assert recs[0].utterance_id == "u001"
        assert recs[0].domain == "native"
        assert recs[0].path == tmp_path / "audio/u001_spk1.wav"
        assert recs[1].speaker_id == "spk2"

    def test_malformed_line_names_line_number(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\ts1\tnative\ta.wav\nu2\ts1\tnative\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 2"):
            corpus.load_manifest(path)

    def test_bad_domain(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\ts1\tmartian\ta.wav\n", encoding="utf-8")
        with pytest.raises(ParseError, match="line 1"):
            corpus.load_manifest(path)

    def test_empty_field(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text("u1\t\tnative\ta.wav\n", encoding="utf-8")
        with pytest.raises(ParseError):
            corpus.load_manifest(path)

    def test_duplicate_rejected(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text(
            "u1\ts1\tnative\ta.wav\nu1\ts1\tnative\tb.wav\n", encoding="utf-8"
        )
        with pytest.raises(DuplicateEntry, match="line 2"):
            corpus.load_manifest(path)

    def test_corpus_scale_counts_and_split(self, tmp_path):
        lines = []
        for u in range(300):
            for i in range(107):
                lines.append(f"u{u:03d}\tn{i:03d}\tnative\tn/{u}_{i}.wav")
            for j in range(217):
                lines.append(f"u{u:03d}\tx{j:03d}\tnonnative\tx/{u}_{j}.wav")
        path = tmp_path / "m.tsv"
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        recs = corpus.load_manifest(path)
        n_native = sum(1 for r in recs if r.domain == "native")
        n_nonnative = len(recs) - n_native
        assert n_native == 32100
        assert n_nonnative == 65100
        assert len(recs) == 97200

        train, test = corpus.holdout_split(recs, n_test=162, seed=11)
        assert len(test) == 162
        assert len(train) == 97038
        test_keys = {r.key for r in test}
        assert len(test_keys) == 162
        assert all(r.key not in test_keys for r in train)


class TestBuildPairs:
    def test_cross_product_single_utterance(self):
        recs = _recordings(1, 3, 5)
        calls = []

        def loader(rec):
            calls.append(rec.key)
            return _dummy_image()

        pairs = corpus.build_pairs(recs, loader=loader)
        assert len(pairs) == 15
        assert len(calls) == 8
        assert all(p.utterance_id == "u0" for p in pairs)
        assert pairs[0].x is pairs[2].x
        assert pairs[0].y is pairs[3].y

    def test_cross_product_many(self):
        pairs = corpus.build_pairs(_recordings(10, 3, 5), loader=lambda r: _dummy_image())
        assert len(pairs) == 150

    def test_one_sided_utterance_yields_nothing(self):
        recs = _recordings(1, 2, 0)
        assert corpus.build_pairs(recs, loader=lambda r: _dummy_image()) == []

    def test_count_matches_per_utterance_sum(self):
        recs = (
            _recordings(1, 2, 3)
            + [corpus.Recording("v", "n9", "native", "v.wav")]
            + _recordings(2, 1, 4)[6:]
        )
        by_utt = {}
        for r in recs:
            by_utt.setdefault(r.utterance_id, [0, 0])
            by_utt[r.utterance_id][0 if r.domain == "native" else 1] += 1
        expected = sum(a * b for a, b in by_utt.values())
        pairs = corpus.build_pairs(recs, loader=lambda r: _dummy_image())
        assert len(pairs) == expected


class TestHoldoutSplit:
    def test_shapes_and_disjointness(self):
        recs = _recordings(4, 2, 3)
        train, test = corpus.holdout_split(recs, n_test=5, seed=3)
        assert len(test) == 5
        assert len(train) == len(recs) - 5
        assert {r.key for r in train}.isdisjoint({r.key for r in test})
        assert {r.key for r in train} | {r.key for r in test} == {r.key for r in recs}

    def test_deterministic(self):
        recs = _recordings(4, 2, 3)
        _, t1 = corpus.holdout_split(recs, n_test=5, seed=3)
        _, t2 = corpus.holdout_split(recs, n_test=5, seed=3)
        assert [r.key for r in t1] == [r.key for r in t2]
        _, t3 = corpus.holdout_split(recs, n_test=5, seed=4)
        assert [r.key for r in t1] != [r.key for r in t3]

    def test_not_enough_data(self):
        recs = _recordings(1, 1, 1)
        with pytest.raises(NotEnoughData):
            corpus.holdout_split(recs, n_test=2, seed=0)
        with pytest.raises(NotEnoughData):
            corpus.holdout_split(recs, n_test=-1, seed=0)


class TestPoolPixels:
    def test_block_average_oracle(self):
        rng = np.random.default_rng(0)
        img = rng.random((128, 128))
        pooled = corpus.pool_pixels(img, 32)
        assert pooled.shape == (32, 32)
        assert pooled[0, 0] == pytest.approx(img[:4, :4].mean(), abs=1e-12)
        assert pooled[31, 5] == pytest.approx(img[124:, 20:24].mean(), abs=1e-12)
        assert pooled.mean() == pytest.approx(img.mean(), abs=1e-12)

    def test_identity_factor(self):
        img = np.arange(16.0).reshape(4, 4)
        assert np.array_equal(corpus.pool_pixels(img, 4), img)

    def test_bad_inputs(self):
        with pytest.raises(BadConfig):
            corpus.pool_pixels(np.zeros((128, 128)), 3)
        with pytest.raises(ShapeMismatch):
            corpus.pool_pixels(np.zeros((128, 64)), 32)


class TestSynthSpecValidation:
    def test_counts(self):
        with pytest.raises(BadSpec):
            corpus.SynthSpec(n_utterances=0).validate()
        with pytest.raises(BadSpec):
            corpus.SynthSpec(n_native_speakers=0).validate()

    def test_ranges(self):
        with pytest.raises(BadSpec):
            corpus.SynthSpec(duration_stretch=2.5).validate()
        with pytest.raises(BadSpec):
            corpus.SynthSpec(duration_stretch=0.9).validate()
        with pytest.raises(BadSpec):
            corpus.SynthSpec(final_deletion=0.6).validate()
        with pytest.raises(BadSpec):
            corpus.SynthSpec(sample_rate=8000).validate()
        assert corpus.SynthSpec().validate() is not None


@pytest.fixture(scope="module")
def example_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    spec = corpus.SynthSpec(
        n_utterances=10, n_native_speakers=3, n_nonnative_speakers=5, seed=7
    )
    native, nonnative, truth = corpus.generate_synthetic_corpus(spec, out)
    return out, native, nonnative, truth


class TestGenerateSyntheticCorpus:
    def test_counts_and_layout(self, example_corpus):
        out, native, nonnative, truth = example_corpus
        assert len(native) == 30
        assert len(nonnative) == 50
        assert len(truth) == 50
        assert len(list((out / "native").glob("*.wav"))) == 30
        assert len(list((out / "nonnative").glob("*.wav"))) == 50
        records = [
            line for line in (out / "manifest.tsv").read_text().splitlines()
            if line and not line.startswith("#")
        ]
        assert len(records) == 80

    def test_manifest_round_trip(self, example_corpus):
        out, native, nonnative, _ = example_corpus
        recs = corpus.load_manifest(out / "manifest.tsv")
        assert {r.key for r in recs} == {r.key for r in native + nonnative}

    def test_ground_truth_counterparts(self, example_corpus):
        out, _, nonnative, truth = example_corpus
        for rec in nonnative:
            rel = f"nonnative/{rec.path.name}"
            counterpart = truth[rel]
            assert counterpart.startswith("native/")
            assert (out / counterpart).exists()
            assert counterpart.split("/")[1].split("_")[0] == rec.utterance_id

    def test_ground_truth_table_round_trip(self, example_corpus):
        out, _, _, truth = example_corpus
        assert corpus.load_ground_truth(out / "ground_truth_pairs.tsv") == truth

    def test_waveforms_fit_image_budget(self, example_corpus):
        out, native, nonnative, _ = example_corpus
        for rec in (native + nonnative)[::7]:
            wave = dsp.load_wav(rec.path)
            assert wave.sample_rate_hz == 16000
            assert np.max(np.abs(wave.samples)) <= 0.502
            assert dsp.frames_for_samples(wave.samples.size) <= dsp.IMAGE_SIZE

    def test_images_load_deterministically(self, example_corpus):
        _, native, _, _ = example_corpus
        rec = native[0]
        img1 = corpus.load_recording_image(rec)
        img2 = corpus.load_recording_image(rec)
        assert np.array_equal(img1.pixels, img2.pixels)
        assert img1.meta.n_valid_frames < dsp.IMAGE_SIZE

    def test_spec_file_loading(self, example_corpus, tmp_path):
        _, native, _, _ = example_corpus
        img = corpus.load_recording_image(native[0])
        dsp.save_spec(img, tmp_path / "copy.spec")
        rec = corpus.Recording("u000", "n00", "native", tmp_path / "copy.spec")
        loaded = corpus.load_recording_image(rec)
        assert np.allclose(loaded.pixels, img.pixels, atol=1e-7)

    def test_unsupported_format(self, tmp_path):
        rec = corpus.Recording("u0", "s0", "native", tmp_path / "a.mp3")
        with pytest.raises(UnsupportedFormat):
            corpus.load_recording_image(rec)

    def test_bit_identical_regeneration(self, tmp_path):
        spec = corpus.SynthSpec(
            n_utterances=2, n_native_speakers=1, n_nonnative_speakers=1, seed=3
        )
        corpus.generate_synthetic_corpus(spec, tmp_path / "a")
        corpus.generate_synthetic_corpus(spec, tmp_path / "b")
        for rel in ["native/u000_n00.wav", "nonnative/u001_x00.wav", "manifest.tsv",
                    "ground_truth_pairs.tsv"]:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


class TestDistortions:
    def test_duration_stretch(self, tmp_path):
        spec = corpus.SynthSpec(
            n_utterances=2, n_native_speakers=1, n_nonnative_speakers=1,
            monophthongization=False, final_deletion=0.0,
            duration_stretch=1.4, pitch_contour_flatten=False, seed=5,
        )
        native, nonnative, truth = corpus.generate_synthetic_corpus(spec, tmp_path)
        for nn in nonnative:
            nat = next(r for r in native if r.utterance_id == nn.utterance_id)
            n_nat = dsp.load_wav(nat.path).samples.size
            n_nn = dsp.load_wav(nn.path).samples.size
            assert abs(n_nn - 1.4 * n_nat) <= dsp.HOP

    def test_final_deletion(self, tmp_path):
        spec = corpus.SynthSpec(
            n_utterances=2, n_native_speakers=1, n_nonnative_speakers=1,
            monophthongization=False, final_deletion=0.3,
            duration_stretch=1.0, pitch_contour_flatten=False, seed=5,
        )
        native, nonnative, _ = corpus.generate_synthetic_corpus(spec, tmp_path)
        for nn in nonnative:
            nat = next(r for r in native if r.utterance_id == nn.utterance_id)
            n_nat = dsp.load_wav(nat.path).samples.size
            n_nn = dsp.load_wav(nn.path).samples.size
            assert abs(n_nn - 0.7 * n_nat) <= 2

    def test_monophthongization_freezes_centroid(self, tmp_path):
        spec = corpus.SynthSpec(
            n_utterances=3, n_native_speakers=1, n_nonnative_speakers=1,
            monophthongization=True, final_deletion=0.0,
            duration_stretch=1.0, pitch_contour_flatten=False, seed=9,
        )
        native, nonnative, _ = corpus.generate_synthetic_corpus(spec, tmp_path)
        fb = dsp.mel_filterbank()

        def centroid_variance(rec):
            wave = dsp.load_wav(rec.path)
            mel = dsp.mel_project(dsp.stft(wave).magnitudes(), fb)
            frames = mel.shape[1]
            mel = mel[:, 1:int(frames * 0.8)]
            bands = np.arange(mel.shape[0])
            track = (bands[:, None] * mel).sum(axis=0) / np.maximum(mel.sum(axis=0), 1e-12)
            return float(np.var(track))

        for nn in nonnative:
            nat = next(r for r in native if r.utterance_id == nn.utterance_id)
            assert centroid_variance(nn) <= 0.2 * centroid_variance(nat)

    def test_pitch_flattening(self, tmp_path):
        spec = corpus.SynthSpec(
            n_utterances=2, n_native_speakers=1, n_nonnative_speakers=1,
            monophthongization=False, final_deletion=0.0,
            duration_stretch=1.0, pitch_contour_flatten=True, seed=5,
        )
        native, nonnative, _ = corpus.generate_synthetic_corpus(spec, tmp_path)

        def voiced_std(rec):
            f0 = psola.estimate_f0(dsp.load_wav(rec.path))
            voiced = f0[f0 > 0]
            return float(np.std(voiced))

        for nn in nonnative:
            nat = next(r for r in native if r.utterance_id == nn.utterance_id)
            assert voiced_std(nn) <= 0.3 * voiced_std(nat)
