import numpy as np
import pytest

from aai import corpus, dsp, synthcorpus
from aai.errors import ConfigError


def small_spec(**kwargs):
    defaults = dict(subjects=2, utterances=4, duration_range=(1.0, 2.0),
                    feature_dim=16, seed=7)
    defaults.update(kwargs)
    return synthcorpus.SynthSpec(**defaults)


class TestSpec:
    def test_dim_lower_bound(self):
        with pytest.raises(ConfigError):
            small_spec(feature_dim=11)

    def test_bandwidth_bound(self):
        with pytest.raises(ConfigError):
            small_spec(bandwidth_hz=50.0)

    def test_map_kind(self):
        with pytest.raises(ConfigError):
            small_spec(map_kind="quadratic")


class TestTrajectories:
    def test_deterministic(self):
        spec = small_spec()
        a = synthcorpus.gen_trajectory(spec, 3)
        b = synthcorpus.gen_trajectory(spec, 3)
        assert np.array_equal(a.frames, b.frames)

    def test_band_limited(self):
        spec = small_spec(duration_range=(3.0, 3.0), bandwidth_hz=8.0)
        traj = synthcorpus.gen_trajectory(spec, 1)
        spectrum = np.abs(np.fft.rfft(traj.frames, axis=0)) ** 2
        freqs = np.fft.rfftfreq(len(traj), d=1.0 / dsp.MODEL_RATE)
        below = spectrum[freqs < 10.0].sum(axis=0)
        total = spectrum.sum(axis=0)
        assert np.all(below / total >= 0.99)

    def test_duration_frames(self):
        spec = small_spec(duration_range=(1.0, 1.0))
        traj = synthcorpus.gen_trajectory(spec, 0)
        assert len(traj) == 100

    def test_already_normalized(self):
        spec = small_spec()
        traj = synthcorpus.gen_trajectory(spec, 5)
        renorm = dsp.normalize_utterance(traj)
        assert np.abs(renorm.frames - traj.frames).max() < 1e-6


class TestForwardMap:
    def test_zero_noise_linear_decodable(self):
        spec = small_spec(feature_dim=64)
        traj = synthcorpus.gen_trajectory(spec, 2)
        feats = synthcorpus.forward_map(traj, spec)
        m = synthcorpus.forward_matrix(spec)
        decoded = feats.frames @ np.linalg.pinv(m).T
        assert np.abs(decoded - traj.frames).max() < 1e-6

    def test_zero_trajectory_zero_features(self):
        spec = small_spec()
        traj = dsp.ArticulatoryTrajectory(np.zeros((50, 12)), 100.0)
        feats = synthcorpus.forward_map(traj, spec)
        assert np.abs(feats.frames).max() == 0.0

    def test_full_column_rank(self):
        m = synthcorpus.forward_matrix(small_spec())
        assert np.linalg.matrix_rank(m) == 12

    def test_tanh_variant_bounded(self):
        spec = small_spec(map_kind="linear+tanh")
        traj = synthcorpus.gen_trajectory(spec, 4)
        feats = synthcorpus.forward_map(traj, spec)
        assert np.abs(feats.frames).max() <= 1.0

    def test_noise_is_seeded(self):
        spec = small_spec(noise_std=0.5)
        a, _ = synthcorpus.gen_utterance(spec, 0, 0)
        b, _ = synthcorpus.gen_utterance(spec, 0, 0)
        assert np.array_equal(a.frames, b.frames)


class TestNoise:
    @staticmethod
    def _cc_at_noise(noise_std, seed, n_train=16, n_heldout=8):
        from aai import evaluation, model, training

        spec = synthcorpus.SynthSpec(subjects=1, utterances=n_train + n_heldout,
                                     duration_range=(1.0, 1.5), feature_dim=16,
                                     seed=seed, noise_std=noise_std)
        utts = []
        for u in range(spec.utterances):
            f, t = synthcorpus.gen_utterance(spec, 0, u)
            utts.append(corpus.LoadedUtterance(
                "S01", u + 1, f.frames.astype(float), t.frames.astype(float),
                spec.feature_name))
        train, heldout = utts[:n_train], utts[n_train:]
        cfg = training.TrainConfig(regime="ss", learning_rate=5e-3, max_epochs=40,
                                   early_stop_patience=40, seed=0)
        best, _ = training.train(model.ModelConfig.for_size("tiny", 16, dropout=0.0),
                                 train, heldout, cfg)
        return evaluation.evaluate(best, heldout), heldout

    def test_noise_monotonicity_and_floor(self):
        from aai import evaluation

        levels = (0.0, 0.5, 2.0)
        means = []
        floor_reports = []
        for noise_std in levels + (1e4,):
            ccs = []
            for seed in (0, 1, 2):
                report, _ = self._cc_at_noise(noise_std, seed)
                ccs.append(report.overall_mean())
                if noise_std == 1e4:
                    floor_reports.append(report)
            if noise_std != 1e4:
                means.append(float(np.mean(ccs)))
        # held-out CC must not improve as feature noise grows
        assert means[0] >= means[1] >= means[2], means
        # overwhelming noise: CC statistically near zero over >= 20 utterances
        merged = evaluation.CcReport()
        for i, rep in enumerate(floor_reports):
            for ((subj, sid), ch), cc in rep.entries.items():
                merged.entries[((f"{subj}-{i}", sid), ch)] = cc
        assert len(merged.utterances) >= 20
        assert abs(merged.overall_mean()) < 0.2


class TestGenCorpus:
    def test_layout_and_counts(self, tmp_path):
        spec = small_spec()
        out = synthcorpus.gen_corpus(spec, tmp_path / "corpus", split_seed=1)
        utts = corpus.discover_utterances(out, spec.feature_name)
        assert len(utts) == 8
        split = corpus.read_split_manifests(out, 1)
        assert len(split.train) + len(split.val) + len(split.test) == 4
        assert (out / "synth_manifest.txt").exists()

    def test_regeneration_byte_identical(self, tmp_path):
        spec = small_spec()
        a = synthcorpus.gen_corpus(spec, tmp_path / "a", split_seed=0)
        b = synthcorpus.gen_corpus(spec, tmp_path / "b", split_seed=0)
        rel_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
        rel_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
        assert rel_a == rel_b
        for rel in rel_a:
            assert (a / rel).read_bytes() == (b / rel).read_bytes()

    def test_readable_by_corpus_module(self, tmp_path):
        spec = small_spec(feature_dim=768)
        out = synthcorpus.gen_corpus(spec, tmp_path / "c768")
        utts = corpus.discover_utterances(out, "synth768")
        loaded = corpus.load_utterance(utts[0])
        assert loaded.dim == 768
        assert loaded.features.shape[0] == loaded.targets.shape[0]
