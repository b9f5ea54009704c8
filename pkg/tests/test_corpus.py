import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aai import corpus, dsp
from aai.errors import (
    BadMagicError,
    ConfigError,
    DataFormatError,
    FormatVersionError,
    RegistryConflictError,
    TruncatedPayloadError,
)


def fm(frames, name, rate=100.0):
    return dsp.FeatureMatrix(np.asarray(frames, dtype=np.float32), rate, name)


def random_utt(rng, subject="S01", sid=1, n=None, dim=8, name="synth8"):
    n = n if n is not None else int(rng.integers(5, 40))
    return corpus.LoadedUtterance(
        subject, sid,
        rng.normal(size=(n, dim)), rng.normal(size=(n, 12)), name)


class TestRegistry:
    def test_exact_contents(self):
        assert corpus.REGISTRY == {
            "MFCC": 13, "PASE+": 256, "vq_wav2vec": 512, "wav2vec": 512,
            "TERA": 768, "AALBERT": 768, "Mockingjay": 768, "APC": 512,
            "NPC": 512, "DeCoAR": 2048,
        }

    def test_known_name(self):
        assert corpus.feature_dim("TERA") == 768

    def test_unknown_needs_override(self):
        with pytest.raises(ConfigError):
            corpus.feature_dim("synth64")
        assert corpus.feature_dim("synth64", override=64) == 64

    def test_conflicting_override(self):
        with pytest.raises(RegistryConflictError):
            corpus.feature_dim("TERA", override=512)


class TestFeatureFiles:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        f = fm(rng.normal(size=(37, 768)).astype(np.float32), "TERA")
        path = tmp_path / "x.aaif-TERA"
        corpus.write_feature_file(path, f)
        back = corpus.read_feature_file(path)
        assert back.name == "TERA"
        assert back.rate == 100.0
        assert back.frames.dtype == np.float32
        assert np.array_equal(back.frames, f.frames)

    def test_registry_conflict_on_read(self, tmp_path):
        path = tmp_path / "x.aaif-TERA"
        corpus._write_blob(path, corpus.FEATURE_MAGIC,
                           np.zeros((4, 512), dtype=np.float32), 100.0, "TERA")
        with pytest.raises(RegistryConflictError):
            corpus.read_feature_file(path)

    def test_registry_conflict_on_write(self, tmp_path):
        with pytest.raises(RegistryConflictError):
            corpus.write_feature_file(tmp_path / "y", fm(np.zeros((2, 512)), "TERA"))

    def test_zero_frames(self, tmp_path):
        path = tmp_path / "empty.aaif-TERA"
        corpus.write_feature_file(path, fm(np.zeros((0, 768)), "TERA"))
        back = corpus.read_feature_file(path)
        assert back.frames.shape == (0, 768)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad"
        path.write_bytes(b"NOPE" + b"\x00" * 40)
        with pytest.raises(BadMagicError):
            corpus.read_feature_file(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "v9"
        corpus.write_feature_file(path, fm(np.zeros((1, 3)), "tiny3"))
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatVersionError):
            corpus.read_feature_file(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "trunc"
        corpus.write_feature_file(path, fm(np.ones((5, 4)), "tiny4"))
        blob = path.read_bytes()
        path.write_bytes(blob[:-7])
        with pytest.raises(TruncatedPayloadError):
            corpus.read_feature_file(path)

    def test_trailing_data(self, tmp_path):
        path = tmp_path / "extra"
        corpus.write_feature_file(path, fm(np.ones((5, 4)), "tiny4"))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(DataFormatError):
            corpus.read_feature_file(path)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4096), st.integers(0, 1000))
    def test_round_trip_property(self, seed, dim, frames):
        import os
        import tempfile
        rng = np.random.default_rng(seed)
        data = rng.normal(size=(frames, dim)).astype(np.float32)
        with tempfile.TemporaryDirectory() as d:
            path = os.path.join(d, "f")
            corpus.write_feature_file(path, fm(data, f"gen{dim}"))
            back = corpus.read_feature_file(path)
        assert np.array_equal(back.frames, data)
        assert back.name == f"gen{dim}"


class TestTargetFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        t = dsp.ArticulatoryTrajectory(rng.normal(size=(20, 12)), 100.0)
        path = tmp_path / "t.aait"
        corpus.write_target_file(path, t)
        back = corpus.read_target_file(path)
        assert back.rate == 100.0
        np.testing.assert_allclose(back.frames, t.frames, atol=1e-6)

    def test_wrong_channel_count(self, tmp_path):
        path = tmp_path / "bad.aait"
        corpus._write_blob(path, corpus.TARGET_MAGIC,
                           np.zeros((4, 7), dtype=np.float32), 100.0, "EMA")
        with pytest.raises(DataFormatError):
            corpus.read_target_file(path)


class TestSplits:
    def test_paper_sizes(self):
        split = corpus.make_splits(range(1, 461), seed=3)
        assert (len(split.train), len(split.val), len(split.test)) == (368, 46, 46)

    def test_deterministic(self):
        a = corpus.make_splits(range(100), seed=7)
        b = corpus.make_splits(range(100), seed=7)
        assert a == b

    def test_exact_division(self):
        split = corpus.make_splits(range(10), seed=0)
        assert (len(split.train), len(split.val), len(split.test)) == (8, 1, 1)

    def test_bad_ratios(self):
        with pytest.raises(ConfigError):
            corpus.make_splits(range(10), ratios=(0.8, 0.1, 0.2), seed=0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(3, 2000), st.integers(0, 2**31 - 1))
    def test_partition_property(self, n, seed):
        ids = list(range(n))
        split = corpus.make_splits(ids, seed=seed)
        train, val, test = set(split.train), set(split.val), set(split.test)
        assert train | val | test == set(ids)
        assert not (train & val) and not (train & test) and not (val & test)

    def test_manifest_round_trip(self, tmp_path):
        split = corpus.make_splits(range(1, 25), seed=5)
        corpus.write_split_manifests(tmp_path, split)
        back = corpus.read_split_manifests(tmp_path, 5)
        assert back == split


class TestBatches:
    def test_ceil_division(self):
        rng = np.random.default_rng(2)
        utts = [random_utt(rng, sid=i) for i in range(33)]
        batches = corpus.make_batches(utts, batch_size=16)
        assert [b.size for b in batches] == [16, 16, 1]

    def test_padding_contract(self):
        rng = np.random.default_rng(3)
        utts = [random_utt(rng, sid=1, n=50), random_utt(rng, sid=2, n=70)]
        (batch,) = corpus.make_batches(utts, batch_size=16)
        assert batch.features.shape == (2, 70, 8)
        assert batch.mask.sum(axis=1).tolist() == [50, 70]
        assert batch.lengths == (50, 70)
        # padding region is zeroed
        assert np.all(batch.features[0, 50:] == 0)
        assert np.all(batch.targets[0, 50:] == 0)

    def test_order_preserved_without_shuffle(self):
        rng = np.random.default_rng(4)
        utts = [random_utt(rng, sid=i) for i in range(5)]
        batches = corpus.make_batches(utts, batch_size=2, shuffle=False)
        ids = [sid for b in batches for (_, sid) in b.utterance_ids]
        assert ids == [0, 1, 2, 3, 4]

    def test_shuffle_deterministic(self):
        rng = np.random.default_rng(5)
        utts = [random_utt(rng, sid=i) for i in range(40)]
        a = corpus.make_batches(utts, batch_size=16, seed=9, shuffle=True)
        b = corpus.make_batches(utts, batch_size=16, seed=9, shuffle=True)
        assert [x.utterance_ids for x in a] == [y.utterance_ids for y in b]

    def test_empty(self):
        assert corpus.make_batches([], batch_size=16) == []

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 40), st.integers(1, 20))
    def test_masked_regions_recover_input(self, seed, n_utts, batch_size):
        rng = np.random.default_rng(seed)
        utts = [random_utt(rng, sid=i) for i in range(n_utts)]
        batches = corpus.make_batches(utts, batch_size=batch_size, seed=seed, shuffle=True)
        recovered = {}
        for b in batches:
            for i, (subj, sid) in enumerate(b.utterance_ids):
                assert (subj, sid) not in recovered
                valid = b.mask[i]
                recovered[(subj, sid)] = (b.features[i][valid], b.targets[i][valid])
        assert len(recovered) == n_utts
        for u in utts:
            f, t = recovered[(u.subject, u.sentence_id)]
            assert np.array_equal(f, u.features)
            assert np.array_equal(t, u.targets)


class TestPool:
    def test_counts(self):
        rng = np.random.default_rng(6)
        lists = [[random_utt(rng, subject=f"S{s:02d}", sid=i) for i in range(368)]
                 for s in range(10)]
        pooled = corpus.pool_subjects(lists)
        assert len(pooled) == 3680
        assert pooled[0].subject == "S00"
        assert pooled[-1].subject == "S09"

    def test_single_subject_identity(self):
        rng = np.random.default_rng(7)
        utts = [random_utt(rng, sid=i) for i in range(4)]
        assert corpus.pool_subjects([utts]) == utts

    def test_mixed_features_conflict(self):
        rng = np.random.default_rng(8)
        a = [random_utt(rng, subject="S01", dim=768, name="TERA")]
        b = [random_utt(rng, subject="S02", dim=13, name="MFCC")]
        with pytest.raises(RegistryConflictError):
            corpus.pool_subjects([a, b])


class TestDiscovery:
    def test_discover_and_load(self, tmp_path):
        rng = np.random.default_rng(9)
        subj = tmp_path / "S01"
        subj.mkdir()
        for sid in (1, 2):
            n = 30 + sid
            corpus.write_feature_file(
                subj / f"{sid:03d}.aaif-synth8",
                fm(rng.normal(size=(n, 8)), "synth8"))
            corpus.write_target_file(
                subj / f"{sid:03d}.aait",
                dsp.ArticulatoryTrajectory(rng.normal(size=(n + 2, 12)), 100.0))
        utts = corpus.discover_utterances(tmp_path, "synth8")
        assert [(u.subject, u.sentence_id) for u in utts] == [("S01", 1), ("S01", 2)]
        loaded = corpus.load_utterance(utts[0])
        assert len(loaded) == 31  # aligned to the shorter stream
        assert loaded.features.dtype == np.float64

    def test_load_rejects_wrong_rate(self, tmp_path):
        subj = tmp_path / "S01"
        subj.mkdir()
        corpus.write_feature_file(subj / "001.aaif-synth4",
                                  fm(np.zeros((10, 4)), "synth4", rate=50.0))
        corpus.write_target_file(subj / "001.aait",
                                 dsp.ArticulatoryTrajectory(np.zeros((10, 12)), 100.0))
        (utt,) = corpus.discover_utterances(tmp_path, "synth4")
        with pytest.raises(DataFormatError):
            corpus.load_utterance(utt)

    def test_ensure_splits_creates_and_reloads(self, tmp_path):
        subj = tmp_path / "S01"
        subj.mkdir()
        for sid in range(1, 11):
            corpus.write_target_file(subj / f"{sid:03d}.aait",
                                     dsp.ArticulatoryTrajectory(np.zeros((5, 12)), 100.0))
        split = corpus.ensure_splits(tmp_path, seed=2)
        assert (tmp_path / "splits" / "2" / "train.txt").exists()
        again = corpus.ensure_splits(tmp_path, seed=2)
        assert split == again
