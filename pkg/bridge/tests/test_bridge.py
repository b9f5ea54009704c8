"""Bridge conformance: files it writes must satisfy the training toolkit.

The toolkit (`aai`) is a test-only dependency used as the reference
consumer: its reader must accept bridge output byte-for-byte, and frame
counts must match its MFCC framing within the documented tolerance.
"""

import wave

import numpy as np
import pytest

from aai import corpus as aai_corpus
from aai import dsp as aai_dsp

from ssl_bridge import cli
from ssl_bridge.backends import SimulatedBackend, make_backend
from ssl_bridge.extract import UpstreamSpec, extract_dir, extract_file, verify
from ssl_bridge.registry import UPSTREAM_DIMS, BridgeError, upstream_dim


def write_wav(path, seconds, freq=440.0, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    samples = 0.4 * np.sin(2 * np.pi * freq * t)
    pcm = np.round(samples * 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())
    return path


@pytest.fixture(scope="module")
def wav_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("wavs")
    durations = [0.6, 0.8, 1.0, 1.3, 2.0]
    for i, seconds in enumerate(durations, start=1):
        write_wav(d / f"{i:03d}.wav", seconds, freq=200.0 + 100.0 * i)
    return d


@pytest.fixture(scope="module")
def extracted(wav_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("aaif")
    backend = SimulatedBackend()
    written = extract_dir(backend, UpstreamSpec("TERA"), wav_dir, out)
    return wav_dir, out, written


class TestConformance:
    def test_five_files_pass_primary_reader(self, extracted):
        _, _, written = extracted
        assert len(written) == 5
        for path in written:
            feats = aai_corpus.read_feature_file(path)
            assert feats.name == "TERA"
            assert feats.dim == aai_corpus.REGISTRY["TERA"] == 768
            assert feats.rate == 100.0

    def test_frame_counts_match_mfcc(self, extracted):
        wav_dir, _, written = extracted
        for path in written:
            stem = path.name.split(".")[0]
            audio = aai_dsp.read_wav(wav_dir / f"{stem}.wav")
            mfcc_frames = len(aai_dsp.mfcc(audio))
            feats = aai_corpus.read_feature_file(path)
            assert abs(len(feats) - mfcc_frames) <= 2

    def test_deterministic_payload(self, wav_dir, tmp_path):
        backend = SimulatedBackend()
        a = tmp_path / "a.aaif-TERA"
        b = tmp_path / "b.aaif-TERA"
        extract_file(backend, UpstreamSpec("TERA"), wav_dir / "001.wav", a)
        extract_file(backend, UpstreamSpec("TERA"), wav_dir / "001.wav", b)
        assert a.read_bytes() == b.read_bytes()

    def test_registry_dims_all_upstreams(self, wav_dir, tmp_path):
        backend = SimulatedBackend()
        for name, dim in UPSTREAM_DIMS.items():
            out = tmp_path / f"x.aaif-{name}"
            extract_file(backend, UpstreamSpec(name), wav_dir / "001.wav", out)
            feats = aai_corpus.read_feature_file(out)
            assert feats.dim == dim == upstream_dim(name)

    def test_loadable_as_training_pair(self, extracted, tmp_path):
        """Bridge features slot into the toolkit corpus next to targets."""
        wav_dir, _, written = extracted
        subj = tmp_path / "S01"
        subj.mkdir()
        feats = aai_corpus.read_feature_file(written[0])
        aai_corpus.write_feature_file(subj / "001.aaif-TERA", feats)
        rng = np.random.default_rng(0)
        target = aai_dsp.ArticulatoryTrajectory(
            rng.normal(size=(len(feats) + 1, 12)), 100.0)
        aai_corpus.write_target_file(subj / "001.aait", target)
        (utt,) = aai_corpus.discover_utterances(tmp_path, "TERA")
        loaded = aai_corpus.load_utterance(utt, 768)
        assert loaded.dim == 768
        assert len(loaded) == len(feats)


class TestVerify:
    def test_valid_pair_all_pass(self, extracted):
        wav_dir, _, written = extracted
        report = verify(written[0], wav_dir / "001.wav")
        assert report.all_ok, report.lines()

    def test_wrong_rate_fails_rate_check(self, extracted, tmp_path):
        wav_dir, _, written = extracted
        feats = aai_corpus.read_feature_file(written[0])
        from ssl_bridge.aaif import write_aaif
        bad = tmp_path / "bad.aaif-TERA"
        write_aaif(bad, np.asarray(feats.frames), 50.0, "TERA")
        report = verify(bad, wav_dir / "001.wav")
        failed = {name for name, ok, _ in report.checks if not ok}
        assert failed == {"rate"}

    def test_truncated_fails_payload_check(self, extracted, tmp_path):
        wav_dir, _, written = extracted
        bad = tmp_path / "trunc.aaif-TERA"
        bad.write_bytes(written[0].read_bytes()[:-9])
        report = verify(bad, wav_dir / "001.wav")
        failed = {name for name, ok, _ in report.checks if not ok}
        assert "payload" in failed


class TestErrors:
    def test_unknown_upstream(self):
        with pytest.raises(BridgeError):
            upstream_dim("unknown")

    def test_unknown_backend(self):
        with pytest.raises(BridgeError):
            make_backend("quantum")

    def test_rejects_wrong_rate_audio(self, tmp_path):
        wav = write_wav(tmp_path / "x.wav", 1.0, rate=8000)
        backend = SimulatedBackend()
        with pytest.raises(BridgeError):
            extract_file(backend, UpstreamSpec("TERA"), wav, tmp_path / "x.aaif-TERA")


class TestCli:
    def test_extract_and_verify(self, wav_dir, tmp_path, capsys):
        out = tmp_path / "out"
        rc = cli.main(["extract", "--upstream", "APC", "--in", str(wav_dir),
                       "--out", str(out), "--backend", "sim"])
        assert rc == 0
        files = sorted(out.glob("*.aaif-APC"))
        assert len(files) == 5
        assert (out / "extract_manifest.txt").exists()

        rc = cli.main(["verify", str(files[0]), str(wav_dir / "001.wav")])
        assert rc == 0
        out_text = capsys.readouterr().out
        assert "[PASS] magic" in out_text
        assert "[FAIL]" not in out_text

    def test_unknown_upstream_exit_code(self, wav_dir, tmp_path, capsys):
        rc = cli.main(["extract", "--upstream", "nope", "--in", str(wav_dir),
                       "--out", str(tmp_path / "o"), "--backend", "sim"])
        assert rc == 1
