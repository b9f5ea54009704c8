"""Feature-producing backends.

`S3prlBackend` wraps pretrained upstreams from the s3prl hub and emits the
last hidden layer, which needs torch + s3prl plus downloaded checkpoints.
`SimulatedBackend` is a deterministic offline stand-in (log-mel energies
under a fixed per-upstream projection) that produces the right shapes,
rates, and file bytes for pipeline and conformance work without any
checkpoint; it carries no pretrained knowledge.
"""

import hashlib
import wave
from pathlib import Path

import numpy as np

from .registry import AUDIO_RATE, AudioError, BridgeError, upstream_dim

_WIN = 400
_HOP = 160
_NFFT = 512
_NFILT = 26


def read_wav_16k(path) -> np.ndarray:
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise AudioError(f"{path}: expected mono, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise AudioError(f"{path}: expected 16-bit samples")
            if fh.getframerate() != AUDIO_RATE:
                raise AudioError(
                    f"{path}: expected {AUDIO_RATE} Hz audio, got {fh.getframerate()};"
                    f" resample first")
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise AudioError(f"{path}: unreadable WAV ({exc})") from exc
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def mfcc_style_frame_count(n_samples: int) -> int:
    if n_samples < _WIN:
        raise AudioError(f"audio too short: {n_samples} samples (< {_WIN})")
    return 1 + (n_samples - _WIN) // _HOP


def _log_mel(samples: np.ndarray) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(samples, _WIN)[::_HOP]
    spectrum = np.abs(np.fft.rfft(frames * np.hanning(_WIN), n=_NFFT, axis=1)) ** 2
    mel = 2595.0 * np.log10(1.0 + np.arange(0, AUDIO_RATE / 2 + 1) / 700.0)
    edges = 700.0 * (10.0 ** (np.linspace(0.0, mel[-1], _NFILT + 2) / 2595.0) - 1.0)
    freqs = np.arange(_NFFT // 2 + 1) * AUDIO_RATE / _NFFT
    fb = np.zeros((_NFILT, len(freqs)))
    for j in range(_NFILT):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        fb[j] = np.clip(np.minimum((freqs - lo) / (mid - lo),
                                   (hi - freqs) / (hi - mid)), 0.0, None)
    return np.log(np.maximum(spectrum @ fb.T, 1e-10))


def linear_resample_frames(feats: np.ndarray, n_target: int) -> np.ndarray:
    """Interpolate a (T, D) feature matrix to n_target frames."""
    n = feats.shape[0]
    if n == n_target:
        return feats
    if n == 1:
        return np.repeat(feats, n_target, axis=0)
    positions = np.linspace(0.0, n - 1.0, n_target)
    lo = np.floor(positions).astype(np.int64)
    hi = np.minimum(lo + 1, n - 1)
    frac = (positions - lo)[:, None]
    return (1.0 - frac) * feats[lo] + frac * feats[hi]


class SimulatedBackend:
    """Deterministic offline features at the registry dimension."""

    name = "sim"

    def version(self, upstream: str) -> str:
        return "sim-1"

    def extract(self, upstream: str, wav_path) -> np.ndarray:
        dim = upstream_dim(upstream)
        samples = read_wav_16k(wav_path)
        mfcc_style_frame_count(len(samples))
        log_mel = _log_mel(samples)
        digest = hashlib.sha256(upstream.encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        projection = rng.normal(scale=1.0 / np.sqrt(_NFILT), size=(_NFILT, dim))
        return (log_mel @ projection).astype(np.float32)


class S3prlBackend:
    """Last-layer representations from pretrained s3prl upstreams."""

    name = "s3prl"

    def __init__(self):
        try:
            import torch  # noqa: F401
            import s3prl.hub as hub
        except ImportError as exc:
            raise BridgeError(
                "the s3prl backend needs the 's3prl' extra installed "
                "(pip install aai-ssl-bridge[s3prl]); use --backend sim for "
                "offline conformance work") from exc
        self._hub = hub
        self._models = {}

    def version(self, upstream: str) -> str:
        import s3prl
        return f"s3prl-{getattr(s3prl, '__version__', 'unknown')}"

    def _model(self, upstream: str):
        from .registry import S3PRL_NAMES
        upstream_dim(upstream)
        if upstream not in self._models:
            factory = getattr(self._hub, S3PRL_NAMES[upstream])
            model = factory()
            model.eval()
            self._models[upstream] = model
        return self._models[upstream]

    def extract(self, upstream: str, wav_path) -> np.ndarray:
        import torch

        model = self._model(upstream)
        samples = read_wav_16k(wav_path)
        with torch.no_grad():
            out = model([torch.from_numpy(samples).float()])
        hidden = out["hidden_states"][-1][0]
        return hidden.cpu().numpy().astype(np.float32)


def make_backend(kind: str):
    if kind == "sim":
        return SimulatedBackend()
    if kind == "s3prl":
        return S3prlBackend()
    raise BridgeError(f"unknown backend {kind!r}; choose 's3prl' or 'sim'")
