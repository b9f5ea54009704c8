"""Deterministic signal-processing frontend.

Audio side: band-limited resampling and 13-dim MFCC extraction at 100 Hz.
Articulatory side: zero-phase low-pass filtering, 250 Hz -> 100 Hz rate
conversion, utterance-level normalization, and feature/target alignment.
All operations are pure and safe to run on many utterances in parallel.
"""

from __future__ import annotations

import csv
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import signal as sig

from .errors import (
    ConfigError,
    DataFormatError,
    InputTooShortError,
    MisalignmentError,
    NumericError,
)

# Canonical articulator channel order: upper lip, lower lip, jaw, tongue
# tip, tongue dorsum, tongue body, each with horizontal (x) and vertical
# (y) midsagittal components.
CHANNELS = ("ULx", "ULy", "LLx", "LLy", "Jawx", "Jawy",
            "TTx", "TTy", "TDx", "TDy", "TBx", "TBy")

EMA_RATE = 250.0
MODEL_RATE = 100.0
AUDIO_RATE = 16000

MFCC_DIM = 13
_MFCC_WIN = 400      # 25 ms at 16 kHz
_MFCC_HOP = 160      # 10 ms at 16 kHz
_MFCC_NFFT = 512
_MFCC_NFILT = 26
_LOG_FLOOR = 1e-10

DEFAULT_LOWPASS_HZ = 25.0


@dataclass
class Waveform:
    samples: np.ndarray
    rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DataFormatError(f"waveform must be 1-D, got shape {self.samples.shape}")
        if self.rate <= 0:
            raise ConfigError(f"sample rate must be positive, got {self.rate}")
        if not np.isfinite(self.samples).all():
            raise NumericError("waveform contains non-finite samples")

    def duration(self) -> float:
        return len(self.samples) / self.rate


@dataclass
class ArticulatoryTrajectory:
    """T x 12 matrix of sensor positions in canonical channel order."""

    frames: np.ndarray
    rate: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != len(CHANNELS):
            raise DataFormatError(
                f"trajectory must be T x {len(CHANNELS)}, got shape {self.frames.shape}")
        if self.rate <= 0:
            raise ConfigError(f"frame rate must be positive, got {self.rate}")
        if not np.isfinite(self.frames).all():
            raise NumericError("trajectory contains non-finite values")

    def __len__(self) -> int:
        return self.frames.shape[0]


@dataclass
class FeatureMatrix:
    """T x D matrix of acoustic or pretrained features at a fixed frame rate."""

    frames: np.ndarray
    rate: float
    name: str

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise DataFormatError(f"features must be 2-D, got shape {self.frames.shape}")
        if self.rate <= 0:
            raise ConfigError(f"frame rate must be positive, got {self.rate}")
        if not np.isfinite(self.frames).all():
            raise NumericError("feature matrix contains non-finite values")

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    def __len__(self) -> int:
        return self.frames.shape[0]


# ---------------------------------------------------------------------------
# audio I/O
# ---------------------------------------------------------------------------

def read_wav(path) -> Waveform:
    """Read a RIFF WAVE file with 16-bit integer mono samples."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1:
                raise DataFormatError(
                    f"{path}: expected mono audio, got {fh.getnchannels()} channels")
            if fh.getsampwidth() != 2:
                raise DataFormatError(
                    f"{path}: expected 16-bit samples, got {8 * fh.getsampwidth()}-bit")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise DataFormatError(f"{path}: not a readable RIFF WAVE file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform) -> None:
    """Write a mono 16-bit RIFF WAVE file."""
    pcm = np.clip(np.round(w.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.rate)
        fh.writeframes(pcm.tobytes())


def read_ema_csv(path, rate: float = EMA_RATE) -> ArticulatoryTrajectory:
    """Read a trajectory from CSV with a header naming the 12 canonical channels."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(f"{path}: empty EMA CSV") from None
        if sorted(header) != sorted(CHANNELS):
            raise DataFormatError(
                f"{path}: EMA CSV header must name exactly the channels "
                f"{list(CHANNELS)}, got {header}")
        order = [header.index(ch) for ch in CHANNELS]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CHANNELS):
                raise DataFormatError(f"{path}:{lineno}: expected {len(CHANNELS)} values")
            try:
                values = [float(row[i]) for i in order]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value") from exc
            rows.append(values)
    return ArticulatoryTrajectory(np.array(rows, dtype=np.float64).reshape(-1, 12), rate)


# ---------------------------------------------------------------------------
# resampling and MFCC
# ---------------------------------------------------------------------------

_RESAMPLE_ZEROS = 24     # sinc zero crossings per side, at the cutoff
_RESAMPLE_ROLLOFF = 0.945
_KAISER_BETA = 8.0


def resample_audio(w: Waveform, target_rate: int) -> Waveform:
    """Band-limited (windowed-sinc) resampling.

    Output length is round(len * target / source). Content below the new
    Nyquist is preserved to well within 0.5 dB outside the filter's
    transition band near (rolloff * Nyquist, Nyquist).
    """
    if target_rate <= 0:
        raise ConfigError(f"target rate must be positive, got {target_rate}")
    if target_rate == w.rate:
        return Waveform(w.samples.copy(), w.rate)
    n_in = len(w.samples)
    n_out = int(round(n_in * target_rate / w.rate))
    if n_in == 0 or n_out == 0:
        return Waveform(np.zeros(n_out), target_rate)
    ratio = target_rate / w.rate
    fc = 0.5 * min(1.0, ratio) * _RESAMPLE_ROLLOFF      # cycles per input sample
    half = _RESAMPLE_ZEROS / (2.0 * fc)                 # kernel half-width, input samples
    half_i = int(np.ceil(half))

    times = np.arange(n_out) / ratio                    # output instants, input units
    k0 = np.floor(times).astype(np.int64) - half_i
    idx = k0[:, None] + np.arange(2 * half_i + 2)[None, :]
    u = idx - times[:, None]

    window = np.zeros_like(u)
    inside = np.abs(u) <= half
    window[inside] = np.i0(_KAISER_BETA * np.sqrt(1.0 - (u[inside] / half) ** 2))
    window /= np.i0(_KAISER_BETA)
    kernel = 2.0 * fc * np.sinc(2.0 * fc * u) * window

    valid = (idx >= 0) & (idx < n_in)
    gathered = w.samples[np.clip(idx, 0, n_in - 1)]
    out = np.sum(np.where(valid, gathered * kernel, 0.0), axis=1)
    # normalize by the in-range kernel mass: exact unity gain at DC and a
    # flat interior response (every output instant keeps most of the kernel
    # inside the signal, so the mass never comes close to zero)
    norm = np.sum(np.where(valid, kernel, 0.0), axis=1)
    out /= np.where(np.abs(norm) < 1e-12, 1.0, norm)
    return Waveform(out, target_rate)


def mfcc_frame_count(n_samples: int) -> int:
    """Frames produced by the 25 ms / 10 ms framing at 16 kHz."""
    if n_samples < _MFCC_WIN:
        raise InputTooShortError(
            f"need at least {_MFCC_WIN} samples for one MFCC window, got {n_samples}")
    return 1 + (n_samples - _MFCC_WIN) // _MFCC_HOP


def _mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(nfilt: int = _MFCC_NFILT, nfft: int = _MFCC_NFFT,
                   rate: int = AUDIO_RATE) -> np.ndarray:
    """Triangular mel filters over 0..rate/2, evaluated at rfft bin centers."""
    edges = _mel_inv(np.linspace(_mel(0.0), _mel(rate / 2.0), nfilt + 2))
    freqs = np.arange(nfft // 2 + 1) * rate / nfft
    fb = np.zeros((nfilt, len(freqs)))
    for j in range(nfilt):
        lo, mid, hi = edges[j], edges[j + 1], edges[j + 2]
        up = (freqs - lo) / (mid - lo)
        down = (hi - freqs) / (hi - mid)
        fb[j] = np.clip(np.minimum(up, down), 0.0, None)
    return fb


def mfcc(w: Waveform) -> FeatureMatrix:
    """13-dim MFCCs from 16 kHz audio: 25 ms Hann windows, 10 ms shift.

    Recipe: 512-point power spectrum, 26 triangular mel filters spanning
    0-8 kHz, log with a 1e-10 floor, orthonormal DCT-II, coefficients
    0..12 (c0 kept, no pre-emphasis, no deltas).
    """
    if w.rate != AUDIO_RATE:
        raise ConfigError(f"mfcc expects {AUDIO_RATE} Hz audio, got {w.rate} Hz")
    n = len(w.samples)
    n_frames = mfcc_frame_count(n)
    frames = np.lib.stride_tricks.sliding_window_view(w.samples, _MFCC_WIN)[::_MFCC_HOP]
    assert frames.shape[0] == n_frames
    windowed = frames * np.hanning(_MFCC_WIN)
    spectrum = np.abs(np.fft.rfft(windowed, n=_MFCC_NFFT, axis=1)) ** 2
    mel_energy = spectrum @ mel_filterbank().T
    log_mel = np.log(np.maximum(mel_energy, _LOG_FLOOR))
    ceps = sfft.dct(log_mel, type=2, axis=1, norm="ortho")[:, :MFCC_DIM]
    return FeatureMatrix(np.ascontiguousarray(ceps), MODEL_RATE, "MFCC")


# ---------------------------------------------------------------------------
# articulatory processing
# ---------------------------------------------------------------------------

def lowpass_ema(t: ArticulatoryTrajectory, cutoff: float) -> ArticulatoryTrajectory:
    """Zero-phase (forward-backward) Butterworth low-pass per channel.

    The filter order and -3 dB point are chosen so that, after the double
    application, attenuation at the cutoff stays below 0.8 dB and reaches
    at least 31 dB at twice the cutoff.
    """
    nyq = t.rate / 2.0
    if cutoff >= nyq:
        raise ConfigError(f"cutoff {cutoff} Hz must be below Nyquist {nyq} Hz")
    if cutoff <= 0:
        raise ConfigError(f"cutoff must be positive, got {cutoff}")
    ws = min(2.0 * cutoff, (cutoff + nyq) / 2.0)
    # gpass/gstop are per pass; sosfiltfilt applies the filter twice
    order, wn = sig.buttord(wp=cutoff, ws=ws, gpass=0.4, gstop=15.5, fs=t.rate)
    sos = sig.butter(order, wn, btype="low", fs=t.rate, output="sos")
    try:
        filtered = sig.sosfiltfilt(sos, t.frames, axis=0)
    except ValueError as exc:
        raise InputTooShortError(f"trajectory too short to filter: {len(t)} frames") from exc
    return ArticulatoryTrajectory(filtered, t.rate)


def downsample_ema(t: ArticulatoryTrajectory) -> ArticulatoryTrajectory:
    """Resample a 250 Hz trajectory to 100 Hz.

    Output length is floor(T * 100 / 250). Samples land on a 2.5-frame
    grid and are linearly interpolated between neighbors; the 25 Hz
    low-pass applied beforehand leaves no energy that could alias.
    """
    if t.rate != EMA_RATE:
        raise ConfigError(f"downsample_ema expects {EMA_RATE} Hz input, got {t.rate}")
    n_out = int(len(t) * MODEL_RATE // EMA_RATE)
    positions = np.arange(n_out) * (EMA_RATE / MODEL_RATE)
    lo = np.floor(positions).astype(np.int64)
    frac = (positions - lo)[:, None]
    hi = np.minimum(lo + 1, max(len(t) - 1, 0))
    frames = (1.0 - frac) * t.frames[lo] + frac * t.frames[hi]
    return ArticulatoryTrajectory(frames.reshape(-1, 12), MODEL_RATE)


def normalize_utterance(t: ArticulatoryTrajectory) -> ArticulatoryTrajectory:
    """Per-channel mean removal and population-variance normalization.

    A constant channel maps to all zeros rather than dividing by ~0.
    """
    if len(t) < 2:
        raise InputTooShortError(f"need at least 2 frames to normalize, got {len(t)}")
    mean = t.frames.mean(axis=0)
    std = t.frames.std(axis=0)
    guard = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe = np.where(guard, 1.0, std)
    frames = np.where(guard, 0.0, (t.frames - mean) / safe)
    return ArticulatoryTrajectory(frames, t.rate)


def align(f: FeatureMatrix, t: ArticulatoryTrajectory):
    """Truncate both streams from the end to their common length.

    A few frames of mismatch between 10 ms hop framing and integer
    decimation is expected; a gap above 5 frames indicates broken pairing.
    """
    if f.rate != t.rate:
        raise ConfigError(f"cannot align streams at {f.rate} Hz and {t.rate} Hz")
    gap = abs(len(f) - len(t))
    if gap > 5:
        raise MisalignmentError(
            f"feature/target length gap {gap} frames ({len(f)} vs {len(t)}) exceeds 5")
    n = min(len(f), len(t))
    fa = FeatureMatrix(f.frames[:n], f.rate, f.name)
    ta = ArticulatoryTrajectory(t.frames[:n], t.rate)
    return fa, ta


def preprocess_trajectory(t: ArticulatoryTrajectory,
                          cutoff: float = DEFAULT_LOWPASS_HZ) -> ArticulatoryTrajectory:
    """Full 250 Hz -> 100 Hz target pipeline: low-pass, decimate, normalize."""
    return normalize_utterance(downsample_ema(lowpass_ema(t, cutoff)))
