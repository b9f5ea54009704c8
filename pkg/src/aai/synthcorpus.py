"""Deterministic synthetic paired corpus with a learnable forward map.

Trajectories are band-limited sums of random-phase sinusoids on the DFT
grid of each utterance (so the declared bandwidth is exact), normalized
per utterance. Features are a frame-wise image of the trajectory under a
fixed full-column-rank matrix, optionally squashed by tanh, plus optional
gaussian noise. Because the map has no temporal mixing, a per-frame
regressor can reach CC ~ 1 on noise-free data, which makes threshold-based
oracle tests principled. Everything derives from (seed, subject, utterance)
so regeneration is byte-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import corpus, dsp
from .errors import ConfigError

_SINUSOIDS_PER_CHANNEL = 6
_MAP_STREAM = 101
_TRAJ_STREAM = 102
_NOISE_STREAM = 103


@dataclass(frozen=True)
class SynthSpec:
    subjects: int = 2
    utterances: int = 40
    duration_range: tuple[float, float] = (3.0, 5.0)
    feature_dim: int = 64
    map_kind: str = "linear"          # "linear" or "linear+tanh"
    seed: int = 0
    noise_std: float = 0.0
    bandwidth_hz: float = 8.0

    def __post_init__(self):
        if self.feature_dim < len(dsp.CHANNELS):
            raise ConfigError(
                f"feature_dim must be >= {len(dsp.CHANNELS)} so the forward map "
                f"can have full column rank, got {self.feature_dim}")
        if not 0 < self.bandwidth_hz < dsp.MODEL_RATE / 2:
            raise ConfigError(
                f"bandwidth must lie in (0, {dsp.MODEL_RATE / 2}) Hz, "
                f"got {self.bandwidth_hz}")
        if self.map_kind not in ("linear", "linear+tanh"):
            raise ConfigError(f"map_kind must be 'linear' or 'linear+tanh', "
                              f"got {self.map_kind!r}")
        if self.subjects < 1 or self.utterances < 1:
            raise ConfigError("need at least one subject and one utterance")
        if self.duration_range[0] > self.duration_range[1] or self.duration_range[0] <= 0:
            raise ConfigError(f"bad duration range {self.duration_range}")
        if self.noise_std < 0:
            raise ConfigError(f"noise std must be >= 0, got {self.noise_std}")

    @property
    def feature_name(self) -> str:
        return f"synth{self.feature_dim}"


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(key)))


def gen_trajectory(spec: SynthSpec, utterance_seed: int) -> dsp.ArticulatoryTrajectory:
    """One 100 Hz trajectory of seeded duration, band-limited and normalized.

    Component frequencies sit on the utterance's DFT grid strictly below
    the bandwidth, so a plain discrete Fourier energy measurement sees no
    leakage above it.
    """
    rng = _rng(spec.seed, _TRAJ_STREAM, utterance_seed)
    lo, hi = spec.duration_range
    duration = float(rng.uniform(lo, hi))
    n = int(round(duration * dsp.MODEL_RATE))
    max_bin = int(spec.bandwidth_hz * n / dsp.MODEL_RATE)
    if max_bin < 1:
        raise ConfigError(
            f"duration {duration:.2f}s too short for bandwidth {spec.bandwidth_hz} Hz")
    t = np.arange(n)
    frames = np.empty((n, len(dsp.CHANNELS)))
    for c in range(len(dsp.CHANNELS)):
        k = min(_SINUSOIDS_PER_CHANNEL, max_bin)
        bins = rng.choice(np.arange(1, max_bin + 1), size=k, replace=False)
        amps = rng.uniform(0.5, 1.5, size=k)
        phases = rng.uniform(0.0, 2.0 * np.pi, size=k)
        channel = np.sum(
            amps[:, None] * np.sin(2.0 * np.pi * bins[:, None] * t[None, :] / n
                                   + phases[:, None]),
            axis=0)
        frames[:, c] = channel
    traj = dsp.ArticulatoryTrajectory(frames, dsp.MODEL_RATE)
    return dsp.normalize_utterance(traj)


def forward_matrix(spec: SynthSpec) -> np.ndarray:
    """Fixed seed-derived D x 12 matrix of full column rank."""
    rng = _rng(spec.seed, _MAP_STREAM)
    for _ in range(16):
        m = rng.normal(scale=1.0 / np.sqrt(len(dsp.CHANNELS)),
                       size=(spec.feature_dim, len(dsp.CHANNELS)))
        if np.linalg.matrix_rank(m) == len(dsp.CHANNELS):
            return m
    raise ConfigError("could not sample a full-rank forward map")  # pragma: no cover


def forward_map(traj: dsp.ArticulatoryTrajectory, spec: SynthSpec,
                noise_rng: np.random.Generator | None = None) -> dsp.FeatureMatrix:
    """Frame-wise features: M @ frame (tanh-squashed for the nonlinear kind)
    plus gaussian noise."""
    m = forward_matrix(spec)
    feats = traj.frames @ m.T
    if spec.map_kind == "linear+tanh":
        feats = np.tanh(feats)
    if spec.noise_std > 0.0:
        if noise_rng is None:
            raise ConfigError("noisy forward map needs an rng")
        feats = feats + noise_rng.normal(scale=spec.noise_std, size=feats.shape)
    return dsp.FeatureMatrix(feats, dsp.MODEL_RATE, spec.feature_name)


def gen_utterance(spec: SynthSpec, subject_index: int, utterance_index: int):
    """Deterministic (features, trajectory) pair for one corpus slot."""
    utt_seed = subject_index * 100003 + utterance_index
    traj = gen_trajectory(spec, utt_seed)
    noise_rng = _rng(spec.seed, _NOISE_STREAM, utt_seed)
    feats = forward_map(traj, spec, noise_rng)
    return feats, traj


def gen_corpus(spec: SynthSpec, out_dir, split_seed: int = 0) -> Path:
    """Write the corpus-layout tree: paired files, split manifests, manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for s in range(spec.subjects):
        subject = f"S{s + 1:02d}"
        subj_dir = out / subject
        subj_dir.mkdir(exist_ok=True)
        for u in range(spec.utterances):
            sid = u + 1
            feats, traj = gen_utterance(spec, s, u)
            corpus.write_feature_file(subj_dir / f"{sid:03d}.aaif-{spec.feature_name}",
                                      feats)
            corpus.write_target_file(subj_dir / f"{sid:03d}.aait", traj)
    split = corpus.make_splits(range(1, spec.utterances + 1), seed=split_seed)
    corpus.write_split_manifests(out, split)
    manifest = out / "synth_manifest.txt"
    manifest.write_text(
        "".join(f"{k} = {v}\n" for k, v in (
            ("subjects", spec.subjects),
            ("utterances", spec.utterances),
            ("duration_range", f"{spec.duration_range[0]}:{spec.duration_range[1]}"),
            ("feature_dim", spec.feature_dim),
            ("map_kind", spec.map_kind),
            ("seed", spec.seed),
            ("noise_std", spec.noise_std),
            ("bandwidth_hz", spec.bandwidth_hz),
            ("split_seed", split_seed),
        )))
    return out
