"""On-disk corpus layout, feature/target file formats, splits, and batching.

Corpus layout::

    corpus_root/<subject>/<sentence_id>.wav             raw audio
    corpus_root/<subject>/<sentence_id>.aaif-<feature>  feature file
    corpus_root/<subject>/<sentence_id>.aait            target trajectory
    corpus_root/splits/<seed>/{train,val,test}.txt      one sentence id per line

Feature files ("AAIF") and target files ("AAIT") share one little-endian
layout: magic (4 bytes) | version u32 | dim u32 | frame_count u32 |
frame_rate f32 | name_length u16 | name UTF-8 | payload of frame-major
f32 values. Targets fix dim to 12.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dsp
from .errors import (
    BadMagicError,
    ConfigError,
    DataFormatError,
    FormatVersionError,
    InputTooShortError,
    RegistryConflictError,
    TruncatedPayloadError,
)

FEATURE_MAGIC = b"AAIF"
TARGET_MAGIC = b"AAIT"
FORMAT_VERSION = 1

# Feature name -> dimension for the supported acoustic/pretrained features.
REGISTRY = {
    "MFCC": 13,
    "PASE+": 256,
    "vq_wav2vec": 512,
    "wav2vec": 512,
    "TERA": 768,
    "AALBERT": 768,
    "Mockingjay": 768,
    "APC": 512,
    "NPC": 512,
    "DeCoAR": 2048,
}


def feature_dim(name: str, override: int | None = None) -> int:
    """Resolve a feature name to its dimension.

    Unknown names are allowed only with an explicit override; a known
    name with a conflicting override is an error.
    """
    known = REGISTRY.get(name)
    if known is None:
        if override is None:
            raise ConfigError(
                f"unknown feature {name!r}: provide an explicit dimension")
        if override < 1:
            raise ConfigError(f"feature dimension must be positive, got {override}")
        return int(override)
    if override is not None and override != known:
        raise RegistryConflictError(
            f"feature {name!r} has registered dimension {known}, got override {override}")
    return known


# ---------------------------------------------------------------------------
# binary feature / target files
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIfH")


def _write_blob(path, magic: bytes, frames: np.ndarray, rate: float, name: str) -> None:
    payload = np.ascontiguousarray(frames, dtype="<f4")
    encoded = name.encode("utf-8")
    header = _HEADER.pack(magic, FORMAT_VERSION, frames.shape[1], frames.shape[0],
                          float(rate), len(encoded))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(encoded)
        fh.write(payload.tobytes())


def _read_blob(path, magic: bytes):
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 4 or blob[:4] != magic:
        raise BadMagicError(f"{path}: expected magic {magic!r}, got {blob[:4]!r}")
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: header truncated at {len(blob)} bytes")
    _, version, dim, frame_count, rate, name_len = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise FormatVersionError(
            f"{path}: unsupported format version {version} (expected {FORMAT_VERSION})")
    name_end = _HEADER.size + name_len
    payload_size = 4 * dim * frame_count
    if len(blob) < name_end + payload_size:
        raise TruncatedPayloadError(
            f"{path}: expected {name_end + payload_size} bytes, got {len(blob)}")
    if len(blob) > name_end + payload_size:
        raise DataFormatError(f"{path}: trailing data after payload")
    name = blob[_HEADER.size:name_end].decode("utf-8")
    frames = np.frombuffer(blob[name_end:], dtype="<f4").reshape(frame_count, dim)
    return frames, float(rate), name


def write_feature_file(path, f: dsp.FeatureMatrix) -> None:
    if f.name in REGISTRY and f.dim != REGISTRY[f.name]:
        raise RegistryConflictError(
            f"feature {f.name!r} must have dimension {REGISTRY[f.name]}, got {f.dim}")
    _write_blob(path, FEATURE_MAGIC, f.frames, f.rate, f.name)


def read_feature_file(path) -> dsp.FeatureMatrix:
    frames, rate, name = _read_blob(path, FEATURE_MAGIC)
    if name in REGISTRY and frames.shape[1] != REGISTRY[name]:
        raise RegistryConflictError(
            f"{path}: feature {name!r} must have dimension {REGISTRY[name]}, "
            f"got {frames.shape[1]}")
    return dsp.FeatureMatrix(frames, rate, name)


def write_target_file(path, t: dsp.ArticulatoryTrajectory) -> None:
    _write_blob(path, TARGET_MAGIC, t.frames, t.rate, "EMA")


def read_target_file(path) -> dsp.ArticulatoryTrajectory:
    frames, rate, _ = _read_blob(path, TARGET_MAGIC)
    if frames.shape[1] != len(dsp.CHANNELS):
        raise DataFormatError(
            f"{path}: target files carry {len(dsp.CHANNELS)} channels, "
            f"got {frames.shape[1]}")
    return dsp.ArticulatoryTrajectory(frames, rate)


# ---------------------------------------------------------------------------
# utterances
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Utterance:
    subject: str
    sentence_id: int
    feature_path: Path
    target_path: Path


@dataclass
class LoadedUtterance:
    subject: str
    sentence_id: int
    features: np.ndarray        # (T, D) float64
    targets: np.ndarray         # (T, 12) float64
    feature_name: str

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def subject_dirs(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.iterdir() if p.is_dir() and p.name != "splits")


def discover_utterances(root, feature_name: str,
                        subjects: list[str] | None = None) -> list[Utterance]:
    """Find paired feature/target files, sorted by (subject, sentence id)."""
    found = []
    for subj_dir in subject_dirs(root):
        if subjects is not None and subj_dir.name not in subjects:
            continue
        for target in sorted(subj_dir.glob("*.aait")):
            sid = int(target.name.split(".")[0])
            feature = target.with_name(f"{target.name.split('.')[0]}.aaif-{feature_name}")
            if feature.exists():
                found.append(Utterance(subj_dir.name, sid, feature, target))
    return found


def load_utterance(utt: Utterance, expected_dim: int | None = None) -> LoadedUtterance:
    """Read, validate, and align one feature/target pair for training."""
    f = read_feature_file(utt.feature_path)
    t = read_target_file(utt.target_path)
    if f.rate != dsp.MODEL_RATE:
        raise DataFormatError(
            f"{utt.feature_path}: model-boundary features must be at "
            f"{dsp.MODEL_RATE} Hz, got {f.rate}")
    if expected_dim is not None and f.dim != expected_dim:
        raise RegistryConflictError(
            f"{utt.feature_path}: expected dimension {expected_dim}, got {f.dim}")
    fa, ta = dsp.align(f, t)
    if len(fa) == 0:
        raise InputTooShortError(f"{utt.feature_path}: empty utterance after alignment")
    return LoadedUtterance(utt.subject, utt.sentence_id,
                           fa.frames.astype(np.float64), ta.frames.astype(np.float64),
                           f.name)


def pool_subjects(per_subject: list[list[LoadedUtterance]]) -> list[LoadedUtterance]:
    """Concatenate per-subject utterance lists, checking feature consistency."""
    pooled: list[LoadedUtterance] = []
    for utts in per_subject:
        pooled.extend(utts)
    names = {u.feature_name for u in pooled}
    dims = {u.dim for u in pooled}
    if len(names) > 1 or len(dims) > 1:
        raise RegistryConflictError(
            f"cannot pool mixed features: names {sorted(names)}, dims {sorted(dims)}")
    return pooled


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Split:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int

    def subsets(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def make_splits(sentence_ids, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> Split:
    """Deterministic train/val/test partition of sentence ids.

    Sizes follow floor allocation; remainder sentences go to train. The
    same partition is reused for every subject so that test sentences
    stay unseen across the whole corpus.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError(f"need three non-negative ratios, got {ratios}")
    ids = sorted(set(int(i) for i in sentence_ids))
    n = len(ids)
    # the 1e-9 slack keeps exact-ratio products from flooring one short
    n_val = int(n * ratios[1] + 1e-9)
    n_test = int(n * ratios[2] + 1e-9)
    n_train = n - n_val - n_test
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    return Split(
        train=tuple(sorted(shuffled[:n_train])),
        val=tuple(sorted(shuffled[n_train:n_train + n_val])),
        test=tuple(sorted(shuffled[n_train + n_val:])),
        seed=seed,
    )


def write_split_manifests(root, split: Split) -> Path:
    out = Path(root) / "splits" / str(split.seed)
    out.mkdir(parents=True, exist_ok=True)
    for name, ids in split.subsets().items():
        (out / f"{name}.txt").write_text("".join(f"{i}\n" for i in ids))
    return out


def read_split_manifests(root, seed: int) -> Split:
    base = Path(root) / "splits" / str(seed)
    subsets = {}
    for name in ("train", "val", "test"):
        path = base / f"{name}.txt"
        if not path.exists():
            raise DataFormatError(f"missing split manifest {path}")
        subsets[name] = tuple(int(line) for line in path.read_text().split())
    return Split(subsets["train"], subsets["val"], subsets["test"], seed)


def ensure_splits(root, seed: int, ratios=(0.8, 0.1, 0.1)) -> Split:
    """Load split manifests for `seed`, creating them if absent."""
    base = Path(root) / "splits" / str(seed)
    if (base / "train.txt").exists():
        return read_split_manifests(root, seed)
    ids = set()
    for subj_dir in subject_dirs(root):
        ids.update(int(p.name.split(".")[0]) for p in subj_dir.glob("*.aait"))
    if not ids:
        raise DataFormatError(f"no target files found under {root}")
    split = make_splits(ids, ratios, seed)
    write_split_manifests(root, split)
    return split


def filter_by_sentences(utts, sentence_ids) -> list:
    wanted = set(sentence_ids)
    return [u for u in utts if u.sentence_id in wanted]


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

@dataclass
class Batch:
    """Padded feature/target pair with validity mask and true lengths."""

    features: np.ndarray        # (B, Tmax, D) float64, zero padded
    targets: np.ndarray         # (B, Tmax, 12) float64, zero padded
    mask: np.ndarray            # (B, Tmax) bool, True on valid frames
    lengths: tuple[int, ...]
    utterance_ids: tuple[tuple[str, int], ...]

    @property
    def size(self) -> int:
        return self.features.shape[0]


def make_batches(utterances: list[LoadedUtterance], batch_size: int = 16,
                 seed: int = 0, shuffle: bool = False) -> list[Batch]:
    """Group utterances into padded batches of at most `batch_size`.

    Padding goes to the longest sequence within each batch. With
    `shuffle`, the utterance order is permuted deterministically under
    `seed`; otherwise input order is preserved.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    if not utterances:
        return []
    order = list(range(len(utterances)))
    if shuffle:
        order = list(np.random.default_rng(seed).permutation(len(utterances)))
    batches = []
    for start in range(0, len(order), batch_size):
        chunk = [utterances[i] for i in order[start:start + batch_size]]
        lengths = tuple(len(u) for u in chunk)
        t_max = max(lengths)
        dim = chunk[0].dim
        feats = np.zeros((len(chunk), t_max, dim))
        targs = np.zeros((len(chunk), t_max, len(dsp.CHANNELS)))
        mask = np.zeros((len(chunk), t_max), dtype=bool)
        for i, u in enumerate(chunk):
            feats[i, :len(u)] = u.features
            targs[i, :len(u)] = u.targets
            mask[i, :len(u)] = True
        batches.append(Batch(feats, targs, mask, lengths,
                             tuple((u.subject, u.sentence_id) for u in chunk)))
    return batches
