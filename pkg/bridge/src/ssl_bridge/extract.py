"""Extraction and verification of AAIF feature files."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import aaif
from .backends import linear_resample_frames, mfcc_style_frame_count, read_wav_16k
from .registry import TARGET_RATE, AudioError, upstream_dim

FRAME_TOLERANCE = 2


@dataclass(frozen=True)
class UpstreamSpec:
    name: str

    @property
    def dim(self) -> int:
        return upstream_dim(self.name)


def extract_file(backend, spec: UpstreamSpec, wav_path, out_path) -> int:
    """One WAV -> one AAIF file; returns the emitted frame count.

    The emitted frame count stays within +-2 of the 25 ms / 10 ms framing
    for the same audio; upstreams with a different native hop are
    linearly interpolated onto the 100 Hz grid.
    """
    feats = np.asarray(backend.extract(spec.name, wav_path))
    if feats.ndim != 2 or feats.shape[1] != spec.dim:
        raise AudioError(
            f"{wav_path}: backend returned shape {feats.shape}, expected "
            f"(frames, {spec.dim}) for {spec.name}")
    expected = mfcc_style_frame_count(len(read_wav_16k(wav_path)))
    if abs(feats.shape[0] - expected) > FRAME_TOLERANCE:
        feats = linear_resample_frames(feats, expected)
    aaif.write_aaif(out_path, feats, TARGET_RATE, spec.name)
    return feats.shape[0]


def extract_dir(backend, spec: UpstreamSpec, wav_dir, out_dir) -> list[Path]:
    """Extract every *.wav under wav_dir into out_dir, preserving stems."""
    wav_dir = Path(wav_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    wavs = sorted(wav_dir.rglob("*.wav"))
    if not wavs:
        raise AudioError(f"no wav files under {wav_dir}")
    written = []
    for wav_path in wavs:
        rel = wav_path.relative_to(wav_dir)
        out_path = out_dir / rel.parent / f"{wav_path.stem}.aaif-{spec.name}"
        out_path.parent.mkdir(parents=True, exist_ok=True)
        extract_file(backend, spec, wav_path, out_path)
        written.append(out_path)
    manifest = out_dir / "extract_manifest.txt"
    manifest.write_text(
        f"upstream = {spec.name}\n"
        f"dim = {spec.dim}\n"
        f"backend = {backend.name}\n"
        f"version = {backend.version(spec.name)}\n"
        + "".join(f"{p.relative_to(out_dir)}\n" for p in written))
    return written


@dataclass
class VerifyReport:
    checks: list  # (name, ok, detail)

    @property
    def all_ok(self) -> bool:
        return all(ok for _, ok, _ in self.checks)

    def lines(self) -> list[str]:
        return [f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
                for name, ok, detail in self.checks]


def verify(aaif_path, wav_path) -> VerifyReport:
    """Report-only consistency checks of an AAIF file against its audio."""
    info = aaif.read_header(aaif_path)
    checks = [("magic", info["magic_ok"], "AAIF header present"),
              ("version", info["version_ok"], f"format version {aaif.VERSION}")]

    name = info["name"]
    try:
        expected_dim = upstream_dim(name) if name else None
    except Exception:
        expected_dim = None
    if expected_dim is None:
        checks.append(("dim", False, f"name {name!r} not in the upstream registry"))
    else:
        checks.append(("dim", info["dim"] == expected_dim,
                       f"declared {info['dim']}, registry says {expected_dim}"))

    checks.append(("rate", info["rate"] == TARGET_RATE,
                   f"declared {info['rate']}, expected {TARGET_RATE}"))
    checks.append(("payload", bool(info["payload_ok"]), "payload size matches header"))

    try:
        expected_frames = mfcc_style_frame_count(len(read_wav_16k(wav_path)))
        frames_ok = (info["frame_count"] is not None
                     and abs(info["frame_count"] - expected_frames) <= FRAME_TOLERANCE)
        checks.append(("frames", frames_ok,
                       f"declared {info['frame_count']}, audio implies "
                       f"{expected_frames} +-{FRAME_TOLERANCE}"))
    except AudioError as exc:
        checks.append(("frames", False, str(exc)))
    return VerifyReport(checks)
