"""Pearson correlation per (utterance, channel) and table-style aggregation.

CC values are computed on the valid region of each test utterance,
averaged first over utterances to give 12 per-channel means, then over
channels for the headline number. The dispersion printed next to the mean
is the sample (n-1) standard deviation across the 12 per-channel means.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus
from . import model as mdl
from .dsp import CHANNELS
from .errors import ConfigError, InputTooShortError, ShapeError


def _pearson_flagged(a: np.ndarray, b: np.ndarray) -> tuple[float, bool]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"pearson_cc needs equal-length 1-D inputs, "
                         f"got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise InputTooShortError(f"pearson_cc needs at least 2 points, got {len(a)}")
    ac = a - a.mean()
    bc = b - b.mean()
    va = float(ac @ ac)
    vb = float(bc @ bc)
    if va == 0.0 or vb == 0.0:
        return 0.0, True
    cc = float(ac @ bc) / np.sqrt(va * vb)
    return float(np.clip(cc, -1.0, 1.0)), False


def pearson_cc(a, b) -> float:
    """Covariance over the product of population standard deviations.

    Degenerates to 0 when either sequence is constant.
    """
    return _pearson_flagged(a, b)[0]


@dataclass
class CcReport:
    """Per-(utterance, channel) correlations plus table-style aggregates."""

    entries: dict = field(default_factory=dict)      # (utt_key, channel) -> cc
    degenerate: set = field(default_factory=set)     # keys where cc degenerated to 0

    @property
    def utterances(self) -> list:
        seen = dict.fromkeys(key for key, _ in self.entries)
        return list(seen)

    def per_channel_means(self) -> dict[str, float]:
        means = {}
        for ch in CHANNELS:
            values = [cc for (_, c), cc in self.entries.items() if c == ch]
            means[ch] = float(np.mean(values))
        return means

    def per_utterance_means(self) -> dict:
        means = {}
        for key in self.utterances:
            values = [cc for (u, _), cc in self.entries.items() if u == key]
            means[key] = float(np.mean(values))
        return means

    def overall_mean(self) -> float:
        return float(np.mean(list(self.per_channel_means().values())))

    def channel_dispersion(self) -> float:
        """Sample std across the 12 per-channel means (per-articulator
        table convention)."""
        return float(np.std(list(self.per_channel_means().values()), ddof=1))

    def utterance_dispersion(self) -> float:
        """Sample std across utterance-level mean CCs (grid-summary
        convention); 0 for a single utterance."""
        values = list(self.per_utterance_means().values())
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1))

    def summary_line(self) -> str:
        return f"{self.overall_mean():.4f} ({self.channel_dispersion():.3f})"


def aggregate_table(per_channel_means) -> tuple[float, float]:
    """Mean and sample (n-1) std across the 12 per-channel CC means."""
    values = np.asarray(list(per_channel_means), dtype=np.float64)
    if values.shape != (len(CHANNELS),):
        raise ShapeError(f"expected {len(CHANNELS)} per-channel values, "
                         f"got shape {values.shape}")
    return float(values.mean()), float(values.std(ddof=1))


def evaluate(params: mdl.ModelParams, utterances: list[corpus.LoadedUtterance],
             batch_size: int = 16) -> CcReport:
    """Eval-mode predictions and per-(utterance, channel) CCs."""
    if not utterances:
        raise ConfigError("cannot evaluate an empty test set")
    report = CcReport()
    for batch in corpus.make_batches(utterances, batch_size, shuffle=False):
        pred = mdl.forward(params, batch, mode="eval").data
        for i, utt_key in enumerate(batch.utterance_ids):
            n = batch.lengths[i]
            for c, ch in enumerate(CHANNELS):
                cc, degenerate = _pearson_flagged(pred[i, :n, c],
                                                  batch.targets[i, :n, c])
                report.entries[(utt_key, ch)] = cc
                if degenerate:
                    report.degenerate.add((utt_key, ch))
    return report


def merge_reports(reports: list[CcReport]) -> CcReport:
    """Union of per-(utterance, channel) entries from several models.

    Used for subject-specific and fine-tuned regimes, where each subject
    has its own model but the tables average over all subjects' test
    utterances.
    """
    merged = CcReport()
    for rep in reports:
        overlap = set(rep.entries) & set(merged.entries)
        if overlap:
            raise ConfigError(f"duplicate evaluation entries: {sorted(overlap)[:3]}")
        merged.entries.update(rep.entries)
        merged.degenerate.update(rep.degenerate)
    return merged


def write_cc_csv(report: CcReport, path) -> None:
    """One row per utterance x channel: subject, sentence, channel, cc, flag."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject", "sentence_id", "channel", "cc", "degenerate"])
        for ((subject, sid), ch), cc in report.entries.items():
            flag = int(((subject, sid), ch) in report.degenerate)
            writer.writerow([subject, sid, ch, repr(cc), flag])


def markdown_table(report: CcReport, setup: str, feature: str) -> str:
    """One-row markdown table mirroring the per-articulator column layout."""
    means = report.per_channel_means()
    header = ["setup", "feature", *CHANNELS, "mean (std)"]
    row = [setup, feature, *(f"{means[ch]:.4f}" for ch in CHANNELS),
           report.summary_line()]
    lines = ["| " + " | ".join(header) + " |",
             "|" + "---|" * len(header),
             "| " + " | ".join(row) + " |"]
    return "\n".join(lines) + "\n"


def write_summary_csv(report: CcReport, path, feature: str, size: str,
                      regime: str) -> None:
    """Machine-readable aggregate consumed by the grid report command.

    The std column follows the grid convention (across utterance-level
    means); per-channel means are carried alongside.
    """
    means = report.per_channel_means()
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "size", "regime", "mean", "std", *CHANNELS])
        writer.writerow([feature, size, regime,
                         repr(report.overall_mean()),
                         repr(report.utterance_dispersion()),
                         *(repr(means[ch]) for ch in CHANNELS)])


def read_summary_csv(path) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != 1:
        raise ConfigError(f"{path}: expected exactly one summary row, got {len(rows)}")
    row = rows[0]
    return {"feature": row["feature"], "size": row["size"], "regime": row["regime"],
            "mean": float(row["mean"]), "std": float(row["std"])}
