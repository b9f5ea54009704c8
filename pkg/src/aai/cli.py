"""Command-line entry point tying the pipeline together.

Subcommands mirror the pipeline stages: `preprocess` (audio + EMA to
aligned feature/target files), `mfcc` (audio to MFCC feature files),
`synth` (synthetic oracle corpus), `train` (one experiment), `eval`
(CC report for trained checkpoints), and `report` (grid over many eval
summaries). Exit codes: 0 success, 1 usage error, 2 data/format error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

from . import corpus, dsp, evaluation, synthcorpus, training
from . import model as mdl
from .errors import AaiError, ConfigError, DataFormatError

ENV_CORPUS_ROOT = "AAI_CORPUS_ROOT"


@dataclass
class ExperimentConfig:
    corpus: str = ""
    feature: str = ""
    feature_dim: int | None = None
    size: str = ""
    regime: str = ""
    out: str = "runs"
    split_seed: int = 0
    seed: int = 0
    lr: float = 1e-4
    batch_size: int = 16
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    min_lr: float = 1e-6
    early_stop_patience: int = 15
    max_epochs: int = 300
    dropout: float = 0.1
    max_seq_len: int = 2000
    warm_start: str = ""
    subjects: str = ""
    checkpoint: str = ""

    def subject_filter(self) -> list[str] | None:
        names = [s.strip() for s in self.subjects.split(",") if s.strip()]
        return names or None

    def input_dim(self) -> int:
        return corpus.feature_dim(self.feature, self.feature_dim)

    def model_config(self) -> mdl.ModelConfig:
        return mdl.ModelConfig.for_size(self.size, self.input_dim(),
                                        dropout=self.dropout,
                                        max_seq_len=self.max_seq_len)

    def train_config(self) -> training.TrainConfig:
        return training.TrainConfig(
            regime=self.regime, learning_rate=self.lr, batch_size=self.batch_size,
            scheduler_factor=self.scheduler_factor,
            scheduler_patience=self.scheduler_patience, min_lr=self.min_lr,
            early_stop_patience=self.early_stop_patience, max_epochs=self.max_epochs,
            seed=self.seed, warm_start=self.warm_start or None)

    def run_dir(self) -> Path:
        return Path(self.out) / f"{self.regime}-{self.feature}-{self.size}"


def _parse_optional_int(raw: str):
    return None if raw.lower() in ("", "none") else int(raw)


# key -> (converter, default shown in --help, description)
CONFIG_KEYS = {
    "corpus": (str, f"${ENV_CORPUS_ROOT}", "corpus root directory"),
    "feature": (str, "(required)", "feature name, registry or custom"),
    "feature_dim": (_parse_optional_int, "none", "dimension for non-registry features"),
    "size": (str, "(required)", "model size class: s, m, l, or tiny"),
    "regime": (str, "(required)", "training regime: ss, pooled, or ft"),
    "out": (str, "runs", "output directory for runs"),
    "split_seed": (int, "0", "seed for the 80/10/10 sentence split"),
    "seed": (int, "0", "training/initialization seed"),
    "lr": (float, "0.0001", "initial learning rate"),
    "batch_size": (int, "16", "utterances per batch"),
    "scheduler_factor": (float, "0.5", "learning-rate reduction factor"),
    "scheduler_patience": (int, "5", "stagnant epochs before a reduction"),
    "min_lr": (float, "1e-06", "learning-rate floor"),
    "early_stop_patience": (int, "15", "stagnant epochs before stopping"),
    "max_epochs": (int, "300", "epoch cap"),
    "dropout": (float, "0.1", "dropout rate in train mode"),
    "max_seq_len": (int, "2000", "positional-encoding table size"),
    "warm_start": (str, "", "pooled checkpoint path (required for ft)"),
    "subjects": (str, "", "comma-separated subject filter"),
    "checkpoint": (str, "", "checkpoint path override for eval"),
}

_FIELD_NAMES = {f.name for f in fields(ExperimentConfig)}
assert set(CONFIG_KEYS) == _FIELD_NAMES


def parse_config(path) -> ExperimentConfig:
    """Read a flat `key = value` experiment config with `#` comment lines."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cfg = ExperimentConfig()
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        converter = CONFIG_KEYS[key][0]
        try:
            setattr(cfg, key, converter(value))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
    return cfg


def _finalize_config(cfg: ExperimentConfig, args) -> ExperimentConfig:
    for key in ("corpus", "feature", "size", "regime", "out", "warm_start",
                "subjects", "checkpoint"):
        value = getattr(args, key, None)
        if value:
            setattr(cfg, key, value)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if not cfg.corpus:
        cfg.corpus = os.environ.get(ENV_CORPUS_ROOT, "")
    for key in ("feature", "size", "regime"):
        if not getattr(cfg, key):
            raise ConfigError(f"missing required config key {key!r}")
    if not cfg.corpus:
        raise ConfigError(
            f"no corpus root: set the 'corpus' key or {ENV_CORPUS_ROOT}")
    if cfg.lr <= 0:
        raise ConfigError(f"lr must be > 0, got {cfg.lr}")
    cfg.regime = cfg.regime.lower()
    cfg.size = cfg.size.lower()
    return cfg


def _write_manifest(root: Path, artifacts: list[Path]) -> Path:
    manifest = root / "run_manifest.txt"
    rels = sorted(str(p.relative_to(root)) for p in artifacts)
    manifest.write_text("".join(r + "\n" for r in rels))
    return manifest


def _echo_config(cfg: ExperimentConfig, path: Path) -> None:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    path.write_text("".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    lo, _, hi = args.duration.partition(":")
    spec = synthcorpus.SynthSpec(
        subjects=args.subjects, utterances=args.utterances,
        duration_range=(float(lo), float(hi or lo)), feature_dim=args.dim,
        map_kind=args.map, seed=args.seed, noise_std=args.noise,
        bandwidth_hz=args.bandwidth)
    out = synthcorpus.gen_corpus(spec, args.out, split_seed=args.split_seed)
    artifacts = [p for p in out.rglob("*") if p.is_file() and p.name != "run_manifest.txt"]
    _write_manifest(out, artifacts)
    print(f"synthesized {spec.subjects * spec.utterances} utterances under {out}")
    return 0


def _ema_source(subj_dir: Path, stem: str):
    """Raw 250 Hz EMA for one utterance: <stem>.csv or binary <stem>.ema."""
    csv_path = subj_dir / f"{stem}.csv"
    if csv_path.exists():
        return dsp.read_ema_csv(csv_path)
    ema_path = subj_dir / f"{stem}.ema"
    if ema_path.exists():
        return corpus.read_target_file(ema_path)
    return None


def cmd_preprocess(args) -> int:
    root = Path(args.corpus)
    if not root.is_dir():
        raise DataFormatError(f"corpus root {root} is not a directory")
    artifacts = []
    n_pairs = 0
    for subj_dir in corpus.subject_dirs(root):
        for wav_path in sorted(subj_dir.glob("*.wav")):
            stem = wav_path.name.split(".")[0]
            audio = dsp.read_wav(wav_path)
            audio = dsp.resample_audio(audio, dsp.AUDIO_RATE)
            feats = dsp.mfcc(audio)
            ema = _ema_source(subj_dir, stem)
            if ema is None:
                print(f"skipping {wav_path}: no paired EMA (.csv or .ema)",
                      file=sys.stderr)
                continue
            if ema.rate != dsp.EMA_RATE:
                raise DataFormatError(
                    f"{wav_path}: EMA stream at {ema.rate} Hz, expected {dsp.EMA_RATE}")
            target = dsp.downsample_ema(dsp.lowpass_ema(ema, args.cutoff))
            feats, target = dsp.align(feats, target)
            # normalize after alignment so stored targets are exactly
            # zero-mean/unit-variance over the frames that survive
            target = dsp.normalize_utterance(target)
            feature_path = subj_dir / f"{stem}.aaif-MFCC"
            target_path = subj_dir / f"{stem}.aait"
            corpus.write_feature_file(feature_path, feats)
            corpus.write_target_file(target_path, target)
            artifacts.extend([feature_path, target_path])
            n_pairs += 1
    if not n_pairs:
        raise DataFormatError(f"no processable wav/EMA pairs under {root}")
    _write_manifest(root, artifacts)
    print(f"preprocessed {n_pairs} utterance pairs under {root}")
    return 0


def cmd_mfcc(args) -> int:
    root = Path(args.corpus)
    if not root.is_dir():
        raise DataFormatError(f"corpus root {root} is not a directory")
    artifacts = []
    for subj_dir in corpus.subject_dirs(root):
        for wav_path in sorted(subj_dir.glob("*.wav")):
            stem = wav_path.name.split(".")[0]
            audio = dsp.resample_audio(dsp.read_wav(wav_path), dsp.AUDIO_RATE)
            feature_path = subj_dir / f"{stem}.aaif-MFCC"
            corpus.write_feature_file(feature_path, dsp.mfcc(audio))
            artifacts.append(feature_path)
    if not artifacts:
        raise DataFormatError(f"no wav files under {root}")
    _write_manifest(root, artifacts)
    print(f"wrote {len(artifacts)} MFCC feature files under {root}")
    return 0


def _load_subject_utterances(cfg: ExperimentConfig):
    """Aligned utterances per subject, restricted to the configured split."""
    split = corpus.ensure_splits(cfg.corpus, cfg.split_seed)
    utts = corpus.discover_utterances(cfg.corpus, cfg.feature, cfg.subject_filter())
    if not utts:
        raise DataFormatError(
            f"no {cfg.feature!r} utterances under {cfg.corpus}")
    expected = cfg.input_dim()
    by_subject: dict[str, list[corpus.LoadedUtterance]] = {}
    for utt in utts:
        by_subject.setdefault(utt.subject, []).append(corpus.load_utterance(utt, expected))
    return split, by_subject


def _subject_sets(split, utts):
    parts = {}
    for name, ids in split.subsets().items():
        parts[name] = corpus.filter_by_sentences(utts, ids)
    return parts


def _train_one_job(job) -> tuple[str, str, float]:
    """Train one (label, train, val) job and save its artifacts."""
    label, model_cfg, train_utts, val_utts, train_cfg, out_dir = job
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    best, history = training.train(model_cfg, train_utts, val_utts, train_cfg)
    mdl.save_checkpoint(out_dir / "checkpoint.aaim", best)
    training.write_history_csv(history, out_dir / "history.csv")
    return label, str(out_dir), min(h.val_loss for h in history)


def cmd_train(cfg: ExperimentConfig, jobs: int = 1) -> int:
    model_cfg = cfg.model_config()
    train_cfg = cfg.train_config()
    train_cfg.validate()
    split, by_subject = _load_subject_utterances(cfg)
    run_dir = cfg.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)

    job_list = []
    if cfg.regime in ("ss", "ft"):
        for subject, utts in sorted(by_subject.items()):
            parts = _subject_sets(split, utts)
            if not parts["train"] or not parts["val"]:
                raise DataFormatError(f"subject {subject}: empty train or val split")
            job_list.append((subject, model_cfg, parts["train"], parts["val"],
                             train_cfg, run_dir / subject))
    else:
        train_pool = corpus.pool_subjects(
            [_subject_sets(split, utts)["train"] for utts in by_subject.values()])
        val_pool = corpus.pool_subjects(
            [_subject_sets(split, utts)["val"] for utts in by_subject.values()])
        job_list.append(("pooled", model_cfg, train_pool, val_pool,
                         train_cfg, run_dir / "pooled"))

    if jobs > 1 and len(job_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_train_one_job, job_list))
    else:
        results = [_train_one_job(job) for job in job_list]

    artifacts = []
    for label, out_dir, best_val in results:
        print(f"{label}: best validation loss {best_val:.6f} -> {out_dir}")
        artifacts.append(Path(out_dir) / "checkpoint.aaim")
        artifacts.append(Path(out_dir) / "history.csv")
    _echo_config(cfg, run_dir / "config_used.txt")
    artifacts.append(run_dir / "config_used.txt")
    _write_manifest(run_dir, artifacts)
    return 0


def cmd_eval(cfg: ExperimentConfig) -> int:
    split, by_subject = _load_subject_utterances(cfg)
    run_dir = cfg.run_dir()
    reports = []
    if cfg.regime in ("ss", "ft"):
        for subject, utts in sorted(by_subject.items()):
            ckpt = Path(cfg.checkpoint) if cfg.checkpoint \
                else run_dir / subject / "checkpoint.aaim"
            params = mdl.load_checkpoint(ckpt)
            test = _subject_sets(split, utts)["test"]
            if not test:
                raise DataFormatError(f"subject {subject}: empty test split")
            reports.append(evaluation.evaluate(params, test, cfg.batch_size))
        report = evaluation.merge_reports(reports)
    else:
        ckpt = Path(cfg.checkpoint) if cfg.checkpoint \
            else run_dir / "pooled" / "checkpoint.aaim"
        params = mdl.load_checkpoint(ckpt)
        test = corpus.pool_subjects(
            [_subject_sets(split, utts)["test"] for utts in by_subject.values()])
        report = evaluation.evaluate(params, test, cfg.batch_size)

    eval_dir = run_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    evaluation.write_cc_csv(report, eval_dir / "cc_report.csv")
    (eval_dir / "report.md").write_text(
        evaluation.markdown_table(report, cfg.regime.upper(), cfg.feature))
    evaluation.write_summary_csv(report, eval_dir / "summary.csv",
                                 cfg.feature, cfg.size, cfg.regime)
    _write_manifest(eval_dir, [eval_dir / "cc_report.csv", eval_dir / "report.md",
                               eval_dir / "summary.csv"])
    print(f"{cfg.regime}/{cfg.feature}/{cfg.size}: CC {report.summary_line()}")
    return 0


def cmd_report(args) -> int:
    summaries = [evaluation.read_summary_csv(p) for p in args.summaries]
    if not summaries:
        raise ConfigError("report needs at least one summary.csv")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    regimes = ("ss", "pooled", "ft")
    sizes = sorted({s["size"] for s in summaries})
    features = list(dict.fromkeys(s["feature"] for s in summaries))
    by_key = {(s["size"], s["feature"], s["regime"]): s for s in summaries}

    csv_lines = ["size,feature," + ",".join(regimes)]
    md_lines = []
    for size in sizes:
        md_lines.append(f"| {size} | " + " | ".join(regimes) + " |")
        md_lines.append("|" + "---|" * (len(regimes) + 1))
        for feature in features:
            cells = []
            for regime in regimes:
                s = by_key.get((size, feature, regime))
                cells.append(f"{s['mean']:.4f} ({s['std']:.3f})" if s else "-")
            csv_lines.append(f"{size},{feature}," + ",".join(cells))
            md_lines.append(f"| {feature} | " + " | ".join(cells) + " |")
        md_lines.append("")
    (out / "report_grid.csv").write_text("".join(l + "\n" for l in csv_lines))
    (out / "report_grid.md").write_text("".join(l + "\n" for l in md_lines))
    _write_manifest(out, [out / "report_grid.csv", out / "report_grid.md"])
    print((out / "report_grid.md").read_text(), end="")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _config_epilog() -> str:
    lines = ["config file keys (key = value, '#' comments):"]
    for key, (_, default, desc) in CONFIG_KEYS.items():
        lines.append(f"  {key:22s} default {default:12s} {desc}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aai",
                     description="Acoustic-to-articulatory inversion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic oracle corpus",
                       parents=[], formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="corpus output directory")
    p.add_argument("--subjects", type=int, default=2)
    p.add_argument("--utterances", type=int, default=40)
    p.add_argument("--duration", default="3.0:5.0", help="seconds, LO:HI")
    p.add_argument("--dim", type=int, default=64, help="feature dimension")
    p.add_argument("--map", choices=("linear", "linear+tanh"), default="linear")
    p.add_argument("--noise", type=float, default=0.0, help="feature noise std")
    p.add_argument("--bandwidth", type=float, default=8.0, help="trajectory Hz")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split-seed", type=int, default=0, dest="split_seed")

    p = sub.add_parser("preprocess", help="audio + EMA -> aligned feature/target files",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--corpus", required=True, help="corpus root with wav + csv/ema")
    p.add_argument("--cutoff", type=float, default=dsp.DEFAULT_LOWPASS_HZ,
                   help="EMA low-pass cutoff in Hz")

    p = sub.add_parser("mfcc", help="audio -> MFCC feature files",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--corpus", required=True, help="corpus root with wav files")

    for name, help_text in (("train", "train one experiment"),
                            ("eval", "evaluate trained checkpoints")):
        p = sub.add_parser(name, help=help_text, epilog=_config_epilog(),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--corpus", help="override corpus root")
        p.add_argument("--feature", help="override feature name")
        p.add_argument("--size", help="override size class")
        p.add_argument("--regime", help="override regime")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--seed", type=int, help="override training seed")
        p.add_argument("--subjects", help="override subject filter")
        if name == "train":
            p.add_argument("--warm-start", dest="warm_start",
                           help="pooled checkpoint for ft")
            p.add_argument("--jobs", type=int, default=1,
                           help="parallel per-subject jobs (ss/ft)")
        else:
            p.add_argument("--checkpoint", help="explicit checkpoint path")

    p = sub.add_parser("report", help="grid report over eval summaries",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("summaries", nargs="+", help="summary.csv paths from eval runs")
    return parser


def dispatch(args) -> int:
    if args.command == "synth":
        return cmd_synth(args)
    if args.command == "preprocess":
        return cmd_preprocess(args)
    if args.command == "mfcc":
        return cmd_mfcc(args)
    if args.command == "report":
        return cmd_report(args)
    cfg = _finalize_config(parse_config(args.config), args)
    if not Path(cfg.corpus).exists():
        raise DataFormatError(f"corpus root {cfg.corpus} does not exist")
    if args.command == "train":
        return cmd_train(cfg, jobs=args.jobs)
    if args.command == "eval":
        return cmd_eval(cfg)
    raise ConfigError(f"unknown command {args.command!r}")  # pragma: no cover


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return dispatch(args)
    except AaiError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
