"""Bridge CLI: extract AAIF features from WAVs, verify existing files."""

import argparse
import sys

from .backends import make_backend
from .extract import UpstreamSpec, extract_dir, verify
from .registry import BridgeError, UPSTREAM_DIMS


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise BridgeError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aai-bridge",
                     description="Pretrained-SSL feature extraction to AAIF files")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="run one upstream over a directory of WAVs",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--upstream", required=True, choices=sorted(UPSTREAM_DIMS),
                   help="pretrained feature to emit")
    p.add_argument("--in", dest="wav_dir", required=True, metavar="DIR",
                   help="directory of 16 kHz mono WAVs")
    p.add_argument("--out", dest="out_dir", required=True, metavar="DIR",
                   help="output directory for AAIF files")
    p.add_argument("--backend", choices=("s3prl", "sim"), default="s3prl",
                   help="s3prl needs checkpoints; sim is offline-deterministic")

    p = sub.add_parser("verify", help="check an AAIF file against its audio")
    p.add_argument("aaif", help="AAIF feature file")
    p.add_argument("wav", help="the WAV it was extracted from")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "extract":
            backend = make_backend(args.backend)
            written = extract_dir(backend, UpstreamSpec(args.upstream),
                                  args.wav_dir, args.out_dir)
            print(f"wrote {len(written)} {args.upstream} feature files "
                  f"({backend.name} backend)")
            return 0
        report = verify(args.aaif, args.wav)
        for line in report.lines():
            print(line)
        return 0
    except BridgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
