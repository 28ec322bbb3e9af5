"""Command line interface: convert checkpoints, emit parity fixtures."""

from __future__ import annotations

import argparse
import sys

from .architecture import available_architectures, named_architecture
from .convert import convert_checkpoint
from .errors import ExportError
from .fixtures import emit_fixtures


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anomalite-export",
        description="Convert pretrained encoder checkpoints into anomalite weight containers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    convert = sub.add_parser("convert", help="convert a checkpoint into a weight container")
    convert.add_argument("checkpoint", help="path to the .pt checkpoint")
    convert.add_argument(
        "--arch",
        default="mobilesam-v1",
        help=f"architecture name, one of {', '.join(available_architectures())}",
    )
    convert.add_argument("--out", required=True, help="output container path")

    fixtures = sub.add_parser(
        "fixtures", help="emit reference input/feature pairs for a converted container"
    )
    fixtures.add_argument("weights", help="path to a converted weight container")
    fixtures.add_argument("--out", required=True, help="output fixture container path")
    fixtures.add_argument("--count", type=int, default=3, help="number of input/feature pairs")
    fixtures.add_argument("--seed", type=int, default=0, help="input generator seed")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "convert":
            arch = named_architecture(args.arch)
            manifest = convert_checkpoint(args.checkpoint, arch, args.out)
            print(
                f"wrote {manifest.tensor_count} tensors ({manifest.parameter_count} values) "
                f"to {manifest.output_path}, ignored {manifest.ignored_keys} checkpoint keys"
            )
        else:
            manifest = emit_fixtures(args.weights, args.out, count=args.count, seed=args.seed)
            shape = "x".join(str(d) for d in manifest.feature_shape)
            print(
                f"wrote {manifest.count} fixture pairs (features {shape}) to {manifest.output_path}"
            )
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
