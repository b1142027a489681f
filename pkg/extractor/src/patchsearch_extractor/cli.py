"""Extractor CLI: dump feature files and convert annotated datasets.

Exit codes mirror the engine CLI: 0 success, 1 usage error,
2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from .backbones import BackboneLoadError
from .config import DEFAULT_INPUT_SIZE, DEFAULT_PATCH_SIZE, ExtractorConfig
from .extract import extract_many
from .rasterize import LayoutError, build_manifest


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_args(parser) -> None:
    parser.add_argument("--backbone", default="patch-moments")
    parser.add_argument("--input-size", type=int, default=DEFAULT_INPUT_SIZE)
    parser.add_argument("--patch-size", type=int, default=DEFAULT_PATCH_SIZE)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--workers", type=int, default=1)


def _config(args) -> ExtractorConfig:
    try:
        return ExtractorConfig(
            backbone_id=args.backbone,
            input_size=args.input_size,
            patch_size=args.patch_size,
            device=args.device,
        )
    except ValueError as exc:
        raise UsageError(str(exc))


def _build_parser() -> _Parser:
    p = _Parser(prog="patchsearch-extract", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    fp = sub.add_parser("features", help="extract feature files from images")
    fp.add_argument("--images", required=True, nargs="+", help="input image files")
    fp.add_argument("--out-dir", required=True)
    _add_config_args(fp)

    mp = sub.add_parser("manifest", help="convert an annotated dataset")
    mp.add_argument("--dataset", required=True, help="dataset root directory")
    mp.add_argument("--layout", choices=["perseg", "icub"], required=True)
    mp.add_argument("--out", required=True, help="output directory")
    _add_config_args(mp)
    return p


def _cmd_features(args) -> int:
    config = _config(args)
    out_dir = Path(args.out_dir)
    outs = [out_dir / (Path(img).stem + ".pfm") for img in args.images]
    stems = [p.name for p in outs]
    if len(set(stems)) != len(stems):
        raise UsageError("input images have colliding stems; rename them first")
    extract_many(args.images, config, outs, workers=args.workers)
    print(f"extracted {len(outs)} feature files -> {out_dir}")
    return 0


def _cmd_manifest(args) -> int:
    config = _config(args)
    manifest = build_manifest(
        args.dataset, args.layout, config, args.out, workers=args.workers
    )
    print(f"wrote {manifest}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "features":
            return _cmd_features(args)
        return _cmd_manifest(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (BackboneLoadError, LayoutError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 3


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
