"""Command-line driver: one extraction pass per invocation, then pairing.

    python3 -m latentextract extract --listing pairs.tsv --side x \
        --encoder builtin:bytes-hash-64 --modality image --out work/
    python3 -m latentextract extract --listing pairs.tsv --side y \
        --encoder builtin:token-hash-64 --modality text --out work/
    python3 -m latentextract pair --work work/ --out store/

``extract`` leaves a sidecar ``.meta.json`` next to each latent file so the
``pair`` step can reconcile skipped inputs across separate processes.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import format as fmt
from .encoders import MODALITIES, POOLINGS, EncoderError
from .extract import ExtractError, ExtractResult, ExtractSpec, extract, pair_and_manifest
from .listing import load_pair_listing

SIDE_FILES = {"x": fmt.FILE_X, "y": fmt.FILE_Y}


def _meta_path(latent_path: Path) -> Path:
    return latent_path.with_suffix(latent_path.suffix + ".meta.json")


def _cmd_extract(args) -> int:
    listing = load_pair_listing(args.listing)
    spec = ExtractSpec(encoder=args.encoder, modality=args.modality,
                       pooling=args.pooling, batch_size=args.batch_size,
                       out_dir=args.out)
    result = extract(spec, listing.side(args.side), SIDE_FILES[args.side])
    meta = {"count": result.count, "dim": result.dim,
            "skipped": list(result.skipped)}
    _meta_path(result.path).write_text(json.dumps(meta, sort_keys=True),
                                       encoding="utf-8")
    print(json.dumps({"side": args.side, "path": str(result.path), **meta},
                     sort_keys=True))
    return 0


def _load_result(work: Path, side: str) -> ExtractResult:
    path = work / SIDE_FILES[side]
    meta_file = _meta_path(path)
    if not meta_file.exists():
        raise ExtractError(f"missing extraction metadata: {meta_file}")
    meta = json.loads(meta_file.read_text(encoding="utf-8"))
    return ExtractResult(path=path, count=int(meta["count"]),
                         dim=int(meta["dim"]),
                         skipped=tuple(int(i) for i in meta["skipped"]))


def _cmd_pair(args) -> int:
    work = Path(args.work)
    manifest = pair_and_manifest(_load_result(work, "x"),
                                 _load_result(work, "y"), args.out)
    print(json.dumps({"manifest": str(Path(args.out) / fmt.MANIFEST),
                      **manifest}, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentextract",
        description="Extract pooled encoder latents into a binary store.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="encode one modality of a listing")
    p.add_argument("--listing", required=True, help="tab-separated pair file")
    p.add_argument("--side", choices=("x", "y"), required=True)
    p.add_argument("--encoder", required=True,
                   help="model-hub name or builtin:<kind>-<dim>")
    p.add_argument("--modality", choices=MODALITIES, required=True)
    p.add_argument("--pooling", choices=POOLINGS, default="cls")
    p.add_argument("--batch-size", dest="batch_size", type=int, default=16)
    p.add_argument("--out", required=True, help="working directory")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("pair", help="reconcile two passes into a store")
    p.add_argument("--work", required=True,
                   help="directory holding both extracted sides")
    p.add_argument("--out", required=True, help="store output directory")
    p.set_defaults(func=_cmd_pair)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ExtractError, EncoderError, fmt.FormatError, ValueError,
            OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
