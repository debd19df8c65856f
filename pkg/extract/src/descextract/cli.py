"""CLI: images/texts -> EMB1 embeddings, and paired-corpus sampling."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import ExtractError, UsageError
from .pipeline import ExtractionManifest, extract_image_embeddings, extract_text_embeddings, sample_corpus


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="descextract",
        description="Produce EMB1 embedding files (plus manifests) from images, texts "
        "and paired caption/image sources.",
    )
    sub = parser.add_subparsers(dest="cmd")

    p = sub.add_parser("images", help="encode images to one EMB1 row each")
    p.add_argument("--model", required=True, help="debug:<dims>, hf-clip:<id> or hf-vision:<id>")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image-dir", help="directory scanned in sorted filename order")
    src.add_argument("--image-list", help="text file, one image path per line")
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true", help="L2-normalize rows before writing")
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_images)

    p = sub.add_parser("texts", help="encode text lines to one EMB1 row each")
    p.add_argument("--model", required=True)
    p.add_argument("--texts", required=True, help="text file, one entry per line")
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_texts)

    p = sub.add_parser("sample", help="seeded sample without replacement from a paired corpus")
    p.add_argument("--captions", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--texts", default=None, help="optional caption texts, one per line")
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-captions", required=True)
    p.add_argument("--out-images", required=True)
    p.add_argument("--out-texts", default=None)
    p.set_defaults(func=cmd_sample)

    return parser


def _image_inputs(args) -> list[str]:
    if args.image_dir:
        root = Path(args.image_dir)
        if not root.is_dir():
            raise UsageError(f"--image-dir {root} is not a directory")
        paths = sorted(str(p) for p in root.iterdir() if p.is_file())
    else:
        try:
            lines = Path(args.image_list).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise UsageError(f"cannot read --image-list: {exc}") from exc
        paths = [ln.strip() for ln in lines if ln.strip()]
    if not paths:
        raise UsageError("no input images found")
    return paths


def cmd_images(args) -> int:
    manifest = ExtractionManifest(
        model=args.model,
        inputs=_image_inputs(args),
        output=args.out,
        normalize=args.normalize,
        batch_size=args.batch_size,
    )
    extract_image_embeddings(manifest)
    print(f"wrote {args.out} ({len(manifest.inputs)} rows) + manifest")
    return 0


def cmd_texts(args) -> int:
    try:
        lines = Path(args.texts).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read --texts: {exc}") from exc
    texts = [ln for ln in lines if ln.strip()]
    if not texts:
        raise UsageError(f"--texts file {args.texts} has no entries")
    manifest = ExtractionManifest(
        model=args.model,
        inputs=[args.texts],
        output=args.out,
        normalize=args.normalize,
        batch_size=args.batch_size,
    )
    extract_text_embeddings(manifest, texts)
    print(f"wrote {args.out} ({len(texts)} rows) + manifest")
    return 0


def cmd_sample(args) -> int:
    if args.texts and not args.out_texts:
        raise UsageError("--texts requires --out-texts")
    sample_corpus(
        args.captions,
        args.images,
        args.size,
        args.seed,
        args.out_captions,
        args.out_images,
        texts_path=args.texts,
        out_texts=args.out_texts,
    )
    print(f"wrote {args.out_captions} and {args.out_images} ({args.size} pairs, seed {args.seed})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
