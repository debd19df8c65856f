"""Command-line surface: align, clipsim, accuracy, track, gen, pool.

Every command writes a key-sorted JSON report (identical across reruns on
the same inputs, apart from wall time) plus CSV outputs, and the report
paths render matplotlib figures alongside the delimited files. Exit codes:
0 success, 2 usage/config, 3 data or format error, 4 metric undefined.
"""

from __future__ import annotations

import argparse
import glob as globmod
import os
import re
import sys
import time
from pathlib import Path

import numpy as np

from .alignment import AlignmentConfig, choose_k, dino_align, global_pool, strip_class_names
from .classify import CheckpointInput, accuracy_for_set, track_iterations
from .errors import ConfigError, DataError, DescevalError, ShapeMismatchError
from .generators import GeneratorConfig, class_name_prompts, dclip_randomized, waffle_randomized
from .pretrain import ClipSimConfig, clip_sim, frequency_similarity_profile
from .report import EvalReport, digest_inputs, fmt, write_csv
from .store import (
    DescriptorSet,
    load_descriptor_set,
    load_labels,
    open_corpus,
    read_embedding_matrix,
    save_descriptor_set,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except DescevalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="desceval",
        description="Evaluate text-based visual descriptor sets: alignment, "
        "pre-training-corpus similarity, and classification by description.",
    )
    sub = parser.add_subparsers(dest="cmd")

    p = sub.add_parser("align", help="mutual-kNN alignment of the descriptor-induced space")
    p.add_argument("--images-clip", required=True, help="EMB1 image embeddings in the VLM space")
    p.add_argument("--concepts", required=True,
                   help="EMB1 embeddings of the pooled (stripped) descriptors, one row per pooled entry")
    p.add_argument("--images-ref", required=True, help="EMB1 reference image embeddings")
    p.add_argument("--descriptors", required=True, help="descriptor JSON (class -> descriptors)")
    p.add_argument("--k", type=int, default=None, help="neighbor count (default: from --labels)")
    p.add_argument("--labels", default=None, help="labels JSON, used to choose k when --k is absent")
    p.add_argument("--keep-class-names", action="store_true",
                   help="skip class-name stripping (class-name-bias mode)")
    p.add_argument("--no-dedup", action="store_true", help="keep duplicate pooled descriptors")
    p.add_argument("--no-normalize-projection", action="store_true",
                   help="build neighbor sets from raw similarity rows instead of normalized ones")
    _common_flags(p)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("clipsim", help="descriptor similarity statistics against a caption corpus")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--descriptor-embeddings", required=True,
                   help="EMB1 rows aligned with the pooled descriptor list")
    p.add_argument("--corpus-captions", required=True, help="EMB1 caption embeddings (memory-mapped)")
    p.add_argument("--corpus-images", required=True, help="EMB1 paired image embeddings")
    p.add_argument("--tau", type=float, default=0.7, help="text-text similarity threshold (default 0.7)")
    p.add_argument("--top-fraction", type=float, default=0.05,
                   help="fraction of the corpus retrieved per descriptor (default 0.05)")
    p.add_argument("--profile-bins", type=int, default=10, help="log-spaced frequency bins")
    p.add_argument("--keep-class-names", action="store_true")
    p.add_argument("--no-dedup", action="store_true")
    p.add_argument("--no-figure", action="store_true", help="skip the profile SVG")
    _common_flags(p)
    p.set_defaults(func=cmd_clipsim)

    p = sub.add_parser("accuracy", help="zero-shot classification-by-description accuracy")
    p.add_argument("--images-clip", required=True)
    p.add_argument("--descriptors", required=True)
    p.add_argument("--descriptor-embeddings", required=True,
                   help="EMB1 rows aligned with the flattened descriptor list (names kept)")
    p.add_argument("--labels", required=True)
    p.add_argument("--strip-class-names", action="store_true",
                   help="strip class names before scoring (embeddings must match)")
    _common_flags(p)
    p.set_defaults(func=cmd_accuracy)

    p = sub.add_parser("track", help="evaluate a checkpoint series of descriptor files")
    p.add_argument("--checkpoints", required=True,
                   help="glob of descriptor JSON checkpoints, ordered by trailing number")
    p.add_argument("--checkpoint-embeddings", required=True,
                   help="glob of EMB1 files aligned with each checkpoint's flattened descriptors")
    p.add_argument("--checkpoint-embeddings-stripped", default=None,
                   help="optional glob of EMB1 files aligned with each checkpoint's stripped pool")
    p.add_argument("--keep-class-names-clipsim", action="store_true",
                   help="score corpus similarity on unstripped descriptors")
    p.add_argument("--images-clip", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--corpus-captions", required=True)
    p.add_argument("--corpus-images", required=True)
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--top-fraction", type=float, default=0.05)
    p.add_argument("--no-figure", action="store_true", help="skip the series SVG")
    _common_flags(p)
    p.set_defaults(func=cmd_track)

    gen = sub.add_parser("gen", help="generate a descriptor set")
    gsub = gen.add_subparsers(dest="generator")

    g = gsub.add_parser("classname", help='"An image of a {class name}" prompts')
    g.add_argument("--classes", required=True, help="text file, one class name per line")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_classname)

    g = gsub.add_parser("dclip", help="shared randomized global descriptor pool")
    g.add_argument("--classes", required=True)
    g.add_argument("--pool", required=True, help="text file, one candidate descriptor per line")
    g.add_argument("--pool-size", type=int, required=True, help="descriptors sampled from the pool")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_dclip)

    g = gsub.add_parser("waffle", help="randomized-token descriptors")
    g.add_argument("--classes", required=True)
    g.add_argument("--concepts", default=None, help="optional text file of high-level concepts")
    g.add_argument("--tokens-per-class", type=int, default=3)
    g.add_argument("--token-length", type=int, default=4)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_waffle)

    p = sub.add_parser("pool", help="export the pooled descriptor list for embedding")
    p.add_argument("--descriptors", required=True)
    p.add_argument("--keep-class-names", action="store_true")
    p.add_argument("--no-dedup", action="store_true")
    p.add_argument("--out", default=None, help="output text file (default: stdout)")
    p.set_defaults(func=cmd_pool)

    return parser


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for corpus scans (default: available cores)")
    p.add_argument("--chunk-rows", type=int, default=None,
                   help="corpus rows per scan chunk (default: sized from a 64 MiB budget)")
    p.add_argument("--out-dir", default=".", help="directory for reports, CSVs and figures")
    p.add_argument("--report", default=None, help="report path (default: <out-dir>/report.json)")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _report_path(args, out: Path) -> Path:
    return Path(args.report) if args.report else out / "report.json"


def _pooled_descriptors(dset: DescriptorSet, keep_class_names: bool, dedup: bool):
    working = dset if keep_class_names else strip_class_names(dset)
    return global_pool(working, dedup=dedup)


def cmd_align(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    images = read_embedding_matrix(args.images_clip)
    concepts = read_embedding_matrix(args.concepts)
    reference = read_embedding_matrix(args.images_ref)
    dset = load_descriptor_set(args.descriptors)
    pooled = _pooled_descriptors(dset, args.keep_class_names, not args.no_dedup)
    if concepts.rows != len(pooled.descriptors):
        raise ShapeMismatchError(
            f"--concepts has {concepts.rows} rows but the pooled descriptor list has "
            f"{len(pooled.descriptors)} entries (same strip/dedup flags used for embedding?)"
        )
    input_paths = [args.images_clip, args.concepts, args.images_ref, args.descriptors]
    if args.k is not None:
        k = args.k
    elif args.labels:
        labels = load_labels(args.labels)
        if labels.count != images.rows:
            raise ShapeMismatchError(f"{labels.count} labels for {images.rows} images")
        k = choose_k(labels)
        input_paths.append(args.labels)
    else:
        raise ConfigError("provide --k or --labels (k is derived from images per class)")

    cfg = AlignmentConfig(
        k=k,
        strip_class_names=not args.keep_class_names,
        dedup_global=not args.no_dedup,
        normalize_projection_rows=not args.no_normalize_projection,
    )
    result = dino_align(images, concepts, reference, cfg, n_workers=args.threads)

    report = EvalReport(
        command="align",
        config={
            "k": k,
            "strip_class_names": cfg.strip_class_names,
            "dedup_global": cfg.dedup_global,
            "normalize_projection_rows": cfg.normalize_projection_rows,
            "threads": args.threads,
        },
        inputs=digest_inputs(input_paths),
        metrics={"alignment": result.score, **{k2: v for k2, v in result.details.items()
                                               if k2 in ("pool_size", "items")}},
        wall_time_s=time.monotonic() - t0,
    )
    report.write(_report_path(args, out))
    print(f"alignment: {result.score:.6f} (k={k}, pool={result.details['pool_size']})")
    return 0


def cmd_clipsim(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    dset = load_descriptor_set(args.descriptors)
    pooled = _pooled_descriptors(dset, args.keep_class_names, not args.no_dedup)
    embeddings = read_embedding_matrix(args.descriptor_embeddings)
    corpus = open_corpus(args.corpus_captions, args.corpus_images)
    cfg = ClipSimConfig(tau=args.tau, top_fraction=args.top_fraction)

    result = clip_sim(
        pooled.descriptors, embeddings, corpus, cfg,
        chunk_rows=args.chunk_rows, n_workers=args.threads,
    )
    profile = frequency_similarity_profile(result.stats, args.profile_bins)

    write_csv(
        out / "descriptor_stats.csv",
        ["descriptor", "freq", "sim"],
        ([s.descriptor, s.freq, fmt(s.sim)] for s in result.stats),
    )
    write_csv(
        out / "profile.csv",
        ["bin_lo", "bin_hi", "count", "mean_sim"],
        ([fmt(b.lo), fmt(b.hi), b.count, fmt(b.mean_sim)] for b in profile.bins),
    )
    if not args.no_figure:
        from .plots import profile_figure

        profile_figure(profile, out / "profile.svg")

    report = EvalReport(
        command="clipsim",
        config={
            "tau": cfg.tau,
            "top_fraction": cfg.top_fraction,
            "corpus_sample_size": cfg.corpus_sample_size,
            "strip_class_names": not args.keep_class_names,
            "dedup_global": not args.no_dedup,
            "profile_bins": args.profile_bins,
            "threads": args.threads,
        },
        inputs=digest_inputs([args.descriptors, args.descriptor_embeddings,
                              args.corpus_captions, args.corpus_images]),
        metrics={
            "clip_sim": result.aggregate,
            "descriptors": len(result.stats),
            "skipped_zero_freq": result.skipped,
            "retrieval_k": result.retrieval_k,
            "corpus_rows": corpus.rows,
            "pearson_freq_sim": _json_float(profile.pearson_r),
        },
        wall_time_s=time.monotonic() - t0,
    )
    report.write(_report_path(args, out))
    print(f"clip_sim: {result.aggregate:.6f} ({result.skipped} of {len(result.stats)} "
          f"descriptors skipped, k={result.retrieval_k})")
    return 0


def cmd_accuracy(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    images = read_embedding_matrix(args.images_clip)
    dset = load_descriptor_set(args.descriptors)
    embeddings = read_embedding_matrix(args.descriptor_embeddings)
    labels = load_labels(args.labels)
    if labels.count != images.rows:
        raise ShapeMismatchError(f"{labels.count} labels for {images.rows} images")

    acc, per_class = accuracy_for_set(images, dset, embeddings, labels, strip=args.strip_class_names)

    write_csv(
        out / "per_class_accuracy.csv",
        ["class_index", "class_name", "accuracy"],
        ([i, cls, fmt(None if np.isnan(a) else float(a))]
         for i, (cls, a) in enumerate(zip(dset.classes, per_class))),
    )
    report = EvalReport(
        command="accuracy",
        config={"strip_class_names": args.strip_class_names, "threads": args.threads},
        inputs=digest_inputs([args.images_clip, args.descriptors,
                              args.descriptor_embeddings, args.labels]),
        metrics={"accuracy": acc, "images": images.rows, "classes": labels.num_classes},
        wall_time_s=time.monotonic() - t0,
    )
    report.write(_report_path(args, out))
    print(f"accuracy: {acc:.6f}")
    return 0


def cmd_track(args) -> int:
    t0 = time.monotonic()
    out = _out_dir(args)
    checkpoint_paths = _ordered_glob(args.checkpoints, "--checkpoints")
    accuracy_embs = _ordered_glob(args.checkpoint_embeddings, "--checkpoint-embeddings")
    if len(accuracy_embs) != len(checkpoint_paths):
        raise DataError(
            f"{len(checkpoint_paths)} checkpoints but {len(accuracy_embs)} embedding files"
        )
    stripped_embs: list[Path] | None = None
    if args.checkpoint_embeddings_stripped:
        stripped_embs = _ordered_glob(args.checkpoint_embeddings_stripped,
                                      "--checkpoint-embeddings-stripped")
        if len(stripped_embs) != len(checkpoint_paths):
            raise DataError(
                f"{len(checkpoint_paths)} checkpoints but {len(stripped_embs)} stripped embedding files"
            )

    images = read_embedding_matrix(args.images_clip)
    labels = load_labels(args.labels)
    corpus = open_corpus(args.corpus_captions, args.corpus_images)
    cfg = ClipSimConfig(tau=args.tau, top_fraction=args.top_fraction)

    checkpoints = []
    for i, path in enumerate(checkpoint_paths):
        checkpoints.append(
            CheckpointInput(
                iteration=_iteration_of(path, fallback=i),
                descriptor_path=path,
                accuracy_embeddings=read_embedding_matrix(accuracy_embs[i]),
                clipsim_embeddings=read_embedding_matrix(stripped_embs[i]) if stripped_embs else None,
            )
        )
    records = track_iterations(
        checkpoints, images, labels, corpus, cfg,
        strip_for_clipsim=not args.keep_class_names_clipsim,
        n_workers=args.threads,
    )

    write_csv(
        out / "series.csv",
        ["iteration", "accuracy", "clip_sim", "skipped_descriptors"],
        ([r.iteration, fmt(r.accuracy), fmt(r.clip_sim), r.skipped_descriptors] for r in records),
    )
    series = [
        {
            "iteration": r.iteration,
            "accuracy": r.accuracy,
            "clip_sim": r.clip_sim,
            "skipped_descriptors": r.skipped_descriptors,
            "descriptor_file": r.descriptor_file,
        }
        for r in records
    ]
    import json

    (out / "series.json").write_text(
        json.dumps(series, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    if not args.no_figure:
        from .plots import track_series_figure

        track_series_figure(records, out / "series.svg")

    input_paths = [*map(str, checkpoint_paths), *map(str, accuracy_embs),
                   *(map(str, stripped_embs) if stripped_embs else []),
                   args.images_clip, args.labels, args.corpus_captions, args.corpus_images]
    report = EvalReport(
        command="track",
        config={
            "tau": cfg.tau,
            "top_fraction": cfg.top_fraction,
            "strip_for_clipsim": not args.keep_class_names_clipsim,
            "threads": args.threads,
        },
        inputs=digest_inputs(input_paths),
        metrics={
            "checkpoints": len(records),
            "first_accuracy": records[0].accuracy,
            "last_accuracy": records[-1].accuracy,
            "first_clip_sim": records[0].clip_sim,
            "last_clip_sim": records[-1].clip_sim,
        },
        wall_time_s=time.monotonic() - t0,
    )
    report.write(_report_path(args, out))
    for r in records:
        print(f"iteration {r.iteration}: accuracy={r.accuracy:.6f} clip_sim={r.clip_sim:.6f}")
    return 0


def _read_lines(path: str, flag: str) -> list[str]:
    try:
        lines = [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]
    except OSError as exc:
        raise DataError(f"cannot read {flag} file {path}: {exc}") from exc
    out = [ln for ln in lines if ln]
    if not out:
        raise DataError(f"{flag} file {path} is empty")
    return out


def cmd_gen_classname(args) -> int:
    dset = class_name_prompts(_read_lines(args.classes, "--classes"))
    save_descriptor_set(dset, args.out, meta={"generator": "classname"})
    print(f"wrote {args.out} ({dset.num_classes} classes)")
    return 0


def cmd_gen_dclip(args) -> int:
    cfg = GeneratorConfig(seed=args.seed, pool_size=args.pool_size)
    dset = dclip_randomized(
        _read_lines(args.classes, "--classes"),
        _read_lines(args.pool, "--pool"),
        cfg,
    )
    save_descriptor_set(dset, args.out, meta=cfg.meta("dclip"))
    print(f"wrote {args.out} ({dset.num_classes} classes x {cfg.pool_size} descriptors)")
    return 0


def cmd_gen_waffle(args) -> int:
    concepts = _read_lines(args.concepts, "--concepts") if args.concepts else []
    cfg = GeneratorConfig(
        seed=args.seed,
        tokens_per_class=args.tokens_per_class,
        token_length=args.token_length,
        concept_list=concepts,
    )
    dset = waffle_randomized(_read_lines(args.classes, "--classes"), cfg)
    save_descriptor_set(dset, args.out, meta=cfg.meta("waffle"))
    print(f"wrote {args.out} ({dset.num_classes} classes)")
    return 0


def cmd_pool(args) -> int:
    dset = load_descriptor_set(args.descriptors)
    pooled = _pooled_descriptors(dset, args.keep_class_names, not args.no_dedup)
    text = "\n".join(pooled.descriptors) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.out} ({len(pooled.descriptors)} pooled descriptors)")
    else:
        sys.stdout.write(text)
    return 0


def _ordered_glob(pattern: str, flag: str) -> list[Path]:
    paths = [Path(p) for p in globmod.glob(pattern)]
    if not paths:
        raise ConfigError(f"{flag} glob {pattern!r} matched no files")
    return sorted(paths, key=lambda p: (_iteration_of(p, fallback=-1), p.name))


def _iteration_of(path: Path, fallback: int) -> int:
    nums = re.findall(r"\d+", path.stem)
    return int(nums[-1]) if nums else fallback


def _json_float(x: float) -> float | None:
    return None if np.isnan(x) else float(x)


if __name__ == "__main__":
    sys.exit(main())
