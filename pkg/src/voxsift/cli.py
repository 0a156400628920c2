"""Command-line front end: ``voxsift <subcommand> ...``.

Every stage reads and writes plain files. Outputs that are not JSON get a
``<out>.meta.json`` sidecar holding the effective config and its digest;
JSON outputs embed the same block. Failures print one line
``ERROR:<code>: message`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .codebook import (
    BowHistogram,
    kmeans,
    match_keypoints,
    quantize,
    read_codebook_csv,
    read_index_json,
    write_codebook_csv,
    write_index_json,
)
from .config import ConfigError, PipelineConfig, load_config
from .corpus import FAMILIES, generate_corpus, read_manifest
from .descriptor import read_descriptors_csv, write_descriptors_csv
from .keypoints import write_keypoints_csv
from .mesh_io import DegenerateMeshError, MeshParseError, load_mesh
from .pipeline import ModelFeatures, detect_keypoints, features_from_grid, voxelize_mesh
from .retrieval import (
    REFERENCE_ROWS,
    evaluate_corpus,
    is_mcgill_like,
    rank,
    write_pr_csv,
    write_report_json,
    write_summary_csv,
)
from .voxelizer import NonWatertightError, VoxelGrid, read_grid, write_grid

log = logging.getLogger("voxsift")

EXIT_CODES = {"USAGE": 2, "IO": 3, "CONFIG": 4, "FORMAT": 5, "MESH": 6, "INPUT": 7}


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("USAGE", message)


# -- shared helpers ---------------------------------------------------------


def _config(args) -> PipelineConfig:
    try:
        config = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            config = config.with_overrides(seed=args.seed)
        if getattr(args, "ratio", None) is not None:
            config = config.with_overrides(ratio=args.ratio)
    except FileNotFoundError as exc:
        raise CliError("IO", f"config file not found: {exc.filename}") from None
    except (ConfigError, ValueError) as exc:
        raise CliError("CONFIG", str(exc)) from None
    return config


def _meta(config: PipelineConfig, command: str) -> dict:
    return {"tool": "voxsift", "version": __version__, "command": command, "config": config.to_dict(), "config_digest": config.digest()}


def _write_sidecar(out: Path, config: PipelineConfig, command: str, extra: dict | None = None) -> None:
    doc = _meta(config, command)
    if extra:
        doc.update(extra)
    with open(f"{out}.meta.json", "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _out_path(args) -> Path:
    if not args.out:
        raise CliError("USAGE", "--out is required")
    out = Path(args.out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CliError("IO", f"no such file: {p}")
    return p


def _load_mesh(path):
    p = _require_file(path)
    try:
        return load_mesh(p)
    except MeshParseError as exc:
        raise CliError("FORMAT", str(exc)) from None
    except ValueError as exc:
        raise CliError("FORMAT", f"{p}: {exc}") from None
    except OSError as exc:
        raise CliError("IO", str(exc)) from None


def _load_grid(path, config: PipelineConfig) -> VoxelGrid:
    """A VOXG occupancy grid as-is, or a mesh voxelized under ``config``."""
    p = _require_file(path)
    if p.suffix.lower() == ".voxg":
        try:
            return read_grid(p)
        except ValueError as exc:
            raise CliError("FORMAT", f"{p}: {exc}") from None
    mesh = _load_mesh(p)
    try:
        return voxelize_mesh(mesh, config)
    except (NonWatertightError, DegenerateMeshError) as exc:
        raise CliError("MESH", f"{p}: {exc}") from None


def _features(path, config: PipelineConfig) -> ModelFeatures:
    return features_from_grid(_load_grid(path, config), config)


def _manifest(args):
    if not args.manifest:
        raise CliError("USAGE", "--manifest is required")
    p = _require_file(args.manifest)
    try:
        manifest = read_manifest(p)
    except (ValueError, KeyError) as exc:
        raise CliError("FORMAT", str(exc)) from None
    if not manifest.entries:
        raise CliError("INPUT", f"{p}: manifest lists no models")
    for e in manifest.entries:
        _require_file(e.path)
    return manifest


def _corpus_features(manifest, config: PipelineConfig, threads: int) -> dict[str, np.ndarray]:
    """Descriptor matrix per model id, in manifest order; threads never change the result."""
    work = lambda e: _features(e.path, config).matrix  # noqa: E731
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            mats = list(pool.map(work, manifest.entries))
    else:
        mats = [work(e) for e in manifest.entries]
    feats = {}
    for e, m in zip(manifest.entries, mats):
        log.info("%s: %d descriptors", e.model_id, len(m))
        feats[e.model_id] = m
    return feats


def _train_codebook(feats: dict[str, np.ndarray], config: PipelineConfig, threads: int):
    nonempty = [m for m in feats.values() if len(m)]
    if not nonempty:
        raise CliError("INPUT", "no descriptors in the corpus; cannot build a codebook")
    x = np.vstack(nonempty)
    k = min(config.codebook_k, len(x))
    if k < config.codebook_k:
        log.warning("only %d descriptors; codebook size reduced from %d to %d", len(x), config.codebook_k, k)
    return kmeans(x, k, config.codebook_iterations, config.seed, threads)


def _histograms(feats, codebook, config) -> list[BowHistogram]:
    return [quantize(m if len(m) else np.zeros((0, codebook.dim)), codebook, mid, config.normalization) for mid, m in feats.items()]


# -- subcommands ------------------------------------------------------------


def cmd_voxelize(args):
    config = _config(args)
    out = _out_path(args)
    grid = _load_grid(args.input, config)
    write_grid(out, grid)
    _write_sidecar(out, config, "voxelize", {"occupied": grid.n_occupied, "repaired_columns": grid.repaired_columns})
    print(f"{out}: {grid.n_occupied} occupied voxels")


def cmd_keypoints(args):
    config = _config(args)
    out = _out_path(args)
    grid = _load_grid(args.input, config)
    _, keypoints, flagged = detect_keypoints(grid, config)
    write_keypoints_csv(out, keypoints)
    _write_sidecar(out, config, "keypoints", {"degenerate_normals": len(flagged)})
    print(f"{out}: {len(keypoints)} keypoints")


def cmd_describe(args):
    config = _config(args)
    out = _out_path(args)
    feats = _features(args.input, config)
    write_descriptors_csv(out, feats.descriptors, config.descriptor_options().length)
    _write_sidecar(out, config, "describe", {"skipped_keypoints": len(feats.skipped)})
    print(f"{out}: {len(feats.descriptors)} descriptors")


def _read_descriptor_files(paths, config) -> dict[str, np.ndarray]:
    feats = {}
    length = config.descriptor_options().length
    for path in paths:
        p = _require_file(path)
        try:
            _, mat = read_descriptors_csv(p)
        except ValueError as exc:
            raise CliError("FORMAT", str(exc)) from None
        if len(mat) and mat.shape[1] != length:
            raise CliError("FORMAT", f"{p}: descriptor length {mat.shape[1]} does not match config ({length})")
        feats[str(p)] = mat
    return feats


def cmd_codebook(args):
    config = _config(args)
    out = _out_path(args)
    if args.descriptors:
        feats = _read_descriptor_files(args.descriptors, config)
    else:
        feats = _corpus_features(_manifest(args), config, args.threads)
    cb = _train_codebook(feats, config, args.threads)
    write_codebook_csv(out, cb)
    _write_sidecar(out, config, "codebook", {"n_descriptors": int(sum(len(m) for m in feats.values())), "sse": list(cb.sse_history)})
    print(f"{out}: {cb.k} words from {sum(len(m) for m in feats.values())} descriptors")


def _read_codebook(path, config):
    p = _require_file(path)
    try:
        cb = read_codebook_csv(p)
    except ValueError as exc:
        raise CliError("FORMAT", str(exc)) from None
    if cb.dim != config.descriptor_options().length:
        raise CliError("FORMAT", f"{p}: codebook dimension {cb.dim} does not match config")
    return cb


def cmd_index(args):
    config = _config(args)
    out = _out_path(args)
    if not args.codebook:
        raise CliError("USAGE", "--codebook is required")
    cb = _read_codebook(args.codebook, config)
    manifest = _manifest(args)
    feats = _corpus_features(manifest, config, args.threads)
    hists = _histograms(feats, cb, config)
    write_index_json(out, hists, manifest.labels, _meta(config, "index"))
    print(f"{out}: {len(hists)} models")


def cmd_query(args):
    config = _config(args)
    p = _require_file(args.index)
    try:
        hists, labels = read_index_json(p)
    except (ValueError, KeyError) as exc:
        raise CliError("FORMAT", f"{p}: {exc}") from None
    by_id = {h.model_id: h for h in hists}
    if args.model in by_id:
        query = by_id[args.model]
    else:
        if not args.codebook:
            raise CliError("USAGE", f"{args.model!r} is not in the index; pass --codebook to query a mesh file")
        cb = _read_codebook(args.codebook, config)
        mat = _features(args.model, config).matrix
        query = quantize(mat if len(mat) else np.zeros((0, cb.dim)), cb, str(args.model), config.normalization)
    try:
        ranked = rank(query, hists)
    except ValueError as exc:
        raise CliError("FORMAT", str(exc)) from None
    rows = ranked.entries[: args.top] if args.top else ranked.entries
    lines = ["rank,model_id,class,distance"]
    lines += [f"{i},{m},{labels.get(m, '')},{d:.9g}" for i, (m, d) in enumerate(rows, start=1)]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _out_path(args)
        out.write_text(text)
        _write_sidecar(out, config, "query", {"query": str(args.model)})
    sys.stdout.write(text)


def cmd_evaluate(args):
    config = _config(args)
    out = _out_path(args)
    manifest = _manifest(args)
    feats = _corpus_features(manifest, config, args.threads)
    if args.codebook:
        cb = _read_codebook(args.codebook, config)
    else:
        cb = _train_codebook(feats, config, args.threads)
    hists = _histograms(feats, cb, config)
    params = {
        "codebook_k": cb.k,
        "n_descriptors": int(sum(len(m) for m in feats.values())),
        "descriptors_per_model": {m: len(v) for m, v in feats.items()},
        "empty_models": sorted(h.model_id for h in hists if h.empty),
    }
    try:
        report = evaluate_corpus(hists, manifest.labels, params)
    except ValueError as exc:
        raise CliError("INPUT", str(exc)) from None
    extra = _meta(config, "evaluate")
    rows = {"voxsift": report.mean}
    if is_mcgill_like(manifest.labels):
        rows.update(REFERENCE_ROWS)
        extra["reference_rows"] = REFERENCE_ROWS
    write_report_json(out, report, extra)
    stem = out.with_suffix("")
    write_summary_csv(f"{stem}.summary.csv", rows)
    write_pr_csv(f"{stem}.pr.csv", report.mean_pr)
    for name in (f"{stem}.summary.csv", f"{stem}.pr.csv"):
        _write_sidecar(Path(name), config, "evaluate")
    m = report.mean
    print(f"NN={m['NN']:.3f} FT={m['FT']:.3f} ST={m['ST']:.3f} DCG={m['DCG']:.3f} ({len(report.per_query)} queries)")


def cmd_match(args):
    config = _config(args)
    out = _out_path(args)
    fa, fb = _features(args.a, config), _features(args.b, config)
    try:
        matches = match_keypoints(fa.matrix, fb.matrix, config.ratio)
    except ValueError as exc:
        raise CliError("INPUT", str(exc)) from None
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ai", "bi", "d1", "d2"])
        for m in matches:
            w.writerow([m.a, m.b, f"{m.d1:.9g}", f"{m.d2:.9g}"])
    if args.keypoints:
        for path, f in ((f"{out}.a.keypoints.csv", fa), (f"{out}.b.keypoints.csv", fb)):
            write_keypoints_csv(path, [d.keypoint for d in f.descriptors])
    _write_sidecar(out, config, "match", {"a": str(args.a), "b": str(args.b), "n_a": len(fa.descriptors), "n_b": len(fb.descriptors)})
    print(f"{out}: {len(matches)} matches ({len(fa.descriptors)} x {len(fb.descriptors)} descriptors)")


def cmd_gen_corpus(args):
    config = _config(args)
    out = _out_path(args)
    seed = args.seed if args.seed is not None else config.seed
    try:
        manifest = generate_corpus(args.classes, args.per_class, seed, out)
    except ValueError as exc:
        raise CliError("INPUT", str(exc)) from None
    _write_sidecar(out / "manifest.csv", config, "gen-corpus", {"seed": seed, "per_class": args.per_class})
    print(f"{out / 'manifest.csv'}: {len(manifest.entries)} models")


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="TOML config file (defaults are used when omitted)")
    common.add_argument("--out", help="output path")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads (speed only)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = _Parser(prog="voxsift", description="Volumetric keypoint features and bag-of-words shape retrieval.")
    parser.add_argument("--version", action="version", version=f"voxsift {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("voxelize", parents=[common], help="mesh -> VOXG occupancy grid")
    p.add_argument("input")
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("keypoints", parents=[common], help="mesh or grid -> keypoint CSV")
    p.add_argument("input")
    p.set_defaults(func=cmd_keypoints)

    p = sub.add_parser("describe", parents=[common], help="mesh or grid -> descriptor CSV")
    p.add_argument("input")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("codebook", parents=[common], help="manifest or descriptor CSVs -> codebook CSV")
    p.add_argument("--manifest")
    p.add_argument("descriptors", nargs="*", help="descriptor CSV files (instead of --manifest)")
    p.set_defaults(func=cmd_codebook)

    p = sub.add_parser("index", parents=[common], help="manifest + codebook -> histogram index JSON")
    p.add_argument("--manifest")
    p.add_argument("--codebook")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", parents=[common], help="rank an indexed model or a mesh against an index")
    p.add_argument("model", help="model id in the index, or a mesh/grid path")
    p.add_argument("--index", required=True)
    p.add_argument("--codebook")
    p.add_argument("--top", type=int, default=0)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", parents=[common], help="full retrieval evaluation over a manifest")
    p.add_argument("--manifest")
    p.add_argument("--codebook", help="reuse a trained codebook instead of training one")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("match", parents=[common], help="ratio-test keypoint matching between two models")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--ratio", type=float)
    p.add_argument("--keypoints", action="store_true", help="also write the matched models' keypoints")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("gen-corpus", parents=[common], help="write the seeded synthetic corpus")
    p.add_argument("--classes", nargs="+", default=list(FAMILIES))
    p.add_argument("--per-class", type=int, default=8)
    p.set_defaults(func=cmd_gen_corpus)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s:%(name)s: %(message)s",
        )
        if args.threads < 1:
            raise CliError("USAGE", "--threads must be at least 1")
        args.func(args)
    except CliError as exc:
        print(f"ERROR:{exc.code}: {exc}", file=sys.stderr)
        return EXIT_CODES[exc.code]
    except OSError as exc:
        print(f"ERROR:IO: {exc}", file=sys.stderr)
        return EXIT_CODES["IO"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
