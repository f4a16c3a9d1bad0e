"""Command-line driver for the distillation pipeline.

Stages write into ``<run.out_dir>/<stage>/`` and each stage directory gets a
copy of the effective config as ``config.ini``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import dataclasses
import logging
import os
import statistics
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, config as cfgmod, corpus, curation, diffusion, features, imgmath, srtrain
from .config import ConfigError, PipelineConfig

log = logging.getLogger("srdistill")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
THREADS_ENV = "SRDISTILL_THREADS"
LOSS_FIELDS = ("step", "L_simple", "L_r", "L_d", "L_SR", "total")
RESULT_FIELDS = ("dataset_type", "n_images", "seed", "psnr", "ssim")


class DataError(RuntimeError):
    pass


# --------------------------------------------------------------------------- helpers


def _stage_dir(cfg: PipelineConfig, stage: str) -> Path:
    d = cfg.out_dir / stage
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.ini").write_text(cfg.to_text(), encoding="utf-8")
    return d


def _image_files(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise DataError(f"image directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in imgmath.IMAGE_SUFFIXES)
    if not files:
        raise DataError(f"no images in {directory}")
    return files


def split_files(cfg: PipelineConfig) -> tuple[list[Path], list[Path]]:
    """Train/test split by sorted filename; the last ``data.holdout`` files are test."""
    files = _image_files(Path(cfg.data.image_dir))
    if cfg.data.holdout >= len(files):
        raise DataError(f"data.holdout={cfg.data.holdout} leaves no training images ({len(files)} found)")
    return files[:-cfg.data.holdout], files[-cfg.data.holdout:]


def load_images(paths: Sequence[Path]) -> tuple[dict[str, np.ndarray], list[Path]]:
    images, skipped = {}, []
    for p in paths:
        try:
            images[p.stem] = imgmath.load_image(p)
        except (OSError, imgmath.ImageError) as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
            skipped.append(p)
    return images, skipped


def _read_summary(path: Path) -> dict[str, str]:
    if not path.exists():
        raise DataError(f"{path} missing; run `select` first")
    return dict(line.split("=", 1) for line in path.read_text().splitlines() if "=" in line)


def _select_manifest(cfg: PipelineConfig, override: Optional[str]) -> Path:
    return Path(override) if override else cfg.out_dir / "select" / "manifest.csv"


def _cluster_manifest(cfg: PipelineConfig, override: Optional[str]) -> Path:
    return Path(override) if override else cfg.out_dir / "cluster" / "manifest.csv"


def _checkpoint(cfg: PipelineConfig, override: Optional[str]) -> Path:
    return Path(override) if override else cfg.out_dir / "distill" / "checkpoint.dksr"


def _read_manifest(path: Path) -> list[curation.PatchRecord]:
    if not path.exists():
        raise DataError(f"manifest {path} not found")
    return curation.read_manifest(path)


def _crops(records, images) -> np.ndarray:
    missing = sorted({r.image_id for r in records} - images.keys())
    if missing:
        raise DataError(f"manifest references unknown images: {', '.join(missing[:5])}")
    return np.stack([r.crop(images[r.image_id]) for r in records])


# --------------------------------------------------------------------------- subcommands


def cmd_corpus(cfg: PipelineConfig, args) -> int:
    out = Path(args.out or cfg.data.image_dir)
    paths = corpus.write_corpus(out, cfg.corpus.n_images, cfg.corpus.image_size, cfg.corpus.seed)
    print(f"wrote {len(paths)} images to {out}")
    return EXIT_OK


def cmd_select(cfg: PipelineConfig, args) -> int:
    train_files, _ = split_files(cfg)
    images, skipped = load_images(train_files)
    if not images:
        raise DataError("no readable training images")
    s = cfg.select
    records = []
    for image_id, img in images.items():
        h, w = img.shape[:2]
        if s.patch_size > min(h, w):
            log.warning("image %s (%dx%d) smaller than patch size, skipped", image_id, h, w)
            continue
        records += curation.extract_patches(img, s.patch_size, s.stride, image_id)
    if not records:
        raise DataError("no patches could be extracted")
    records = curation.score_records(records, images, kernel_a=s.kernel_a, antialias=s.antialias)
    ccfg = curation.CurationConfig(s.patch_size, s.stride, s.threshold_mode, s.threshold_db)
    threshold = curation.resolve_threshold(records, ccfg)
    kept = curation.filter_patches(records, ccfg)
    out = _stage_dir(cfg, "select")
    curation.write_manifest(out / "manifest.csv", kept)
    (out / "summary.txt").write_text(
        f"total={len(records)}\nkept={len(kept)}\nthreshold_db={threshold!r}\n"
        f"images={len(images)}\nskipped={len(skipped)}\n")
    print(f"kept {len(kept)}/{len(records)} patches (threshold {threshold:.4f} dB); "
          f"{len(skipped)} unreadable images skipped")
    return EXIT_OK


def cmd_cluster(cfg: PipelineConfig, args) -> int:
    records = _read_manifest(_select_manifest(cfg, args.manifest))
    k = cfg.cluster.k
    if len(records) < k:
        raise DataError(f"{len(records)} patches is fewer than k={k}")
    if cfg.cluster.features == "builtin":
        train_files, _ = split_files(cfg)
        images, _ = load_images(train_files)
        vectors = features.feature_matrix(_crops(records, images))
    else:
        vectors = np.stack(features.load_features(cfg.cluster.features))
        if len(vectors) != len(records):
            raise DataError(f"feature file has {len(vectors)} rows, manifest has {len(records)}")
    result = features.kmeans(vectors, k, seed=cfgmod.seed_for(cfg.run.seed, "cluster"),
                             max_iter=cfg.cluster.max_iter, n_restart=cfg.cluster.n_restart)
    out = _stage_dir(cfg, "cluster")
    labelled = [dataclasses.replace(r, cluster_id=int(c)) for r, c in zip(records, result.labels)]
    curation.write_manifest(out / "manifest.csv", labelled)
    sizes = np.bincount(result.labels, minlength=k)
    print(f"clustered {len(records)} patches into k={k} (inertia {result.inertia:.6g}, sizes {sizes.tolist()})")
    return EXIT_OK


def cmd_distill(cfg: PipelineConfig, args) -> int:
    records = _read_manifest(_cluster_manifest(cfg, args.manifest))
    if not records or any(r.cluster_id is None for r in records):
        raise DataError("distill needs a clustered manifest (run `cluster` first)")
    if any(r.size != cfg.select.patch_size for r in records):
        raise DataError("manifest patch size differs from select.patch_size")
    train_files, _ = split_files(cfg)
    images, _ = load_images(train_files)
    patches = _crops(records, images)
    labels = np.array([r.cluster_id for r in records], dtype=np.int64)
    if labels.max() >= cfg.cluster.k:
        raise DataError(f"cluster id {labels.max()} outside [0, {cfg.cluster.k})")

    dcfg = cfg.diffusion_config()
    trainer = diffusion.Trainer(dcfg, cfgmod.rng_for(cfg.run.seed, "distill"))
    batch_rng = cfgmod.rng_for(cfg.run.seed, "distill/batches")
    out = _stage_dir(cfg, "distill")
    t0 = time.perf_counter()
    with open(out / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOSS_FIELDS)
        for _ in range(cfg.distill.steps):
            idx = batch_rng.integers(len(patches), size=dcfg.batch_size)
            res = trainer.step(patches[idx], labels[idx])
            writer.writerow([res.step, *(repr(v) for v in res.parts.as_tuple()), repr(res.total)])
            fh.flush()
            if res.step % 100 == 0:
                log.info("distill step %d total %.5f (%.1fs)", res.step, res.total, time.perf_counter() - t0)
    diffusion.save_checkpoint(out / "checkpoint.dksr", trainer.theta, dcfg.to_text())
    print(f"trained {cfg.distill.steps} steps on {len(patches)} patches; checkpoint {out / 'checkpoint.dksr'}")
    return EXIT_OK


def sample_distilled(model, theta, sched, n: int, k: int, seed: int, steps: int,
                     clip: bool, directory: Path) -> list[np.ndarray]:
    """Sample ``n`` images round-robin over ``k`` classes, write them, return the quantized images."""
    directory.mkdir(parents=True, exist_ok=True)
    samples = diffusion.sample(model, theta, n, list(range(k)), sched, steps, seed, clip)
    images = []
    with open(directory / "manifest.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("file", "class", "seed"))
        for s in samples:
            name = f"distilled_{s.label}_{s.index}.ppm"
            imgmath.write_ppm(directory / name, s.image)
            writer.writerow((name, s.label, seed))
            images.append(imgmath.quantize(s.image))
    return images


def cmd_sample_train(cfg: PipelineConfig, args) -> int:
    ckpt = _checkpoint(cfg, args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint {ckpt} not found")
    theta, stored = diffusion.load_checkpoint(ckpt)
    dcfg = diffusion.DiffusionConfig.from_text(stored)
    model = diffusion.Denoiser(dcfg.denoiser_config())
    if theta.size != model.n_params:
        raise diffusion.CheckpointError(f"{ckpt}: {theta.size} parameters, model expects {model.n_params}")
    sched = dcfg.schedule()

    train_files, test_files = split_files(cfg)
    train_images, _ = load_images(train_files)
    test_images, _ = load_images(test_files)
    if not train_images or not test_images:
        raise DataError("empty train or test split")
    train_list = list(train_images.values())
    test_pairs = srtrain.make_pairs(list(test_images.values()), cfg.select.kernel_a, cfg.select.antialias)
    threshold = float(_read_summary(cfg.out_dir / "select" / "summary.txt")["threshold_db"])
    size = dcfg.image_size
    sr_cfg = cfg.sr_config()

    out = _stage_dir(cfg, "sample_train")
    rows = []
    t0 = time.perf_counter()
    for n in cfg.sample.sizes:
        for idx in range(cfg.sr.n_seeds):
            for strategy in cfg.sr.strategies:
                crop_ss, train_ss = cfgmod.substream(cfg.run.seed, f"sr/{strategy}/{idx}").spawn(2)
                if strategy == "distilled":
                    hr = sample_distilled(model, theta, sched, n, dcfg.n_classes,
                                          cfgmod.seed_for(cfg.run.seed, f"sample/{n}/{idx}"),
                                          cfg.sample.ddim_steps, cfg.sample.clip_denoised,
                                          out / "distilled" / f"n{n}_seed{idx}")
                elif strategy == "random_crop":
                    hr = srtrain.baseline_random_crop(train_list, n, size, crop_ss)
                else:
                    hr = srtrain.baseline_threshold_crop(train_list, n, size, crop_ss, threshold,
                                                         cfg.sr.budget_factor, cfg.select.kernel_a,
                                                         cfg.select.antialias)
                pairs = srtrain.make_pairs(hr, cfg.select.kernel_a, cfg.select.antialias)
                params = srtrain.train_sr(pairs, cfg.sr.epochs, train_ss, sr_cfg)
                p, s = srtrain.evaluate(params, test_pairs)
                rows.append((strategy, n, idx, p, s))
                log.info("%s n=%d seed=%d psnr %.4f ssim %.4f (%.1fs)", strategy, n, idx, p, s,
                         time.perf_counter() - t0)
    with open(out / "results.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for strategy, n, idx, p, s in rows:
            writer.writerow((strategy, n, idx, f"{p:.6f}", f"{s:.6f}"))
    bic = srtrain.bicubic_baseline(test_pairs, cfg.select.kernel_a)
    (out / "bicubic.txt").write_text(f"psnr={bic[0]:.6f}\nssim={bic[1]:.6f}\n")
    print(f"wrote {len(rows)} result rows to {out / 'results.csv'} (bicubic {bic[0]:.3f} dB)")
    return EXIT_OK


def read_results(paths: Sequence[Path]) -> list[dict]:
    rows = []
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
                raise DataError(f"{path}: expected header {','.join(RESULT_FIELDS)}")
            for row in reader:
                rows.append({"dataset_type": row["dataset_type"], "n_images": int(row["n_images"]),
                             "seed": int(row["seed"]), "psnr": float(row["psnr"]),
                             "ssim": float(row["ssim"])})
    return rows


def summarize(rows: Sequence[dict]) -> list[tuple]:
    """(dataset_type, n_images, count, mean psnr, std psnr, mean ssim) per cell."""
    cells: dict[tuple, list[dict]] = {}
    for r in rows:
        cells.setdefault((r["dataset_type"], r["n_images"]), []).append(r)
    order = {s: i for i, s in enumerate(cfgmod.STRATEGIES)}
    table = []
    for (kind, n), group in sorted(cells.items(), key=lambda kv: (kv[0][1], order.get(kv[0][0], 99), kv[0][0])):
        ps = [g["psnr"] for g in group]
        table.append((kind, n, len(group), statistics.fmean(ps),
                      statistics.stdev(ps) if len(ps) > 1 else 0.0,
                      statistics.fmean(g["ssim"] for g in group)))
    return table


def cmd_report(cfg: PipelineConfig, args) -> int:
    paths = [Path(p) for p in args.results] or [cfg.out_dir / "sample_train" / "results.csv"]
    for p in paths:
        if not p.exists():
            raise DataError(f"results file {p} not found")
    table = summarize(read_results(paths))
    lines = [f"{'dataset':<16}{'n':>5}{'runs':>6}{'PSNR':>10}{'+-':>8}{'SSIM':>9}"]
    for kind, n, count, mp, sp, ms in table:
        lines.append(f"{kind:<16}{n:>5}{count:>6}{mp:>10.3f}{sp:>8.3f}{ms:>9.4f}")
    text = "\n".join(lines) + "\n"
    out = _stage_dir(cfg, "report")
    (out / "report.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "corpus": cmd_corpus,
    "select": cmd_select,
    "cluster": cmd_cluster,
    "distill": cmd_distill,
    "sample-train": cmd_sample_train,
    "report": cmd_report,
}


# --------------------------------------------------------------------------- entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="INI config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    common.add_argument("--seed", type=int, help="root seed (same as --set run.seed=N)")
    common.add_argument("--out-dir", help="output root (same as --set run.out_dir=PATH)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="srdistill", description="Distil a small SR training set.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("corpus", parents=[common], help="write the procedural image corpus")
    p.add_argument("--out", help="directory (default data.image_dir)")
    sub.add_parser("select", parents=[common], help="score and filter patches")
    p = sub.add_parser("cluster", parents=[common], help="pseudo-label selected patches")
    p.add_argument("--manifest", help="selection manifest (default <out>/select/manifest.csv)")
    p = sub.add_parser("distill", parents=[common], help="train the diffusion model")
    p.add_argument("--manifest", help="clustered manifest (default <out>/cluster/manifest.csv)")
    p = sub.add_parser("sample-train", parents=[common], help="sample, train SR per strategy, evaluate")
    p.add_argument("--checkpoint", help="checkpoint (default <out>/distill/checkpoint.dksr)")
    p = sub.add_parser("report", parents=[common], help="summarize results CSVs")
    p.add_argument("results", nargs="*", help="results CSVs (default <out>/sample_train/results.csv)")
    return parser


def _thread_limit():
    raw = os.environ.get(THREADS_ENV)
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(THREADS_ENV, f"must be a positive integer, got {raw!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.out_dir is not None:
        overrides.append(f"run.out_dir={args.out_dir}")
    try:
        cfg = cfgmod.load(Path(args.config) if args.config else None, overrides)
        logging.basicConfig(level=logging.DEBUG if args.verbose else cfg.run.log_level.upper(),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        with _thread_limit():
            return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except diffusion.DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except FloatingPointError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, OSError, imgmath.ImageError, curation.ManifestError, features.FeatureFileError,
            diffusion.CheckpointError, srtrain.BudgetExhausted) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
