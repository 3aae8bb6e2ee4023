"""Command-line entry point.

Subcommands: analyze (full pipeline), segment (debug label maps), score
(semantic profile only), attack (robustness curves), validate-config.
All read one structured JSON config plus flag overrides; --seed pins
determinism and --mock forces every backend onto deterministic fixtures.
Exit codes: 0 success, 1 all images failed, 2 bad config/usage.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import accuracy_curve
from .backends import ReferenceClassifier
from .config import ConfigError, PipelineConfig, build_backends, load_config
from .pipeline import category_matrix, prepare_context, run_pipeline
from .raster import RasterError, load_image, save_png
from .scoring import load_taxonomy
from .segmentation import label_map_png_data, slic_segment
from .raster import ImageRaster

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ALL_FAILED = 1
EXIT_USAGE = 2


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "out", None):
        cfg.output_dir = args.out
    if getattr(args, "workers", None):
        cfg.workers = args.workers
    if getattr(args, "style", None):
        cfg.report_style = args.style
    if getattr(args, "mock", False):
        cfg.mock = True
    return cfg


def _cmd_analyze(args) -> int:
    cfg = _load_cfg(args)
    outcomes = run_pipeline(args.images, cfg)
    failed = [o for o in outcomes if not o.ok]
    for o in failed:
        print(f"error: {o.image}: {o.error}", file=sys.stderr)
    for o in outcomes:
        if o.ok:
            print(f"{o.image} -> {o.report_path}")
    if failed and len(failed) == len(outcomes):
        return EXIT_ALL_FAILED
    return EXIT_OK


def _cmd_segment(args) -> int:
    img = load_image(args.image)
    labels = slic_segment(img, args.k, args.compactness, args.max_iters)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.image).stem
    save_png(ImageRaster(label_map_png_data(labels)), out_dir / f"{stem}-labels.png")
    n = int(labels.max()) + 1
    table = []
    for v in range(n):
        ys, xs = np.nonzero(labels == v)
        table.append(
            {
                "label": v,
                "pixel_count": int(ys.size),
                "centroid": [round(float(xs.mean()), 3), round(float(ys.mean()), 3)],
            }
        )
    (out_dir / f"{stem}-regions.json").write_text(
        json.dumps({"k_requested": args.k, "regions": table}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"{args.image}: {n} regions -> {out_dir}")
    return EXIT_OK


def _cmd_score(args) -> int:
    cfg = _load_cfg(args)
    backends = build_backends(cfg)
    taxonomy = load_taxonomy(Path(cfg.scoring.taxonomy_path) if cfg.scoring.taxonomy_path else None)
    cat_matrix = category_matrix(taxonomy, backends.embedder)
    raster = load_image(args.image)
    ctx = prepare_context(Path(args.image).stem, raster, cfg, backends, taxonomy, cat_matrix)
    payload = ctx.profile.as_dict()
    payload["triggered"] = ctx.triggered
    payload["region_voting_prior"] = {k: round(v, 6) for k, v in sorted(ctx.region_votes.items())}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def _cmd_attack(args) -> int:
    cfg = _load_cfg(args)
    model = ReferenceClassifier(seed=cfg.seed)
    images, labels, names = [], [], []
    for path in args.images:
        img = load_image(path)
        images.append(img)
        labels.append(model.predict(img))  # clean prediction stands in for ground truth
        names.append(Path(path).name)
    epsilons = [float(e) for e in args.eps.split(",")]
    rows = accuracy_curve(images, labels, args.kind, epsilons, model, steps=args.steps, seed=cfg.seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"robustness-{args.kind}.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epsilon", "accuracy", "mean_linf"])
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    json_path = out_dir / f"robustness-{args.kind}.json"
    json_path.write_text(
        json.dumps({"kind": args.kind, "images": names, "curve": rows}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(f"robustness curve -> {csv_path}")
    return EXIT_OK


def _cmd_validate_config(args) -> int:
    load_config(args.config)
    print(f"{args.config}: OK")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthscope", description=__doc__)
    parser.add_argument("--version", action="version", version=f"synthscope {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="run the full forensic pipeline over images")
    p.add_argument("images", nargs="+")
    p.add_argument("--config")
    p.add_argument("--mock", action="store_true", help="force all backends to deterministic fixtures")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--style", choices=("technical", "human_friendly", "accessibility"))
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("segment", help="emit debug superpixel label maps")
    p.add_argument("--image", required=True)
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--compactness", type=float, default=10.0)
    p.add_argument("--max-iters", type=int, default=10)
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("score", help="emit the semantic profile for one image")
    p.add_argument("--image", required=True)
    p.add_argument("--config")
    p.add_argument("--mock", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("attack", help="robustness curves against the reference classifier")
    p.add_argument("images", nargs="+")
    p.add_argument("--kind", default="pgd", choices=("fgsm", "pgd", "square", "apgd_ce"))
    p.add_argument("--eps", default="0.0314", help="comma-separated epsilon list")
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.add_argument("--out", default="out")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("validate-config", help="check a config file and exit")
    p.add_argument("--config", required=True)
    p.set_defaults(func=_cmd_validate_config)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RasterError as exc:
        print(f"image error: {exc}", file=sys.stderr)
        return EXIT_ALL_FAILED


if __name__ == "__main__":
    sys.exit(main())
