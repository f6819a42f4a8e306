"""``panfuse`` command line: crop planning, fusion, evaluation, loss checks,
image sampling, and visualization.

Exit codes: 0 success, 1 partial failure in a batch, 2 configuration or
argument error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig, config_to_dict, default_config, load_config
from .core import (
    DenseMap,
    FeatureVector,
    LabelSpec,
    PanopticMap,
    TensorFormatError,
    ValidationError,
    read_tensor,
    write_tensor,
)
from .losses import LossConfig, binary_ce, bootstrapped_ce
from .metrics import EvalReport, merge_reports, miou, panoptic_quality
from .refine import FuseError, fuse_detailed
from .sampler import SamplerConfig, select_neighbors
from .tiler import Crop, CropPlan, CropPrediction, merge_crops, plan_crops
from .viz import load_palette, render_panoptic, save_png

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_CONFIG = 2


def _log_event(**fields) -> None:
    print(json.dumps(fields, sort_keys=True), file=sys.stderr)


def _parse_scales(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError as exc:
        raise ConfigError(f"bad scale list {text!r}") from exc


def cmd_plan(args) -> int:
    plan = plan_crops(args.width, args.height, _parse_scales(args.scales), args.overlap)
    payload = json.dumps(plan.to_json_obj(), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def _load_pipeline_config(args) -> PipelineConfig:
    return load_config(args.config) if getattr(args, "config", None) else default_config()


def fuse_one(item: dict, cfg: PipelineConfig, labels: LabelSpec) -> dict:
    """Process one manifest entry; returns a timing record."""
    start = time.perf_counter()
    probs = read_tensor(item["probs"])
    soft = read_tensor(item["boundary"])
    mask = None
    if item.get("mask"):
        mask = read_tensor(item["mask"]).plane().astype(bool)
    report = fuse_detailed(
        probs,
        soft,
        labels,
        cfg.boundary,
        cfg.refine,
        cfg.ncut,
        mask=mask,
        collect_instances=bool(item.get("dump_instances")),
    )
    write_tensor(report.panoptic.to_dense(), item["out"])
    if item.get("viz"):
        save_png(render_panoptic(report.panoptic, labels), item["viz"])
    if item.get("dump_instances"):
        dump_dir = Path(item["dump_instances"])
        dump_dir.mkdir(parents=True, exist_ok=True)
        for (seg_id, k), sel in report.instance_masks.items():
            write_tensor(
                DenseMap(sel.astype(np.uint8)), dump_dir / f"seg{seg_id:04d}_inst{k:03d}.pft"
            )
    return {
        "id": item.get("id", str(item["probs"])),
        "out": str(item["out"]),
        "seconds": time.perf_counter() - start,
        "stages": report.timings,
    }


def run_fuse_batch(
    manifest: list[dict],
    cfg: PipelineConfig,
    labels: LabelSpec,
    jobs: int = 1,
    fail_fast: bool = False,
) -> dict:
    """Fuse every manifest entry, optionally in parallel.

    Images are independent, so outputs are bitwise identical for any worker
    count. Per-image failures are recorded and the batch continues unless
    ``fail_fast``.
    """
    summary = {"processed": 0, "failed": [], "images": []}
    if not manifest:
        return summary
    jobs = max(1, jobs)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = {
            pool.submit(fuse_one, item, cfg, labels): item for item in manifest
        }
        for fut in as_completed(futures):
            item = futures[fut]
            item_id = item.get("id", str(item.get("probs")))
            try:
                record = fut.result()
            except Exception as exc:  # per-image isolation
                summary["failed"].append({"id": item_id, "error": str(exc)})
                _log_event(event="image_failed", id=item_id, error=str(exc))
                if fail_fast:
                    for other in futures:
                        other.cancel()
                    break
                continue
            summary["processed"] += 1
            summary["images"].append(record)
            _log_event(
                event="image_done",
                id=record["id"],
                seconds=round(record["seconds"], 4),
                stages={k: round(v, 4) for k, v in record["stages"].items()},
            )
    summary["images"].sort(key=lambda r: r["id"])
    return summary


def cmd_fuse(args) -> int:
    cfg = _load_pipeline_config(args)
    if args.dump_effective_config:
        print(json.dumps(config_to_dict(cfg), indent=2))
        return EXIT_OK
    labels = LabelSpec.from_json(args.labels)
    jobs = args.jobs or int(os.environ.get("PANFUSE_THREADS", cfg.jobs))

    if args.manifest:
        with open(args.manifest, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
        if not isinstance(manifest, list):
            raise ConfigError("manifest must be a JSON list of entries")
        for entry in manifest:
            for key in ("probs", "boundary", "out"):
                if key not in entry:
                    raise ConfigError(f"manifest entry missing {key!r}: {entry}")
    else:
        if not (args.probs and args.boundary and args.out):
            raise ConfigError("fuse needs --manifest or --probs/--boundary/--out")
        manifest = [
            {
                "probs": args.probs,
                "boundary": args.boundary,
                "out": args.out,
                "viz": args.viz,
                "mask": args.mask,
                "dump_instances": args.dump_instances,
            }
        ]
    summary = run_fuse_batch(manifest, cfg, labels, jobs=jobs, fail_fast=args.fail_fast)
    _log_event(
        event="batch_done",
        processed=summary["processed"],
        failed=len(summary["failed"]),
    )
    return EXIT_OK if not summary["failed"] else EXIT_PARTIAL


def cmd_merge(args) -> int:
    with open(args.inputs, "r", encoding="utf-8") as fh:
        entries = json.load(fh)
    if not isinstance(entries, list) or not entries:
        raise ConfigError("--inputs must be a non-empty JSON list of crop entries")
    crops = []
    preds = []
    for e in entries:
        crop = Crop(scale=int(e["scale"]), x=int(e["x"]), y=int(e["y"]), w=int(e["w"]), h=int(e["h"]))
        crops.append(crop)
        preds.append(CropPrediction(crop=crop, map=read_tensor(e["file"])))
    plan = CropPlan(
        width=args.width,
        height=args.height,
        scales=tuple(sorted({c.scale for c in crops})),
        overlap=0,
        crops=tuple(crops),
    )
    merged = merge_crops(plan, preds)
    write_tensor(DenseMap(merged.data.astype(np.float32)), args.out)
    return EXIT_OK


def _pair_files(pred, gt) -> list[tuple[Path, Path]]:
    pred, gt = Path(pred), Path(gt)
    if pred.is_file() and gt.is_file():
        return [(pred, gt)]
    if pred.is_dir() and gt.is_dir():
        pairs = []
        for p in sorted(pred.glob("*.pft")):
            q = gt / p.name
            if not q.exists():
                raise ConfigError(f"no ground truth for {p.name}")
            pairs.append((p, q))
        if not pairs:
            raise ConfigError(f"no .pft files under {pred}")
        return pairs
    raise ConfigError("--pred and --gt must both be files or both directories")


def cmd_eval(args) -> int:
    labels = LabelSpec.from_json(args.labels)
    combined = EvalReport()
    for pred_path, gt_path in _pair_files(args.pred, args.gt):
        pred = PanopticMap.from_dense(read_tensor(pred_path), labels.ignore_id)
        gt = PanopticMap.from_dense(read_tensor(gt_path), labels.ignore_id)
        sem = miou(
            DenseMap(pred.class_map()), DenseMap(gt.class_map()), labels
        )
        pq = panoptic_quality(pred, gt, labels)
        combined = merge_reports(combined, merge_reports(sem, pq))
    doc = combined.to_dict(labels)
    payload = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_loss(args) -> int:
    cfg = LossConfig(t_k=args.t_k, epsilon=args.epsilon)
    probs = read_tensor(args.probs)
    targets = read_tensor(args.targets)
    if args.kind == "sem":
        value = bootstrapped_ce(probs, targets, cfg, ignore_id=args.ignore_id)
    else:
        value = binary_ce(probs, targets, cfg)
    print(f"{value:.12g}")
    return EXIT_OK


def cmd_sample(args) -> int:
    with open(args.ids, "r", encoding="utf-8") as fh:
        ids = json.load(fh)
    feats_l = read_tensor(args.labeled)
    feats_u = read_tensor(args.unlabeled)

    def as_vectors(dm: DenseMap, names) -> list[FeatureVector]:
        rows = dm.data[:, :, 0]
        if len(names) != rows.shape[0]:
            raise ConfigError(
                f"{len(names)} ids for {rows.shape[0]} feature rows"
            )
        return [FeatureVector(values=rows[i], image_id=str(names[i])) for i in range(rows.shape[0])]

    labeled = as_vectors(feats_l, ids["labeled"])
    unlabeled = as_vectors(feats_u, ids["unlabeled"])
    cfg = SamplerConfig(n_neighbors=args.neighbors, dedupe=not args.no_dedupe)
    picks = select_neighbors(labeled, unlabeled, cfg)
    doc = {
        "picks": [{"labeled": lid, "neighbors": chosen} for lid, chosen in picks],
        "selected": sorted({u for _, chosen in picks for u in chosen}),
    }
    payload = json.dumps(doc, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(payload, encoding="utf-8")
    else:
        sys.stdout.write(payload)
    return EXIT_OK


def cmd_viz(args) -> int:
    labels = LabelSpec.from_json(args.labels)
    pan = PanopticMap.from_dense(read_tensor(args.pan), labels.ignore_id)
    palette = load_palette(args.palette) if args.palette else None
    save_png(render_panoptic(pan, labels, palette), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="panfuse",
        description="Panoptic fusion of semantic probabilities and soft boundaries.",
    )
    parser.add_argument(
        "--print-defaults",
        action="store_true",
        help="print the default pipeline configuration as JSON and exit",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("plan", help="emit an overlapping multi-scale crop plan")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--scales", default="1,2", help="comma-separated scale list")
    p.add_argument("--overlap", type=int, default=2)
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("merge", help="average per-crop prediction maps to full resolution")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument(
        "--inputs", required=True, help='JSON list of {scale, x, y, w, h, file} crop entries'
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("fuse", help="fuse probability + boundary maps into panoptic maps")
    p.add_argument("--probs")
    p.add_argument("--boundary")
    p.add_argument("--labels", required=True)
    p.add_argument("--config")
    p.add_argument("--out")
    p.add_argument("--viz")
    p.add_argument("--mask", help="PFT mask of pixels forced to ignore")
    p.add_argument("--manifest", help="JSON list of {probs, boundary, out, ...} entries")
    p.add_argument("--jobs", type=int, default=0, help="worker count (PANFUSE_THREADS)")
    p.add_argument("--fail-fast", action="store_true")
    p.add_argument("--dump-instances", help="directory for per-segment instance masks")
    p.add_argument("--dump-effective-config", action="store_true")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("eval", help="mIoU and PQ/SQ/RQ against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("loss", help="evaluate a reference loss on PFT tensors")
    p.add_argument("--kind", choices=("sem", "bnd"), required=True)
    p.add_argument("--probs", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--t-k", type=float, default=0.2, dest="t_k")
    p.add_argument("--epsilon", type=float, default=1e-12)
    p.add_argument("--ignore-id", type=int, default=255)
    p.set_defaults(func=cmd_loss)

    p = sub.add_parser("sample", help="pick self-training images by feature similarity")
    p.add_argument("--labeled", required=True, help="2-D float32 PFT, rows = images")
    p.add_argument("--unlabeled", required=True)
    p.add_argument("--ids", required=True, help='JSON {"labeled": [...], "unlabeled": [...]}')
    p.add_argument("-n", "--neighbors", type=int, default=5)
    p.add_argument("--no-dedupe", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("viz", help="render a panoptic PFT map to PNG")
    p.add_argument("--pan", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--palette", help="JSON {class_id: [r, g, b]}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        print(json.dumps(config_to_dict(default_config()), indent=2))
        return EXIT_OK
    if not getattr(args, "command", None):
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, ValidationError) as exc:
        print(f"panfuse: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TensorFormatError, FuseError, OSError) as exc:
        print(f"panfuse: {exc}", file=sys.stderr)
        return EXIT_PARTIAL


if __name__ == "__main__":
    sys.exit(main(None))
