"""Export per-crop head predictions (or ground-truth passthrough) as PFT
tensors plus a checksummed manifest.

``--from-gt`` consumes a directory of 2-channel uint16 panoptic PFT maps and
needs no model; ``--weights`` runs the frozen backbone and trained heads over
the crop plan instead.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .gt import LabelCatalog, gt_features, gt_to_boundary, gt_to_probs
from .manifest import ManifestBuilder
from .pft import PFTError, read_pft, write_pft


class ExportError(RuntimeError):
    pass


def load_plan(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        plan = json.load(fh)
    if not isinstance(plan, list) or not plan:
        raise ExportError(f"{path}: crop plan must be a non-empty JSON list")
    for crop in plan:
        if not {"scale", "x", "y", "w", "h"} <= set(crop):
            raise ExportError(f"{path}: malformed crop entry {crop}")
    return plan


def _check_plan_fits(plan, h, w, image_id):
    for crop in plan:
        if crop["y"] + crop["h"] > h or crop["x"] + crop["w"] > w:
            raise ExportError(
                f"{image_id}: crop {crop} exceeds the {w}x{h} image; "
                "was the plan computed for a different size?"
            )


def export_from_gt(images_dir, labels_path, plan_path, out_dir) -> Path:
    """Ground-truth passthrough export: one-hot probabilities, training-rule
    boundary evidence, and scene-statistics feature vectors."""
    catalog = LabelCatalog.from_json(labels_path)
    plan = load_plan(plan_path)
    out_dir = Path(out_dir)
    gt_files = sorted(Path(images_dir).glob("*.pft"))
    if len(gt_files) == 0:
        raise ExportError(f"no .pft ground-truth maps under {images_dir}")

    builder = ManifestBuilder(
        out_dir,
        backbone="from-gt",
        pooling="from-gt class histogram + boundary density",
        plan_path=plan_path,
        labels_path=labels_path,
    )
    all_features = []
    ids = []
    for gt_path in gt_files:
        image_id = gt_path.stem
        gt = read_pft(gt_path)
        if gt.ndim != 3 or gt.shape[2] != 2 or gt.dtype != np.uint16:
            raise ExportError(f"{gt_path}: expected 2-channel uint16 panoptic map")
        h, w = gt.shape[:2]
        _check_plan_fits(plan, h, w, image_id)
        gt_class = gt[:, :, 0]
        gt_inst = gt[:, :, 1]

        probs = gt_to_probs(gt_class, catalog)
        boundary = gt_to_boundary(gt_class, gt_inst, catalog)

        img_dir = out_dir / image_id
        crop_records = []
        for k, crop in enumerate(plan):
            y, x, cw, ch = crop["y"], crop["x"], crop["w"], crop["h"]
            probs_path = img_dir / f"crop{k:03d}_probs.pft"
            boundary_path = img_dir / f"crop{k:03d}_boundary.pft"
            write_pft(probs[y : y + ch, x : x + cw], probs_path)
            write_pft(boundary[y : y + ch, x : x + cw], boundary_path)
            crop_records.append({**crop, "probs": probs_path, "boundary": boundary_path})

        feats = gt_features(gt_class, boundary, catalog)
        feats_path = img_dir / "features.pft"
        write_pft(feats[None, :], feats_path)
        builder.add_image(image_id, crop_records, feats_path)
        all_features.append(feats)
        ids.append(image_id)

    stacked = out_dir / "features.pft"
    write_pft(np.stack(all_features), stacked)
    ids_path = out_dir / "feature_ids.json"
    with open(ids_path, "w", encoding="utf-8") as fh:
        json.dump(ids, fh, indent=2)
        fh.write("\n")
    builder.add_extra("features_all", stacked)
    builder.add_extra("feature_ids", ids_path)
    return builder.write()


def export_from_model(images_dir, labels_path, plan_path, out_dir, weights, backbone):
    """Real-model export over the crop plan (requires torch and weights)."""
    from .model import FrozenBackboneModel, ModelUnavailableError

    try:
        import torch
        from PIL import Image
    except ImportError as exc:
        raise ExportError(f"model-mode export needs torch and Pillow: {exc}") from exc

    catalog = LabelCatalog.from_json(labels_path)
    plan = load_plan(plan_path)
    out_dir = Path(out_dir)
    try:
        model = FrozenBackboneModel(weights, backbone=backbone)
    except ModelUnavailableError as exc:
        raise ExportError(str(exc)) from exc
    if model.n_classes != catalog.n_classes:
        raise ExportError(
            f"weights carry {model.n_classes} classes, labels file has {catalog.n_classes}"
        )

    builder = ManifestBuilder(
        out_dir,
        backbone=backbone,
        pooling="mean over patch tokens",
        plan_path=plan_path,
        labels_path=labels_path,
    )
    image_files = sorted(
        p for p in Path(images_dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not image_files:
        raise ExportError(f"no images under {images_dir}")
    all_features, ids = [], []
    for img_path in image_files:
        image_id = img_path.stem
        rgb = np.asarray(Image.open(img_path).convert("RGB"), dtype=np.float32) / 255.0
        h, w = rgb.shape[:2]
        _check_plan_fits(plan, h, w, image_id)
        img_dir = out_dir / image_id
        crop_records = []
        feats_sum = None
        for k, crop in enumerate(plan):
            y, x, cw, ch = crop["y"], crop["x"], crop["w"], crop["h"]
            window = rgb[y : y + ch, x : x + cw]
            tens = torch.from_numpy(window).permute(2, 0, 1)[None]
            # upsample the crop to a patch-aligned input size before the heads
            in_h = max(14, (h // 14) * 14)
            in_w = max(14, (w // 14) * 14)
            tens = torch.nn.functional.interpolate(
                tens, size=(in_h, in_w), mode="bilinear", align_corners=False
            )
            probs, soft, pooled = model.predict_crop(tens, (ch, cw))
            probs_path = img_dir / f"crop{k:03d}_probs.pft"
            boundary_path = img_dir / f"crop{k:03d}_boundary.pft"
            write_pft(probs.astype(np.float32), probs_path)
            write_pft(np.clip(soft, 0.0, 1.0).astype(np.float32), boundary_path)
            crop_records.append({**crop, "probs": probs_path, "boundary": boundary_path})
            feats_sum = pooled if feats_sum is None else feats_sum + pooled
        feats = (feats_sum / len(plan)).astype(np.float32)
        feats_path = img_dir / "features.pft"
        write_pft(feats[None, :], feats_path)
        builder.add_image(image_id, crop_records, feats_path)
        all_features.append(feats)
        ids.append(image_id)

    write_pft(np.stack(all_features), out_dir / "features.pft")
    with open(out_dir / "feature_ids.json", "w", encoding="utf-8") as fh:
        json.dump(ids, fh, indent=2)
        fh.write("\n")
    builder.add_extra("features_all", out_dir / "features.pft")
    builder.add_extra("feature_ids", out_dir / "feature_ids.json")
    return builder.write()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="panfuse-export",
        description="Export per-crop predictions and feature vectors as PFT tensors.",
    )
    parser.add_argument("--images", required=True, help="image dir (RGB) or GT dir (--from-gt)")
    parser.add_argument("--labels", required=True, help="labels.json class catalog")
    parser.add_argument("--plan", required=True, help="crop plan from `panfuse plan`")
    parser.add_argument("--out", required=True)
    parser.add_argument("--from-gt", action="store_true", help="ground-truth passthrough mode")
    parser.add_argument("--weights", help="trained head checkpoint (model mode)")
    parser.add_argument("--backbone", default="dinov2_vitb14")
    args = parser.parse_args(argv)

    try:
        if args.from_gt:
            manifest = export_from_gt(args.images, args.labels, args.plan, args.out)
        else:
            if not args.weights:
                raise ExportError("model mode needs --weights (or use --from-gt)")
            manifest = export_from_model(
                args.images, args.labels, args.plan, args.out, args.weights, args.backbone
            )
    except (ExportError, PFTError, OSError) as exc:
        print(f"panfuse-export: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
