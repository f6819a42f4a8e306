"""Training script for the two prediction heads on frozen backbone features.

Non-normative: exact augmentation magnitudes and schedules are local choices.
Semantic head: bootstrapped cross-entropy with t_K = 0.2; boundary head:
binary cross-entropy against labels where 0 marks a boundary pixel. Expects a
directory of RGB images plus matching 2-channel uint16 panoptic PFT maps.

Usage:
    python -m panfuse_exporter.train_heads --images dir/ --gt dir/ \
        --labels labels.json --out heads.pt [--epochs 150]
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .gt import LabelCatalog
from .pft import read_pft


def bootstrapped_ce_loss(torch, logits, targets, ignore_id, t_k=0.2):
    log_probs = torch.log_softmax(logits, dim=1)
    probs = log_probs.exp()
    valid = targets != ignore_id
    safe = targets.clamp(min=0, max=logits.shape[1] - 1)
    p_true = probs.gather(1, safe[:, None])[:, 0]
    lp_true = log_probs.gather(1, safe[:, None])[:, 0]
    selected = valid & (p_true < t_k)
    k = selected.sum().clamp(min=1)
    return -(lp_true * selected).sum() / k


def boundary_labels(torch, pan_pair):
    """0 where the thing-instance pair differs from any 8-neighbour, else 1."""
    same = torch.ones_like(pan_pair, dtype=torch.bool)
    h, w = pan_pair.shape[-2:]
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == dx == 0:
                continue
            src_y = slice(max(0, dy), h + min(0, dy))
            src_x = slice(max(0, dx), w + min(0, dx))
            dst_y = slice(max(0, -dy), h + min(0, -dy))
            dst_x = slice(max(0, -dx), w + min(0, -dx))
            same[..., dst_y, dst_x] &= pan_pair[..., dst_y, dst_x] == pan_pair[..., src_y, src_x]
    return same


def main(argv=None) -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--images", required=True)
    parser.add_argument("--gt", required=True)
    parser.add_argument("--labels", required=True)
    parser.add_argument("--out", required=True)
    parser.add_argument("--backbone", default="dinov2_vitb14")
    parser.add_argument("--epochs", type=int, default=150)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--crop", type=int, default=644, help="train-crop size (14-aligned)")
    parser.add_argument("--device", default="cpu")
    args = parser.parse_args(argv)

    try:
        import torch
        import torchvision.transforms.functional as TF
        from PIL import Image
    except ImportError as exc:
        print(f"train_heads needs torch/torchvision/Pillow: {exc}", file=sys.stderr)
        return 1

    from .model import FrozenBackboneModel, ModelUnavailableError, build_heads

    catalog = LabelCatalog.from_json(args.labels)
    try:
        backbone = torch.hub.load("facebookresearch/dinov2", args.backbone)
    except Exception as exc:
        print(f"cannot fetch backbone: {exc}", file=sys.stderr)
        return 1
    backbone.eval().to(args.device)
    for p in backbone.parameters():
        p.requires_grad_(False)

    sem_head, bnd_head = build_heads(catalog.n_classes, backbone.embed_dim)
    sem_head.to(args.device).train()
    bnd_head.to(args.device).train()
    opt = torch.optim.Adam(
        list(sem_head.parameters()) + list(bnd_head.parameters()), lr=args.lr
    )

    samples = []
    for img_path in sorted(Path(args.images).iterdir()):
        gt_path = Path(args.gt) / f"{img_path.stem}.pft"
        if img_path.suffix.lower() in (".png", ".jpg", ".jpeg") and gt_path.exists():
            samples.append((img_path, gt_path))
    if not samples:
        print("no (image, gt) pairs found", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    thing_lut = torch.zeros(catalog.n_classes + 1, dtype=torch.bool)
    for t in catalog.thing_ids:
        thing_lut[t] = True

    for epoch in range(args.epochs):
        total = 0.0
        for img_path, gt_path in samples:
            rgb = Image.open(img_path).convert("RGB")
            gt = read_pft(gt_path)
            img = TF.to_tensor(rgb)

            # augmentation: flip, random crop with resize back, colour jitter
            if rng.random() < 0.5:
                img = TF.hflip(img)
                gt = gt[:, ::-1].copy()
            img = TF.adjust_brightness(img, 0.7 + 0.6 * rng.random())
            img = TF.adjust_contrast(img, 0.7 + 0.6 * rng.random())
            img = TF.adjust_saturation(img, 0.7 + 0.6 * rng.random())
            img = TF.adjust_hue(img, 0.1 * (rng.random() - 0.5))

            h, w = gt.shape[:2]
            ch = cw = min(args.crop, (min(h, w) // 14) * 14)
            y0 = int(rng.integers(0, h - ch + 1))
            x0 = int(rng.integers(0, w - cw + 1))
            img = img[:, y0 : y0 + ch, x0 : x0 + cw][None].to(args.device)
            gt_crop = gt[y0 : y0 + ch, x0 : x0 + cw]

            cls = torch.from_numpy(gt_crop[:, :, 0].astype(np.int64))[None].to(args.device)
            pair = torch.from_numpy(
                (gt_crop[:, :, 0].astype(np.int64) * 100000 + gt_crop[:, :, 1]).astype(np.int64)
            )[None].to(args.device)

            with torch.no_grad():
                feats = backbone.forward_features(img)["x_norm_patchtokens"]
                b, n, c = feats.shape
                feats = feats.transpose(1, 2).reshape(b, c, ch // 14, cw // 14)

            logits = sem_head.net(
                torch.nn.functional.interpolate(feats, size=(ch, cw), mode="bilinear")
            )
            sem_loss = bootstrapped_ce_loss(
                torch, logits.flatten(2).transpose(1, 2).reshape(-1, catalog.n_classes),
                cls.reshape(-1), catalog.ignore_id,
            )

            soft = bnd_head.net(
                torch.nn.functional.interpolate(feats, size=(ch, cw), mode="bilinear")
            )
            is_thing = thing_lut[cls.clamp(max=catalog.n_classes)]
            labels = (~is_thing | boundary_labels(torch, pair)).float()  # 0 = boundary
            bnd_loss = torch.nn.functional.binary_cross_entropy_with_logits(
                soft[:, 0], labels
            )

            loss = sem_loss + bnd_loss
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss)
        print(f"epoch {epoch + 1}/{args.epochs} loss {total / len(samples):.4f}")

    torch.save(
        {
            "n_classes": catalog.n_classes,
            "embed_dim": backbone.embed_dim,
            "semantic_head": sem_head.state_dict(),
            "boundary_head": bnd_head.state_dict(),
        },
        args.out,
    )
    print(f"saved {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
