"""Frozen ViT backbone plus the two lightweight prediction heads.

Only needed for real-model exports (``--weights``); --from-gt never imports
torch. Weights come from ``train_heads.py``.
"""

from __future__ import annotations


class ModelUnavailableError(RuntimeError):
    pass


def _require_torch():
    try:
        import torch  # noqa: F401
        import torch.nn as nn  # noqa: F401
    except ImportError as exc:
        raise ModelUnavailableError(
            "model-mode export needs torch; install panfuse-exporter[model]"
        ) from exc
    import torch
    import torch.nn as nn

    return torch, nn


def build_heads(n_classes: int, embed_dim: int):
    """Per-pixel heads on frozen patch features.

    Semantic: 14x bilinear upsample then 1x1 convs 300-300-200-n with a
    softmax. Boundary: 4x upsample then 1x1 convs 600-600-400-1 with a
    sigmoid.
    """
    torch, nn = _require_torch()

    def conv_stack(widths):
        layers = []
        prev = embed_dim
        for wd in widths[:-1]:
            layers += [nn.Conv2d(prev, wd, 1), nn.ReLU(inplace=True)]
            prev = wd
        layers.append(nn.Conv2d(prev, widths[-1], 1))
        return nn.Sequential(*layers)

    class SemanticHead(nn.Module):
        def __init__(self):
            super().__init__()
            self.net = conv_stack([300, 300, 200, n_classes])

        def forward(self, feats, out_hw):
            x = nn.functional.interpolate(feats, scale_factor=14, mode="bilinear")
            x = self.net(x)
            x = nn.functional.interpolate(x, size=out_hw, mode="bilinear")
            return torch.softmax(x, dim=1)

    class BoundaryHead(nn.Module):
        def __init__(self):
            super().__init__()
            self.net = conv_stack([600, 600, 400, 1])

        def forward(self, feats, out_hw):
            x = nn.functional.interpolate(feats, scale_factor=4, mode="bilinear")
            x = self.net(x)
            x = nn.functional.interpolate(x, size=out_hw, mode="bilinear")
            return torch.sigmoid(x)

    return SemanticHead(), BoundaryHead()


class FrozenBackboneModel:
    """DINOv2 backbone (via torch.hub) with trained heads loaded from disk."""

    def __init__(self, weights_path, backbone: str = "dinov2_vitb14", device: str = "cpu"):
        torch, _ = _require_torch()
        self.torch = torch
        self.device = device
        try:
            self.backbone = torch.hub.load("facebookresearch/dinov2", backbone)
        except Exception as exc:
            raise ModelUnavailableError(f"cannot load backbone {backbone}: {exc}") from exc
        self.backbone.eval().to(device)
        ckpt = torch.load(weights_path, map_location=device)
        self.n_classes = int(ckpt["n_classes"])
        embed_dim = int(ckpt.get("embed_dim", self.backbone.embed_dim))
        self.sem_head, self.bnd_head = build_heads(self.n_classes, embed_dim)
        self.sem_head.load_state_dict(ckpt["semantic_head"])
        self.bnd_head.load_state_dict(ckpt["boundary_head"])
        self.sem_head.eval().to(device)
        self.bnd_head.eval().to(device)

    def patch_features(self, image_bchw):
        with self.torch.no_grad():
            out = self.backbone.forward_features(image_bchw.to(self.device))
        tokens = out["x_norm_patchtokens"]
        b, n, c = tokens.shape
        h = image_bchw.shape[2] // 14
        w = image_bchw.shape[3] // 14
        return tokens.transpose(1, 2).reshape(b, c, h, w), tokens

    def predict_crop(self, crop_bchw, out_hw):
        """Upsampled-crop inference: class probabilities and soft boundary at
        the crop's native resolution; plus mean-pooled patch tokens."""
        with self.torch.no_grad():
            feats, tokens = self.patch_features(crop_bchw)
            probs = self.sem_head(feats, out_hw)
            soft = self.bnd_head(feats, out_hw)
        return (
            probs[0].permute(1, 2, 0).cpu().numpy(),
            soft[0, 0].cpu().numpy(),
            tokens.mean(dim=1)[0].cpu().numpy(),
        )
