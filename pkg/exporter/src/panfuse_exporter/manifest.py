"""Export manifest: file inventory with checksums."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def sha256_of(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ManifestBuilder:
    def __init__(self, out_dir, backbone: str, pooling: str, plan_path, labels_path):
        self.out_dir = Path(out_dir)
        self.doc = {
            "backbone": backbone,
            "pooling": pooling,
            "plan": str(plan_path),
            "labels": str(labels_path),
            "images": [],
            "checksums": {},
        }

    def _register(self, path) -> str:
        rel = str(Path(path).relative_to(self.out_dir))
        self.doc["checksums"][rel] = sha256_of(path)
        return rel

    def add_image(self, image_id: str, crops: list[dict], features_path) -> None:
        entry = {
            "id": image_id,
            "crops": [
                {
                    **{k: crop[k] for k in ("scale", "x", "y", "w", "h")},
                    "probs": self._register(crop["probs"]),
                    "boundary": self._register(crop["boundary"]),
                }
                for crop in crops
            ],
            "features": self._register(features_path),
        }
        self.doc["images"].append(entry)

    def add_extra(self, key: str, path) -> None:
        self.doc[key] = self._register(path)

    def write(self) -> Path:
        path = self.out_dir / "manifest.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.doc, fh, indent=2)
            fh.write("\n")
        return path


def verify_checksums(manifest_path) -> list[str]:
    """Return the relative paths whose checksum no longer matches."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    bad = []
    for rel, expected in doc.get("checksums", {}).items():
        target = manifest_path.parent / rel
        if not target.exists() or sha256_of(target) != expected:
            bad.append(rel)
    return bad
