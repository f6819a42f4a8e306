import json

import numpy as np
import pytest

from panfuse.cli import main, run_fuse_batch
from panfuse.config import config_from_dict, config_to_dict, default_config, load_config
from panfuse.core import DenseMap, PanopticMap, read_tensor, write_tensor

import scenes


@pytest.fixture()
def scene_files(tmp_path):
    probs, soft, gt, labels = scenes.mini_scene(disjoint=True)
    paths = {
        "probs": tmp_path / "probs.pft",
        "boundary": tmp_path / "soft.pft",
        "gt": tmp_path / "gt.pft",
        "labels": tmp_path / "labels.json",
        "out": tmp_path / "pan.pft",
    }
    write_tensor(probs, paths["probs"])
    write_tensor(soft, paths["boundary"])
    write_tensor(gt.to_dense(), paths["gt"])
    labels.to_json(paths["labels"])
    return paths


@pytest.fixture()
def mini_config_file(tmp_path):
    path = tmp_path / "cfg.toml"
    path.write_text(
        """
[boundary]
lambda_b = 0.5
min_size = 8

[refine]
min_thing_size = 20
min_stuff_size = 16
connectivity = 4
scale_min_sizes = false

[ncut]
downsample = [128, 64]
radius = 2
beta = 6.0
min_instance_size = 120
exhaustive_split = true
""",
        encoding="utf-8",
    )
    return path


class TestPlanCommand:
    def test_emits_crop_list(self, tmp_path, capsys):
        out = tmp_path / "plan.json"
        rc = main(
            ["plan", "--width", "256", "--height", "256", "--scales", "2", "--overlap", "2", "--out", str(out)]
        )
        assert rc == 0
        doc = json.loads(out.read_text())
        assert len(doc) == 9
        assert {"scale", "x", "y", "w", "h"} <= set(doc[0])

    def test_prints_to_stdout(self, capsys):
        assert main(["plan", "--width", "100", "--height", "100", "--scales", "1"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc == [{"scale": 1, "x": 0, "y": 0, "w": 100, "h": 100}]


class TestFuseCommand:
    def test_single_image(self, scene_files, mini_config_file, tmp_path):
        viz = tmp_path / "pan.png"
        rc = main(
            [
                "fuse",
                "--probs", str(scene_files["probs"]),
                "--boundary", str(scene_files["boundary"]),
                "--labels", str(scene_files["labels"]),
                "--config", str(mini_config_file),
                "--out", str(scene_files["out"]),
                "--viz", str(viz),
            ]
        )
        assert rc == 0
        pan = PanopticMap.from_dense(read_tensor(scene_files["out"]), 255)
        assert set(np.unique(pan.pan).tolist()) == {0, 1001, 1002}
        assert viz.exists() and viz.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_missing_input_partial_failure(self, scene_files, mini_config_file):
        rc = main(
            [
                "fuse",
                "--probs", "/nonexistent.pft",
                "--boundary", str(scene_files["boundary"]),
                "--labels", str(scene_files["labels"]),
                "--config", str(mini_config_file),
                "--out", str(scene_files["out"]),
            ]
        )
        assert rc == 1

    def test_manifest_continues_after_failure(self, scene_files, mini_config_file, tmp_path):
        manifest = [
            {
                "probs": str(scene_files["probs"]),
                "boundary": str(scene_files["boundary"]),
                "out": str(tmp_path / "ok.pft"),
            },
            {
                "probs": "/missing.pft",
                "boundary": str(scene_files["boundary"]),
                "out": str(tmp_path / "bad.pft"),
            },
        ]
        mpath = tmp_path / "manifest.json"
        mpath.write_text(json.dumps(manifest))
        rc = main(
            [
                "fuse",
                "--manifest", str(mpath),
                "--labels", str(scene_files["labels"]),
                "--config", str(mini_config_file),
            ]
        )
        assert rc == 1
        assert (tmp_path / "ok.pft").exists()
        assert not (tmp_path / "bad.pft").exists()

    def test_empty_manifest_succeeds(self, scene_files, tmp_path):
        mpath = tmp_path / "manifest.json"
        mpath.write_text("[]")
        rc = main(["fuse", "--manifest", str(mpath), "--labels", str(scene_files["labels"])])
        assert rc == 0

    def test_dump_effective_config_roundtrips(self, mini_config_file, scene_files, capsys):
        rc = main(
            [
                "fuse",
                "--labels", str(scene_files["labels"]),
                "--config", str(mini_config_file),
                "--dump-effective-config",
            ]
        )
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        reparsed = config_from_dict(doc)
        assert reparsed == load_config(mini_config_file)


class TestBatchDeterminism:
    def test_bitwise_identical_across_jobs(self, tmp_path):
        variants = [
            ("a", dict(disjoint=True)),
            ("b", dict()),
            ("c", dict(gap_rows=(31, 32, 33))),
        ]
        inputs = []
        for name, kw in variants:
            probs, soft, gt, labels = scenes.mini_scene(**kw)
            p = tmp_path / f"{name}_probs.pft"
            s = tmp_path / f"{name}_soft.pft"
            write_tensor(probs, p)
            write_tensor(soft, s)
            inputs.append((name, p, s))
        labels_path = tmp_path / "labels.json"
        scenes.ROAD_CAR.to_json(labels_path)

        cfg = default_config()
        bcfg, rcfg, ncfg = scenes.mini_configs()
        cfg = type(cfg)(
            tiler=cfg.tiler, boundary=bcfg, refine=rcfg, ncut=ncfg,
            sampler=cfg.sampler, loss=cfg.loss, jobs=1,
        )

        outputs = {}
        for jobs in (1, 4, 8):
            outdir = tmp_path / f"jobs{jobs}"
            outdir.mkdir()
            manifest = [
                {"id": name, "probs": str(p), "boundary": str(s), "out": str(outdir / f"{name}.pft")}
                for name, p, s in inputs
            ]
            summary = run_fuse_batch(manifest, cfg, scenes.ROAD_CAR, jobs=jobs)
            assert not summary["failed"]
            outputs[jobs] = {name: (outdir / f"{name}.pft").read_bytes() for name, _, _ in inputs}
        assert outputs[1] == outputs[4]
        assert outputs[1] == outputs[8]


class TestMergeCommand:
    def test_matches_library_merge(self, tmp_path):
        from panfuse.tiler import CropPrediction, merge_crops, plan_crops

        rng = np.random.default_rng(8)
        plan = plan_crops(24, 16, [1, 2], 2)
        entries = []
        preds = []
        for i, crop in enumerate(plan.crops):
            raw = rng.random((crop.h, crop.w, 2))
            data = DenseMap((raw / raw.sum(axis=2, keepdims=True)).astype(np.float32))
            preds.append(CropPrediction(crop=crop, map=data))
            f = tmp_path / f"crop{i:03d}.pft"
            write_tensor(data, f)
            entries.append(
                {"scale": crop.scale, "x": crop.x, "y": crop.y, "w": crop.w, "h": crop.h, "file": str(f)}
            )
        inputs = tmp_path / "crops.json"
        inputs.write_text(json.dumps(entries))
        out = tmp_path / "merged.pft"
        rc = main(
            ["merge", "--width", "24", "--height", "16", "--inputs", str(inputs), "--out", str(out)]
        )
        assert rc == 0
        merged = read_tensor(out)
        expected = merge_crops(plan, preds).data.astype(np.float32)
        assert np.array_equal(merged.data, expected)
        assert np.abs(merged.data.sum(axis=2) - 1.0).max() <= 1e-4


class TestEvalCommand:
    def test_report_schema(self, scene_files, mini_config_file, tmp_path, capsys):
        assert (
            main(
                [
                    "fuse",
                    "--probs", str(scene_files["probs"]),
                    "--boundary", str(scene_files["boundary"]),
                    "--labels", str(scene_files["labels"]),
                    "--config", str(mini_config_file),
                    "--out", str(scene_files["out"]),
                ]
            )
            == 0
        )
        report = tmp_path / "report.json"
        rc = main(
            [
                "eval",
                "--pred", str(scene_files["out"]),
                "--gt", str(scene_files["gt"]),
                "--labels", str(scene_files["labels"]),
                "--out", str(report),
            ]
        )
        assert rc == 0
        doc = json.loads(report.read_text())
        assert doc["PQ"] == pytest.approx(1.0, abs=1e-9)
        assert doc["mIoU"] == pytest.approx(1.0, abs=1e-9)
        assert "per_class" in doc and "counts" in doc

    def test_directory_pairing(self, scene_files, mini_config_file, tmp_path):
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gtdir"
        pred_dir.mkdir()
        gt_dir.mkdir()
        main(
            [
                "fuse",
                "--probs", str(scene_files["probs"]),
                "--boundary", str(scene_files["boundary"]),
                "--labels", str(scene_files["labels"]),
                "--config", str(mini_config_file),
                "--out", str(pred_dir / "img.pft"),
            ]
        )
        (gt_dir / "img.pft").write_bytes(scene_files["gt"].read_bytes())
        rc = main(
            ["eval", "--pred", str(pred_dir), "--gt", str(gt_dir), "--labels", str(scene_files["labels"])]
        )
        assert rc == 0


class TestLossCommand:
    def test_binary_ce_prints_ln2(self, tmp_path, capsys):
        probs = tmp_path / "p.pft"
        targets = tmp_path / "t.pft"
        write_tensor(DenseMap(np.full((4, 4), 0.5, np.float32)), probs)
        write_tensor(DenseMap(np.ones((4, 4), np.uint8)), targets)
        rc = main(["loss", "--kind", "bnd", "--probs", str(probs), "--targets", str(targets)])
        assert rc == 0
        printed = float(capsys.readouterr().out.strip())
        assert printed == pytest.approx(np.log(2), abs=1e-12)

    def test_sem_loss(self, tmp_path, capsys):
        probs = tmp_path / "p.pft"
        targets = tmp_path / "t.pft"
        arr = np.zeros((1, 1, 2), np.float32)
        arr[0, 0] = (0.1, 0.9)
        write_tensor(DenseMap(arr), probs)
        write_tensor(DenseMap(np.zeros((1, 1), np.uint16)), targets)
        rc = main(["loss", "--kind", "sem", "--probs", str(probs), "--targets", str(targets)])
        assert rc == 0
        printed = float(capsys.readouterr().out.strip())
        assert printed == pytest.approx(-np.log(np.float32(0.1)), abs=1e-6)


class TestSampleCommand:
    def test_picks_written(self, tmp_path):
        rng = np.random.default_rng(0)
        fl = tmp_path / "l.pft"
        fu = tmp_path / "u.pft"
        write_tensor(DenseMap(rng.normal(size=(3, 8)).astype(np.float32)), fl)
        write_tensor(DenseMap(rng.normal(size=(10, 8)).astype(np.float32)), fu)
        ids = tmp_path / "ids.json"
        ids.write_text(
            json.dumps(
                {
                    "labeled": [f"l{i}" for i in range(3)],
                    "unlabeled": [f"u{i}" for i in range(10)],
                }
            )
        )
        out = tmp_path / "picks.json"
        rc = main(
            ["sample", "--labeled", str(fl), "--unlabeled", str(fu), "--ids", str(ids), "-n", "2", "--out", str(out)]
        )
        assert rc == 0
        doc = json.loads(out.read_text())
        assert len(doc["picks"]) == 3
        assert all(len(p["neighbors"]) == 2 for p in doc["picks"])
        assert len(doc["selected"]) == 6  # dedupe keeps picks distinct


class TestVizCommand:
    def test_renders_png(self, scene_files, tmp_path):
        out = tmp_path / "gt.png"
        rc = main(
            ["viz", "--pan", str(scene_files["gt"]), "--labels", str(scene_files["labels"]), "--out", str(out)]
        )
        assert rc == 0
        assert out.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


class TestConfigHandling:
    def test_print_defaults(self, capsys):
        assert main(["--print-defaults"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert config_from_dict(doc) == default_config()

    def test_unknown_key_is_config_error(self, tmp_path, scene_files):
        bad = tmp_path / "bad.toml"
        bad.write_text("[boundary]\nlambda_bee = 0.4\n")
        rc = main(
            [
                "fuse",
                "--labels", str(scene_files["labels"]),
                "--config", str(bad),
                "--dump-effective-config",
            ]
        )
        assert rc == 2

    def test_json_config_accepted(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"boundary": {"lambda_b": 0.4}}))
        loaded = load_config(cfg)
        assert loaded.boundary.lambda_b == 0.4

    def test_roundtrip_through_dict(self):
        cfg = default_config()
        assert config_from_dict(config_to_dict(cfg)) == cfg
