"""End-to-end CLI: train/eval/inspect, exit codes, artifact formats."""

import json

import numpy as np
import pytest

from pft_reid.cli import main
from pft_reid.checkpoint import load_checkpoint
from pft_reid.data import read_pgm

TINY_CONFIG = {
    "model": {
        "image_height": 32,
        "image_width": 24,
        "channels": 3,
        "patch_size": 8,
        "stride": 8,
        "embed_dim": 16,
        "depth": 2,
        "heads": 2,
        "mlp_ratio": 2,
    },
    "train": {
        "batch_size": 8,
        "instances_per_id": 2,
        "total_steps": 3,
        "seed": 0,
        "augment": False,
    },
    "data": {"synthetic": {"seed": 5, "ids": 4, "variants": 4, "cams": 2}},
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(TINY_CONFIG))
    return path


@pytest.fixture
def trained(tmp_path, config_path):
    out = tmp_path / "run"
    code = main(["train", "--config", str(config_path), "--out", str(out)])
    assert code == 0
    return out


class TestTrain:
    def test_writes_artifacts(self, trained):
        assert (trained / "checkpoint.pft").is_file()
        assert (trained / "metrics.jsonl").is_file()
        assert (trained / "config.json").is_file()
        lines = (trained / "metrics.jsonl").read_text().strip().splitlines()
        assert len(lines) == 3
        entry = json.loads(lines[0])
        assert set(entry) == {"step", "lr", "loss", "loss_per_head"}
        snapshot = json.loads((trained / "config.json").read_text())
        assert snapshot["num_classes"] == 4
        assert snapshot["train"]["warmup_steps"] == 0  # resolved 10% of 3

    def test_missing_config_exit_2_names_path(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "ghost.json"), "--out", str(tmp_path)])
        assert code == 2
        assert "ghost.json" in capsys.readouterr().err

    def test_invalid_config_field_diagnostic(self, tmp_path, capsys):
        bad = dict(TINY_CONFIG, train=dict(TINY_CONFIG["train"], batch_size="many"))
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        code = main(["train", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "train.batch_size" in capsys.readouterr().err

    def test_bad_geometry_exit_2(self, tmp_path, capsys):
        bad = json.loads(json.dumps(TINY_CONFIG))
        bad["model"]["image_height"] = 256
        bad["model"]["image_width"] = 128
        bad["model"]["patch_size"] = 16
        bad["model"]["stride"] = 16
        path = tmp_path / "geom.json"
        path.write_text(json.dumps(bad))
        code = main(["train", "--config", str(path), "--out", str(tmp_path / "o")])
        assert code == 2
        assert "128" in capsys.readouterr().err

    def test_identical_invocations_bitwise_identical_outputs(self, tmp_path, config_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["train", "--config", str(config_path), "--out", str(a)]) == 0
        assert main(["train", "--config", str(config_path), "--out", str(b)]) == 0
        assert (a / "checkpoint.pft").read_bytes() == (b / "checkpoint.pft").read_bytes()
        assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()
        assert (a / "config.json").read_bytes() == (b / "config.json").read_bytes()

    def test_empty_ablation_is_baseline_topology(self, tmp_path, config_path):
        out = tmp_path / "base"
        assert main(
            ["train", "--config", str(config_path), "--out", str(out), "--ablation", ""]
        ) == 0
        state = load_checkpoint(out / "checkpoint.pft")
        assert "enhance.values" not in state
        head_names = {n.split(".")[1] for n in state if n.startswith("heads.")}
        assert head_names == {"global"}

    def test_unknown_ablation_switch_exit_2(self, tmp_path, config_path, capsys):
        code = main(
            ["train", "--config", str(config_path), "--out", str(tmp_path / "x"),
             "--ablation", "pfde,bogus"]
        )
        assert code == 2
        assert "bogus" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit_4(self, tmp_path, capsys):
        cfg = json.loads(json.dumps(TINY_CONFIG))
        cfg["train"]["base_lr"] = 1e14
        cfg["train"]["total_steps"] = 30
        cfg["train"]["warmup_steps"] = 0
        path = tmp_path / "hot.json"
        path.write_text(json.dumps(cfg))
        code = main(["train", "--config", str(path), "--out", str(tmp_path / "hot")])
        assert code == 4
        assert "step" in capsys.readouterr().err

    def test_seed_flag_changes_checkpoint(self, tmp_path, config_path):
        a, b = tmp_path / "s0", tmp_path / "s1"
        main(["train", "--config", str(config_path), "--out", str(a)])
        main(["train", "--config", str(config_path), "--out", str(b), "--seed", "99"])
        assert (a / "checkpoint.pft").read_bytes() != (b / "checkpoint.pft").read_bytes()


class TestEval:
    def test_self_retrieval_without_exclusion(self, trained, capsys):
        spec = "synthetic:seed=5,ids=4,variants=0:4,cams=2"
        code = main(
            ["eval", "--checkpoint", str(trained / "checkpoint.pft"),
             "--query", spec, "--gallery", spec, "--no-exclusion", "--max-rank", "5"]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["cmc"][0] == 1.0  # every query finds itself at distance 0

    def test_untrained_model_report_well_formed(self, tmp_path, capsys):
        # 0-step training gives an untrained checkpoint at the initialization
        cfg = json.loads(json.dumps(TINY_CONFIG))
        cfg["train"]["total_steps"] = 0
        cfg["data"]["synthetic"]["ids"] = 2
        path = tmp_path / "zero.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / "zero_run"
        assert main(["train", "--config", str(path), "--out", str(out)]) == 0
        capsys.readouterr()  # drop the train command's output
        code = main(
            ["eval", "--checkpoint", str(out / "checkpoint.pft"),
             "--query", "synthetic:seed=5,ids=2,variants=0:2,cams=2",
             "--gallery", "synthetic:seed=5,ids=2,variants=2:6,cams=2"]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"cmc", "map", "excluded_queries"}
        assert all(0.0 <= v <= 1.0 for v in report["cmc"])
        assert 0.0 <= report["map"] <= 1.0
        assert report["excluded_queries"] == 0

    def test_dim_mismatch_exit_2_names_dims(self, trained, tmp_path, capsys):
        other = json.loads(json.dumps(TINY_CONFIG))
        other["model"]["embed_dim"] = 32
        path = tmp_path / "wide.json"
        path.write_text(json.dumps(other))
        code = main(
            ["eval", "--checkpoint", str(trained / "checkpoint.pft"), "--config", str(path),
             "--query", "synthetic:ids=2,variants=0:2", "--gallery", "synthetic:ids=2,variants=0:2"]
        )
        assert code == 2
        err = capsys.readouterr().err
        assert "16" in err and "32" in err

    def test_manifest_query(self, trained, tmp_path, capsys):
        from pft_reid.data import generate_identity, write_ppm

        lines = ["path,person_id,camera_id"]
        for i in range(2):
            img = generate_identity(5, i, 0, 0, height=32, width=24).image
            write_ppm(tmp_path / f"q{i}.ppm", img)
            lines.append(f"q{i}.ppm,{i},0")
        manifest = tmp_path / "q.csv"
        manifest.write_text("\n".join(lines) + "\n")
        code = main(
            ["eval", "--checkpoint", str(trained / "checkpoint.pft"),
             "--query", str(manifest),
             "--gallery", "synthetic:seed=5,ids=4,variants=1:4,cams=2"]
        )
        assert code == 0
        assert "cmc" in json.loads(capsys.readouterr().out)


class TestInspect:
    def test_writes_heatmap_and_similarity(self, trained, tmp_path, capsys):
        out = tmp_path / "insp"
        code = main(
            ["inspect", "--checkpoint", str(trained / "checkpoint.pft"),
             "--image", "synthetic:seed=5,id=1,variant=0,cam=0", "--out", str(out)]
        )
        assert code == 0
        heat = read_pgm(out / "heatmap.pgm")
        assert heat.shape == (4, 3)  # grid of the 32x24/P8 geometry

        rows = (out / "patch_sim.csv").read_text().strip().splitlines()
        sim = np.array([[float(v) for v in row.split(",")] for row in rows])
        assert sim.shape == (12, 12)
        assert np.abs(np.diag(sim) - 1.0).max() < 1e-9
        assert np.allclose(sim, sim.T, atol=1e-9)

    def test_occluded_image_heatmap_mass_reported(self, trained, tmp_path):
        # qualitative check: measure (and report, without asserting a
        # threshold) how much rollout mass lands on the occluder region
        from pft_reid.data import generate_identity

        occluded = None
        for variant in range(40):
            record, meta = generate_identity(5, 1, variant, 0, height=32, width=24,
                                             with_metadata=True)
            if meta["occluder"] is not None:
                occluded = (variant, meta["occluder"])
                break
        assert occluded is not None, "no occluded draw in 40 variants"
        variant, (y0, y1, x0, x1) = occluded

        out = tmp_path / "occ"
        code = main(
            ["inspect", "--checkpoint", str(trained / "checkpoint.pft"),
             "--image", f"synthetic:seed=5,id=1,variant={variant},cam=0",
             "--out", str(out)]
        )
        assert code == 0
        heat = read_pgm(out / "heatmap.pgm").astype(float)
        total = heat.sum()
        assert total > 0
        # map the pixel box to 8x8 patch cells (any overlap counts)
        gy0, gy1 = y0 // 8, min(3, (y1 - 1) // 8)
        gx0, gx1 = x0 // 8, min(2, (x1 - 1) // 8)
        mass = heat[gy0 : gy1 + 1, gx0 : gx1 + 1].sum() / total
        assert 0.0 <= mass <= 1.0
        print(f"\nrollout mass on occluder region (variant {variant}): {mass:.3f}")

    def test_unreadable_image_exit_3(self, trained, tmp_path, capsys):
        code = main(
            ["inspect", "--checkpoint", str(trained / "checkpoint.pft"),
             "--image", str(tmp_path / "missing.ppm"), "--out", str(tmp_path / "o")]
        )
        assert code == 3
        assert "missing.ppm" in capsys.readouterr().err

    def test_missing_checkpoint_exit_3(self, tmp_path, config_path, capsys):
        code = main(
            ["inspect", "--checkpoint", str(tmp_path / "none.pft"),
             "--config", str(config_path),
             "--image", "synthetic:id=0", "--out", str(tmp_path / "o")]
        )
        assert code == 3
