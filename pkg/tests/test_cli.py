import json
import os
import sys

import numpy as np
import pytest

from faceref.cli import run
from faceref.imio import list_images, read_image

TINY_CONFIG = {
    "model": {"channels": 8, "latent_scale": 2, "timesteps": 50},
    "training": {"iterations": 2, "batch_size": 2, "learning_rate": 1e-3},
    "degradation": {"sigma_range": [0.5, 1.0], "r_range": [2, 2],
                    "delta_range": [2.0, 2.0], "q_range": [80, 80]},
}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Shared corpus + config for the CLI workflow tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    code = run(["synth-dataset", "--out", str(corpus), "--identities", "2",
                "--per-identity", "3", "--size", "32", "--seed", "0"])
    assert code == 0
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    return {"root": root, "corpus": corpus, "config": str(config)}


class TestWorkflow:
    def test_synth_dataset_outputs(self, work):
        paths = list_images(work["corpus"])
        assert len(paths) == 6
        manifest = json.loads((work["corpus"] / "manifest.json").read_text())
        assert manifest["schema_version"] == 1
        assert len(manifest["entries"]) == 6
        assert (work["corpus"] / "run_stamp.json").exists()

    def test_degrade(self, work):
        out = work["root"] / "lq"
        code = run(["degrade", "--in", str(work["corpus"]), "--out", str(out),
                    "--seed", "3", "--config", work["config"], "--jobs", "2"])
        assert code == 0
        assert len(list_images(out)) == 6
        stamp = json.loads((out / "run_stamp.json").read_text())
        assert stamp["seed"] == 3
        # degraded images differ from sources but keep their shape
        name = os.path.basename(list_images(work["corpus"])[0])
        hq, lq = read_image(work["corpus"] / name), read_image(out / name)
        assert hq.shape == lq.shape
        assert not np.array_equal(hq, lq)

    def test_degrade_deterministic(self, work):
        outs = []
        for d in ("lq_a", "lq_b"):
            out = work["root"] / d
            assert run(["degrade", "--in", str(work["corpus"]),
                        "--out", str(out), "--seed", "5",
                        "--config", work["config"]]) == 0
            name = os.path.basename(list_images(out)[0])
            outs.append(read_image(out / name))
        assert np.array_equal(outs[0], outs[1])

    def test_build_pool_and_synth_refs(self, work, capsys):
        pool_path = work["root"] / "pool.json"
        code = run(["build-pool", "--images", str(work["corpus"]),
                    "--out", str(pool_path), "--c1", "2", "--c2", "2",
                    "--seed", "0"])
        assert code == 0
        pool = json.loads(pool_path.read_text())
        assert pool["c1"] == 2 and pool["c2"] == 2
        assert "pool:" in capsys.readouterr().out

        identity = list_images(work["corpus"])[0]
        refs_out = work["root"] / "refs"
        code = run(["synth-refs", "--pool", str(pool_path),
                    "--identity", str(identity),
                    "--pose-images", str(work["corpus"]),
                    "--out", str(refs_out), "--n-refs", "2",
                    "--delta", "-1.0", "--seed", "0"])
        assert code == 0
        assert len(list_images(refs_out)) == 2
        report = json.loads((refs_out / "synthesis_report.json").read_text())
        assert len(report["slots"]) == 2
        assert all(s["accepted"] for s in report["slots"])

    def test_train_restore_evaluate(self, work):
        manifest = str(work["corpus"] / "manifest.json")
        stage1 = work["root"] / "stage1"
        code = run(["train", "--stage", "1", "--data", manifest,
                    "--out", str(stage1), "--config", work["config"],
                    "--seed", "0"])
        assert code == 0
        assert (stage1 / "training_report.json").exists()
        assert (stage1 / "loss_curve.png").exists()
        assert (stage1 / "stage1_id_encoder.npz").exists()
        assert (stage1 / "stage1_full.npz").exists()
        report = json.loads((stage1 / "training_report.json").read_text())
        assert len(report["losses"]) == 2
        assert report["frozen_unchanged"] is True

        stage2 = work["root"] / "stage2"
        code = run(["train", "--stage", "2", "--data", manifest,
                    "--out", str(stage2), "--config", work["config"],
                    "--seed", "1",
                    "--resume", str(stage1 / "stage1_full")])
        assert code == 0
        report2 = json.loads((stage2 / "training_report.json").read_text())
        assert report2["trainable_groups"] == ["control"]

        restored = work["root"] / "restored"
        code = run(["restore", "--lq", str(work["root"] / "lq"),
                    "--refs", manifest, "--out", str(restored),
                    "--steps", "3", "--lambda", "1.5", "--seed", "0",
                    "--checkpoint", str(stage2 / "stage2_full"),
                    "--config", work["config"], "--emit-comparison"])
        assert code == 0
        assert len(list_images(restored)) > 6  # outputs + comparison grids
        rr = json.loads((restored / "restore_report.json").read_text())
        assert len(rr) == 6
        assert all(item["conditional"] for item in rr)
        grids = [p for p in os.listdir(restored) if "comparison" in p]
        assert len(grids) == 6

        # evaluate restored-vs-HQ pairs with an external metric stub
        pairs = {"pairs": []}
        for entry in json.loads(
                (work["corpus"] / "manifest.json").read_text())["entries"]:
            name = os.path.basename(entry["path"])
            pairs["pairs"].append({
                "id": entry["image_id"],
                "output": str(restored / name),
                "target": str(work["corpus"] / name),
            })
        pairs_path = work["root"] / "pairs.json"
        pairs_path.write_text(json.dumps(pairs))
        metric_script = work["root"] / "metric.py"
        metric_script.write_text(
            "import json\nprint(json.dumps({'mean': 0.25}))\n")
        report_path = work["root"] / "eval" / "report.json"
        os.makedirs(report_path.parent)
        code = run(["evaluate", "--pairs", str(pairs_path),
                    "--out", str(report_path),
                    "--external-metric", "stub",
                    f"{sys.executable} {metric_script}"])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert set(report["means"]) == {"psnr", "ssim", "ids"}
        assert 0.0 < report["means"]["psnr"] < 100.0
        assert report["external"]["stub"]["mean"] == 0.25
        # delimited output and rendered figure alongside the JSON
        csv_path = work["root"] / "eval" / "report.csv"
        assert csv_path.exists()
        header = csv_path.read_text().splitlines()[0]
        assert header == "id,psnr,ssim,ids"
        assert (work["root"] / "eval" / "report.png").exists()


class TestErrors:
    def test_no_subcommand_usage(self, capsys):
        assert run([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_domain_error_returns_one_with_json(self, tmp_path, capsys):
        code = run(["degrade", "--in", str(tmp_path / "nothing"),
                    "--out", str(tmp_path / "out")])
        assert code == 1
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "InvalidArgumentError"

    def test_bad_config_reported(self, tmp_path, capsys):
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"model": {"channels": 0}}))
        code = run(["degrade", "--in", str(tmp_path), "--out",
                    str(tmp_path / "out"), "--config", str(config)])
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == \
            "InvalidArgumentError"

    def test_version_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            run(["--version"])
        assert exc.value.code == 0
